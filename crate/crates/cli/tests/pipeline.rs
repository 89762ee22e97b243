use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mapbench_core::datastore::{EnvironmentRecord, Manifest};
use mapbench_core::gridmap::{save_gridmap, GridMap};
use mapbench_core::models::{Dataset, ModelFile, Target};
use mapbench_core::synth::{bordered_room, l_shape, noisy_run, two_rooms, wandering_path, OdometryNoise};

const RUNS: usize = 3;

fn maps() -> Vec<(&'static str, GridMap)> {
    vec![
        ("room", bordered_room(40, 30, 0.1)),
        ("wide_room", bordered_room(80, 40, 0.1)),
        ("two_rooms", two_rooms(80, 40, 0.1)),
        ("l_small", l_shape(60, 20, 0.1)),
        ("l_large", l_shape(100, 24, 0.1)),
    ]
}

/// Five maps with three runs each; odometry noise grows with map size so the
/// targets vary across environments.
fn fixture(dir: &Path) -> PathBuf {
    fs::create_dir_all(dir.join("maps")).unwrap();
    fs::create_dir_all(dir.join("runs")).unwrap();
    let mut manifest = Manifest::default();
    for (e, (name, map)) in maps().into_iter().enumerate() {
        let map_rel = PathBuf::from("maps").join(format!("{name}.pgm"));
        save_gridmap(&map, &dir.join(&map_rel)).unwrap();
        let mut rec = EnvironmentRecord::new(name, map_rel);
        rec.resolution = Some(map.resolution());
        let scale = (map.width() * map.height()) as f64 / 1200.0;
        let noise = OdometryNoise {
            trans_per_m: 0.004 * scale,
            rot_per_m: 0.001 * scale,
        };
        for r in 0..RUNS {
            let seed = (e * 10 + r) as u64;
            let truth = wandering_path(120, 0.2, seed);
            let run = noisy_run(&format!("{name}_{r}"), &truth, noise, seed + 1000);
            let rel = PathBuf::from("runs").join(format!("{name}_{r}.csv"));
            let mut buf = Vec::new();
            run.write_csv(&mut buf).unwrap();
            fs::write(dir.join(&rel), buf).unwrap();
            rec.runs.push(rel);
        }
        manifest.environments.push(rec);
    }
    let path = dir.join("manifest.json");
    fs::write(&path, manifest.to_json()).unwrap();
    path
}

fn mapbench(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mapbench"))
        .args(args)
        .env("MAPBENCH_LOG", "error")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn summary(out: &std::process::Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

#[test]
fn end_to_end_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = fixture(tmp.path());

    let out = mapbench(&["--json", "--seed", "3", "pipeline", s(&manifest)]);
    let sum = summary(&out);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(sum["failed"], 0);
    assert_eq!(sum["dataset_rows"], 5);

    let o = tmp.path().join("out");
    let data = Dataset::load(&o.join("dataset.csv")).unwrap();
    assert_eq!(data.rows().len(), 5);
    assert_eq!(data.targets().len(), 4);
    for t in Target::ALL {
        let m = ModelFile::load(&o.join("models").join(format!("{}.json", t.name()))).unwrap();
        assert_eq!(m.model.target(), t);
        assert_eq!(m.training_meta.seed, 3);
        assert!(m.training_meta.cv.is_some());
    }
    let report = fs::read_to_string(o.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 5);
    assert!(report.starts_with("target,model,features,r2,rmse,nrmse_pct"));
    let preds = fs::read_to_string(o.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 6);

    // the manifest now carries the computed stages
    let m = Manifest::from_json(&fs::read_to_string(&manifest).unwrap(), &manifest).unwrap();
    assert!(m.environments.iter().all(|e| e.features.is_some() && e.performance.is_some()));

    // nothing changes on a second run
    let before = snapshot(tmp.path());
    let out = mapbench(&["--json", "--seed", "3", "pipeline", s(&manifest)]);
    assert_eq!(out.status.code(), Some(0));
    let sum = summary(&out);
    assert_eq!(sum["written"].as_array().unwrap().len(), 0, "{sum}");
    assert!(sum["environments"]
        .as_array()
        .unwrap()
        .iter()
        .all(|e| e["features"] == "up_to_date" && e["eval"] == "up_to_date"));
    assert_eq!(snapshot(tmp.path()), before);

    let out = mapbench(&["validate", s(&manifest)]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn same_seed_same_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let m = fixture(d);
        let out = mapbench(&["--seed", "11", "--jobs", "2", "pipeline", s(&m), "--stages", "features,eval,fit"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let strip_dates = |files: Vec<(PathBuf, Vec<u8>)>| -> Vec<(PathBuf, String)> {
        files
            .into_iter()
            .filter(|(p, _)| p.starts_with("out"))
            .map(|(p, b)| {
                let text = String::from_utf8(b).unwrap();
                let text = text.lines().filter(|l| !l.contains("\"date\"")).collect::<Vec<_>>().join("\n");
                (p, text)
            })
            .collect()
    };
    let sa = strip_dates(snapshot(a.path()));
    assert!(!sa.is_empty());
    assert_eq!(sa, strip_dates(snapshot(b.path())));
}

#[test]
fn corrupt_run_fails_only_its_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = fixture(tmp.path());
    fs::write(tmp.path().join("runs/two_rooms_1.csv"), "t,x,y\n1,nope\n").unwrap();

    let out = mapbench(&["--json", "pipeline", s(&manifest)]);
    assert_eq!(out.status.code(), Some(1));
    let sum = summary(&out);
    assert_eq!(sum["failed"], 1);
    for e in sum["environments"].as_array().unwrap() {
        if e["env_id"] == "two_rooms" {
            assert_eq!(e["eval"], "failed");
            assert!(!e["errors"].as_array().unwrap().is_empty());
        } else {
            assert_eq!(e["eval"], "computed", "{e}");
        }
    }
    assert_eq!(sum["dataset_rows"], 4);
    assert!(tmp.path().join("out/performance/room.json").is_file());
    assert!(!tmp.path().join("out/performance/two_rooms.json").exists());
}

#[test]
fn validate_reports_problems() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = fixture(tmp.path());
    assert_eq!(mapbench(&["validate", s(&manifest)]).status.code(), Some(0));

    fs::remove_file(tmp.path().join("runs/room_0.csv")).unwrap();
    let out = mapbench(&["validate", s(&manifest)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("room_0.csv"));

    fs::write(&manifest, "{\"schema_version\": 99, \"toolkit_version\": \"x\"}").unwrap();
    assert_eq!(mapbench(&["validate", s(&manifest)]).status.code(), Some(1));
    assert_eq!(mapbench(&["validate"]).status.code(), Some(2));
}

#[test]
fn single_map_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = fixture(tmp.path());
    let map = tmp.path().join("maps/two_rooms.pgm");

    let out = mapbench(&["--json", "map-info", s(&map), "--resolution", "0.1"]);
    assert_eq!(out.status.code(), Some(0));
    let info = summary(&out);
    assert_eq!(info["width"], 80);
    assert!(info["interior"]["area_m2"].as_f64().unwrap() > 0.0);

    let graph = tmp.path().join("g.json");
    let png = tmp.path().join("g.png");
    let out = mapbench(&["voronoi", s(&map), "--resolution", "0.1", "--out", s(&graph), "--debug-png", s(&png)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let g: serde_json::Value = serde_json::from_slice(&fs::read(&graph).unwrap()).unwrap();
    assert!(!g["nodes"].as_array().unwrap().is_empty());
    assert!(png.is_file());

    let feats = tmp.path().join("f.json");
    let out = mapbench(&["features", s(&map), "--resolution", "0.1", "--out", s(&feats)]);
    assert_eq!(out.status.code(), Some(0));
    let f: serde_json::Value = serde_json::from_slice(&fs::read(&feats).unwrap()).unwrap();
    assert!(f["features"]["vtd_m"].as_f64().unwrap() > 0.0);

    let run = tmp.path().join("runs/room_0.csv");
    let out = mapbench(&["--json", "eval-run", s(&run), "--exhaustive"]);
    assert_eq!(out.status.code(), Some(0));
    let r = summary(&out);
    assert_eq!(r["pairs"].as_u64(), r["total_pairs"].as_u64());

    let runs: Vec<String> = (0..RUNS)
        .map(|i| s(&tmp.path().join(format!("runs/room_{i}.csv"))).to_string())
        .collect();
    let mut args = vec!["--json", "eval-env"];
    args.extend(runs.iter().map(String::as_str));
    let out = mapbench(&args);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(summary(&out)["performance"]["runs"], RUNS);

    // fit, predict and report on the pipeline dataset
    let out = mapbench(&["pipeline", s(&manifest), "--stages", "features,eval"]);
    assert_eq!(out.status.code(), Some(0));
    let out = mapbench(&["pipeline", s(&manifest), "--stages", "fit"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dataset = tmp.path().join("out/dataset.csv");
    let model = tmp.path().join("m.json");
    let out = mapbench(&["fit", s(&dataset), "--target", "mean_eps_t", "--k", "3", "--out", s(&model)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = mapbench(&["--json", "predict", s(&model), s(&feats)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let p = summary(&out);
    assert!(p["predictions"][0]["value"].as_f64().unwrap().is_finite());

    let out = mapbench(&["report", s(&dataset), "--k", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 5);

    let out = mapbench(&["fit", s(&dataset), "--target", "nope"]);
    assert_eq!(out.status.code(), Some(1));
}
