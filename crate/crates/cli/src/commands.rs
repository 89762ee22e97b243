use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mapbench_core::datastore::{validate_manifest, write_if_changed};
use mapbench_core::features::{extract_features, FeatureVector};
use mapbench_core::gridmap::{interior_with_contour, load_gridmap, CellState, GridMap, MapMeta};
use mapbench_core::models::{
    f_select, fit, kfold_cv, predict_performance, report, write_report_csv, Dataset, Model, ModelFile, Target,
    TrainingMeta,
};
use mapbench_core::trajectory::{
    aggregate, estimate_run_count, evaluate_run, localization_error, ErrorMode, RelationSample, RunLog, SamplingPolicy,
};
use mapbench_core::voronoi::{build_voronoi, render_debug, GraphFile};
use serde::Serialize;
use serde_json::json;

use crate::config::Config;
use crate::pipeline::{self, digest, run_pipeline, FeaturesArtifact, PipelineOptions, PerformanceArtifact, RunSummary, Stage};
use crate::{Cli, Command, MapArgs, SamplingArgs};

struct Ctx {
    json: bool,
    seed: u64,
    jobs: usize,
    config: Config,
}

impl Ctx {
    fn emit<T: Serialize>(&self, value: &T, human: impl FnOnce() -> String) -> Result<()> {
        if self.json {
            println!("{}", serde_json::to_string_pretty(value)?);
        } else {
            print!("{}", human());
        }
        Ok(())
    }

    fn sampling(&self, args: &SamplingArgs) -> Result<SamplingPolicy> {
        let mut p = self.config.sampling(self.seed);
        if let Some(v) = args.confidence {
            p.confidence = v;
        }
        if let Some(v) = args.margin_t {
            p.margin_t = v;
        }
        if let Some(v) = args.margin_r {
            p.margin_r = v;
        }
        if let Some(v) = args.pilot_pairs {
            p.pilot_pairs = v;
        }
        if let Some(m) = &args.mode {
            p.mode = m.parse::<ErrorMode>().map_err(anyhow::Error::msg)?;
        }
        if args.linear_z {
            p.square_z = false;
        }
        p.validate()?;
        Ok(p)
    }
}

pub fn dispatch(cli: Cli) -> Result<i32> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let ctx = Ctx {
        json: cli.json,
        seed: cli.seed.or(config.seed).unwrap_or(0),
        jobs: cli.jobs.or(config.jobs).unwrap_or(0),
        config,
    };
    match cli.command {
        Command::MapInfo(m) => map_info(&ctx, &m),
        Command::Voronoi { map, out, debug_png } => voronoi(&ctx, &map, out.as_deref(), debug_png.as_deref()),
        Command::Features {
            input,
            resolution,
            start,
            sensor_range,
            fov_deg,
            trace,
            out,
        } => {
            let mut ctx = ctx;
            if sensor_range.is_some() {
                ctx.config.sensor_range = sensor_range;
            }
            if fov_deg.is_some() {
                ctx.config.fov_deg = fov_deg;
            }
            if input.extension().is_some_and(|e| e == "json") {
                return pipeline_cmd(&ctx, &input, vec![Stage::Features], None, None);
            }
            features(&ctx, &input, resolution, start, trace, out.as_deref())
        }
        Command::EvalRun {
            run,
            sampling,
            exhaustive,
        } => eval_run(&ctx, &run, &sampling, exhaustive),
        Command::EvalEnv {
            runs,
            sampling,
            env_id,
            out,
        } => eval_env(&ctx, &runs, &sampling, &env_id, out.as_deref()),
        Command::Fit {
            dataset,
            target,
            model,
            features,
            k_best,
            k,
            l1,
            l2,
            length_scale,
            noise,
            optimize,
            out,
        } => {
            let mut ctx = ctx;
            let c = &mut ctx.config;
            c.l1 = l1.or(c.l1);
            c.l2 = l2.or(c.l2);
            c.gp_length_scale = length_scale.or(c.gp_length_scale);
            c.gp_noise = noise.or(c.gp_noise);
            if optimize {
                c.gp_optimize = Some(true);
            }
            if features.is_some() {
                c.features = features;
            }
            c.folds = k.or(c.folds);
            fit_cmd(&ctx, &dataset, &target, model.as_deref(), k_best, out.as_deref())
        }
        Command::Predict { files } => predict(&ctx, &files),
        Command::Report {
            dataset,
            all_targets: _,
            target,
            model,
            features,
            k,
            out,
        } => {
            let mut ctx = ctx;
            if features.is_some() {
                ctx.config.features = features;
            }
            ctx.config.folds = k.or(ctx.config.folds);
            report_cmd(&ctx, &dataset, target.as_deref(), model.as_deref(), out.as_deref())
        }
        Command::Validate { manifest } => validate(&ctx, &manifest),
        Command::Pipeline {
            manifest,
            stages,
            out_dir,
            model,
        } => pipeline_cmd(&ctx, &manifest, stages, out_dir, model),
    }
}

fn load_map(m: &MapArgs) -> Result<GridMap> {
    let meta = MapMeta {
        resolution: m.resolution,
        occ_thresh: m.occ_thresh,
        free_thresh: m.free_thresh,
        ..MapMeta::default()
    };
    Ok(load_gridmap(&m.image, &meta)?)
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            write_if_changed(p, bytes)?;
        }
        None => print!("{}", String::from_utf8_lossy(bytes)),
    }
    Ok(())
}

#[derive(Serialize)]
struct InteriorInfo {
    cells: usize,
    free_cells: usize,
    contour_length_px: usize,
    area_m2: f64,
    perimeter_m: f64,
}

#[derive(Serialize)]
struct MapInfo {
    width: usize,
    height: usize,
    resolution: f64,
    origin: (f64, f64),
    free: usize,
    occupied: usize,
    unknown: usize,
    interior: Option<InteriorInfo>,
    interior_error: Option<String>,
}

fn map_info(ctx: &Ctx, m: &MapArgs) -> Result<i32> {
    let map = load_map(m)?;
    let res = map.resolution();
    let (interior, interior_error) = match interior_with_contour(&map) {
        Ok((mask, contour)) => {
            let free_cells = mask
                .iter_set()
                .filter(|&(r, c)| map.get(r, c) == CellState::Free)
                .count();
            (
                Some(InteriorInfo {
                    cells: mask.count(),
                    free_cells,
                    contour_length_px: contour.length,
                    area_m2: free_cells as f64 * res * res,
                    perimeter_m: contour.length as f64 * res,
                }),
                None,
            )
        }
        Err(e) => (None, Some(e.to_string())),
    };
    let info = MapInfo {
        width: map.width(),
        height: map.height(),
        resolution: res,
        origin: map.origin(),
        free: map.count(CellState::Free),
        occupied: map.count(CellState::Occupied),
        unknown: map.count(CellState::Unknown),
        interior,
        interior_error,
    };
    ctx.emit(&info, || {
        let mut s = format!(
            "{}\n  size        {} x {} px at {} m/px\n  origin      ({}, {})\n  cells       {} free, {} occupied, {} unknown\n",
            m.image.display(),
            info.width,
            info.height,
            info.resolution,
            info.origin.0,
            info.origin.1,
            info.free,
            info.occupied,
            info.unknown
        );
        match (&info.interior, &info.interior_error) {
            (Some(i), _) => s += &format!(
                "  interior    {} cells ({} free)\n  area        {:.3} m2\n  perimeter   {:.3} m\n",
                i.cells, i.free_cells, i.area_m2, i.perimeter_m
            ),
            (None, Some(e)) => s += &format!("  interior    none: {e}\n"),
            _ => {}
        }
        s
    })?;
    Ok(0)
}

fn voronoi(ctx: &Ctx, m: &MapArgs, out: Option<&Path>, debug_png: Option<&Path>) -> Result<i32> {
    let map = load_map(m)?;
    let params = ctx.config.feature_config().voronoi;
    let (mask, _) = interior_with_contour(&map)?;
    let build = build_voronoi(&map, &mask, &params)?;
    let file = GraphFile::new(&build.graph, &map, &params);
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    if let Some(p) = debug_png {
        render_debug(&map, &build)
            .save(p)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    if out.is_none() && !ctx.json {
        write_out(None, &bytes)?;
        return Ok(0);
    }
    if let Some(p) = out {
        write_out(Some(p), &bytes)?;
    }
    let summary = json!({
        "nodes": build.graph.node_count(),
        "edges": build.graph.edge_count(),
        "skeleton_pixels": build.skeleton.count(),
        "components": build.graph.component_count(),
        "total_weight_px": build.graph.total_weight(),
    });
    if out.is_none() {
        // --json without --out: the graph itself is the output
        println!("{}", String::from_utf8_lossy(&bytes).trim_end());
        return Ok(0);
    }
    ctx.emit(&summary, || {
        format!(
            "{} nodes, {} edges, {} skeleton pixels, {} component(s) -> {}\n",
            build.graph.node_count(),
            build.graph.edge_count(),
            build.skeleton.count(),
            build.graph.component_count(),
            out.map(|p| p.display().to_string()).unwrap_or_default()
        )
    })?;
    Ok(0)
}

fn features(
    ctx: &Ctx,
    image: &Path,
    resolution: Option<f64>,
    start: Option<(f64, f64)>,
    trace: bool,
    out: Option<&Path>,
) -> Result<i32> {
    let meta = MapMeta {
        resolution,
        ..MapMeta::default()
    };
    let map = load_gridmap(image, &meta)?;
    let mut cfg = ctx.config.feature_config();
    cfg.start = start;
    cfg.keep_trace = trace;
    let fx = extract_features(&map, &cfg)?;
    let bytes = fs::read(image)?;
    let art = FeaturesArtifact {
        env_id: image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        input_hash: digest(&[b"features/1", &bytes, &serde_json::to_vec(&cfg)?]),
        features: fx.features,
    };
    let mut json_bytes = serde_json::to_vec_pretty(&art)?;
    json_bytes.push(b'\n');
    if let Some(p) = out {
        write_if_changed(p, &json_bytes)?;
    }
    let f = &art.features;
    ctx.emit(&art, || {
        format!(
            "{}\n  vtd         {:.3} m\n  vtr         {:.3} rad\n  area        {:.3} m2\n  perimeter   {:.3} m\n  graph       {} nodes, {} edges\n  start       ({:.3}, {:.3})\n",
            image.display(),
            f.vtd_m,
            f.vtr_rad,
            f.area_m2,
            f.perimeter_m,
            f.node_count,
            f.edge_count,
            fx.start.0,
            fx.start.1
        )
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct RunReport {
    run: String,
    poses: usize,
    total_pairs: u64,
    pairs: usize,
    mode: ErrorMode,
    eps_t: f64,
    eps_r: f64,
    seed: u64,
}

fn eval_run(ctx: &Ctx, path: &Path, args: &SamplingArgs, exhaustive: bool) -> Result<i32> {
    let policy = ctx.sampling(args)?;
    let run = RunLog::load(path).with_context(|| format!("reading {}", path.display()))?;
    let e = if exhaustive {
        localization_error(&RelationSample::exhaustive(&run), policy.mode)?
    } else {
        evaluate_run(&run, &policy)?
    };
    let rep = RunReport {
        run: run.id.clone(),
        poses: run.len(),
        total_pairs: run.pair_count(),
        pairs: e.n,
        mode: e.mode,
        eps_t: e.eps_t,
        eps_r: e.eps_r,
        seed: policy.seed,
    };
    ctx.emit(&rep, || {
        format!(
            "{}: {} poses, {} of {} pairs ({})\n  eps_t  {:.6}\n  eps_r  {:.6}\n",
            rep.run, rep.poses, rep.pairs, rep.total_pairs, rep.mode, rep.eps_t, rep.eps_r
        )
    })?;
    Ok(0)
}

fn eval_env(ctx: &Ctx, paths: &[PathBuf], args: &SamplingArgs, env_id: &str, out: Option<&Path>) -> Result<i32> {
    let policy = ctx.sampling(args)?;
    let mut errors = Vec::new();
    let mut runs = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        let run = RunLog::load(p).with_context(|| format!("reading {}", p.display()))?;
        let pol = SamplingPolicy {
            seed: pipeline::derive_seed(policy.seed, env_id, i),
            ..policy
        };
        let e = evaluate_run(&run, &pol)?;
        runs.push(RunSummary {
            run: run.id.clone(),
            eps_t: e.eps_t,
            eps_r: e.eps_r,
            pairs: e.n,
        });
        errors.push(e);
    }
    let performance = aggregate(&errors)?;
    let art = PerformanceArtifact {
        env_id: env_id.to_string(),
        input_hash: String::new(),
        policy,
        runs,
        performance,
        run_count: estimate_run_count(&errors, &policy),
    };
    if let Some(p) = out {
        let mut b = serde_json::to_vec_pretty(&art)?;
        b.push(b'\n');
        write_if_changed(p, &b)?;
    }
    ctx.emit(&art, || {
        let p = &art.performance;
        let rc = &art.run_count;
        let mut s = String::new();
        for r in &art.runs {
            s += &format!("  {:<24} eps_t {:.6}  eps_r {:.6}  ({} pairs)\n", r.run, r.eps_t, r.eps_r, r.pairs);
        }
        s += &format!(
            "{} runs\n  mean eps_t {:.6}  std {:.6}\n  mean eps_r {:.6}  std {:.6}\n  runs required {} ({})\n",
            p.runs,
            p.mean_eps_t,
            p.std_eps_t,
            p.mean_eps_r,
            p.std_eps_r,
            rc.required,
            if rc.satisfied {
                "satisfied".to_string()
            } else {
                format!("{} more needed", rc.additional)
            }
        );
        s
    })?;
    Ok(0)
}

fn today() -> String {
    chrono::Utc::now().format("%Y-%m-%d").to_string()
}

fn fit_cmd(ctx: &Ctx, dataset: &Path, target: &str, model: Option<&str>, k_best: Option<usize>, out: Option<&Path>) -> Result<i32> {
    let data = Dataset::load(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let target: Target = target.parse()?;
    let spec = ctx.config.model_spec(model)?;
    let feats = match k_best {
        Some(k) => f_select(&data, target, k)?,
        None => ctx.config.feature_list(),
    };
    let k = ctx.config.folds();
    let m = fit(&spec, &data, &feats, target)?;
    let cv = kfold_cv(&data, &spec, &feats, target, k, ctx.seed)?;
    let file = ModelFile {
        model: m,
        training_meta: TrainingMeta {
            seed: ctx.seed,
            k,
            date: Some(today()),
            cv: Some(cv.summary()),
            input_hash: None,
        },
    };
    let text = file.to_json()? + "\n";
    if let Some(p) = out {
        write_if_changed(p, text.as_bytes())?;
    } else if !ctx.json {
        print!("{text}");
        return Ok(0);
    }
    if ctx.json {
        if out.is_some() {
            println!("{}", serde_json::to_string_pretty(&json!({"model": out, "cv": cv.summary()}))?);
        } else {
            print!("{text}");
        }
        return Ok(0);
    }
    let coef = match &file.model {
        Model::Ols(l) => format!("coefficients {:?}, intercept {}", l.coefficients, l.intercept),
        Model::Enet(e) => format!("coefficients {:?}, intercept {}", e.coefficients, e.intercept),
        Model::Gp(g) => format!(
            "length scale {}, signal var {}, noise var {}",
            g.hyperparams.length_scale, g.hyperparams.signal_variance, g.hyperparams.noise_variance
        ),
    };
    println!(
        "{target} ~ {} ({})\n  {coef}\n  {k}-fold CV: R2 {:.4}, RMSE {:.6}, NRMSE {:.2}%",
        feats.join(" + "),
        spec.name(),
        cv.r2,
        cv.rmse,
        cv.nrmse * 100.0
    );
    Ok(0)
}

fn read_features(path: &Path) -> Result<FeatureVector> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(a) = serde_json::from_str::<FeaturesArtifact>(&text) {
        return Ok(a.features);
    }
    serde_json::from_str::<FeatureVector>(&text).with_context(|| format!("{} is not a features file", path.display()))
}

#[derive(Serialize)]
struct Prediction {
    target: Target,
    model_type: &'static str,
    value: f64,
}

fn predict(ctx: &Ctx, files: &[PathBuf]) -> Result<i32> {
    let (feat_path, model_paths) = files.split_last().expect("clap enforces two or more");
    let fv = read_features(feat_path)?;
    let models: Vec<Model> = model_paths
        .iter()
        .map(|p| ModelFile::load(p).map(|f| f.model).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<_>>()?;
    let mut preds = Vec::new();
    for m in &models {
        preds.push(Prediction {
            target: m.target(),
            model_type: m.kind(),
            value: m.eval_with(|n| fv.get(n))?,
        });
    }
    let bundle = predict_performance(&models, &fv).ok();
    ctx.emit(&json!({"predictions": preds, "performance": bundle}), || {
        let mut s = String::new();
        for p in &preds {
            s += &format!("{:<11} {:>12.6}  ({})\n", p.target.name(), p.value, p.model_type);
        }
        s
    })?;
    Ok(0)
}

fn report_cmd(ctx: &Ctx, dataset: &Path, target: Option<&str>, model: Option<&str>, out: Option<&Path>) -> Result<i32> {
    let data = Dataset::load(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let spec = ctx.config.model_spec(model)?;
    let feats = ctx.config.feature_list();
    let k = ctx.config.folds();
    let mut rows = report(&data, &spec, &feats, k, ctx.seed)?;
    if let Some(t) = target {
        let t: Target = t.parse()?;
        rows.retain(|r| r.target == t);
        if rows.is_empty() {
            bail!("dataset has no `{t}` column");
        }
    }
    let mut csv = Vec::new();
    write_report_csv(&rows, &mut csv)?;
    match out {
        Some(p) => {
            write_if_changed(p, &csv)?;
            ctx.emit(&rows, || {
                let mut s = format!("{:<11} {:>8} {:>12} {:>9}\n", "target", "R2", "RMSE", "NRMSE%");
                for r in &rows {
                    s += &format!("{:<11} {:>8.4} {:>12.6} {:>9.2}\n", r.target.name(), r.r2, r.rmse, r.nrmse * 100.0);
                }
                s
            })?;
        }
        None if ctx.json => println!("{}", serde_json::to_string_pretty(&rows)?),
        None => print!("{}", String::from_utf8_lossy(&csv)),
    }
    Ok(0)
}

fn validate(ctx: &Ctx, path: &Path) -> Result<i32> {
    let m = validate_manifest(path)?;
    let runs: usize = m.environments.iter().map(|e| e.runs.len()).sum();
    ctx.emit(
        &json!({"valid": true, "environments": m.environments.len(), "runs": runs}),
        || format!("{}: ok, {} environments, {} run logs\n", path.display(), m.environments.len(), runs),
    )?;
    Ok(0)
}

fn pipeline_cmd(ctx: &Ctx, manifest: &Path, stages: Vec<Stage>, out_dir: Option<PathBuf>, model: Option<String>) -> Result<i32> {
    let opts = PipelineOptions {
        stages,
        out_dir,
        jobs: ctx.jobs,
        seed: ctx.seed,
        config: ctx.config.clone(),
        model,
        date: Some(today()),
    };
    let summary = run_pipeline(manifest, &opts)?;
    ctx.emit(&summary, || {
        let mut s = format!("{:<20} {:<11} {:<11}\n", "environment", "features", "eval");
        for e in &summary.environments {
            s += &format!("{:<20} {:<11} {:<11}\n", e.env_id, e.features.to_string(), e.eval.to_string());
            for err in &e.errors {
                s += &format!("    {err}\n");
            }
        }
        if summary.dataset_rows > 0 {
            s += &format!("dataset: {} rows\n", summary.dataset_rows);
        }
        s += &format!("{} file(s) written, {} environment(s) failed\n", summary.written.len(), summary.failed);
        s
    })?;
    Ok(if summary.failed > 0 { 1 } else { 0 })
}
