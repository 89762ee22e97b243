use mapbench_core::features::{extract_features, FeatureConfig};
use mapbench_core::gridmap::interior_mask;
use mapbench_core::models::{Dataset, DatasetRow, Target};
use mapbench_core::synth::{bordered_room, noisy_run, two_rooms, wandering_path, OdometryNoise};
use mapbench_core::trajectory::{
    evaluate_run, localization_error, ominus, PoseSample, Pose2, RelPose, RelationSample, RunLog, SamplingPolicy,
};
use mapbench_core::voronoi::{build_voronoi, VoronoiParams};
use proptest::prelude::*;

fn pose() -> impl Strategy<Value = Pose2> {
    (-50.0..50.0f64, -50.0..50.0f64, -3.1..3.1f64).prop_map(|(x, y, t)| Pose2::new(x, y, t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn error_is_frame_invariant_to_rounding(seed in 0u64..1000, t in pose()) {
        let truth = wandering_path(60, 0.3, seed);
        let run = noisy_run("p", &truth, OdometryNoise::default(), seed + 1);
        let moved: Vec<PoseSample> = run
            .samples()
            .iter()
            .map(|s| PoseSample {
                t: s.t,
                estimated: t.compose(&RelPose::new(s.estimated.x, s.estimated.y, s.estimated.theta)),
                truth: t.compose(&RelPose::new(s.truth.x, s.truth.y, s.truth.theta)),
            })
            .collect();
        let moved = RunLog::new("q", moved).unwrap();
        let a = localization_error(&RelationSample::exhaustive(&run), Default::default()).unwrap();
        let b = localization_error(&RelationSample::exhaustive(&moved), Default::default()).unwrap();
        prop_assert!((a.eps_t - b.eps_t).abs() <= 1e-9 * a.eps_t.max(1e-12));
        prop_assert!((a.eps_r - b.eps_r).abs() <= 1e-9 * a.eps_r.max(1e-12));
    }

    #[test]
    fn ominus_of_compose_round_trips(a in pose(), b in pose()) {
        let d = ominus(&a, &b);
        let back = a.compose(&d);
        prop_assert!((back.x - b.x).abs() < 1e-9 && (back.y - b.y).abs() < 1e-9);
        let dt = (back.theta - b.theta).rem_euclid(std::f64::consts::TAU);
        prop_assert!(!(1e-9..=std::f64::consts::TAU - 1e-9).contains(&dt));
    }

    #[test]
    fn run_log_csv_round_trips(seed in 0u64..1000, n in 2usize..40) {
        let run = noisy_run("r", &wandering_path(n, 0.5, seed), OdometryNoise::default(), seed);
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        let back = RunLog::read_csv("r", buf.as_slice()).unwrap();
        prop_assert_eq!(back.samples(), run.samples());
    }

    #[test]
    fn sampled_error_is_seed_deterministic(seed in 0u64..1000) {
        let run = noisy_run("r", &wandering_path(80, 0.3, 1), OdometryNoise::default(), 2);
        let p = SamplingPolicy { seed, ..Default::default() };
        prop_assert_eq!(evaluate_run(&run, &p).unwrap(), evaluate_run(&run, &p).unwrap());
    }

    #[test]
    fn dataset_csv_round_trips(values in prop::collection::vec((0.0..2000.0f64, 0.0..5.0f64, 0.0..1.0f64), 1..20)) {
        let rows = values
            .iter()
            .enumerate()
            .map(|(i, &(a, b, y))| DatasetRow {
                env_id: format!("env{i}"),
                features: vec![a, b],
                targets: vec![y],
            })
            .collect();
        let data = Dataset::new(vec!["vtd_m".into(), "vtr_rad".into()], vec![Target::StdEpsR], rows).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, data);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn room_graphs_stay_inside_free_space(w in 20usize..70, h in 20usize..70) {
        let map = two_rooms(w, h, 0.05);
        let mask = interior_mask(&map).unwrap();
        let build = build_voronoi(&map, &mask, &VoronoiParams::default()).unwrap();
        for &(r, c) in build.graph.nodes() {
            prop_assert!(mask.get(r, c));
            prop_assert!(!map.get(r, c).is_blocking());
        }
        prop_assert_eq!(build.graph.component_count(), 1);
    }
}

#[test]
fn small_room_is_seen_from_anywhere_with_full_view() {
    let map = bordered_room(30, 30, 0.05);
    for start in [(0.3, 0.3), (1.2, 0.4), (0.7, 1.3)] {
        let mut cfg = FeatureConfig {
            start: Some(start),
            ..Default::default()
        };
        cfg.traversal.sensor.fov = std::f64::consts::TAU;
        let f = extract_features(&map, &cfg).unwrap().features;
        assert_eq!((f.vtd_m, f.vtr_rad), (0.0, 0.0));
    }
}
