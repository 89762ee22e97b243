//! Browser demo: explore a synthetic floor plan, inspect the pair-error
//! distribution of a simulated run, and fit the reference regression data.
//!
//! Each exported function wraps a plain Rust function so the logic can be
//! tested natively.

use mapbench_core::features::{extract_features, FeatureConfig};
use mapbench_core::gridmap::GridMap;
use mapbench_core::models::{fit, kfold_cv, Dataset, ModelSpec, Target};
use mapbench_core::synth::{bordered_room, l_shape, noisy_run, office, two_rooms, wandering_path, OdometryNoise};
use mapbench_core::trajectory::{localization_error, sample_relations, ErrorMode, SamplingPolicy};
use mapbench_core::voronoi::render_debug;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const RES: f64 = 0.1;
const PATH_RGB: [u8; 3] = [20, 170, 60];

#[derive(Debug, Clone, Serialize)]
pub struct Exploration {
    pub width: usize,
    pub height: usize,
    /// RGBA, row-major.
    #[serde(skip)]
    pub pixels: Vec<u8>,
    pub vtd_m: f64,
    pub vtr_rad: f64,
    pub nodes: usize,
    pub edges: usize,
    pub area_m2: f64,
}

pub fn synthetic_map(kind: &str, width: usize, height: usize, rooms: usize) -> Result<GridMap, String> {
    let (w, h) = (width.clamp(20, 400), height.clamp(20, 400));
    Ok(match kind {
        "room" => bordered_room(w, h, RES),
        "two_rooms" => two_rooms(w, h, RES),
        "l_shape" => l_shape(w, (w / 5).max(6), RES),
        "office" => office(w, h.max(60), rooms.clamp(1, 8), RES),
        other => return Err(format!("unknown layout `{other}`")),
    })
}

fn line(rgba: &mut [u8], w: usize, a: (usize, usize), b: (usize, usize)) {
    let (r0, c0) = (a.0 as i64, a.1 as i64);
    let (r1, c1) = (b.0 as i64, b.1 as i64);
    let n = (r1 - r0).abs().max((c1 - c0).abs()).max(1);
    for k in 0..=n {
        let r = r0 + (r1 - r0) * k / n;
        let c = c0 + (c1 - c0) * k / n;
        let i = (r as usize * w + c as usize) * 4;
        rgba[i..i + 3].copy_from_slice(&PATH_RGB);
    }
}

pub fn explore_map(kind: &str, width: usize, height: usize, rooms: usize, sensor_range: f64) -> Result<Exploration, String> {
    let map = synthetic_map(kind, width, height, rooms)?;
    let mut cfg = FeatureConfig::default();
    cfg.traversal.sensor.range = sensor_range.clamp(0.5, 60.0);
    cfg.keep_trace = true;
    let fx = extract_features(&map, &cfg).map_err(|e| e.to_string())?;
    let rgb = render_debug(&map, &fx.voronoi).into_raw();
    let mut pixels: Vec<u8> = rgb.chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect();
    let g = &fx.traversal.graph;
    for leg in &fx.traversal.legs {
        for pair in leg.path.windows(2) {
            line(&mut pixels, map.width(), g.nodes()[pair[0]], g.nodes()[pair[1]]);
        }
    }
    Ok(Exploration {
        width: map.width(),
        height: map.height(),
        pixels,
        vtd_m: fx.features.vtd_m,
        vtr_rad: fx.features.vtr_rad,
        nodes: fx.features.node_count,
        edges: fx.features.edge_count,
        area_m2: fx.features.area_m2,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorSweep {
    pub poses: usize,
    pub total_pairs: u64,
    pub pairs: usize,
    pub eps_t: f64,
    pub eps_r: f64,
    /// Histogram of translational pair errors over `[0, max_t]`.
    pub hist_t: Vec<u32>,
    pub max_t: f64,
    pub hist_r: Vec<u32>,
    pub max_r: f64,
}

fn histogram(values: &[f64], bins: usize) -> (Vec<u32>, f64) {
    let max = values.iter().cloned().fold(0.0, f64::max);
    let mut h = vec![0; bins];
    for &v in values {
        let b = if max > 0.0 { ((v / max) * bins as f64) as usize } else { 0 };
        h[b.min(bins - 1)] += 1;
    }
    (h, max)
}

pub fn error_sweep(steps: usize, trans_per_m: f64, rot_per_m: f64, seed: u64, bins: usize) -> Result<ErrorSweep, String> {
    let steps = steps.clamp(10, 5000);
    let truth = wandering_path(steps, 0.2, seed);
    let run = noisy_run("demo", &truth, OdometryNoise { trans_per_m, rot_per_m }, seed.wrapping_add(1));
    let policy = SamplingPolicy {
        seed,
        ..SamplingPolicy::default()
    };
    let rel = sample_relations(&run, &policy);
    let e = localization_error(&rel, policy.mode).map_err(|e| e.to_string())?;
    let (ts, rs): (Vec<f64>, Vec<f64>) = rel.residuals().iter().map(|r| ErrorMode::Absolute.terms(r)).unzip();
    let bins = bins.clamp(1, 200);
    let (hist_t, max_t) = histogram(&ts, bins);
    let (hist_r, max_r) = histogram(&rs, bins);
    Ok(ErrorSweep {
        poses: run.len(),
        total_pairs: run.pair_count(),
        pairs: e.n,
        eps_t: e.eps_t,
        eps_r: e.eps_r,
        hist_t,
        max_t,
        hist_r,
        max_r,
    })
}

fn reference_csv(system: &str, target: Target) -> Option<&'static str> {
    Some(match (system, target) {
        ("gmapping", Target::MeanEpsT) => include_str!("../data/gmapping_mean_eps_t.csv"),
        ("gmapping", Target::StdEpsT) => include_str!("../data/gmapping_std_eps_t.csv"),
        ("gmapping", Target::MeanEpsR) => include_str!("../data/gmapping_mean_eps_r.csv"),
        ("gmapping", Target::StdEpsR) => include_str!("../data/gmapping_std_eps_r.csv"),
        ("karto", Target::MeanEpsT) => include_str!("../data/karto_mean_eps_t.csv"),
        ("karto", Target::StdEpsT) => include_str!("../data/karto_std_eps_t.csv"),
        ("karto", Target::MeanEpsR) => include_str!("../data/karto_mean_eps_r.csv"),
        ("karto", Target::StdEpsR) => include_str!("../data/karto_std_eps_r.csv"),
        _ => return None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub target: Target,
    pub model: &'static str,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Fitted curve sampled over the x range.
    pub curve_x: Vec<f64>,
    pub curve_y: Vec<f64>,
    pub r2: f64,
    pub rmse: f64,
    pub nrmse: f64,
}

pub fn fit_reference(system: &str, target: &str, model: &str, folds: usize) -> Result<FitResult, String> {
    let target: Target = target.parse().map_err(|e: mapbench_core::models::ModelError| e.to_string())?;
    let text = reference_csv(system, target).ok_or_else(|| format!("no reference data for `{system}`"))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for rec in rdr.deserialize::<(f64, f64)>() {
        let (a, b) = rec.map_err(|e| e.to_string())?;
        x.push(a);
        y.push(b);
    }
    let data = Dataset::from_xy("vtd_m", target, &x, &y).map_err(|e| e.to_string())?;
    let spec = match model {
        "ols" => ModelSpec::Ols,
        "enet" => ModelSpec::Enet(Default::default()),
        "gp" => ModelSpec::Gp(Default::default()),
        other => return Err(format!("unknown model `{other}`")),
    };
    let feats = vec!["vtd_m".to_string()];
    let m = fit(&spec, &data, &feats, target).map_err(|e| e.to_string())?;
    let cv = kfold_cv(&data, &spec, &feats, target, folds.clamp(2, x.len()), 0).map_err(|e| e.to_string())?;
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.05 * (hi - lo);
    let curve_x: Vec<f64> = (0..=60).map(|i| lo - pad + (hi - lo + 2.0 * pad) * i as f64 / 60.0).collect();
    let curve_y = curve_x.iter().map(|&v| m.eval(&[v])).collect();
    Ok(FitResult {
        target,
        model: spec.name(),
        x,
        y,
        curve_x,
        curve_y,
        r2: cv.r2,
        rmse: cv.rmse,
        nrmse: cv.nrmse,
    })
}

fn js_err(e: String) -> JsError {
    JsError::new(&e)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serialisable")
}

/// Map, skeleton and traversal path of a synthetic layout.
#[wasm_bindgen]
pub struct ExploreView {
    inner: Exploration,
}

#[wasm_bindgen]
impl ExploreView {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.inner.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.inner.height
    }

    /// RGBA pixels for an `ImageData`.
    pub fn pixels(&self) -> Vec<u8> {
        self.inner.pixels.clone()
    }

    /// Features as JSON.
    pub fn summary(&self) -> String {
        to_json(&self.inner)
    }
}

#[wasm_bindgen]
pub fn explore(kind: &str, width: usize, height: usize, rooms: usize, sensor_range: f64) -> Result<ExploreView, JsError> {
    explore_map(kind, width, height, rooms, sensor_range)
        .map(|inner| ExploreView { inner })
        .map_err(js_err)
}

/// Pair-error statistics of a simulated run, as JSON.
#[wasm_bindgen(js_name = errorSweep)]
pub fn error_sweep_js(steps: usize, trans_per_m: f64, rot_per_m: f64, seed: u32, bins: usize) -> Result<String, JsError> {
    error_sweep(steps, trans_per_m, rot_per_m, seed as u64, bins)
        .map(|s| to_json(&s))
        .map_err(js_err)
}

/// Regression fit and cross-validation on the reference data, as JSON.
#[wasm_bindgen(js_name = fitReference)]
pub fn fit_reference_js(system: &str, target: &str, model: &str, folds: usize) -> Result<String, JsError> {
    fit_reference(system, target, model, folds)
        .map(|f| to_json(&f))
        .map_err(js_err)
}
