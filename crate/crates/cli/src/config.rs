//! Settings file: flat `key = value` TOML. Command-line flags override it;
//! anything unset keeps the library default.

use std::path::Path;

use anyhow::{Context, Result};
use mapbench_core::features::FeatureConfig;
use mapbench_core::models::{ElasticNetParams, GpParams, ModelSpec};
use mapbench_core::trajectory::{ErrorMode, SamplingPolicy};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,

    pub confidence: Option<f64>,
    pub margin_t: Option<f64>,
    pub margin_r: Option<f64>,
    pub pilot_pairs: Option<usize>,
    pub pilot_runs: Option<usize>,
    pub error_mode: Option<ErrorMode>,
    pub square_z: Option<bool>,

    pub fov_deg: Option<f64>,
    pub angular_res_deg: Option<f64>,
    pub sensor_range: Option<f64>,
    pub rotation_min_dist: Option<f64>,
    pub waypoint_spacing: Option<f64>,
    pub ridge_tolerance: Option<f64>,
    pub dilation_kernel: Option<usize>,
    pub min_spur_length: Option<usize>,
    pub collinear_tolerance: Option<f64>,

    pub model: Option<String>,
    pub features: Option<Vec<String>>,
    pub folds: Option<usize>,
    pub l1: Option<f64>,
    pub l2: Option<f64>,
    pub gp_length_scale: Option<f64>,
    pub gp_noise: Option<f64>,
    pub gp_optimize: Option<bool>,
    pub out_dir: Option<String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn sampling(&self, seed: u64) -> SamplingPolicy {
        let d = SamplingPolicy::default();
        SamplingPolicy {
            confidence: self.confidence.unwrap_or(d.confidence),
            margin_t: self.margin_t.unwrap_or(d.margin_t),
            margin_r: self.margin_r.unwrap_or(d.margin_r),
            pilot_pairs: self.pilot_pairs.unwrap_or(d.pilot_pairs),
            pilot_runs: self.pilot_runs.unwrap_or(d.pilot_runs),
            seed,
            square_z: self.square_z.unwrap_or(d.square_z),
            mode: self.error_mode.unwrap_or(d.mode),
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        let mut cfg = FeatureConfig::default();
        let t = &mut cfg.traversal;
        if let Some(v) = self.fov_deg {
            t.sensor.fov = v.to_radians();
        }
        if let Some(v) = self.angular_res_deg {
            t.sensor.angular_resolution = v.to_radians();
        }
        if let Some(v) = self.sensor_range {
            t.sensor.range = v;
        }
        if let Some(v) = self.rotation_min_dist {
            t.rotation_min_dist = v;
        }
        if let Some(v) = self.waypoint_spacing {
            t.waypoint_spacing = v;
        }
        let v = &mut cfg.voronoi;
        if let Some(x) = self.ridge_tolerance {
            v.ridge_tolerance = x;
        }
        if let Some(x) = self.dilation_kernel {
            v.dilation_kernel = x;
        }
        if let Some(x) = self.min_spur_length {
            v.min_spur_length = x;
        }
        if let Some(x) = self.collinear_tolerance {
            v.collinear_tolerance = x;
        }
        cfg
    }

    pub fn model_spec(&self, kind: Option<&str>) -> Result<ModelSpec> {
        let kind = kind.or(self.model.as_deref()).unwrap_or("ols");
        Ok(match kind {
            "ols" => ModelSpec::Ols,
            "enet" => ModelSpec::Enet(ElasticNetParams {
                l1: self.l1.unwrap_or(0.0),
                l2: self.l2.unwrap_or(0.0),
                ..Default::default()
            }),
            "gp" => ModelSpec::Gp(GpParams {
                length_scale: self.gp_length_scale,
                signal_variance: None,
                noise_variance: self.gp_noise,
                optimize: self.gp_optimize.unwrap_or(false),
            }),
            other => anyhow::bail!("unknown model `{other}` (expected ols, enet or gp)"),
        })
    }

    pub fn feature_list(&self) -> Vec<String> {
        self.features.clone().unwrap_or_else(|| vec!["vtd_m".to_string()])
    }

    pub fn folds(&self) -> usize {
        self.folds.unwrap_or(5)
    }
}
