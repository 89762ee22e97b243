//! Batch orchestration over a manifest: features -> eval -> fit -> predict.
//!
//! Workers get immutable inputs and return values; only the orchestrator
//! touches the file system for writing. Every artifact records a digest of
//! its inputs and is rebuilt only when that digest changes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use log::{info, warn};
use mapbench_core::datastore::{
    assemble_dataset, manifest_dir, save_manifest, write_if_changed, EnvironmentRecord, Manifest,
};
use mapbench_core::features::{extract_features, FeatureConfig, FeatureVector};
use mapbench_core::gridmap::{load_gridmap, MapMeta};
use mapbench_core::models::{fit, kfold_cv, write_report_csv, Dataset, ModelFile, ModelSpec, ReportRow, Target, TrainingMeta};
use mapbench_core::trajectory::{aggregate, estimate_run_count, evaluate_run, PerformanceVector, RunCountEstimate, RunLog, SamplingPolicy};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Features,
    Eval,
    Fit,
    Predict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Computed,
    UpToDate,
    NotRun,
    Failed,
}

impl fmt::Display for StageStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageStatus::Computed => "computed",
            StageStatus::UpToDate => "up-to-date",
            StageStatus::NotRun => "-",
            StageStatus::Failed => "FAILED",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvStatus {
    pub env_id: String,
    pub features: StageStatus,
    pub eval: StageStatus,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub environments: Vec<EnvStatus>,
    pub failed: usize,
    pub dataset_rows: usize,
    pub models: Vec<String>,
    /// Files whose contents changed in this run.
    pub written: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub stages: Vec<Stage>,
    pub out_dir: Option<PathBuf>,
    pub jobs: usize,
    pub seed: u64,
    pub config: Config,
    pub model: Option<String>,
    pub date: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesArtifact {
    pub env_id: String,
    pub input_hash: String,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: String,
    pub eps_t: f64,
    pub eps_r: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceArtifact {
    pub env_id: String,
    pub input_hash: String,
    pub policy: SamplingPolicy,
    pub runs: Vec<RunSummary>,
    pub performance: PerformanceVector,
    pub run_count: RunCountEstimate,
}

/// SHA-256 over length-prefixed parts, hex encoded.
pub fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-run sampling seed derived from the global seed.
pub fn derive_seed(seed: u64, env_id: &str, run: usize) -> u64 {
    let d = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(env_id.as_bytes())
        .chain_update((run as u64).to_le_bytes())
        .finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serialisable");
    s.push(b'\n');
    s
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Option<T> {
    serde_json::from_slice(&fs::read(path).ok()?).ok()
}

struct Layout {
    out: PathBuf,
}

impl Layout {
    fn features(&self, env: &str) -> PathBuf {
        self.out.join("features").join(format!("{env}.json"))
    }
    fn performance(&self, env: &str) -> PathBuf {
        self.out.join("performance").join(format!("{env}.json"))
    }
    fn model(&self, t: Target) -> PathBuf {
        self.out.join("models").join(format!("{}.json", t.name()))
    }
    fn dataset(&self) -> PathBuf {
        self.out.join("dataset.csv")
    }
    fn report(&self) -> PathBuf {
        self.out.join("report.csv")
    }
    fn predictions(&self) -> PathBuf {
        self.out.join("predictions.csv")
    }
}

/// Worker output: status, value, and bytes the orchestrator should write.
type Outcome<T> = Result<(StageStatus, T, Option<Vec<u8>>)>;

fn features_worker(env: &EnvironmentRecord, base: &Path, cfg: &FeatureConfig, artifact: &Path) -> Outcome<FeatureVector> {
    let map_path = base.join(&env.map);
    let bytes = fs::read(&map_path).with_context(|| format!("reading map {}", map_path.display()))?;
    let meta = MapMeta {
        resolution: env.resolution,
        ..MapMeta::default()
    };
    let mut sidecar = Vec::new();
    for ext in ["yaml", "meta"] {
        let mut full = map_path.clone().into_os_string();
        full.push(format!(".{ext}"));
        for cand in [PathBuf::from(full), map_path.with_extension(ext)] {
            if let Ok(b) = fs::read(&cand) {
                sidecar.extend(b);
            }
        }
    }
    let mut cfg = *cfg;
    cfg.start = env.start.map(|s| (s[0], s[1]));
    let cfg_json = serde_json::to_vec(&cfg)?;
    let res = serde_json::to_vec(&env.resolution)?;
    let hash = digest(&[b"features/1", env.env_id.as_bytes(), &bytes, &sidecar, &res, &cfg_json]);
    if let Some(old) = read_json::<FeaturesArtifact>(artifact) {
        if old.input_hash == hash {
            return Ok((StageStatus::UpToDate, old.features, None));
        }
    }
    let map = load_gridmap(&map_path, &meta)?;
    let fx = extract_features(&map, &cfg)?;
    let art = FeaturesArtifact {
        env_id: env.env_id.clone(),
        input_hash: hash,
        features: fx.features,
    };
    Ok((StageStatus::Computed, art.features.clone(), Some(to_json(&art))))
}

fn eval_worker(env: &EnvironmentRecord, base: &Path, policy: &SamplingPolicy, artifact: &Path) -> Outcome<PerformanceVector> {
    if env.runs.is_empty() {
        bail!("no run logs listed");
    }
    let mut blobs = Vec::with_capacity(env.runs.len());
    for p in &env.runs {
        let path = base.join(p);
        blobs.push(fs::read(&path).with_context(|| format!("reading run {}", path.display()))?);
    }
    let policy_json = serde_json::to_vec(policy)?;
    let mut parts: Vec<&[u8]> = vec![b"eval/1", env.env_id.as_bytes(), &policy_json];
    parts.extend(blobs.iter().map(|b| b.as_slice()));
    let hash = digest(&parts);
    if let Some(old) = read_json::<PerformanceArtifact>(artifact) {
        if old.input_hash == hash {
            return Ok((StageStatus::UpToDate, old.performance, None));
        }
    }
    let mut errors = Vec::with_capacity(blobs.len());
    let mut runs = Vec::with_capacity(blobs.len());
    for (i, (blob, p)) in blobs.iter().zip(&env.runs).enumerate() {
        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let log = RunLog::read_csv(id.clone(), &blob[..]).with_context(|| format!("run {}", p.display()))?;
        let pol = SamplingPolicy {
            seed: derive_seed(policy.seed, &env.env_id, i),
            ..*policy
        };
        let e = evaluate_run(&log, &pol)?;
        runs.push(RunSummary {
            run: id,
            eps_t: e.eps_t,
            eps_r: e.eps_r,
            pairs: e.n,
        });
        errors.push(e);
    }
    let performance = aggregate(&errors)?;
    let art = PerformanceArtifact {
        env_id: env.env_id.clone(),
        input_hash: hash,
        policy: *policy,
        runs,
        performance,
        run_count: estimate_run_count(&errors, policy),
    };
    Ok((StageStatus::Computed, performance, Some(to_json(&art))))
}

fn write(path: &Path, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    if write_if_changed(path, bytes)? {
        info!("wrote {}", path.display());
        written.push(path.to_path_buf());
    }
    Ok(())
}

/// Runs the requested stages over every environment of the manifest.
pub fn run_pipeline(manifest_path: &Path, opts: &PipelineOptions) -> Result<PipelineSummary> {
    let text = fs::read_to_string(manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let mut manifest = Manifest::from_json(&text, manifest_path)?;
    manifest.check()?;
    let base = manifest_dir(manifest_path);
    let layout = Layout {
        out: opts
            .out_dir
            .clone()
            .or_else(|| opts.config.out_dir.as_ref().map(|d| base.join(d)))
            .unwrap_or_else(|| base.join("out")),
    };
    let run = |s: Stage| opts.stages.contains(&s);
    let feature_cfg = opts.config.feature_config();
    let policy = opts.config.sampling(opts.seed);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.jobs).build()?;

    let mut status: Vec<EnvStatus> = manifest
        .environments
        .iter()
        .map(|e| EnvStatus {
            env_id: e.env_id.clone(),
            features: StageStatus::NotRun,
            eval: StageStatus::NotRun,
            errors: Vec::new(),
        })
        .collect();
    let mut written = Vec::new();

    if run(Stage::Features) {
        let results: Vec<Outcome<FeatureVector>> = pool.install(|| {
            manifest
                .environments
                .par_iter()
                .map(|e| features_worker(e, &base, &feature_cfg, &layout.features(&e.env_id)))
                .collect()
        });
        for ((env, st), r) in manifest.environments.iter_mut().zip(&mut status).zip(results) {
            match r {
                Ok((s, fv, bytes)) => {
                    if let Some(b) = bytes {
                        write(&layout.features(&env.env_id), &b, &mut written)?;
                    }
                    st.features = s;
                    env.features = Some(fv);
                }
                Err(e) => {
                    warn!("{}: features failed: {e:#}", env.env_id);
                    st.features = StageStatus::Failed;
                    st.errors.push(format!("features: {e:#}"));
                }
            }
        }
    }

    if run(Stage::Eval) {
        let results: Vec<Outcome<PerformanceVector>> = pool.install(|| {
            manifest
                .environments
                .par_iter()
                .map(|e| eval_worker(e, &base, &policy, &layout.performance(&e.env_id)))
                .collect()
        });
        for ((env, st), r) in manifest.environments.iter_mut().zip(&mut status).zip(results) {
            match r {
                Ok((s, pv, bytes)) => {
                    if let Some(b) = bytes {
                        write(&layout.performance(&env.env_id), &b, &mut written)?;
                    }
                    st.eval = s;
                    env.performance = Some(pv);
                }
                Err(e) => {
                    warn!("{}: eval failed: {e:#}", env.env_id);
                    st.eval = StageStatus::Failed;
                    st.errors.push(format!("eval: {e:#}"));
                }
            }
        }
    }

    if (run(Stage::Features) || run(Stage::Eval))
        && save_manifest(&manifest, manifest_path)? {
            written.push(manifest_path.to_path_buf());
        }

    let failed_ids: Vec<&str> = status
        .iter()
        .filter(|s| !s.errors.is_empty())
        .map(|s| s.env_id.as_str())
        .collect();
    let usable = Manifest {
        environments: manifest
            .environments
            .iter()
            .filter(|e| !failed_ids.contains(&e.env_id.as_str()) && e.missing_stages().is_empty())
            .cloned()
            .collect(),
        ..manifest.clone()
    };

    let mut models = Vec::new();
    let mut dataset_rows = 0;
    if run(Stage::Fit) || run(Stage::Predict) {
        let data = assemble_dataset(&usable)?;
        dataset_rows = data.len();
        if run(Stage::Fit) {
            if data.len() < 3 {
                bail!("fitting needs at least 3 complete environments, have {}", data.len());
            }
            let mut csv = Vec::new();
            data.write_csv(&mut csv)?;
            write(&layout.dataset(), &csv, &mut written)?;
            let spec = opts.config.model_spec(opts.model.as_deref())?;
            let feats = opts.config.feature_list();
            let k = opts.config.folds().min(data.len());
            let mut report = Vec::new();
            for t in Target::ALL {
                let path = layout.model(t);
                let (file, row) = fit_target(&data, &csv, &spec, &feats, t, k, opts, &path)?;
                if let Some(file) = file {
                    write(&path, file.to_json()?.as_bytes(), &mut written)?;
                }
                report.push(row);
                models.push(path.display().to_string());
            }
            let mut rep = Vec::new();
            write_report_csv(&report, &mut rep)?;
            write(&layout.report(), &rep, &mut written)?;
        }
        if run(Stage::Predict) {
            let mut model_files = Vec::new();
            for t in Target::ALL {
                let p = layout.model(t);
                model_files.push(ModelFile::load(&p).with_context(|| format!("loading {}", p.display()))?.model);
            }
            let bytes = predictions_csv(&usable, &model_files)?;
            write(&layout.predictions(), &bytes, &mut written)?;
        }
    }

    Ok(PipelineSummary {
        failed: failed_ids.len(),
        environments: status,
        dataset_rows,
        models,
        written,
    })
}

/// Fits one target unless the stored model was trained on identical inputs.
#[allow(clippy::too_many_arguments)]
fn fit_target(
    data: &Dataset,
    csv: &[u8],
    spec: &ModelSpec,
    feats: &[String],
    t: Target,
    k: usize,
    opts: &PipelineOptions,
    path: &Path,
) -> Result<(Option<ModelFile>, ReportRow)> {
    let hash = digest(&[
        b"fit/1",
        csv,
        &serde_json::to_vec(spec)?,
        &serde_json::to_vec(feats)?,
        t.name().as_bytes(),
        &(k as u64).to_le_bytes(),
        &opts.seed.to_le_bytes(),
    ]);
    let row = |cv: &mapbench_core::models::CvSummary, y: (f64, f64)| ReportRow {
        target: t,
        model: spec.name().to_string(),
        features: feats.to_vec(),
        r2: cv.r2,
        rmse: cv.rmse,
        nrmse: cv.nrmse,
        y_min: y.0,
        y_max: y.1,
    };
    let y = data.target_column(t)?;
    let yr = (
        y.iter().copied().fold(f64::INFINITY, f64::min),
        y.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    if let Some(old) = read_json::<ModelFile>(path) {
        if old.training_meta.input_hash.as_deref() == Some(hash.as_str()) {
            if let Some(cv) = old.training_meta.cv {
                return Ok((None, row(&cv, yr)));
            }
        }
    }
    let model = fit(spec, data, feats, t)?;
    let cv = kfold_cv(data, spec, feats, t, k, opts.seed)?.summary();
    let file = ModelFile {
        model,
        training_meta: TrainingMeta {
            seed: opts.seed,
            k,
            date: opts.date.clone(),
            cv: Some(cv),
            input_hash: Some(hash),
        },
    };
    Ok((Some(file), row(&cv, yr)))
}

fn predictions_csv(m: &Manifest, models: &[mapbench_core::models::Model]) -> Result<Vec<u8>> {
    let mut envs: Vec<&EnvironmentRecord> = m.environments.iter().filter(|e| e.features.is_some()).collect();
    envs.sort_by(|a, b| a.env_id.cmp(&b.env_id));
    let mut out = String::from("env_id");
    for t in Target::ALL {
        out.push_str(&format!(",pred_{t}"));
    }
    for t in Target::ALL {
        out.push_str(&format!(",obs_{t}"));
    }
    out.push('\n');
    for e in envs {
        let f = e.features.as_ref().expect("filtered");
        let pred = mapbench_core::models::predict_performance(models, f)?;
        out.push_str(&e.env_id);
        for v in pred {
            out.push_str(&format!(",{v}"));
        }
        for t in Target::ALL {
            match &e.performance {
                Some(p) => out.push_str(&format!(",{}", t.of(p))),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    Ok(out.into_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_separates_parts() {
        assert_ne!(digest(&[b"ab", b"c"]), digest(&[b"a", b"bc"]));
        assert_eq!(digest(&[b"x"]), digest(&[b"x"]));
    }

    #[test]
    fn derived_seeds_differ_per_run() {
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(2, "a", 0));
        assert_eq!(derive_seed(1, "a", 0), derive_seed(1, "a", 0));
    }
}
