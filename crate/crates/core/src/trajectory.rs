//! Localization error over sampled pairs of relative displacements.
//!
//! A run is a time-aligned sequence of estimated and ground-truth planar
//! poses. For a pair of time steps `(i, j)` the relative motion of the
//! estimate is compared with the relative motion of the ground truth; the
//! run error averages that residual over a random sample of pairs whose size
//! follows the usual margin-of-error formula.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Name of the generator behind [`SamplingPolicy::seed`], recorded in reports.
pub const RNG_ALGORITHM: &str = "ChaCha8";

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("a run needs at least two poses, got {0}")]
    TooShort(usize),
    #[error("timestamps must be strictly increasing (row {row}: {prev} then {next})")]
    NonIncreasing { row: usize, prev: f64, next: f64 },
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
    #[error("relation sample is empty")]
    EmptySample,
    #[error("no run errors to aggregate")]
    NoRuns,
    #[error("cannot mix error modes ({0} and {1}) in one aggregate")]
    MixedModes(ErrorMode, ErrorMode),
    #[error("pair ({i}, {j}) out of range for a run of {len} poses")]
    BadPair { i: usize, j: usize, len: usize },
    #[error("confidence must lie in (0, 1), got {0}")]
    BadConfidence(f64),
    #[error("margin must be positive, got {0}")]
    BadMargin(f64),
    #[error("run log csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("run log csv is missing column `{0}`")]
    MissingColumn(&'static str),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    // rem_euclid can return TAU itself for tiny negative inputs
    if r <= -PI {
        r += TAU;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// `self ⊕ d`: applies the relative motion `d` expressed in this frame.
    pub fn compose(&self, d: &RelPose) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * d.dx - s * d.dy,
            self.y + s * d.dx + c * d.dy,
            self.theta + d.dtheta,
        )
    }
}

/// Relative planar motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelPose {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl RelPose {
    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        Self {
            dx,
            dy,
            dtheta: wrap_angle(dtheta),
        }
    }

    pub fn as_pose(&self) -> Pose2 {
        Pose2::new(self.dx, self.dy, self.dtheta)
    }

    pub fn translation_norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    pub fn is_identity(&self) -> bool {
        self.dx == 0.0 && self.dy == 0.0 && self.dtheta == 0.0
    }
}

/// `b ⊖ a`: the pose `b` expressed in the frame of `a`.
pub fn ominus(a: &Pose2, b: &Pose2) -> RelPose {
    let (s, c) = a.theta.sin_cos();
    let (tx, ty) = (b.x - a.x, b.y - a.y);
    RelPose::new(c * tx + s * ty, -s * tx + c * ty, b.theta - a.theta)
}

/// Residual between the estimated relative motion from `i` to `j` and the
/// ground-truth one: `δ_ij ⊖ δ*_ij`, with the ground-truth motion as the
/// reference frame.
pub fn pair_residual(est_i: &Pose2, est_j: &Pose2, gt_i: &Pose2, gt_j: &Pose2) -> RelPose {
    let est = ominus(est_i, est_j);
    let gt = ominus(gt_i, gt_j);
    ominus(&gt.as_pose(), &est.as_pose())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub t: f64,
    pub estimated: Pose2,
    pub truth: Pose2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub id: String,
    samples: Vec<PoseSample>,
}

const RUNLOG_HEADER: [&str; 7] = ["t", "est_x", "est_y", "est_theta", "gt_x", "gt_y", "gt_theta"];

impl RunLog {
    pub fn new(id: impl Into<String>, samples: Vec<PoseSample>) -> Result<Self, TrajectoryError> {
        if samples.len() < 2 {
            return Err(TrajectoryError::TooShort(samples.len()));
        }
        for (row, s) in samples.iter().enumerate() {
            let vals = [
                s.t,
                s.estimated.x,
                s.estimated.y,
                s.estimated.theta,
                s.truth.x,
                s.truth.y,
                s.truth.theta,
            ];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(TrajectoryError::NonFinite(row));
            }
        }
        for (row, w) in samples.windows(2).enumerate() {
            if w[1].t <= w[0].t {
                return Err(TrajectoryError::NonIncreasing {
                    row: row + 1,
                    prev: w[0].t,
                    next: w[1].t,
                });
            }
        }
        Ok(Self {
            id: id.into(),
            samples,
        })
    }

    pub fn samples(&self) -> &[PoseSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of distinct `(i, j)` pairs with `i < j`.
    pub fn pair_count(&self) -> u64 {
        let t = self.samples.len() as u64;
        t * (t - 1) / 2
    }

    pub fn residual(&self, i: usize, j: usize) -> RelPose {
        let (a, b) = (&self.samples[i], &self.samples[j]);
        pair_residual(&a.estimated, &b.estimated, &a.truth, &b.truth)
    }

    /// Reads the `t,est_x,est_y,est_theta,gt_x,gt_y,gt_theta` format. Columns
    /// are matched by header name.
    pub fn read_csv<R: Read>(id: impl Into<String>, reader: R) -> Result<Self, TrajectoryError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut cols = [0usize; 7];
        for (k, name) in RUNLOG_HEADER.iter().enumerate() {
            cols[k] = headers
                .iter()
                .position(|h| h == *name)
                .ok_or(TrajectoryError::MissingColumn(name))?;
        }
        let mut samples = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut v = [0.0f64; 7];
            for k in 0..7 {
                v[k] = rec
                    .get(cols[k])
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or(TrajectoryError::NonFinite(row))?;
            }
            samples.push(PoseSample {
                t: v[0],
                estimated: Pose2::new(v[1], v[2], v[3]),
                truth: Pose2::new(v[4], v[5], v[6]),
            });
        }
        Self::new(id, samples)
    }

    pub fn load(path: &Path) -> Result<Self, TrajectoryError> {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let file = std::fs::File::open(path).map_err(csv::Error::from)?;
        Self::read_csv(id, file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TrajectoryError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(RUNLOG_HEADER)?;
        for s in &self.samples {
            w.serialize((
                s.t,
                s.estimated.x,
                s.estimated.y,
                s.estimated.theta,
                s.truth.x,
                s.truth.y,
                s.truth.theta,
            ))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMode {
    /// Mean residual norm (m) and mean absolute angle (rad).
    #[default]
    Absolute,
    /// Mean squared residual norm and mean squared angle.
    Squared,
}

impl fmt::Display for ErrorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorMode::Absolute => "absolute",
            ErrorMode::Squared => "squared",
        })
    }
}

impl std::str::FromStr for ErrorMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "absolute" | "abs" => Ok(ErrorMode::Absolute),
            "squared" | "sq" => Ok(ErrorMode::Squared),
            other => Err(format!("unknown error mode `{other}` (expected absolute|squared)")),
        }
    }
}

impl ErrorMode {
    /// Per-pair translational and rotational contributions.
    pub fn terms(self, r: &RelPose) -> (f64, f64) {
        let t = r.translation_norm();
        let a = wrap_angle(r.dtheta).abs();
        match self {
            ErrorMode::Absolute => (t, a),
            ErrorMode::Squared => (t * t, a * a),
        }
    }
}

/// Confidence / margin settings shared by pair sampling and run-count
/// estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub confidence: f64,
    /// Margin of error on the translational error (m).
    pub margin_t: f64,
    /// Margin of error on the rotational error (rad).
    pub margin_r: f64,
    /// Pairs drawn to estimate the residual variance before sizing the sample.
    pub pilot_pairs: usize,
    /// Runs in the pilot batch when estimating how many runs are needed.
    pub pilot_runs: usize,
    pub seed: u64,
    /// Use `z^2` in the sample-size formula (`false` reproduces the printed
    /// `z * s^2 / d^2`).
    pub square_z: bool,
    pub mode: ErrorMode,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            confidence: 0.99,
            margin_t: 0.02,
            margin_r: 0.01,
            pilot_pairs: 100,
            pilot_runs: 10,
            seed: 0,
            square_z: true,
            mode: ErrorMode::Absolute,
        }
    }
}

impl SamplingPolicy {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(TrajectoryError::BadConfidence(self.confidence));
        }
        for m in [self.margin_t, self.margin_r] {
            if !(m > 0.0 && m.is_finite()) {
                return Err(TrajectoryError::BadMargin(m));
            }
        }
        Ok(())
    }

    /// Two-sided z-score for the confidence level, rounded to three decimals
    /// like a printed quantile table (0.99 -> 2.576, 0.95 -> 1.960).
    pub fn z_score(&self) -> f64 {
        z_score(self.confidence)
    }

    fn z_factor(&self) -> f64 {
        let z = self.z_score();
        if self.square_z {
            z * z
        } else {
            z
        }
    }

    /// Unclamped sample size for the given variance and margin.
    pub fn required(&self, variance: f64, margin: f64) -> u64 {
        let n = (self.z_factor() * variance.max(0.0) / (margin * margin)).ceil();
        if n.is_finite() {
            n as u64
        } else {
            u64::MAX
        }
    }
}

pub fn z_score(confidence: f64) -> f64 {
    let alpha = 1.0 - confidence;
    let n = Normal::standard();
    let z = n.inverse_cdf(1.0 - alpha / 2.0);
    (z * 1000.0).round() / 1000.0
}

/// `N = ceil(z^2 s^2 / d^2)` clamped to `[lower, upper]`.
pub fn sample_size(variance: f64, margin: f64, policy: &SamplingPolicy, lower: u64, upper: u64) -> u64 {
    policy.required(variance, margin).max(lower).min(upper)
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Maps a linear index in `0..T(T-1)/2` to the pair `(i, j)`, `i < j`,
/// enumerating pairs row by row.
pub fn pair_from_index(k: u64, t: u64) -> (usize, usize) {
    // pairs before row i: i*(2t - i - 1)/2
    let before = |i: u64| i * (2 * t - i - 1) / 2;
    let (mut lo, mut hi) = (0u64, t - 1);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if before(mid) <= k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let i = lo;
    let j = i + 1 + (k - before(i));
    (i as usize, j as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSample {
    pairs: Vec<(usize, usize)>,
    residuals: Vec<RelPose>,
}

impl RelationSample {
    /// Builds a sample from explicit pairs, rejecting out-of-range indices.
    pub fn from_pairs(run: &RunLog, pairs: Vec<(usize, usize)>) -> Result<Self, TrajectoryError> {
        for &(i, j) in &pairs {
            if i >= j || j >= run.len() {
                return Err(TrajectoryError::BadPair { i, j, len: run.len() });
            }
        }
        let residuals = pairs.iter().map(|&(i, j)| run.residual(i, j)).collect();
        Ok(Self { pairs, residuals })
    }

    /// Every pair of the run.
    pub fn exhaustive(run: &RunLog) -> Self {
        let t = run.len();
        let pairs: Vec<_> = (0..t).flat_map(|i| (i + 1..t).map(move |j| (i, j))).collect();
        let residuals = pairs.iter().map(|&(i, j)| run.residual(i, j)).collect();
        Self { pairs, residuals }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn residuals(&self) -> &[RelPose] {
        &self.residuals
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn draw_pairs(run: &RunLog, n: u64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let total = run.pair_count();
    let n = n.min(total);
    let t = run.len() as u64;
    let mut idx: Vec<u64> = if total <= usize::MAX as u64 {
        index::sample(rng, total as usize, n as usize)
            .into_iter()
            .map(|k| k as u64)
            .collect()
    } else {
        unreachable!("pair count exceeds the address space")
    };
    idx.sort_unstable();
    idx.into_iter().map(|k| pair_from_index(k, t)).collect()
}

/// Draws a pilot sample to estimate the residual variance, sizes the final
/// sample for both margins (the larger requirement wins) and draws it
/// without replacement. Deterministic for a given seed.
pub fn sample_relations(run: &RunLog, policy: &SamplingPolicy) -> RelationSample {
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let total = run.pair_count();
    let pilot = draw_pairs(run, policy.pilot_pairs as u64, &mut rng);
    let (ts, rs): (Vec<f64>, Vec<f64>) = pilot
        .iter()
        .map(|&(i, j)| policy.mode.terms(&run.residual(i, j)))
        .unzip();
    let lower = (policy.pilot_pairs as u64).min(total);
    let n_t = sample_size(sample_variance(&ts), policy.margin_t, policy, lower, total);
    let n_r = sample_size(sample_variance(&rs), policy.margin_r, policy, lower, total);
    let pairs = draw_pairs(run, n_t.max(n_r), &mut rng);
    let residuals = pairs.iter().map(|&(i, j)| run.residual(i, j)).collect();
    RelationSample { pairs, residuals }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunError {
    pub eps_t: f64,
    pub eps_r: f64,
    pub mode: ErrorMode,
    pub n: usize,
}

pub fn localization_error(rel: &RelationSample, mode: ErrorMode) -> Result<RunError, TrajectoryError> {
    if rel.is_empty() {
        return Err(TrajectoryError::EmptySample);
    }
    let (mut st, mut sr) = (0.0, 0.0);
    for r in &rel.residuals {
        let (t, a) = mode.terms(r);
        st += t;
        sr += a;
    }
    let n = rel.len();
    Ok(RunError {
        eps_t: st / n as f64,
        eps_r: sr / n as f64,
        mode,
        n,
    })
}

/// Samples relations with `policy` and evaluates the run error.
pub fn evaluate_run(run: &RunLog, policy: &SamplingPolicy) -> Result<RunError, TrajectoryError> {
    policy.validate()?;
    localization_error(&sample_relations(run, policy), policy.mode)
}

/// Per-environment summary of repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceVector {
    pub mean_eps_t: f64,
    pub std_eps_t: f64,
    pub mean_eps_r: f64,
    pub std_eps_r: f64,
    pub runs: usize,
}

impl PerformanceVector {
    pub fn as_array(&self) -> [f64; 4] {
        [self.mean_eps_t, self.std_eps_t, self.mean_eps_r, self.std_eps_r]
    }
}

fn mean_and_population_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and standard deviation (denominator `|R|`) across runs.
pub fn aggregate(errors: &[RunError]) -> Result<PerformanceVector, TrajectoryError> {
    let first = errors.first().ok_or(TrajectoryError::NoRuns)?;
    if let Some(other) = errors.iter().find(|e| e.mode != first.mode) {
        return Err(TrajectoryError::MixedModes(first.mode, other.mode));
    }
    let (mean_eps_t, std_eps_t) = mean_and_population_std(errors.iter().map(|e| e.eps_t));
    let (mean_eps_r, std_eps_r) = mean_and_population_std(errors.iter().map(|e| e.eps_r));
    Ok(PerformanceVector {
        mean_eps_t,
        std_eps_t,
        mean_eps_r,
        std_eps_r,
        runs: errors.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCountEstimate {
    pub performed: usize,
    /// Runs required by the current variance estimate (never below the pilot size).
    pub required: usize,
    pub satisfied: bool,
    /// Further runs to perform before asking again.
    pub additional: usize,
}

/// One step of the iterative run-count search: with the runs performed so
/// far, how many does the margin-of-error formula ask for?
pub fn estimate_run_count(batch: &[RunError], policy: &SamplingPolicy) -> RunCountEstimate {
    let ts: Vec<f64> = batch.iter().map(|e| e.eps_t).collect();
    let rs: Vec<f64> = batch.iter().map(|e| e.eps_r).collect();
    let lower = policy.pilot_runs as u64;
    let n_t = sample_size(sample_variance(&ts), policy.margin_t, policy, lower, u64::MAX);
    let n_r = sample_size(sample_variance(&rs), policy.margin_r, policy, lower, u64::MAX);
    let required = n_t.max(n_r).min(usize::MAX as u64) as usize;
    let performed = batch.len();
    RunCountEstimate {
        performed,
        required,
        satisfied: required <= performed,
        additional: required.saturating_sub(performed),
    }
}
