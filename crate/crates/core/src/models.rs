//! Regression from environment features to localization performance.
//!
//! Ordinary least squares works in raw feature units so coefficients read
//! directly as metres of error per metre of VTD. Elastic net and Gaussian
//! process regression standardize features internally.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;
use crate::trajectory::PerformanceVector;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{rows} rows cannot fit {needed} parameters")]
    TooFewRows { rows: usize, needed: usize },
    #[error("design matrix is rank deficient (collinear or constant features: {0})")]
    SingularDesign(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("unknown target `{0}` (expected mean_eps_t, std_eps_t, mean_eps_r or std_eps_r)")]
    UnknownTarget(String),
    #[error("dataset has no `{0}` column")]
    MissingTarget(String),
    #[error("coordinate descent did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("kernel matrix is not positive definite; try a larger noise variance than {noise}")]
    NotPositiveDefinite { noise: f64 },
    #[error("{k} folds need 2 <= k <= rows ({rows})")]
    BadFolds { k: usize, rows: usize },
    #[error("cannot select {k} of {available} features")]
    BadSelection { k: usize, available: usize },
    #[error("penalties and hyperparameters must be finite and non-negative")]
    BadParameter,
    #[error("duplicate environment id `{0}`")]
    DuplicateEnv(String),
    #[error("environment `{env}`: column `{column}` is not a finite number")]
    NonFinite { env: String, column: String },
    #[error("dataset CSV: {0}")]
    Format(String),
    #[error("no model for target `{0}`; need one model per target")]
    MissingModel(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One of the four performance components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    MeanEpsT,
    StdEpsT,
    MeanEpsR,
    StdEpsR,
}

impl Target {
    pub const ALL: [Target; 4] = [Target::MeanEpsT, Target::StdEpsT, Target::MeanEpsR, Target::StdEpsR];

    pub fn name(self) -> &'static str {
        match self {
            Target::MeanEpsT => "mean_eps_t",
            Target::StdEpsT => "std_eps_t",
            Target::MeanEpsR => "mean_eps_r",
            Target::StdEpsR => "std_eps_r",
        }
    }

    pub fn of(self, p: &PerformanceVector) -> f64 {
        match self {
            Target::MeanEpsT => p.mean_eps_t,
            Target::StdEpsT => p.std_eps_t,
            Target::MeanEpsR => p.mean_eps_r,
            Target::StdEpsR => p.std_eps_r,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Target::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| ModelError::UnknownTarget(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub env_id: String,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Table of environments: named feature columns and named target columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    feature_names: Vec<String>,
    targets: Vec<Target>,
    rows: Vec<DatasetRow>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, targets: Vec<Target>, rows: Vec<DatasetRow>) -> Result<Self, ModelError> {
        let mut ids = HashSet::new();
        for row in &rows {
            if !ids.insert(row.env_id.as_str()) {
                return Err(ModelError::DuplicateEnv(row.env_id.clone()));
            }
            if row.features.len() != feature_names.len() || row.targets.len() != targets.len() {
                return Err(ModelError::Format(format!("row `{}` has the wrong number of columns", row.env_id)));
            }
            for (v, name) in row.features.iter().zip(&feature_names) {
                if !v.is_finite() {
                    return Err(ModelError::NonFinite {
                        env: row.env_id.clone(),
                        column: name.clone(),
                    });
                }
            }
            for (v, t) in row.targets.iter().zip(&targets) {
                if !v.is_finite() {
                    return Err(ModelError::NonFinite {
                        env: row.env_id.clone(),
                        column: t.name().to_string(),
                    });
                }
            }
        }
        Ok(Self {
            feature_names,
            targets,
            rows,
        })
    }

    /// Single-feature, single-target dataset, e.g. a regression scatter.
    pub fn from_xy(feature: &str, target: Target, x: &[f64], y: &[f64]) -> Result<Self, ModelError> {
        let rows = x
            .iter()
            .zip(y)
            .enumerate()
            .map(|(i, (&x, &y))| DatasetRow {
                env_id: format!("e{i:04}"),
                features: vec![x],
                targets: vec![y],
            })
            .collect();
        Self::new(vec![feature.to_string()], vec![target], rows)
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn rows(&self) -> &[DatasetRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize, ModelError> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ModelError::UnknownFeature(name.to_string()))
    }

    pub fn target_index(&self, target: Target) -> Result<usize, ModelError> {
        self.targets
            .iter()
            .position(|&t| t == target)
            .ok_or_else(|| ModelError::MissingTarget(target.name().to_string()))
    }

    pub fn column(&self, feature: &str) -> Result<Vec<f64>, ModelError> {
        let j = self.feature_index(feature)?;
        Ok(self.rows.iter().map(|r| r.features[j]).collect())
    }

    pub fn target_column(&self, target: Target) -> Result<Vec<f64>, ModelError> {
        let j = self.target_index(target)?;
        Ok(self.rows.iter().map(|r| r.targets[j]).collect())
    }

    /// Feature matrix (rows x selected features) and target vector.
    pub fn design(&self, features: &[String], target: Target) -> Result<(DMatrix<f64>, DVector<f64>), ModelError> {
        let idx = features
            .iter()
            .map(|f| self.feature_index(f))
            .collect::<Result<Vec<_>, _>>()?;
        let t = self.target_index(target)?;
        let x = DMatrix::from_fn(self.rows.len(), idx.len(), |i, j| self.rows[i].features[idx[j]]);
        let y = DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.targets[t]));
        Ok((x, y))
    }

    /// Subset of rows by position, keeping columns.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            targets: self.targets.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Reads `env_id,<features...>,<targets...>`; columns named after a
    /// [`Target`] are targets, every other column is a feature.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ModelError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let id_col = headers
            .iter()
            .position(|h| h == "env_id")
            .ok_or_else(|| ModelError::Format("missing `env_id` column".into()))?;
        let mut feature_cols = Vec::new();
        let mut target_cols = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            if i == id_col {
                continue;
            }
            match h.parse::<Target>() {
                Ok(t) => target_cols.push((i, t)),
                Err(_) => feature_cols.push((i, h.to_string())),
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let env_id = rec[id_col].to_string();
            let parse = |i: usize, name: &str| -> Result<f64, ModelError> {
                rec[i].parse::<f64>().map_err(|_| ModelError::NonFinite {
                    env: env_id.clone(),
                    column: name.to_string(),
                })
            };
            let features = feature_cols
                .iter()
                .map(|(i, n)| parse(*i, n))
                .collect::<Result<Vec<_>, _>>()?;
            let targets = target_cols
                .iter()
                .map(|(i, t)| parse(*i, t.name()))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(DatasetRow {
                env_id,
                features,
                targets,
            });
        }
        Self::new(
            feature_cols.into_iter().map(|(_, n)| n).collect(),
            target_cols.into_iter().map(|(_, t)| t).collect(),
            rows,
        )
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Floats use the shortest representation that round-trips.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ModelError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["env_id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.extend(self.targets.iter().map(|t| t.name().to_string()));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.env_id.clone()];
            rec.extend(row.features.iter().map(|v| v.to_string()));
            rec.extend(row.targets.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2_score(y: &[f64], yhat: &[f64]) -> f64 {
    let m = mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> f64 {
    (y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
}

/// Straight-line or multiple linear model in raw feature units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub target: Target,
    pub features: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// Least squares with an intercept column via Householder QR.
///
/// Returns `(coefficients, intercept)`.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(Vec<f64>, f64), ModelError> {
    let (n, p) = x.shape();
    if n < p + 1 {
        return Err(ModelError::TooFewRows { rows: n, needed: p + 1 });
    }
    let mut a = DMatrix::from_element(n, p + 1, 1.0);
    a.view_mut((0, 1), (n, p)).copy_from(x);
    // column scaling keeps the rank test meaningful across feature units
    let scale: Vec<f64> = (0..=p)
        .map(|j| {
            let nrm = a.column(j).norm();
            if nrm > 0.0 {
                nrm
            } else {
                1.0
            }
        })
        .collect();
    for (j, s) in scale.iter().enumerate() {
        a.column_mut(j).unscale_mut(*s);
    }
    let qr = a.qr();
    let r = qr.r();
    let rmax = (0..=p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let deficient: Vec<usize> = (0..=p).filter(|&i| r[(i, i)].abs() <= 1e-10 * rmax.max(f64::MIN_POSITIVE)).collect();
    if !deficient.is_empty() {
        let cols = deficient
            .iter()
            .map(|&i| if i == 0 { "intercept".to_string() } else { format!("column {}", i - 1) })
            .collect::<Vec<_>>()
            .join(", ");
        return Err(ModelError::SingularDesign(cols));
    }
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| ModelError::SingularDesign("triangular solve".into()))?;
    let beta: Vec<f64> = beta.iter().zip(&scale).map(|(b, s)| b / s).collect();
    Ok((beta[1..].to_vec(), beta[0]))
}

pub fn fit_ols(data: &Dataset, features: &[String], target: Target) -> Result<LinearModel, ModelError> {
    let (x, y) = data.design(features, target)?;
    let (coefficients, intercept) = ols(&x, &y)?;
    Ok(LinearModel {
        target,
        features: features.to_vec(),
        coefficients,
        intercept,
    })
}

/// Univariate regression F statistic of every feature against `target`,
/// `r^2 / (1 - r^2) * (n - 2)`; constant features score 0.
pub fn f_scores(data: &Dataset, target: Target) -> Result<Vec<(String, f64)>, ModelError> {
    let y = data.target_column(target)?;
    let n = y.len() as f64;
    let my = mean(&y);
    let mut out = Vec::new();
    for name in data.feature_names() {
        let x = data.column(name)?;
        let mx = mean(&x);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let f = if sxx == 0.0 || syy == 0.0 {
            0.0
        } else {
            let r2 = (sxy * sxy / (sxx * syy)).min(1.0);
            if r2 >= 1.0 {
                f64::INFINITY
            } else {
                r2 / (1.0 - r2) * (n - 2.0)
            }
        };
        out.push((name.clone(), f));
    }
    Ok(out)
}

/// The `k` features with the highest F scores, ties broken by name.
pub fn f_select(data: &Dataset, target: Target, k: usize) -> Result<Vec<String>, ModelError> {
    let available = data.feature_names().len();
    if k == 0 || k > available {
        return Err(ModelError::BadSelection { k, available });
    }
    let mut scores = f_scores(data, target)?;
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(scores.into_iter().take(k).map(|(n, _)| n).collect())
}

/// Column means and population standard deviations; constant columns get
/// scale 1 so they standardize to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for col in x.column_iter() {
            let m = col.sum() / n;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            means.push(m);
            scales.push(if s > 0.0 { s } else { 1.0 });
        }
        Self { means, scales }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.means[j]) / self.scales[j])
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetParams {
    pub l1: f64,
    pub l2: f64,
    /// Convergence threshold on the largest coefficient update.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for ElasticNetParams {
    fn default() -> Self {
        Self {
            l1: 0.0,
            l2: 0.0,
            tolerance: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// Elastic-net model. Minimizes, on standardized features `z`,
/// `1/(2n) |y - b - z.w|^2 + l1 |w|_1 + l2/2 |w|^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetModel {
    pub target: Target,
    pub features: Vec<String>,
    /// Coefficients in original feature units.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub l1: f64,
    pub l2: f64,
    pub standardizer: Standardizer,
    /// Coefficients on the standardized scale.
    pub standardized_coefficients: Vec<f64>,
    pub iterations: usize,
}

impl ElasticNetModel {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Elastic-net objective for standardized design `z` (already centred),
/// centred target and standardized coefficients `w`.
pub fn enet_objective(z: &DMatrix<f64>, yc: &DVector<f64>, w: &[f64], l1: f64, l2: f64) -> f64 {
    let n = z.nrows() as f64;
    let wv = DVector::from_column_slice(w);
    let r = yc - z * wv;
    r.norm_squared() / (2.0 * n) + l1 * w.iter().map(|v| v.abs()).sum::<f64>() + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

pub fn fit_elastic_net(
    data: &Dataset,
    features: &[String],
    target: Target,
    params: &ElasticNetParams,
) -> Result<ElasticNetModel, ModelError> {
    if !(params.l1 >= 0.0 && params.l2 >= 0.0 && params.tolerance > 0.0) {
        return Err(ModelError::BadParameter);
    }
    let (x, y) = data.design(features, target)?;
    let (n, p) = x.shape();
    if n < 2 {
        return Err(ModelError::TooFewRows { rows: n, needed: 2 });
    }
    let st = Standardizer::fit(&x);
    let z = st.apply(&x);
    let ybar = y.mean();
    let yc = y.map(|v| v - ybar);
    let nf = n as f64;
    let col_sq: Vec<f64> = (0..p).map(|j| z.column(j).norm_squared() / nf).collect();

    let mut w = vec![0.0; p];
    let mut resid = yc.clone();
    let mut iterations = 0;
    let mut converged = p == 0;
    while !converged && iterations < params.max_iter {
        iterations += 1;
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let zj = z.column(j);
            let rho = zj.dot(&resid) / nf + col_sq[j] * w[j];
            let new = soft_threshold(rho, params.l1) / (col_sq[j] + params.l2);
            let delta = new - w[j];
            if delta != 0.0 {
                resid.axpy(-delta, &zj, 1.0);
                w[j] = new;
            }
            max_delta = max_delta.max(delta.abs());
        }
        converged = max_delta < params.tolerance;
    }
    if !converged {
        return Err(ModelError::NotConverged { iterations });
    }
    let coefficients: Vec<f64> = w.iter().zip(&st.scales).map(|(wj, s)| wj / s).collect();
    let intercept = ybar - coefficients.iter().zip(&st.means).map(|(c, m)| c * m).sum::<f64>();
    Ok(ElasticNetModel {
        target,
        features: features.to_vec(),
        coefficients,
        intercept,
        l1: params.l1,
        l2: params.l2,
        standardizer: st,
        standardized_coefficients: w,
        iterations,
    })
}

/// Gaussian-process hyperparameters on standardized features. `None`
/// selects the default: length scale 1 (one feature standard deviation),
/// signal variance = target variance, noise = 0.1 target variance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GpParams {
    pub length_scale: Option<f64>,
    pub signal_variance: Option<f64>,
    pub noise_variance: Option<f64>,
    /// Refine length scale and noise on a small grid by log marginal
    /// likelihood.
    pub optimize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

/// RBF-kernel GP regression; predicts the posterior mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub target: Target,
    pub features: Vec<String>,
    pub hyperparams: GpHyper,
    pub standardizer: Standardizer,
    /// Standardized training inputs, one row per environment.
    pub inputs: Vec<Vec<f64>>,
    pub y_mean: f64,
    /// `(K + noise I)^-1 (y - y_mean)`.
    pub alpha: Vec<f64>,
    pub log_marginal_likelihood: f64,
}

pub fn rbf(a: &[f64], b: &[f64], length_scale: f64, signal_variance: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    signal_variance * (-d2 / (2.0 * length_scale * length_scale)).exp()
}

fn gp_solve(inputs: &[Vec<f64>], yc: &DVector<f64>, h: &GpHyper) -> Result<(Vec<f64>, f64), ModelError> {
    let n = inputs.len();
    let mut k = DMatrix::from_fn(n, n, |i, j| rbf(&inputs[i], &inputs[j], h.length_scale, h.signal_variance));
    for i in 0..n {
        k[(i, i)] += h.noise_variance;
    }
    let chol = k
        .cholesky()
        .ok_or(ModelError::NotPositiveDefinite { noise: h.noise_variance })?;
    let alpha = chol.solve(yc);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * yc.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok((alpha.iter().copied().collect(), lml))
}

pub fn fit_gp(data: &Dataset, features: &[String], target: Target, params: &GpParams) -> Result<GpModel, ModelError> {
    let (x, y) = data.design(features, target)?;
    let n = x.nrows();
    if n < 1 {
        return Err(ModelError::TooFewRows { rows: n, needed: 1 });
    }
    let st = Standardizer::fit(&x);
    let z = st.apply(&x);
    let inputs: Vec<Vec<f64>> = (0..n).map(|i| z.row(i).iter().copied().collect()).collect();
    let y_mean = y.mean();
    let yc = y.map(|v| v - y_mean);
    let var = (yc.norm_squared() / n as f64).max(f64::MIN_POSITIVE);
    let base = GpHyper {
        length_scale: params.length_scale.unwrap_or(1.0),
        signal_variance: params.signal_variance.unwrap_or(var),
        noise_variance: params.noise_variance.unwrap_or(0.1 * var),
    };
    if !(base.length_scale > 0.0 && base.signal_variance > 0.0 && base.noise_variance >= 0.0) {
        return Err(ModelError::BadParameter);
    }
    let mut best = (base, gp_solve(&inputs, &yc, &base)?);
    if params.optimize {
        for ls in [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0] {
            for nf in [1e-3, 1e-2, 0.05, 0.1, 0.2, 0.5] {
                let h = GpHyper {
                    length_scale: params.length_scale.unwrap_or(ls),
                    signal_variance: base.signal_variance,
                    noise_variance: params.noise_variance.unwrap_or(nf * var),
                };
                if let Ok(sol) = gp_solve(&inputs, &yc, &h) {
                    if sol.1 > best.1 .1 {
                        best = (h, sol);
                    }
                }
            }
        }
    }
    let (hyperparams, (alpha, lml)) = best;
    Ok(GpModel {
        target,
        features: features.to_vec(),
        hyperparams,
        standardizer: st,
        inputs,
        y_mean,
        alpha,
        log_marginal_likelihood: lml,
    })
}

/// Posterior mean at raw feature values `x`.
pub fn gp_predict(m: &GpModel, x: &[f64]) -> f64 {
    let z = m.standardizer.apply_row(x);
    let h = &m.hyperparams;
    m.y_mean
        + m.inputs
            .iter()
            .zip(&m.alpha)
            .map(|(xi, a)| a * rbf(&z, xi, h.length_scale, h.signal_variance))
            .sum::<f64>()
}

/// What to fit; the model family plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Ols,
    Enet(ElasticNetParams),
    Gp(GpParams),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Ols => "ols",
            ModelSpec::Enet(_) => "enet",
            ModelSpec::Gp(_) => "gp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", rename_all = "lowercase")]
pub enum Model {
    Ols(LinearModel),
    Enet(ElasticNetModel),
    Gp(GpModel),
}

impl Model {
    pub fn target(&self) -> Target {
        match self {
            Model::Ols(m) => m.target,
            Model::Enet(m) => m.target,
            Model::Gp(m) => m.target,
        }
    }

    pub fn features(&self) -> &[String] {
        match self {
            Model::Ols(m) => &m.features,
            Model::Enet(m) => &m.features,
            Model::Gp(m) => &m.features,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Ols(_) => "ols",
            Model::Enet(_) => "enet",
            Model::Gp(_) => "gp",
        }
    }

    /// Evaluates at feature values ordered as [`Model::features`].
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Model::Ols(m) => m.eval(x),
            Model::Enet(m) => m.eval(x),
            Model::Gp(m) => gp_predict(m, x),
        }
    }

    /// Evaluates with features looked up by name.
    pub fn eval_with(&self, lookup: impl Fn(&str) -> Option<f64>) -> Result<f64, ModelError> {
        let x = self
            .features()
            .iter()
            .map(|f| lookup(f).ok_or_else(|| ModelError::UnknownFeature(f.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.eval(&x))
    }
}

pub fn fit(spec: &ModelSpec, data: &Dataset, features: &[String], target: Target) -> Result<Model, ModelError> {
    Ok(match spec {
        ModelSpec::Ols => Model::Ols(fit_ols(data, features, target)?),
        ModelSpec::Enet(p) => Model::Enet(fit_elastic_net(data, features, target, p)?),
        ModelSpec::Gp(p) => Model::Gp(fit_gp(data, features, target, p)?),
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvSummary>,
    /// Digest of the training inputs, used to skip refitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_hash: Option<String>,
}

/// On-disk model: the tagged model plus how it was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub model: Model,
    pub training_meta: TrainingMeta,
}

impl ModelFile {
    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub n: usize,
    pub r2: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub r2: f64,
    pub rmse: f64,
    pub nrmse: f64,
}

/// Cross-validation result. `r2` averages the per-fold values, `rmse` pools
/// all out-of-fold predictions, and `nrmse = rmse / (y_max - y_min)` over the
/// whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub r2: f64,
    pub rmse: f64,
    pub nrmse: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub folds: Vec<FoldMetrics>,
    pub k: usize,
    pub seed: u64,
    /// Out-of-fold prediction per row, in dataset order.
    pub predictions: Vec<f64>,
}

impl CvReport {
    pub fn summary(&self) -> CvSummary {
        CvSummary {
            r2: self.r2,
            rmse: self.rmse,
            nrmse: self.nrmse,
        }
    }
}

/// Shuffled fold assignment: `k` folds whose sizes differ by at most one,
/// larger folds first.
pub fn fold_indices(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        out.push(idx[start..start + size].to_vec());
        start += size;
    }
    out
}

pub fn kfold_cv(
    data: &Dataset,
    spec: &ModelSpec,
    features: &[String],
    target: Target,
    k: usize,
    seed: u64,
) -> Result<CvReport, ModelError> {
    let n = data.len();
    if k < 2 || k > n {
        return Err(ModelError::BadFolds { k, rows: n });
    }
    let y = data.target_column(target)?;
    let feat_idx = features
        .iter()
        .map(|f| data.feature_index(f))
        .collect::<Result<Vec<_>, _>>()?;
    let mut predictions = vec![f64::NAN; n];
    let mut folds = Vec::with_capacity(k);
    for test in fold_indices(n, k, seed) {
        let in_test: HashSet<usize> = test.iter().copied().collect();
        let train: Vec<usize> = (0..n).filter(|i| !in_test.contains(i)).collect();
        let model = fit(spec, &data.select_rows(&train), features, target)?;
        let mut yt = Vec::with_capacity(test.len());
        let mut yp = Vec::with_capacity(test.len());
        for &i in &test {
            let x: Vec<f64> = feat_idx.iter().map(|&j| data.rows()[i].features[j]).collect();
            let p = model.eval(&x);
            predictions[i] = p;
            yt.push(y[i]);
            yp.push(p);
        }
        folds.push(FoldMetrics {
            n: test.len(),
            r2: r2_score(&yt, &yp),
            rmse: rmse(&yt, &yp),
        });
    }
    let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pooled = rmse(&y, &predictions);
    let range = y_max - y_min;
    Ok(CvReport {
        r2: folds.iter().map(|f| f.r2).sum::<f64>() / k as f64,
        rmse: pooled,
        nrmse: if range > 0.0 { pooled / range } else { 0.0 },
        y_min,
        y_max,
        folds,
        k,
        seed,
        predictions,
    })
}

/// Predicted performance from one model per component.
pub fn predict_performance(models: &[Model], features: &FeatureVector) -> Result<[f64; 4], ModelError> {
    let mut out = [0.0; 4];
    for (slot, t) in out.iter_mut().zip(Target::ALL) {
        let m = models
            .iter()
            .find(|m| m.target() == t)
            .ok_or_else(|| ModelError::MissingModel(t.name().to_string()))?;
        *slot = m.eval_with(|name| features.get(name))?;
    }
    Ok(out)
}

/// One row of a cross-validation summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub target: Target,
    pub model: String,
    pub features: Vec<String>,
    pub r2: f64,
    pub rmse: f64,
    pub nrmse: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Cross-validates `spec` on every target present in `data`.
pub fn report(data: &Dataset, spec: &ModelSpec, features: &[String], k: usize, seed: u64) -> Result<Vec<ReportRow>, ModelError> {
    let mut targets = data.targets().to_vec();
    targets.sort();
    targets
        .into_iter()
        .map(|t| {
            let cv = kfold_cv(data, spec, features, t, k, seed)?;
            Ok(ReportRow {
                target: t,
                model: spec.name().to_string(),
                features: features.to_vec(),
                r2: cv.r2,
                rmse: cv.rmse,
                nrmse: cv.nrmse,
                y_min: cv.y_min,
                y_max: cv.y_max,
            })
        })
        .collect()
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], writer: W) -> Result<(), ModelError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["target", "model", "features", "r2", "rmse", "nrmse_pct", "y_min", "y_max"])?;
    for r in rows {
        w.write_record([
            r.target.name().to_string(),
            r.model.clone(),
            r.features.join(" "),
            r.r2.to_string(),
            r.rmse.to_string(),
            (r.nrmse * 100.0).to_string(),
            r.y_min.to_string(),
            r.y_max.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn noisy_line(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.001 * v + 0.1 + rng.random_range(-0.02..0.02)).collect();
        Dataset::from_xy("vtd_m", Target::MeanEpsT, &x, &y).unwrap()
    }

    fn two_feature(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|i| {
                let a: f64 = rng.random_range(0.0..100.0);
                let b: f64 = rng.random_range(-5.0..5.0);
                DatasetRow {
                    env_id: format!("env{i:03}"),
                    features: vec![a, b],
                    targets: vec![0.01 * a - 0.3 * b + 2.0 + rng.random_range(-0.1..0.1)],
                }
            })
            .collect();
        Dataset::new(names(&["vtd_m", "vtr_rad"]), vec![Target::MeanEpsT], rows).unwrap()
    }

    #[test]
    fn exact_line() {
        let d = Dataset::from_xy("vtd_m", Target::MeanEpsT, &[0., 1., 2., 3., 4.], &[1., 3., 5., 7., 9.]).unwrap();
        let m = fit_ols(&d, &names(&["vtd_m"]), Target::MeanEpsT).unwrap();
        assert_relative_eq!(m.coefficients[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(m.intercept, 1.0, epsilon = 1e-12);
        assert_eq!(m.eval(&[0.0]), m.intercept);
    }

    #[test]
    fn residuals_orthogonal_to_columns() {
        let d = two_feature(40, 1);
        let f = names(&["vtd_m", "vtr_rad"]);
        let m = fit_ols(&d, &f, Target::MeanEpsT).unwrap();
        let (x, y) = d.design(&f, Target::MeanEpsT).unwrap();
        let st = Standardizer::fit(&x);
        let z = st.apply(&x);
        let res: Vec<f64> = (0..x.nrows())
            .map(|i| y[i] - m.eval(&[x[(i, 0)], x[(i, 1)]]))
            .collect();
        assert!(res.iter().sum::<f64>().abs() < 1e-8);
        for j in 0..2 {
            let dot: f64 = res.iter().enumerate().map(|(i, r)| r * z[(i, j)]).sum();
            assert!(dot.abs() < 1e-8, "{dot}");
        }
    }

    #[test]
    fn singular_design_detected() {
        let rows = (0..6)
            .map(|i| DatasetRow {
                env_id: format!("{i}"),
                features: vec![i as f64, 2.0 * i as f64],
                targets: vec![i as f64],
            })
            .collect();
        let d = Dataset::new(names(&["a", "b"]), vec![Target::MeanEpsT], rows).unwrap();
        assert!(matches!(
            fit_ols(&d, &names(&["a", "b"]), Target::MeanEpsT),
            Err(ModelError::SingularDesign(_))
        ));
        let few = d.select_rows(&[0, 1]);
        assert!(matches!(
            fit_ols(&few, &names(&["a", "b"]), Target::MeanEpsT),
            Err(ModelError::TooFewRows { .. })
        ));
    }

    #[test]
    fn adding_a_feature_never_lowers_training_r2() {
        let d = two_feature(30, 5);
        let y = d.target_column(Target::MeanEpsT).unwrap();
        let fit_r2 = |f: &[String]| {
            let m = fit_ols(&d, f, Target::MeanEpsT).unwrap();
            let (x, _) = d.design(f, Target::MeanEpsT).unwrap();
            let yhat: Vec<f64> = (0..x.nrows())
                .map(|i| m.eval(&x.row(i).iter().copied().collect::<Vec<_>>()))
                .collect();
            r2_score(&y, &yhat)
        };
        let one = fit_r2(&names(&["vtr_rad"]));
        let two = fit_r2(&names(&["vtr_rad", "vtd_m"]));
        assert!(two >= one - 1e-12);
        let ybar = vec![mean(&y); y.len()];
        assert_eq!(r2_score(&y, &ybar), 0.0);
    }

    #[test]
    fn cv_on_noiseless_data_is_perfect() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let d = Dataset::from_xy("vtd_m", Target::MeanEpsT, &x, &y).unwrap();
        let cv = kfold_cv(&d, &ModelSpec::Ols, &names(&["vtd_m"]), Target::MeanEpsT, 5, 3).unwrap();
        assert!((cv.r2 - 1.0).abs() < 1e-9);
        assert!(cv.rmse < 1e-9);
        assert!(matches!(
            kfold_cv(&d, &ModelSpec::Ols, &names(&["vtd_m"]), Target::MeanEpsT, 21, 3),
            Err(ModelError::BadFolds { .. })
        ));
    }

    #[test]
    fn folds_partition_rows() {
        let folds = fold_indices(93, 5, 7);
        let sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        assert_eq!(sizes, vec![19, 19, 19, 18, 18]);
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, (0..93).collect::<Vec<_>>());
        assert_eq!(folds, fold_indices(93, 5, 7));
    }

    #[test]
    fn nrmse_is_scale_invariant() {
        let d = noisy_line(40, 2);
        let x = d.column("vtd_m").unwrap();
        let y = d.target_column(Target::MeanEpsT).unwrap();
        let y2: Vec<f64> = y.iter().map(|v| 3.5 * v + 2.0).collect();
        let d2 = Dataset::from_xy("vtd_m", Target::MeanEpsT, &x, &y2).unwrap();
        let f = names(&["vtd_m"]);
        let a = kfold_cv(&d, &ModelSpec::Ols, &f, Target::MeanEpsT, 5, 9).unwrap();
        let b = kfold_cv(&d2, &ModelSpec::Ols, &f, Target::MeanEpsT, 5, 9).unwrap();
        assert_relative_eq!(a.nrmse, b.nrmse, max_relative = 1e-9);
        assert_relative_eq!(b.rmse, 3.5 * a.rmse, max_relative = 1e-9);
        assert_relative_eq!(a.nrmse, a.rmse / (a.y_max - a.y_min), max_relative = 1e-15);
    }

    #[test]
    fn f_select_ranks_correlated_feature_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows = (0..50)
            .map(|i| {
                let t = i as f64 * 0.1;
                DatasetRow {
                    env_id: format!("{i}"),
                    features: vec![rng.random_range(0.0..1.0), t, 4.0],
                    targets: vec![t],
                }
            })
            .collect();
        let d = Dataset::new(names(&["noise", "same", "constant"]), vec![Target::MeanEpsT], rows).unwrap();
        assert_eq!(f_select(&d, Target::MeanEpsT, 1).unwrap(), names(&["same"]));
        let scores = f_scores(&d, Target::MeanEpsT).unwrap();
        assert_eq!(scores[2].1, 0.0);
        assert!(f_select(&d, Target::MeanEpsT, 4).is_err());
    }

    #[test]
    fn f_select_breaks_ties_by_name() {
        let rows = (0..10)
            .map(|i| DatasetRow {
                env_id: format!("{i}"),
                features: vec![i as f64, i as f64],
                targets: vec![(i * i) as f64],
            })
            .collect();
        let d = Dataset::new(names(&["zeta", "alpha"]), vec![Target::MeanEpsT], rows).unwrap();
        assert_eq!(f_select(&d, Target::MeanEpsT, 1).unwrap(), names(&["alpha"]));
    }

    #[test]
    fn enet_without_penalty_is_ols() {
        let d = two_feature(25, 8);
        let f = names(&["vtd_m", "vtr_rad"]);
        let o = fit_ols(&d, &f, Target::MeanEpsT).unwrap();
        let e = fit_elastic_net(&d, &f, Target::MeanEpsT, &ElasticNetParams::default()).unwrap();
        for (a, b) in o.coefficients.iter().zip(&e.coefficients) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((o.intercept - e.intercept).abs() < 1e-6);
    }

    #[test]
    fn enet_huge_l1_gives_mean() {
        let d = two_feature(25, 8);
        let f = names(&["vtd_m", "vtr_rad"]);
        let p = ElasticNetParams {
            l1: 1e6,
            ..Default::default()
        };
        let e = fit_elastic_net(&d, &f, Target::MeanEpsT, &p).unwrap();
        assert!(e.coefficients.iter().all(|&c| c == 0.0));
        let y = d.target_column(Target::MeanEpsT).unwrap();
        assert_relative_eq!(e.intercept, mean(&y), max_relative = 1e-12);
    }

    #[test]
    fn enet_beats_penalized_ols() {
        let d = two_feature(25, 11);
        let f = names(&["vtd_m", "vtr_rad"]);
        let p = ElasticNetParams {
            l1: 0.05,
            l2: 0.1,
            ..Default::default()
        };
        let e = fit_elastic_net(&d, &f, Target::MeanEpsT, &p).unwrap();
        let o = fit_elastic_net(&d, &f, Target::MeanEpsT, &ElasticNetParams::default()).unwrap();
        let (x, y) = d.design(&f, Target::MeanEpsT).unwrap();
        let z = e.standardizer.apply(&x);
        let yc = y.map(|v| v - y.mean());
        let at_e = enet_objective(&z, &yc, &e.standardized_coefficients, p.l1, p.l2);
        let at_o = enet_objective(&z, &yc, &o.standardized_coefficients, p.l1, p.l2);
        assert!(at_e <= at_o + 1e-12);
    }

    #[test]
    fn enet_reports_non_convergence() {
        let d = two_feature(25, 8);
        let p = ElasticNetParams {
            tolerance: 1e-300,
            max_iter: 3,
            ..Default::default()
        };
        let err = fit_elastic_net(&d, &names(&["vtd_m", "vtr_rad"]), Target::MeanEpsT, &p).unwrap_err();
        assert!(matches!(err, ModelError::NotConverged { iterations: 3 }));
    }

    fn gp_data() -> Dataset {
        let x = [0.0, 1.0, 2.5, 3.0, 4.2, 6.0];
        let y = [0.3, 0.9, 0.4, -0.2, 0.1, 0.8];
        Dataset::from_xy("vtd_m", Target::MeanEpsT, &x, &y).unwrap()
    }

    #[test]
    fn noiseless_gp_interpolates() {
        let d = gp_data();
        let p = GpParams {
            noise_variance: Some(1e-12),
            length_scale: Some(0.5),
            ..Default::default()
        };
        let m = fit_gp(&d, &names(&["vtd_m"]), Target::MeanEpsT, &p).unwrap();
        for r in d.rows() {
            assert!((gp_predict(&m, &r.features) - r.targets[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn gp_far_from_data_returns_prior_mean() {
        let d = gp_data();
        let m = fit_gp(&d, &names(&["vtd_m"]), Target::MeanEpsT, &GpParams::default()).unwrap();
        assert!((gp_predict(&m, &[1e4]) - m.y_mean).abs() < 1e-12);
    }

    #[test]
    fn gp_flattens_with_length_scale() {
        let d = gp_data();
        let mut last = f64::INFINITY;
        for ls in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let p = GpParams {
                length_scale: Some(ls),
                ..Default::default()
            };
            let m = fit_gp(&d, &names(&["vtd_m"]), Target::MeanEpsT, &p).unwrap();
            let dev = (0..=60)
                .map(|i| (gp_predict(&m, &[i as f64 * 0.1]) - m.y_mean).abs())
                .fold(0.0, f64::max);
            assert!(dev < last, "ls {ls}: {dev} >= {last}");
            last = dev;
        }
    }

    #[test]
    fn gp_grid_search_improves_likelihood() {
        let d = noisy_line(30, 3);
        let f = names(&["vtd_m"]);
        let plain = fit_gp(&d, &f, Target::MeanEpsT, &GpParams::default()).unwrap();
        let tuned = fit_gp(
            &d,
            &f,
            Target::MeanEpsT,
            &GpParams {
                optimize: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(tuned.log_marginal_likelihood >= plain.log_marginal_likelihood);
    }

    #[test]
    fn gp_rejects_indefinite_kernel() {
        let d = Dataset::from_xy("vtd_m", Target::MeanEpsT, &[1.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
        let p = GpParams {
            noise_variance: Some(0.0),
            ..Default::default()
        };
        assert!(matches!(
            fit_gp(&d, &names(&["vtd_m"]), Target::MeanEpsT, &p),
            Err(ModelError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn model_file_roundtrip_is_bit_identical() {
        let d = two_feature(20, 2);
        let f = names(&["vtd_m", "vtr_rad"]);
        for spec in [
            ModelSpec::Ols,
            ModelSpec::Enet(ElasticNetParams {
                l1: 0.01,
                ..Default::default()
            }),
            ModelSpec::Gp(GpParams::default()),
        ] {
            let mf = ModelFile {
                model: fit(&spec, &d, &f, Target::MeanEpsT).unwrap(),
                training_meta: TrainingMeta {
                    seed: 4,
                    k: 5,
                    date: Some("2024-01-01".into()),
                    ..Default::default()
                },
            };
            let json = mf.to_json().unwrap();
            assert!(json.contains(&format!("\"model_type\": \"{}\"", spec.name())));
            let back = ModelFile::from_json(&json).unwrap();
            assert_eq!(back, mf);
            let q = [37.5, -1.25];
            assert_eq!(back.model.eval(&q).to_bits(), mf.model.eval(&q).to_bits());
        }
    }

    #[test]
    fn dataset_csv_roundtrip_and_validation() {
        let d = two_feature(7, 3);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("env_id,vtd_m,vtr_rad,mean_eps_t\n"));
        assert_eq!(Dataset::read_csv(&buf[..]).unwrap(), d);

        let dup = "env_id,vtd_m,mean_eps_t\na,1,2\na,2,3\n";
        assert!(matches!(Dataset::read_csv(dup.as_bytes()), Err(ModelError::DuplicateEnv(id)) if id == "a"));
        let bad = "env_id,vtd_m,mean_eps_t\na,inf,2\n";
        assert!(matches!(Dataset::read_csv(bad.as_bytes()), Err(ModelError::NonFinite { .. })));
    }

    #[test]
    fn predict_bundle_needs_all_targets() {
        let fv = FeatureVector {
            vtd_m: 1000.0,
            vtr_rad: 0.0,
            node_count: 0,
            edge_count: 0,
            area_m2: 0.0,
            perimeter_m: 0.0,
            trace_digest: None,
            trace: None,
        };
        let line = |t, c, b| {
            Model::Ols(LinearModel {
                target: t,
                features: names(&["vtd_m"]),
                coefficients: vec![c],
                intercept: b,
            })
        };
        let models: Vec<Model> = Target::ALL.iter().map(|&t| line(t, 0.001, 0.5)).collect();
        let p = predict_performance(&models, &fv).unwrap();
        assert!(p.iter().all(|&v| (v - 1.5).abs() < 1e-12));
        assert!(matches!(
            predict_performance(&models[..3], &fv),
            Err(ModelError::MissingModel(_))
        ));
        let vtr_model = Model::Ols(LinearModel {
            target: Target::MeanEpsT,
            features: names(&["unknown"]),
            coefficients: vec![1.0],
            intercept: 0.0,
        });
        assert!(vtr_model.eval_with(|n| fv.get(n)).is_err());
    }

    #[test]
    fn report_covers_every_target() {
        let mut rows = Vec::new();
        for i in 0..12 {
            let v = i as f64 * 20.0;
            rows.push(DatasetRow {
                env_id: format!("e{i}"),
                features: vec![v],
                targets: vec![0.001 * v + 0.1, 0.0002 * v, 0.01 + 1e-5 * v + (i % 3) as f64 * 1e-4, 1e-6 * v],
            });
        }
        let d = Dataset::new(names(&["vtd_m"]), Target::ALL.to_vec(), rows).unwrap();
        let rep = report(&d, &ModelSpec::Ols, &names(&["vtd_m"]), 3, 1).unwrap();
        assert_eq!(rep.len(), 4);
        let mut buf = Vec::new();
        write_report_csv(&rep, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
