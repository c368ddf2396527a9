//! Two-step inference: restricted likelihood for the Gaussian-field
//! parameters on transformed vectors, then a Cramer-von Mises minimum
//! distance fit of the mixing parameters on spatial averages. Also houses
//! the copula-fitting loop, the parametric bootstrap and a small-dimension
//! quadrature likelihood oracle used only by tests.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::correlation::{avg_variance, build_corr_matrix, CorrMatrix, MaternParams, SiteSet};
use crate::error::{Error, Result};
use crate::mixing::{logdensity_sr, MixingSpec, MixtureClass};
use crate::numkernel::{mvn_logpdf, LN_2PI};
use crate::optim::{
    grid_then_brent, nelder_mead, BrentOptions, NelderMeadOptions, OptimResult,
};
use crate::process::{
    from_uniform, marginal_table, mc_cdf, mean_table, simulate, DataMatrix, OPTIMIZER_TABLE_N,
};
use crate::quadrature::adaptive_simpson;

/// Ratio denominators smaller than this in magnitude mark a row as degenerate.
pub const DENOM_EPS: f64 = 1e-12;

/// Transformation class for the first estimation step, together with its
/// reference site indices (0-based). The second reference is only used by
/// the location-scale class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step1Class {
    class: MixtureClass,
    ref1: usize,
    ref2: usize,
}

impl Step1Class {
    pub fn new(class: MixtureClass, ref1: usize, ref2: usize) -> Result<Self> {
        if class == MixtureClass::LocationScale && ref1 == ref2 {
            return Err(Error::InvalidArgument(
                "the two reference site indices must be distinct".into(),
            ));
        }
        Ok(Self { class, ref1, ref2 })
    }

    /// Default references: the first site (and the second for the
    /// location-scale class). The estimators are invariant to this choice.
    pub fn for_spec(spec: &MixingSpec) -> Self {
        Self {
            class: spec.class(),
            ref1: 0,
            ref2: 1,
        }
    }

    pub fn class(&self) -> MixtureClass {
        self.class
    }

    pub fn references(&self) -> (usize, usize) {
        (self.ref1, self.ref2)
    }

    /// Length of a transformed vector for m sites.
    pub fn z_len(&self, m: usize) -> usize {
        match self.class {
            MixtureClass::PureGaussian => m,
            MixtureClass::Location | MixtureClass::Scale => m - 1,
            MixtureClass::LocationScale => m - 2,
        }
    }

    fn check_dims(&self, m: usize) -> Result<()> {
        let needed = match self.class {
            MixtureClass::PureGaussian => 1,
            MixtureClass::Location | MixtureClass::Scale => 2,
            MixtureClass::LocationScale => 3,
        };
        if m < needed {
            return Err(Error::DimensionMismatch(format!(
                "transformation needs at least {needed} sites, got {m}"
            )));
        }
        if self.ref1 >= m || (self.class == MixtureClass::LocationScale && self.ref2 >= m) {
            return Err(Error::InvalidArgument(format!(
                "reference site index out of range for m = {m}"
            )));
        }
        Ok(())
    }
}

/// Transform one data row into the vector whose law is free of (S, R).
/// Returns `None` when a ratio denominator is numerically zero and the row
/// must be skipped.
pub fn z_transform(row: &[f64], class: &Step1Class) -> Result<Option<Vec<f64>>> {
    let m = row.len();
    class.check_dims(m)?;
    let (r1, r2) = (class.ref1, class.ref2);
    let z = match class.class {
        MixtureClass::PureGaussian => row.to_vec(),
        MixtureClass::Location => (0..m)
            .filter(|&j| j != r1)
            .map(|j| row[j] - row[r1])
            .collect(),
        MixtureClass::Scale => {
            if row[r1].abs() < DENOM_EPS {
                return Ok(None);
            }
            (0..m)
                .filter(|&j| j != r1)
                .map(|j| row[j] / row[r1])
                .collect()
        }
        MixtureClass::LocationScale => {
            let denom = row[r2] - row[r1];
            if denom.abs() < DENOM_EPS {
                return Ok(None);
            }
            (0..m)
                .filter(|&j| j != r1 && j != r2)
                .map(|j| (row[j] - row[r1]) / denom)
                .collect()
        }
    };
    Ok(Some(z))
}

/// Transform every row of a data matrix, dropping degenerate rows.
/// Returns the kept vectors (in row order) and the skipped-row count.
pub fn z_rows(data: &DataMatrix, class: &Step1Class) -> Result<(Vec<DVector<f64>>, usize)> {
    class.check_dims(data.ncols())?;
    let transformed: Vec<Option<Vec<f64>>> = (0..data.nrows())
        .into_par_iter()
        .map(|i| z_transform(&data.row(i), class).expect("dims already validated"))
        .collect();
    let skipped = transformed.iter().filter(|t| t.is_none()).count();
    let kept: Vec<DVector<f64>> = transformed
        .into_iter()
        .flatten()
        .map(DVector::from_vec)
        .collect();
    if kept.is_empty() {
        return Err(Error::Data("all rows degenerate after transformation".into()));
    }
    Ok((kept, skipped))
}

/// Covariance of the differenced field (X_j - X_ref)_{j != ref}: the matrix
/// A Sigma A' written out entrywise.
fn differenced_cov(sigma: &DMatrix<f64>, r1: usize) -> DMatrix<f64> {
    let m = sigma.nrows();
    let keep: Vec<usize> = (0..m).filter(|&j| j != r1).collect();
    DMatrix::from_fn(m - 1, m - 1, |a, b| {
        let (i, j) = (keep[a], keep[b]);
        sigma[(i, j)] - sigma[(i, r1)] - sigma[(r1, j)] + sigma[(r1, r1)]
    })
}

/// Insert `value` at position `slot` of `z`, producing a vector one longer.
fn insert_at(z: &DVector<f64>, slot: usize, value: f64) -> DVector<f64> {
    let mut out = DVector::zeros(z.len() + 1);
    for i in 0..slot {
        out[i] = z[i];
    }
    out[slot] = value;
    for i in slot..z.len() {
        out[i + 1] = z[i];
    }
    out
}

fn quad_form(chol_lower: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let y = chol_lower
        .solve_lower_triangular(v)
        .expect("triangular solve on a Cholesky factor");
    y.norm_squared()
}

/// Negative restricted log-likelihood of the transformed rows at the given
/// correlation parameters. Returns +infinity on any factorization failure so
/// optimizers can probe freely.
pub fn step1_negloglik(
    theta_w: &MaternParams,
    zrows: &[DVector<f64>],
    sites: &SiteSet,
    class: &Step1Class,
) -> f64 {
    let Ok(corr) = build_corr_matrix(sites, theta_w) else {
        return f64::INFINITY;
    };
    step1_negloglik_corr(&corr, zrows, class)
}

/// As [`step1_negloglik`] but over an explicit correlation matrix, which
/// also admits correlations no Matern model produces.
pub fn step1_negloglik_corr(
    corr: &CorrMatrix,
    zrows: &[DVector<f64>],
    class: &Step1Class,
) -> f64 {
    if zrows.is_empty() {
        return f64::INFINITY;
    }
    let m = corr.dim();
    if class.check_dims(m).is_err() || zrows.iter().any(|z| z.len() != class.z_len(m)) {
        return f64::INFINITY;
    }
    let n = zrows.len() as f64;
    let (r1, r2) = (class.ref1, class.ref2);
    let nll = match class.class {
        MixtureClass::PureGaussian => zrows
            .iter()
            .map(|z| match mvn_logpdf(z, corr.chol_lower()) {
                Ok(lp) => -lp,
                Err(_) => f64::INFINITY,
            })
            .sum::<f64>(),
        MixtureClass::Location => {
            let Ok(b) = CorrMatrix::from_matrix(differenced_cov(corr.sigma(), r1)) else {
                return f64::INFINITY;
            };
            let c = 0.5 * (m - 1) as f64 * LN_2PI + 0.5 * b.log_det();
            let quad: f64 = zrows.iter().map(|z| quad_form(b.chol_lower(), z)).sum();
            n * c + 0.5 * quad
        }
        MixtureClass::Scale => {
            let md = m as f64;
            let c = 0.5 * md * PI.ln() + 0.5 * corr.log_det() - ln_gamma(0.5 * md);
            let sum: f64 = zrows
                .iter()
                .map(|z| {
                    let zdot = insert_at(z, r1, 1.0);
                    0.5 * md * quad_form(corr.chol_lower(), &zdot).ln()
                })
                .sum();
            n * c + sum
        }
        MixtureClass::LocationScale => {
            let Ok(b) = CorrMatrix::from_matrix(differenced_cov(corr.sigma(), r1)) else {
                return f64::INFINITY;
            };
            let md = (m - 1) as f64;
            let c = 0.5 * md * PI.ln() + 0.5 * b.log_det() - ln_gamma(0.5 * md);
            // Slot of the second reference among the indices kept after
            // differencing against the first.
            let slot2 = if r2 > r1 { r2 - 1 } else { r2 };
            let sum: f64 = zrows
                .iter()
                .map(|z| {
                    let zdot = insert_at(z, slot2, 1.0);
                    0.5 * md * quad_form(b.chol_lower(), &zdot).ln()
                })
                .sum();
            n * c + sum
        }
    };
    if nll.is_nan() {
        f64::INFINITY
    } else {
        nll
    }
}

/// Outcome of the first estimation step.
#[derive(Debug, Clone)]
pub struct Step1Fit {
    pub theta_w: MaternParams,
    pub objective: f64,
    pub converged: bool,
    pub skipped_rows: usize,
    pub evaluations: usize,
}

fn step1_nm_options() -> NelderMeadOptions {
    NelderMeadOptions {
        ftol: 1e-8,
        xtol: 1e-6,
        max_evals: 2_000,
        initial_step: 0.4,
    }
}

/// Maximize the restricted likelihood over (log range, log smoothness),
/// started from the median pairwise distance and smoothness 1/2.
pub fn fit_theta_w(data: &DataMatrix, class: &Step1Class) -> Result<Step1Fit> {
    let start = MaternParams::new(data.sites().median_pairwise_distance(), 0.5)?;
    fit_theta_w_from(data, class, &start)
}

/// As [`fit_theta_w`] but with an explicit start, used for warm starts
/// inside the copula loop.
pub fn fit_theta_w_from(
    data: &DataMatrix,
    class: &Step1Class,
    start: &MaternParams,
) -> Result<Step1Fit> {
    if data.nrows() < 2 {
        return Err(Error::Data("need at least 2 replicate rows".into()));
    }
    let (zrows, skipped) = z_rows(data, class)?;
    let sites = data.sites();
    let obj = |t: &[f64]| -> f64 {
        if t.iter().any(|v| v.abs() > 12.0) {
            return f64::INFINITY;
        }
        match MaternParams::new(t[0].exp(), t[1].exp()) {
            Ok(p) => step1_negloglik(&p, &zrows, sites, class),
            Err(_) => f64::INFINITY,
        }
    };
    let res = nelder_mead(
        obj,
        &[start.range.ln(), start.smoothness.ln()],
        &step1_nm_options(),
    )?;
    if !res.fx.is_finite() {
        return Err(Error::NonConvergence(
            "restricted likelihood is infinite everywhere probed".into(),
        ));
    }
    Ok(Step1Fit {
        theta_w: MaternParams::new(res.x[0].exp(), res.x[1].exp())?,
        objective: res.fx,
        converged: res.converged,
        skipped_rows: skipped,
        evaluations: res.evaluations,
    })
}

/// Spatial averages of the data rows together with the variance of the
/// corresponding averaged Gaussian field.
#[derive(Debug, Clone)]
pub struct RowMeans {
    /// Sorted ascending.
    means: Vec<f64>,
    sigma_wbar2: f64,
}

impl RowMeans {
    pub fn new(data: &DataMatrix, theta_w: &MaternParams) -> Result<Self> {
        let corr = build_corr_matrix(data.sites(), theta_w)?;
        let means = (0..data.nrows())
            .map(|i| data.row(i).iter().sum::<f64>() / data.ncols() as f64)
            .collect();
        Self::from_parts(means, avg_variance(&corr))
    }

    pub fn from_parts(mut means: Vec<f64>, sigma_wbar2: f64) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::Data("no spatial averages".into()));
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite spatial average".into()));
        }
        if !(sigma_wbar2 > 0.0 && sigma_wbar2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "averaged-field variance must be positive, got {sigma_wbar2}"
            )));
        }
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self { means, sigma_wbar2 })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn sigma_wbar2(&self) -> f64 {
        self.sigma_wbar2
    }

    pub fn sigma_wbar(&self) -> f64 {
        self.sigma_wbar2.sqrt()
    }
}

/// Settings of the Cramer-von Mises objective: Monte-Carlo sample size for
/// the reference cdf, the fixed seed making the objective deterministic, and
/// optimizer tolerances.
#[derive(Debug, Clone, Copy)]
pub struct CvmConfig {
    pub mc_draws: usize,
    pub seed: u64,
    pub nm: NelderMeadOptions,
    pub brent: BrentOptions,
}

impl Default for CvmConfig {
    fn default() -> Self {
        Self {
            mc_draws: OPTIMIZER_TABLE_N,
            seed: 0x00c7_ae5c,
            nm: NelderMeadOptions::default(),
            brent: BrentOptions::default(),
        }
    }
}

impl CvmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_draws < 10_000 {
            return Err(Error::InvalidArgument(format!(
                "Cramer-von Mises fit needs at least 10^4 Monte-Carlo draws, got {}",
                self.mc_draws
            )));
        }
        Ok(())
    }
}

/// Cramer-von Mises statistic of the sorted spatial averages against the
/// Monte-Carlo cdf of S + R sigma_W G under `spec`. Deterministic for a
/// fixed config seed.
pub fn cvm_stat(spec: &MixingSpec, means: &RowMeans, cfg: &CvmConfig) -> Result<f64> {
    cfg.validate()?;
    spec.validate()?;
    let table = mean_table(spec, means.sigma_wbar(), cfg.mc_draws, cfg.seed)?;
    let n = means.len() as f64;
    let sum: f64 = means
        .means()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let target = (i as f64 + 0.5) / n;
            let d = target - mc_cdf(&table, x);
            d * d
        })
        .sum();
    Ok(1.0 / (12.0 * n) + sum)
}

fn to_unconstrained(spec: &MixingSpec) -> Vec<f64> {
    spec.params()
        .iter()
        .zip(spec.param_on_log_scale())
        .map(|(&(_, v), log)| if log { v.ln() } else { v })
        .collect()
}

fn from_unconstrained(template: &MixingSpec, t: &[f64]) -> Result<MixingSpec> {
    let vals: Vec<f64> = t
        .iter()
        .zip(template.param_on_log_scale())
        .map(|(&v, log)| if log { v.exp() } else { v })
        .collect();
    template.with_params(&vals)
}

/// Outcome of the second estimation step.
#[derive(Debug, Clone)]
pub struct SrFit {
    pub spec: MixingSpec,
    pub objective: f64,
    pub converged: bool,
    pub evaluations: usize,
}

fn minimize_over_spec<F>(template: &MixingSpec, cfg: &CvmConfig, mut obj: F) -> Result<OptimResult>
where
    F: FnMut(&MixingSpec) -> f64,
{
    let k = template.params().len();
    if k == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} has no free mixing parameters",
            template.name()
        )));
    }
    let mut eval_t = |t: &[f64]| -> f64 {
        if t.iter().any(|v| v.abs() > 12.0) {
            return f64::INFINITY;
        }
        match from_unconstrained(template, t) {
            Ok(s) => obj(&s),
            Err(_) => f64::INFINITY,
        }
    };
    if k == 1 {
        // Bracket: wide log range for positive parameters, a plain real
        // interval for the unconstrained shape.
        let (lo, hi, grid) = if template.param_on_log_scale()[0] {
            (0.02f64.ln(), 50.0f64.ln(), 33)
        } else {
            (-1.5, 3.0, 31)
        };
        grid_then_brent(|t| eval_t(&[t]), lo, hi, grid, &cfg.brent)
    } else {
        nelder_mead(&mut eval_t, &to_unconstrained(template), &cfg.nm)
    }
}

/// Minimize the Cramer-von Mises statistic over the mixing parameters with
/// the averaged-field variance held at its first-step value.
pub fn fit_theta_sr(means: &RowMeans, spec: &MixingSpec, cfg: &CvmConfig) -> Result<SrFit> {
    cfg.validate()?;
    let res = minimize_over_spec(spec, cfg, |trial| {
        cvm_stat(trial, means, cfg).unwrap_or(f64::INFINITY)
    })?;
    if !res.fx.is_finite() {
        return Err(Error::NonConvergence(
            "distance objective infinite everywhere probed".into(),
        ));
    }
    Ok(SrFit {
        spec: from_unconstrained(spec, &res.x)?,
        objective: res.fx,
        converged: res.converged,
        evaluations: res.evaluations,
    })
}

/// Combined outcome of the two estimation steps.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_w: MaternParams,
    pub spec: MixingSpec,
    pub sigma_wbar2: f64,
    pub step1_objective: f64,
    pub step2_objective: Option<f64>,
    pub converged: bool,
    pub skipped_rows: usize,
}

/// Two-step fit on x-scale data: restricted likelihood for the correlation
/// parameters, then the minimum-distance fit of the mixing parameters.
pub fn fit_two_step(data: &DataMatrix, spec: &MixingSpec, cfg: &CvmConfig) -> Result<FitResult> {
    spec.validate()?;
    let class = Step1Class::for_spec(spec);
    let step1 = fit_theta_w(data, &class)?;
    let means = RowMeans::new(data, &step1.theta_w)?;
    if spec.params().is_empty() {
        return Ok(FitResult {
            theta_w: step1.theta_w,
            spec: *spec,
            sigma_wbar2: means.sigma_wbar2(),
            step1_objective: step1.objective,
            step2_objective: None,
            converged: step1.converged,
            skipped_rows: step1.skipped_rows,
        });
    }
    let step2 = fit_theta_sr(&means, spec, cfg)?;
    Ok(FitResult {
        theta_w: step1.theta_w,
        spec: step2.spec,
        sigma_wbar2: means.sigma_wbar2(),
        step1_objective: step1.objective,
        step2_objective: Some(step2.objective),
        converged: step1.converged && step2.converged,
        skipped_rows: step1.skipped_rows,
    })
}

/// Outer-loop optimizer settings for the copula fit: stop when the objective
/// improves by less than 1e-6 or after 200 trial mixing parameters.
fn copula_outer_nm() -> NelderMeadOptions {
    NelderMeadOptions {
        ftol: 1e-6,
        xtol: 1e-4,
        max_evals: 200,
        initial_step: 0.3,
    }
}

fn copula_outer_brent() -> BrentOptions {
    BrentOptions {
        tol: 1e-4,
        max_iters: 60,
    }
}

/// Fit the model as a copula on uniform-scale data: for each trial mixing
/// parameter, map the uniforms to the x scale through a fixed-seed
/// Monte-Carlo quantile table, refit the correlation parameters, and score
/// with the Cramer-von Mises statistic.
pub fn fit_copula(udata: &DataMatrix, spec: &MixingSpec, cfg: &CvmConfig) -> Result<FitResult> {
    spec.validate()?;
    cfg.validate()?;
    if udata.values().iter().any(|&u| !(u > 0.0 && u < 1.0)) {
        return Err(Error::Data(
            "copula data must lie strictly inside (0, 1)".into(),
        ));
    }
    let class = Step1Class::for_spec(spec);
    let table_seed = cfg.seed ^ 0x7ab1_e5ee_d000_0001;
    let default_start = MaternParams::new(udata.sites().median_pairwise_distance(), 0.5)?;

    // Evaluate one trial value of the mixing parameters: steps 1-3 of the
    // estimation loop. Returns the objective and the inner fit.
    let mut warm = default_start;
    let mut best: Option<(f64, MixingSpec, Step1Fit, f64)> = None;
    let trial = |spec_t: &MixingSpec, warm: &mut MaternParams| -> Result<(f64, Step1Fit, f64)> {
        let table = marginal_table(spec_t, cfg.mc_draws, table_seed)?;
        let data = from_uniform(udata, &table)?;
        let step1 = fit_theta_w_from(&data, &class, warm)?;
        *warm = step1.theta_w;
        let means = RowMeans::new(&data, &step1.theta_w)?;
        let t = cvm_stat(spec_t, &means, cfg)?;
        Ok((t, step1, means.sigma_wbar2()))
    };

    if spec.params().is_empty() {
        let (t, step1, sw2) = trial(spec, &mut warm)?;
        return Ok(FitResult {
            theta_w: step1.theta_w,
            spec: *spec,
            sigma_wbar2: sw2,
            step1_objective: step1.objective,
            step2_objective: Some(t),
            converged: step1.converged,
            skipped_rows: step1.skipped_rows,
        });
    }

    let outer_cfg = CvmConfig {
        nm: copula_outer_nm(),
        brent: copula_outer_brent(),
        ..*cfg
    };
    let res = minimize_over_spec(spec, &outer_cfg, |spec_t| {
        match trial(spec_t, &mut warm) {
            Ok((t, step1, sw2)) => {
                if best.as_ref().map_or(true, |b| t < b.0) {
                    best = Some((t, *spec_t, step1, sw2));
                }
                t
            }
            Err(_) => f64::INFINITY,
        }
    })?;
    let (t, spec_hat, step1, sw2) = best.ok_or_else(|| {
        Error::NonConvergence("copula objective infinite everywhere probed".into())
    })?;
    Ok(FitResult {
        theta_w: step1.theta_w,
        spec: spec_hat,
        sigma_wbar2: sw2,
        step1_objective: step1.objective,
        step2_objective: Some(t),
        converged: res.converged,
        skipped_rows: step1.skipped_rows,
    })
}

/// Bootstrap refit strategy: `Fast` holds the correlation parameters fixed
/// and refits only the mixing parameters; `Standard` repeats the full
/// two-step fit on every replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapMode {
    Fast,
    Standard,
}

/// A percentile confidence interval for one parameter.
#[derive(Debug, Clone)]
pub struct ParamInterval {
    pub name: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub intervals: Vec<ParamInterval>,
    pub failed: usize,
    pub replicates: usize,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len() as f64;
    let pos = (p * n - 0.5).clamp(0.0, n - 1.0);
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Parametric bootstrap percentile intervals for the fitted parameters:
/// simulate `b` datasets of `n` rows at the fitted model and refit each per
/// `mode`. Fast mode yields intervals for the mixing parameters only.
pub fn bootstrap_ci(
    fit: &FitResult,
    sites: &SiteSet,
    n: usize,
    b: usize,
    level: f64,
    mode: BootstrapMode,
    cfg: &CvmConfig,
    seed: u64,
) -> Result<BootstrapResult> {
    if b < 50 {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs at least 50 replicates, got {b}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    if mode == BootstrapMode::Fast && fit.spec.params().is_empty() {
        return Err(Error::InvalidArgument(
            "fast bootstrap has nothing to refit: no free mixing parameters".into(),
        ));
    }
    let params = crate::process::ModelParams::new(fit.spec, fit.theta_w)?;
    let names: Vec<String> = match mode {
        BootstrapMode::Fast => fit
            .spec
            .params()
            .iter()
            .map(|(nm, _)| nm.to_string())
            .collect(),
        BootstrapMode::Standard => ["range", "smoothness"]
            .iter()
            .map(|s| s.to_string())
            .chain(fit.spec.params().iter().map(|(nm, _)| nm.to_string()))
            .collect(),
    };
    let estimates: Vec<f64> = match mode {
        BootstrapMode::Fast => fit.spec.params().iter().map(|&(_, v)| v).collect(),
        BootstrapMode::Standard => [fit.theta_w.range, fit.theta_w.smoothness]
            .into_iter()
            .chain(fit.spec.params().iter().map(|&(_, v)| v))
            .collect(),
    };

    let refits: Vec<Result<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let rep_seed = seed.wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let data = simulate(&params, sites, n, rep_seed)?;
            match mode {
                BootstrapMode::Fast => {
                    let means = RowMeans::new(&data, &fit.theta_w)?;
                    let sr = fit_theta_sr(&means, &fit.spec, cfg)?;
                    Ok(sr.spec.params().iter().map(|&(_, v)| v).collect())
                }
                BootstrapMode::Standard => {
                    let rep = fit_two_step(&data, &fit.spec, cfg)?;
                    Ok([rep.theta_w.range, rep.theta_w.smoothness]
                        .into_iter()
                        .chain(rep.spec.params().iter().map(|&(_, v)| v))
                        .collect())
                }
            }
        })
        .collect();

    let ok: Vec<Vec<f64>> = refits.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
    let failed = b - ok.len();
    if failed * 10 > b {
        return Err(Error::NonConvergence(format!(
            "{failed} of {b} bootstrap replicate fits failed"
        )));
    }
    let alpha = 0.5 * (1.0 - level);
    let intervals = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut vals: Vec<f64> = ok.iter().map(|v| v[j]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ParamInterval {
                name: name.clone(),
                estimate: estimates[j],
                lower: percentile(&vals, alpha),
                upper: percentile(&vals, 1.0 - alpha),
            }
        })
        .collect();
    Ok(BootstrapResult {
        intervals,
        failed,
        replicates: b,
    })
}

/// Quadrature-based negative log-likelihood for up to three sites. This is a
/// slow reference implementation used only to cross-check the estimators in
/// tests; it integrates the conditional Gaussian density against the mixing
/// density with adaptive Simpson rules.
pub fn quad_negloglik_oracle(
    spec: &MixingSpec,
    corr: &CorrMatrix,
    rows: &[Vec<f64>],
) -> Result<f64> {
    spec.validate()?;
    let m = corr.dim();
    if m > 3 {
        return Err(Error::InvalidArgument(format!(
            "quadrature oracle supports at most 3 sites, got {m}"
        )));
    }
    if rows.is_empty() || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Data("rows must be non-empty with m entries each".into()));
    }
    if matches!(spec, MixingSpec::Sm4 { .. }) {
        return Err(Error::InvalidArgument(
            "the joint (s, r) density has no closed form for this variant".into(),
        ));
    }
    let chol = corr.chol_lower();
    let cond_density = |x: &[f64], s: f64, r: f64| -> f64 {
        let z = DVector::from_iterator(m, x.iter().map(|&v| (v - s) / r));
        match mvn_logpdf(&z, chol) {
            Ok(lp) => (lp - m as f64 * r.ln()).exp(),
            Err(_) => 0.0,
        }
    };
    let mix_density = |s: f64, r: f64| -> f64 {
        match logdensity_sr(spec, s, r) {
            Ok(Some(lp)) => lp.exp(),
            _ => 0.0,
        }
    };
    // Scale integrals run over t = ln r.
    let (t_lo, t_hi) = (-10.0, 8.0);
    let mut total = 0.0;
    for x in rows {
        let xmax = x.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let density = match spec.class() {
            MixtureClass::PureGaussian => cond_density(x, 0.0, 1.0),
            MixtureClass::Location => {
                let s_hi = xmax + 45.0;
                let s_lo = if matches!(spec, MixingSpec::Lm1 { .. }) {
                    0.0
                } else {
                    -s_hi
                };
                adaptive_simpson(
                    |s| mix_density(s, 1.0) * cond_density(x, s, 1.0),
                    s_lo,
                    s_hi,
                    1e-12,
                )?
            }
            MixtureClass::Scale => adaptive_simpson(
                |t| {
                    let r = t.exp();
                    mix_density(0.0, r) * cond_density(x, 0.0, r) * r
                },
                t_lo,
                t_hi,
                1e-12,
            )?,
            MixtureClass::LocationScale => {
                let s_hi = xmax + 45.0;
                let s_lo = if matches!(spec, MixingSpec::Lsm1 { .. }) {
                    0.0
                } else {
                    -s_hi
                };
                adaptive_simpson(
                    |s| {
                        adaptive_simpson(
                            |t| {
                                let r = t.exp();
                                mix_density(s, r) * cond_density(x, s, r) * r
                            },
                            t_lo,
                            t_hi,
                            1e-13,
                        )
                        .unwrap_or(0.0)
                    },
                    s_lo,
                    s_hi,
                    1e-11,
                )?
            }
        };
        if !(density > 0.0) {
            return Err(Error::Numerical(format!(
                "quadrature density vanished at row {x:?}"
            )));
        }
        total -= density.ln();
    }
    Ok(total)
}
