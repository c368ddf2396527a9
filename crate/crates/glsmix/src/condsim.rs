//! Conditional simulation of X2 given X1 = x1: Metropolis-Hastings sampling
//! of the mixing pair (S, R) given the observations, followed by conditional
//! Gaussian completion at the target sites.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::correlation::{build_corr_matrix, CorrMatrix, SiteSet};
use crate::error::{Error, Result};
use crate::marginal::{egpd_quantile, EgpdParams};
use crate::mixing::{sample_sr, LatentDraw, MixingSpec, Support};
use crate::numkernel::mvn_logpdf;
use crate::process::{mc_cdf, ModelParams, MonteCarloMarginal};

/// Metropolis-Hastings chain settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondSimConfig {
    /// Discarded initial steps.
    pub burnin: usize,
    /// Total chain length, including burn-in.
    pub steps: usize,
    /// Retain every `thin`-th step after burn-in.
    pub thin: usize,
    /// Proposal standard deviation for the location coordinate.
    pub prop_sd_s: f64,
    /// Proposal standard deviation for log-scale (and latent) coordinates.
    pub prop_sd_logr: f64,
}

impl Default for CondSimConfig {
    fn default() -> Self {
        Self {
            burnin: 5_000,
            steps: 50_000,
            thin: 100,
            prop_sd_s: 1.0,
            prop_sd_logr: 1.0,
        }
    }
}

impl CondSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burnin >= self.steps {
            return Err(Error::InvalidArgument(format!(
                "burn-in {} must be smaller than the chain length {}",
                self.burnin, self.steps
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thinning stride must be >= 1".into()));
        }
        if !(self.prop_sd_s > 0.0 && self.prop_sd_logr > 0.0) {
            return Err(Error::InvalidArgument(
                "proposal standard deviations must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of retained draws.
    pub fn retained(&self) -> usize {
        (self.steps - self.burnin) / self.thin
    }
}

/// Retained draws of the mixing pair and the observed acceptance rate.
#[derive(Debug, Clone)]
pub struct Chain {
    pub draws: Vec<LatentDraw>,
    pub acceptance_rate: f64,
}

/// Posterior log-kernel of one chain state: mixing density times the
/// Gaussian likelihood of x1, with the scale-proposal Jacobian folded in.
fn chain_log_term(
    spec: &MixingSpec,
    draw: &LatentDraw,
    x1: &DVector<f64>,
    chol11: &DMatrix<f64>,
) -> Result<f64> {
    let m = x1.len();
    let w1 = x1.add_scalar(-draw.s) / draw.r;
    let lik = mvn_logpdf(&w1, chol11)?;
    match spec {
        MixingSpec::Sm4 { .. } => {
            // Latent coordinates (e, g), both on log random walks: density of
            // the latent pair, the x1 likelihood, and both walk Jacobians.
            let dens = crate::mixing::logdensity_latent(spec, &draw.latent)?;
            let jac: f64 = draw.latent.iter().map(|v| v.ln()).sum();
            Ok(dens + lik - m as f64 * draw.r.ln() + jac)
        }
        _ => {
            let dens = crate::mixing::logdensity_sr(spec, draw.s, draw.r)?.ok_or_else(|| {
                Error::Numerical("closed-form mixing density unavailable".into())
            })?;
            // r^{-m} from the x1 likelihood and r'/r from the log-r walk
            // combine into the (m-1) exponent.
            Ok(dens + lik - (m as f64 - 1.0) * draw.r.ln())
        }
    }
}

/// Log of the Metropolis-Hastings acceptance ratio between a candidate and
/// the current state (before the min with 0).
pub fn mh_log_accept(
    spec: &MixingSpec,
    cand: &LatentDraw,
    cur: &LatentDraw,
    x1: &DVector<f64>,
    chol11: &DMatrix<f64>,
) -> Result<f64> {
    if matches!(spec, MixingSpec::Gaussian) {
        return Err(Error::InvalidArgument(
            "the Gaussian spec has a degenerate mixing pair; nothing to sample".into(),
        ));
    }
    if x1.len() != chol11.nrows() || !chol11.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "x1 has length {} but the Cholesky factor is {}x{}",
            x1.len(),
            chol11.nrows(),
            chol11.ncols()
        )));
    }
    Ok(chain_log_term(spec, cand, x1, chol11)? - chain_log_term(spec, cur, x1, chol11)?)
}

fn state_to_draw(spec: &MixingSpec, state: &[f64]) -> LatentDraw {
    let (s, r) = spec.chain_state_to_sr(state);
    LatentDraw {
        s,
        r,
        latent: state.to_vec(),
    }
}

/// Whether the location coordinate (index 0) runs on a log random walk,
/// which needs its own Jacobian correction on top of [`mh_log_accept`].
fn location_on_log_walk(spec: &MixingSpec) -> bool {
    matches!(spec, MixingSpec::Lm1 { .. } | MixingSpec::Lsm1 { .. })
}

fn mh_chain_inner(
    spec: &MixingSpec,
    x1: &DVector<f64>,
    chol11: &DMatrix<f64>,
    cfg: &CondSimConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Chain> {
    cfg.validate()?;
    if matches!(spec, MixingSpec::Gaussian) {
        // Degenerate mixing pair: the "chain" is the constant (0, 1).
        let draws = vec![
            LatentDraw {
                s: 0.0,
                r: 1.0,
                latent: vec![],
            };
            cfg.retained()
        ];
        return Ok(Chain {
            draws,
            acceptance_rate: 1.0,
        });
    }
    let supports = spec.chain_supports();
    let mut state = spec.chain_state_from_draw(&sample_sr(spec, rng));
    let mut cur = state_to_draw(spec, &state);
    let mut accepted = 0usize;
    let mut draws = Vec::with_capacity(cfg.retained());
    for step in 1..=cfg.steps {
        let mut cand_state = Vec::with_capacity(state.len());
        let has_location = matches!(
            spec,
            MixingSpec::Lm1 { .. }
                | MixingSpec::Lm2 { .. }
                | MixingSpec::Lsm1 { .. }
                | MixingSpec::Lsm2 { .. }
        );
        for (k, support) in supports.iter().enumerate() {
            let sd = if k == 0 && has_location {
                cfg.prop_sd_s
            } else {
                cfg.prop_sd_logr
            };
            let z: f64 = StandardNormal.sample(rng);
            let v = match support {
                Support::Real => state[k] + sd * z,
                Support::Positive => (state[k].ln() + sd * z).exp(),
            };
            cand_state.push(v);
        }
        let cand = state_to_draw(spec, &cand_state);
        let mut log_alpha = mh_log_accept(spec, &cand, &cur, x1, chol11)?;
        if location_on_log_walk(spec) {
            log_alpha += cand.s.ln() - cur.s.ln();
        }
        let u: f64 = rng.gen();
        if u.ln() < log_alpha {
            state = cand_state;
            cur = cand;
            accepted += 1;
        }
        if step > cfg.burnin && (step - cfg.burnin) % cfg.thin == 0 {
            draws.push(cur.clone());
        }
    }
    if accepted == 0 {
        return Err(Error::NonConvergence(
            "Metropolis-Hastings chain accepted no proposals".into(),
        ));
    }
    Ok(Chain {
        draws,
        acceptance_rate: accepted as f64 / cfg.steps as f64,
    })
}

/// Sample the mixing pair (S, R) given X1 = x1 by random-walk
/// Metropolis-Hastings.
pub fn mh_chain(
    params: &ModelParams,
    x1: &[f64],
    sites1: &SiteSet,
    cfg: &CondSimConfig,
    seed: u64,
) -> Result<Chain> {
    if x1.len() != sites1.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations for {} sites",
            x1.len(),
            sites1.len()
        )));
    }
    let corr = build_corr_matrix(sites1, &params.corr)?;
    mh_chain_corr(&params.mixing, x1, &corr, cfg, seed)
}

/// As [`mh_chain`] but conditioning on an explicit correlation matrix, which
/// also admits a single conditioning coordinate.
pub fn mh_chain_corr(
    spec: &MixingSpec,
    x1: &[f64],
    corr1: &CorrMatrix,
    cfg: &CondSimConfig,
    seed: u64,
) -> Result<Chain> {
    if x1.len() != corr1.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations for a {}-dimensional correlation matrix",
            x1.len(),
            corr1.dim()
        )));
    }
    let x1 = DVector::from_column_slice(x1);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    mh_chain_inner(spec, &x1, corr1.chol_lower(), cfg, &mut rng)
}

/// Conditional Gaussian machinery: mean weights Sigma21 Sigma11^-1 and the
/// Cholesky factor of the conditional covariance.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    weights: DMatrix<f64>,
    chol_cond: DMatrix<f64>,
    m: usize,
}

impl ConditionalGaussian {
    /// Build from a joint correlation matrix whose first `m` indices are the
    /// conditioning sites.
    pub fn new(joint: &CorrMatrix, m: usize) -> Result<Self> {
        let total = joint.dim();
        if m == 0 || m >= total {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= m < {total}, got {m}"
            )));
        }
        let h = total - m;
        let sigma = joint.sigma();
        let s11 = sigma.view((0, 0), (m, m)).into_owned();
        let s12 = sigma.view((0, m), (m, h)).into_owned();
        let s22 = sigma.view((m, m), (h, h)).into_owned();
        let chol11 = s11.cholesky().ok_or(Error::CholeskyFailure)?;
        // Sigma11^-1 Sigma12, then transpose into the mean weights.
        let mut solved = s12.clone();
        chol11.solve_mut(&mut solved);
        let weights = solved.transpose();
        let cond = &s22 - &weights * &s12;
        let chol_cond = CorrMatrix::from_matrix(cond)?.chol_lower().clone();
        Ok(Self {
            weights,
            chol_cond,
            m,
        })
    }

    /// Conditional mean mu_{2|1} = Sigma21 Sigma11^-1 w1.
    pub fn mean(&self, w1: &DVector<f64>) -> Result<DVector<f64>> {
        if w1.len() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "w1 has length {}, expected {}",
                w1.len(),
                self.m
            )));
        }
        Ok(&self.weights * w1)
    }

    /// One draw from N(mu_{2|1}, Sigma_{2|1}).
    pub fn sample<R: Rng + ?Sized>(&self, w1: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        let mu = self.mean(w1)?;
        let h = self.chol_cond.nrows();
        let g = DVector::from_iterator(h, (0..h).map(|_| rng.sample::<f64, _>(StandardNormal)));
        Ok(mu + &self.chol_cond * g)
    }
}

/// One conditional Gaussian draw w2 | w1 from a joint correlation matrix
/// whose first `m` indices are the conditioning sites.
pub fn gaussian_conditional(
    joint: &CorrMatrix,
    m: usize,
    w1: &DVector<f64>,
    seed: u64,
) -> Result<DVector<f64>> {
    let cg = ConditionalGaussian::new(joint, m)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    cg.sample(w1, &mut rng)
}

/// Simulate X2 | X1 = x1: one draw at the target sites per retained mixing
/// pair.
pub fn conditional_simulate(
    params: &ModelParams,
    sites1: &SiteSet,
    x1: &[f64],
    sites2: &SiteSet,
    cfg: &CondSimConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if x1.len() != sites1.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations for {} sites",
            x1.len(),
            sites1.len()
        )));
    }
    // Overlapping site sets are rejected by the duplicate check in concat.
    let joint_sites = sites1.concat(sites2)?;
    let joint = build_corr_matrix(&joint_sites, &params.corr)?;
    let m = sites1.len();
    let s11 = joint.sigma().view((0, 0), (m, m)).into_owned();
    let corr1 = CorrMatrix::from_matrix(s11)?;
    let x1v = DVector::from_column_slice(x1);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let chain = mh_chain_inner(&params.mixing, &x1v, corr1.chol_lower(), cfg, &mut rng)?;
    let cg = ConditionalGaussian::new(&joint, m)?;
    let mut out = Vec::with_capacity(chain.draws.len());
    for (i, d) in chain.draws.iter().enumerate() {
        // Independent derived stream per retained pair, so draws do not
        // depend on chain internals.
        let mut draw_rng = ChaCha12Rng::seed_from_u64(seed);
        draw_rng.set_stream(1 + i as u64);
        let w1 = x1v.add_scalar(-d.s) / d.r;
        let w2 = cg.sample(&w1, &mut draw_rng)?;
        out.push((0..w2.len()).map(|j| d.s + d.r * w2[j]).collect());
    }
    Ok(out)
}

/// Per-site medians of conditional draws.
pub fn conditional_predict(draws: &[Vec<f64>]) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(Error::Data("no conditional draws".into()));
    }
    let h = draws[0].len();
    if draws.iter().any(|d| d.len() != h) {
        return Err(Error::DimensionMismatch(
            "conditional draws have differing lengths".into(),
        ));
    }
    let mut out = Vec::with_capacity(h);
    for j in 0..h {
        let mut col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = col.len();
        let med = if n % 2 == 1 {
            col[n / 2]
        } else {
            0.5 * (col[n / 2 - 1] + col[n / 2])
        };
        out.push(med);
    }
    Ok(out)
}

/// Per-site medians pushed to the observed scale: model cdf followed by the
/// per-site EGPD quantile. Medians commute with the monotone transform, so
/// they are computed on the model scale first.
pub fn conditional_predict_observed(
    draws: &[Vec<f64>],
    table: &MonteCarloMarginal,
    egpd: &[EgpdParams],
) -> Result<Vec<f64>> {
    let medians = conditional_predict(draws)?;
    if egpd.len() != medians.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} EGPD parameter sets for {} target sites",
            egpd.len(),
            medians.len()
        )));
    }
    medians
        .iter()
        .zip(egpd.iter())
        .map(|(&x, par)| egpd_quantile(mc_cdf(table, x), par))
        .collect()
}
