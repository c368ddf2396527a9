//! Tail-dependence coefficients chi and chi-bar: closed forms per mixing
//! law, Monte-Carlo evaluation for the location-scale laws in their
//! asymptotically dependent regime, empirical estimators and the
//! chi-by-distance diagnostic.

use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::mixing::MixingSpec;
use crate::numkernel::{std_normal_cdf, student_t_cdf};
use crate::process::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    Upper,
    Lower,
}

/// Default Monte-Carlo sample size for the location-scale chi expectation.
pub const DEFAULT_CHI_MC_DRAWS: usize = 1_000_000;

/// A theoretical chi value: exact closed form, or a Monte-Carlo estimate with
/// its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChiEstimate {
    Exact(f64),
    MonteCarlo { value: f64, std_err: f64 },
}

impl ChiEstimate {
    pub fn value(&self) -> f64 {
        match *self {
            ChiEstimate::Exact(v) => v,
            ChiEstimate::MonteCarlo { value, .. } => value,
        }
    }

    pub fn std_err(&self) -> f64 {
        match *self {
            ChiEstimate::Exact(_) => 0.0,
            ChiEstimate::MonteCarlo { std_err, .. } => std_err,
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(-1.0..1.0).contains(&rho) || rho <= -1.0 {
        return Err(Error::InvalidArgument(format!(
            "correlation must be in (-1,1), got {rho}"
        )));
    }
    Ok(())
}

/// chi of the Student-type closed forms: 2 T_{d+1}(-sqrt((d+1)(1-rho)/(1+rho))).
fn chi_student(d: f64, rho: f64) -> Result<f64> {
    let arg = -((d + 1.0) * (1.0 - rho) / (1.0 + rho)).sqrt();
    Ok(2.0 * student_t_cdf(arg, d + 1.0)?)
}

/// chi of the exponential-location closed form: 2 Phi(-lambda sqrt(1-rho)/sqrt(2)).
fn chi_exp_location(lambda: f64, rho: f64) -> f64 {
    2.0 * std_normal_cdf(-lambda * (1.0 - rho).sqrt() / std::f64::consts::SQRT_2)
}

/// Monte-Carlo evaluation of chi = E[min{Z1^l / E Z1^l, Z2^l / E Z2^l}] with
/// Z_i = exp(R W_i), R the Rayleigh scale and (W1, W2) standard bivariate
/// normal with correlation rho. Means are estimated empirically from the
/// same draws; the reported standard error covers the outer average only.
fn chi_lsm_mc(lambda: f64, rho: f64, draws: usize, seed: u64) -> ChiEstimate {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let exp_half = Exp::new(0.5).unwrap();
    let mut z1 = Vec::with_capacity(draws);
    let mut z2 = Vec::with_capacity(draws);
    let c = (1.0 - rho * rho).sqrt();
    for _ in 0..draws {
        let e: f64 = exp_half.sample(&mut rng);
        let r = e.sqrt();
        let g1: f64 = StandardNormal.sample(&mut rng);
        let g2: f64 = StandardNormal.sample(&mut rng);
        let w1 = g1;
        let w2 = rho * g1 + c * g2;
        z1.push((lambda * r * w1).exp());
        z2.push((lambda * r * w2).exp());
    }
    let n = draws as f64;
    let m1 = z1.iter().sum::<f64>() / n;
    let m2 = z2.iter().sum::<f64>() / n;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for i in 0..draws {
        let v = (z1[i] / m1).min(z2[i] / m2);
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / n;
    let var = (sumsq / n - mean * mean).max(0.0);
    ChiEstimate::MonteCarlo {
        value: mean,
        std_err: (var / n).sqrt(),
    }
}

/// Theoretical chi with explicit Monte-Carlo controls for the location-scale
/// laws in their asymptotically dependent regime.
pub fn chi_theory_with(
    spec: &MixingSpec,
    rho: f64,
    side: TailSide,
    mc_draws: usize,
    seed: u64,
) -> Result<ChiEstimate> {
    check_rho(rho)?;
    spec.validate()?;
    let spec = match side {
        TailSide::Upper => *spec,
        TailSide::Lower => spec.reflected(),
    };
    let v = match spec {
        MixingSpec::Gaussian | MixingSpec::Sm1 | MixingSpec::Sm2 { .. } => ChiEstimate::Exact(0.0),
        MixingSpec::Lm1 { lambda } => ChiEstimate::Exact(chi_exp_location(lambda, rho)),
        MixingSpec::Lm2 { lambda1, .. } => ChiEstimate::Exact(chi_exp_location(lambda1, rho)),
        MixingSpec::Sm3 { nu } => ChiEstimate::Exact(chi_student(nu, rho)?),
        MixingSpec::Sm4 { gamma } => ChiEstimate::Exact(chi_student(1.0 / gamma, rho)?),
        MixingSpec::Sm5 { gamma } => {
            if gamma > 0.0 {
                // GPD(1, gamma) is regularly varying with index 1/gamma, so
                // the Student-type closed form applies with d = 1/gamma
                // (same argument as for the elliptical generalized Pareto
                // law, where R inherits the inverse-Gamma tail index).
                ChiEstimate::Exact(chi_student(1.0 / gamma, rho)?)
            } else {
                ChiEstimate::Exact(0.0)
            }
        }
        MixingSpec::Lsm1 { lambda } | MixingSpec::Lsm2 { lambda1: lambda, .. } => {
            if lambda >= 1.0 {
                ChiEstimate::Exact(0.0)
            } else {
                chi_lsm_mc(lambda, rho, mc_draws, seed)
            }
        }
    };
    Ok(v)
}

/// Theoretical chi at default Monte-Carlo settings.
pub fn chi_theory(spec: &MixingSpec, rho: f64, side: TailSide) -> Result<ChiEstimate> {
    chi_theory_with(spec, rho, side, DEFAULT_CHI_MC_DRAWS, 0x_c41)
}

/// Theoretical chi-bar.
pub fn chibar_theory(spec: &MixingSpec, rho: f64, side: TailSide) -> Result<f64> {
    check_rho(rho)?;
    spec.validate()?;
    let spec = match side {
        TailSide::Upper => *spec,
        TailSide::Lower => spec.reflected(),
    };
    let v = match spec {
        MixingSpec::Gaussian => rho,
        MixingSpec::Lm1 { .. } | MixingSpec::Lm2 { .. } => 1.0,
        MixingSpec::Sm1 | MixingSpec::Sm2 { .. } => (2.0 * (1.0 + rho)).sqrt() - 1.0,
        MixingSpec::Sm3 { .. } | MixingSpec::Sm4 { .. } => 1.0,
        MixingSpec::Sm5 { gamma } => {
            if gamma > 0.0 {
                1.0
            } else if gamma == 0.0 {
                (4.0 * (1.0 + rho)).cbrt() - 1.0
            } else {
                rho
            }
        }
        MixingSpec::Lsm1 { lambda } | MixingSpec::Lsm2 { lambda1: lambda, .. } => {
            if lambda > 1.0 {
                (2.0 / lambda - 1.0).max(rho)
            } else {
                1.0
            }
        }
    };
    Ok(v)
}

fn check_pairs(pairs: &[(f64, f64)], p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) || p <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "threshold must be in (0,1), got {p}"
        )));
    }
    if pairs.is_empty() {
        return Err(Error::Data("no pairs supplied".into()));
    }
    if pairs
        .iter()
        .any(|&(u, v)| !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v))
    {
        return Err(Error::Data("pair values must lie in (0,1)".into()));
    }
    Ok(())
}

/// Plug-in estimator of chi at finite threshold p:
/// #{u > p and v > p} / #{u > p}.
pub fn chi_empirical(pairs: &[(f64, f64)], p: f64) -> Result<f64> {
    check_pairs(pairs, p)?;
    let marg = pairs.iter().filter(|&&(u, _)| u > p).count();
    let joint = pairs.iter().filter(|&&(u, v)| u > p && v > p).count();
    if joint == 0 {
        return Err(Error::Numerical(format!(
            "no joint exceedances above p={p}"
        )));
    }
    Ok(joint as f64 / marg as f64)
}

/// Plug-in estimator of chi-bar at finite threshold p:
/// 2 log Pr(u > p) / log Pr(u > p, v > p) - 1.
pub fn chibar_empirical(pairs: &[(f64, f64)], p: f64) -> Result<f64> {
    check_pairs(pairs, p)?;
    let n = pairs.len() as f64;
    let marg = pairs.iter().filter(|&&(u, _)| u > p).count() as f64;
    let joint = pairs.iter().filter(|&&(u, v)| u > p && v > p).count() as f64;
    if joint == 0.0 || marg == 0.0 {
        return Err(Error::Numerical(format!(
            "no joint exceedances above p={p}"
        )));
    }
    Ok(2.0 * (marg / n).ln() / (joint / n).ln() - 1.0)
}

/// Quartile summary of pairwise empirical chi within one distance bin, for
/// one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiBinSummary {
    pub bin_center: f64,
    pub p: f64,
    pub n_pairs: usize,
    /// (q1, median, q3); `None` for bins with no site pairs or no joint
    /// exceedances.
    pub quartiles: Option<(f64, f64, f64)>,
}

/// Chi-by-distance diagnostic: per distance bin and threshold, quartiles of
/// pairwise empirical chi.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiCurve {
    pub bins: Vec<ChiBinSummary>,
}

impl ChiCurve {
    /// Export as tabular text: bin-center, p, q1, median, q3 (blank bins
    /// written as nan).
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "bin_center,p,q1,median,q3")?;
        for b in &self.bins {
            let (q1, med, q3) = b.quartiles.unwrap_or((f64::NAN, f64::NAN, f64::NAN));
            writeln!(
                w,
                "{:.16e},{:.16e},{q1:.16e},{med:.16e},{q3:.16e}",
                b.bin_center, b.p
            )?;
        }
        Ok(())
    }
}

fn quartiles(sorted: &[f64]) -> (f64, f64, f64) {
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < sorted.len() {
            sorted[i] + frac * (sorted[i + 1] - sorted[i])
        } else {
            sorted[i]
        }
    };
    (q(0.25), q(0.5), q(0.75))
}

/// Bin all site pairs by distance and summarize pairwise empirical chi at
/// each threshold. `udata` must already be on the uniform scale.
pub fn chi_by_distance(
    udata: &DataMatrix,
    p_list: &[f64],
    bin_width: f64,
) -> Result<ChiCurve> {
    if udata.ncols() < 2 {
        return Err(Error::InvalidArgument("need at least 2 sites".into()));
    }
    if bin_width <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    if p_list.is_empty() || p_list.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::InvalidArgument(
            "thresholds must be a nonempty list within (0,1)".into(),
        ));
    }
    let sites = udata.sites();
    let m = sites.len();
    let mut max_d: f64 = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            max_d = max_d.max(sites.distance(i, j));
        }
    }
    let n_bins = (max_d / bin_width).floor() as usize + 1;
    // chi values per (bin, threshold)
    let mut cells: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); p_list.len()]; n_bins];
    let mut pair_counts = vec![0usize; n_bins];
    let cols: Vec<Vec<f64>> = (0..m).map(|j| udata.column(j)).collect();
    for i in 0..m {
        for j in (i + 1)..m {
            let bin = ((sites.distance(i, j) / bin_width).floor() as usize).min(n_bins - 1);
            pair_counts[bin] += 1;
            let pairs: Vec<(f64, f64)> = cols[i]
                .iter()
                .zip(cols[j].iter())
                .map(|(&a, &b)| (a, b))
                .collect();
            for (k, &p) in p_list.iter().enumerate() {
                if let Ok(chi) = chi_empirical(&pairs, p) {
                    cells[bin][k].push(chi);
                }
            }
        }
    }
    let mut bins = Vec::new();
    for (b, cell) in cells.into_iter().enumerate() {
        let center = (b as f64 + 0.5) * bin_width;
        for (k, mut vals) in cell.into_iter().enumerate() {
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            bins.push(ChiBinSummary {
                bin_center: center,
                p: p_list[k],
                n_pairs: pair_counts[b],
                quartiles: if vals.is_empty() {
                    None
                } else {
                    Some(quartiles(&vals))
                },
            });
        }
    }
    Ok(ChiCurve { bins })
}
