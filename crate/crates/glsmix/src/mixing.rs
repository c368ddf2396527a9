//! The catalogue of (S, R) mixing laws: sampling, joint densities and the
//! scalar distribution kernels (asymmetric Laplace, GPD) they use.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

/// Support of a chain coordinate, used to pick the random-walk transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    Real,
    Positive,
}

/// Mixture subclass a spec belongs to, which fixes the Step-1 transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixtureClass {
    PureGaussian,
    Location,
    Scale,
    LocationScale,
}

/// Tagged description of the (S, R) mixing law.
///
/// Rate-vs-scale convention: `E(lambda)` is always rate `lambda`;
/// `Gamma(a, b)` is shape `a`, rate `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixingSpec {
    /// S = 0, R = 1: plain Gaussian process.
    Gaussian,
    /// S ~ E(lambda), R = 1.
    Lm1 { lambda: f64 },
    /// S ~ AL(lambda1, lambda2) = E(lambda1) - E(lambda2), R = 1.
    Lm2 { lambda1: f64, lambda2: f64 },
    /// S = 0, R = sqrt(E), E ~ E(1/2) (Rayleigh scale: Laplace process).
    Sm1,
    /// S = 0, R = sqrt(G), G ~ Gamma(alpha, 1) (variance gamma).
    Sm2 { alpha: f64 },
    /// S = 0, R = 1/sqrt(G), G ~ Gamma(nu/2, nu/2) (Student t process).
    Sm3 { nu: f64 },
    /// S = 0, R = sqrt(E)/G, E ~ E(1/2), G ~ Gamma(1/gamma, 1/gamma).
    Sm4 { gamma: f64 },
    /// S = 0, R ~ GPD(1, gamma).
    Sm5 { gamma: f64 },
    /// S ~ E(lambda), R = sqrt(E), E ~ E(1/2).
    Lsm1 { lambda: f64 },
    /// S ~ AL(lambda1, lambda2), R = sqrt(E), E ~ E(1/2).
    Lsm2 { lambda1: f64, lambda2: f64 },
}

/// A draw of (S, R) together with the base latent components that generated
/// it (e.g. (e, g) for SM4).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDraw {
    pub s: f64,
    pub r: f64,
    pub latent: Vec<f64>,
}

impl MixingSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| {
            Err(Error::InvalidParameter(format!(
                "{name} must be positive, got {v}"
            )))
        };
        match *self {
            MixingSpec::Gaussian | MixingSpec::Sm1 => Ok(()),
            MixingSpec::Lm1 { lambda } | MixingSpec::Lsm1 { lambda } => {
                if lambda > 0.0 {
                    Ok(())
                } else {
                    bad("lambda", lambda)
                }
            }
            MixingSpec::Lm2 { lambda1, lambda2 } | MixingSpec::Lsm2 { lambda1, lambda2 } => {
                if lambda1 <= 0.0 {
                    bad("lambda1", lambda1)
                } else if lambda2 <= 0.0 {
                    bad("lambda2", lambda2)
                } else {
                    Ok(())
                }
            }
            MixingSpec::Sm2 { alpha } => {
                if alpha > 0.0 {
                    Ok(())
                } else {
                    bad("alpha", alpha)
                }
            }
            MixingSpec::Sm3 { nu } => {
                if nu > 0.0 {
                    Ok(())
                } else {
                    bad("nu", nu)
                }
            }
            MixingSpec::Sm4 { gamma } => {
                if gamma > 0.0 {
                    Ok(())
                } else {
                    bad("gamma", gamma)
                }
            }
            MixingSpec::Sm5 { gamma } => {
                if gamma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("gamma must be finite".into()))
                }
            }
        }
    }

    pub fn class(&self) -> MixtureClass {
        match self {
            MixingSpec::Gaussian => MixtureClass::PureGaussian,
            MixingSpec::Lm1 { .. } | MixingSpec::Lm2 { .. } => MixtureClass::Location,
            MixingSpec::Sm1
            | MixingSpec::Sm2 { .. }
            | MixingSpec::Sm3 { .. }
            | MixingSpec::Sm4 { .. }
            | MixingSpec::Sm5 { .. } => MixtureClass::Scale,
            MixingSpec::Lsm1 { .. } | MixingSpec::Lsm2 { .. } => MixtureClass::LocationScale,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MixingSpec::Gaussian => "gaussian",
            MixingSpec::Lm1 { .. } => "lm1",
            MixingSpec::Lm2 { .. } => "lm2",
            MixingSpec::Sm1 => "sm1",
            MixingSpec::Sm2 { .. } => "sm2",
            MixingSpec::Sm3 { .. } => "sm3",
            MixingSpec::Sm4 { .. } => "sm4",
            MixingSpec::Sm5 { .. } => "sm5",
            MixingSpec::Lsm1 { .. } => "lsm1",
            MixingSpec::Lsm2 { .. } => "lsm2",
        }
    }

    /// Free mixing parameters in catalogue order (empty for Gaussian, SM1).
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            MixingSpec::Gaussian | MixingSpec::Sm1 => vec![],
            MixingSpec::Lm1 { lambda } | MixingSpec::Lsm1 { lambda } => vec![("lambda", lambda)],
            MixingSpec::Lm2 { lambda1, lambda2 } | MixingSpec::Lsm2 { lambda1, lambda2 } => {
                vec![("lambda1", lambda1), ("lambda2", lambda2)]
            }
            MixingSpec::Sm2 { alpha } => vec![("alpha", alpha)],
            MixingSpec::Sm3 { nu } => vec![("nu", nu)],
            MixingSpec::Sm4 { gamma } | MixingSpec::Sm5 { gamma } => vec![("gamma", gamma)],
        }
    }

    /// Rebuild the spec with new parameter values, in the `params()` order.
    pub fn with_params(&self, values: &[f64]) -> Result<MixingSpec> {
        let expected = self.params().len();
        if values.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "{} takes {expected} parameter(s), got {}",
                self.name(),
                values.len()
            )));
        }
        let spec = match *self {
            MixingSpec::Gaussian => MixingSpec::Gaussian,
            MixingSpec::Sm1 => MixingSpec::Sm1,
            MixingSpec::Lm1 { .. } => MixingSpec::Lm1 { lambda: values[0] },
            MixingSpec::Lsm1 { .. } => MixingSpec::Lsm1 { lambda: values[0] },
            MixingSpec::Lm2 { .. } => MixingSpec::Lm2 {
                lambda1: values[0],
                lambda2: values[1],
            },
            MixingSpec::Lsm2 { .. } => MixingSpec::Lsm2 {
                lambda1: values[0],
                lambda2: values[1],
            },
            MixingSpec::Sm2 { .. } => MixingSpec::Sm2 { alpha: values[0] },
            MixingSpec::Sm3 { .. } => MixingSpec::Sm3 { nu: values[0] },
            MixingSpec::Sm4 { .. } => MixingSpec::Sm4 { gamma: values[0] },
            MixingSpec::Sm5 { .. } => MixingSpec::Sm5 { gamma: values[0] },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Whether each free parameter lives on the log scale for optimization
    /// (all positive rates/shapes do; SM5's gamma is unconstrained).
    pub fn param_on_log_scale(&self) -> Vec<bool> {
        match self {
            MixingSpec::Sm5 { .. } => vec![false],
            _ => self.params().iter().map(|_| true).collect(),
        }
    }

    /// Spec whose upper tail is this spec's lower tail (reflection of S).
    pub fn reflected(&self) -> MixingSpec {
        match *self {
            MixingSpec::Lm2 { lambda1, lambda2 } => MixingSpec::Lm2 {
                lambda1: lambda2,
                lambda2: lambda1,
            },
            MixingSpec::Lsm2 { lambda1, lambda2 } => MixingSpec::Lsm2 {
                lambda1: lambda2,
                lambda2: lambda1,
            },
            other => other,
        }
    }

    /// Chain coordinates for Metropolis-Hastings: the free components of
    /// (s, r) when the joint density is closed-form, the latent base
    /// variables otherwise. Empty for the degenerate Gaussian spec.
    pub fn chain_supports(&self) -> Vec<Support> {
        match self {
            MixingSpec::Gaussian => vec![],
            MixingSpec::Lm1 { .. } => vec![Support::Positive], // s
            MixingSpec::Lm2 { .. } => vec![Support::Real],     // s
            MixingSpec::Sm1
            | MixingSpec::Sm2 { .. }
            | MixingSpec::Sm3 { .. }
            | MixingSpec::Sm5 { .. } => vec![Support::Positive], // r
            MixingSpec::Sm4 { .. } => vec![Support::Positive, Support::Positive], // (e, g)
            MixingSpec::Lsm1 { .. } => vec![Support::Positive, Support::Positive], // (s, r)
            MixingSpec::Lsm2 { .. } => vec![Support::Real, Support::Positive], // (s, r)
        }
    }

    /// Chain coordinates implied by a prior draw, used to initialize
    /// Metropolis-Hastings.
    pub fn chain_state_from_draw(&self, draw: &LatentDraw) -> Vec<f64> {
        match self {
            MixingSpec::Gaussian => vec![],
            MixingSpec::Lm1 { .. } | MixingSpec::Lm2 { .. } => vec![draw.s],
            MixingSpec::Sm1
            | MixingSpec::Sm2 { .. }
            | MixingSpec::Sm3 { .. }
            | MixingSpec::Sm5 { .. } => vec![draw.r],
            MixingSpec::Sm4 { .. } => draw.latent.clone(),
            MixingSpec::Lsm1 { .. } | MixingSpec::Lsm2 { .. } => vec![draw.s, draw.r],
        }
    }

    /// Map a chain state (see [`chain_supports`](Self::chain_supports)) to the
    /// implied (s, r) pair.
    pub fn chain_state_to_sr(&self, state: &[f64]) -> (f64, f64) {
        match self {
            MixingSpec::Gaussian => (0.0, 1.0),
            MixingSpec::Lm1 { .. } | MixingSpec::Lm2 { .. } => (state[0], 1.0),
            MixingSpec::Sm1
            | MixingSpec::Sm2 { .. }
            | MixingSpec::Sm3 { .. }
            | MixingSpec::Sm5 { .. } => (0.0, state[0]),
            MixingSpec::Sm4 { .. } => (0.0, state[0].sqrt() / state[1]),
            MixingSpec::Lsm1 { .. } | MixingSpec::Lsm2 { .. } => (state[0], state[1]),
        }
    }

    /// Log-density of the chain state: the closed-form (s, r) density where
    /// available, otherwise the latent density (SM4).
    pub fn chain_state_logdensity(&self, state: &[f64]) -> Result<f64> {
        match self {
            MixingSpec::Gaussian => Ok(0.0),
            MixingSpec::Sm4 { .. } => logdensity_latent(self, state),
            _ => {
                let (s, r) = self.chain_state_to_sr(state);
                logdensity_sr(self, s, r)?.ok_or_else(|| {
                    Error::Numerical("closed-form density unexpectedly unavailable".into())
                })
            }
        }
    }
}

/// Sample one (S, R) draw with its latent components.
pub fn sample_sr<R: Rng + ?Sized>(spec: &MixingSpec, rng: &mut R) -> LatentDraw {
    match *spec {
        MixingSpec::Gaussian => LatentDraw {
            s: 0.0,
            r: 1.0,
            latent: vec![],
        },
        MixingSpec::Lm1 { lambda } => {
            let s: f64 = Exp::new(lambda).unwrap().sample(rng);
            LatentDraw {
                s,
                r: 1.0,
                latent: vec![s],
            }
        }
        MixingSpec::Lm2 { lambda1, lambda2 } => {
            let e1: f64 = Exp::new(lambda1).unwrap().sample(rng);
            let e2: f64 = Exp::new(lambda2).unwrap().sample(rng);
            LatentDraw {
                s: e1 - e2,
                r: 1.0,
                latent: vec![e1, e2],
            }
        }
        MixingSpec::Sm1 => {
            let e: f64 = Exp::new(0.5).unwrap().sample(rng);
            LatentDraw {
                s: 0.0,
                r: e.sqrt(),
                latent: vec![e],
            }
        }
        MixingSpec::Sm2 { alpha } => {
            let g: f64 = Gamma::new(alpha, 1.0).unwrap().sample(rng);
            LatentDraw {
                s: 0.0,
                r: g.sqrt(),
                latent: vec![g],
            }
        }
        MixingSpec::Sm3 { nu } => {
            let g: f64 = Gamma::new(0.5 * nu, 2.0 / nu).unwrap().sample(rng);
            LatentDraw {
                s: 0.0,
                r: 1.0 / g.sqrt(),
                latent: vec![g],
            }
        }
        MixingSpec::Sm4 { gamma } => {
            let e: f64 = Exp::new(0.5).unwrap().sample(rng);
            let g: f64 = Gamma::new(1.0 / gamma, gamma).unwrap().sample(rng);
            LatentDraw {
                s: 0.0,
                r: e.sqrt() / g,
                latent: vec![e, g],
            }
        }
        MixingSpec::Sm5 { gamma } => {
            // r = 0 would make X degenerate; resample the probability-zero
            // boundary draws.
            loop {
                let u: f64 = rng.gen();
                let r = gpd_quantile(u, 1.0, gamma).unwrap_or(f64::INFINITY);
                if r > 0.0 && r.is_finite() {
                    return LatentDraw {
                        s: 0.0,
                        r,
                        latent: vec![r],
                    };
                }
            }
        }
        MixingSpec::Lsm1 { lambda } => {
            let s: f64 = Exp::new(lambda).unwrap().sample(rng);
            let e: f64 = Exp::new(0.5).unwrap().sample(rng);
            LatentDraw {
                s,
                r: e.sqrt(),
                latent: vec![s, e],
            }
        }
        MixingSpec::Lsm2 { lambda1, lambda2 } => {
            let e1: f64 = Exp::new(lambda1).unwrap().sample(rng);
            let e2: f64 = Exp::new(lambda2).unwrap().sample(rng);
            let e: f64 = Exp::new(0.5).unwrap().sample(rng);
            LatentDraw {
                s: e1 - e2,
                r: e.sqrt(),
                latent: vec![e1, e2, e],
            }
        }
    }
}

/// Draw one univariate X = s + r * g with g standard normal.
pub fn sample_x<R: Rng + ?Sized>(spec: &MixingSpec, rng: &mut R) -> f64 {
    let draw = sample_sr(spec, rng);
    let g: f64 = StandardNormal.sample(rng);
    draw.s + draw.r * g
}

fn log_exp_pdf(x: f64, rate: f64) -> f64 {
    if x < 0.0 {
        f64::NEG_INFINITY
    } else {
        rate.ln() - rate * x
    }
}

/// Log-density of S ~ AL(lambda1, lambda2).
pub fn al_logpdf(s: f64, lambda1: f64, lambda2: f64) -> f64 {
    let norm = (lambda1 * lambda2 / (lambda1 + lambda2)).ln();
    if s >= 0.0 {
        norm - lambda1 * s
    } else {
        norm + lambda2 * s
    }
}

/// Asymmetric Laplace cdf.
pub fn al_cdf(x: f64, lambda1: f64, lambda2: f64) -> Result<f64> {
    if lambda1 <= 0.0 || lambda2 <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "AL rates must be positive, got ({lambda1}, {lambda2})"
        )));
    }
    Ok(if x >= 0.0 {
        1.0 - lambda2 / (lambda1 + lambda2) * (-lambda1 * x).exp()
    } else {
        lambda1 / (lambda1 + lambda2) * (lambda2 * x).exp()
    })
}

/// GPD(sigma, gamma) quantile: sigma ((1-u)^(-gamma) - 1) / gamma, with the
/// gamma -> 0 limit -sigma log(1-u).
pub fn gpd_quantile(u: f64, sigma: f64, gamma: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "GPD scale must be positive, got {sigma}"
        )));
    }
    if !(0.0..=1.0).contains(&u) || (u == 1.0 && gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "GPD quantile needs u in [0,1) (or gamma < 0 at u=1), got u={u}"
        )));
    }
    if u == 1.0 {
        return Ok(-sigma / gamma); // finite upper endpoint, gamma < 0
    }
    if gamma.abs() < 1e-12 {
        return Ok(-sigma * (1.0 - u).ln());
    }
    Ok(sigma * ((1.0 - u).powf(-gamma) - 1.0) / gamma)
}

/// GPD(1, gamma) log-density on its support.
fn gpd1_logpdf(r: f64, gamma: f64) -> f64 {
    if r < 0.0 {
        return f64::NEG_INFINITY;
    }
    if gamma.abs() < 1e-12 {
        return -r;
    }
    let t = 1.0 + gamma * r;
    if t <= 0.0 {
        f64::NEG_INFINITY
    } else {
        -(1.0 / gamma + 1.0) * t.ln()
    }
}

fn log_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        f64::NEG_INFINITY
    } else {
        shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
    }
}

/// Exact joint log-density of the free components of (S, R), or `None` when
/// no closed form exists (SM4, whose R = sqrt(E)/G density needs an
/// integral). Variants with fixed S (resp. R) ignore the other argument.
pub fn logdensity_sr(spec: &MixingSpec, s: f64, r: f64) -> Result<Option<f64>> {
    if r <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "scale must be positive, got {r}"
        )));
    }
    let v = match *spec {
        // Point mass at (0, 1).
        MixingSpec::Gaussian => {
            if s == 0.0 && r == 1.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
        MixingSpec::Lm1 { lambda } => log_exp_pdf(s, lambda),
        MixingSpec::Lm2 { lambda1, lambda2 } => al_logpdf(s, lambda1, lambda2),
        // Rayleigh: r exp(-r^2/2).
        MixingSpec::Sm1 => r.ln() - 0.5 * r * r,
        // R = sqrt(G), G ~ Gamma(alpha, 1): 2 r^(2 alpha - 1) e^{-r^2}/Gamma(alpha).
        MixingSpec::Sm2 { alpha } => {
            std::f64::consts::LN_2 - ln_gamma(alpha) + (2.0 * alpha - 1.0) * r.ln() - r * r
        }
        // R = 1/sqrt(G), G ~ Gamma(a, a), a = nu/2:
        // 2 a^a / Gamma(a) r^{-2a-1} e^{-a/r^2}.
        MixingSpec::Sm3 { nu } => {
            let a = 0.5 * nu;
            std::f64::consts::LN_2 + a * a.ln() - ln_gamma(a) - (2.0 * a + 1.0) * r.ln()
                - a / (r * r)
        }
        MixingSpec::Sm4 { .. } => return Ok(None),
        MixingSpec::Sm5 { gamma } => gpd1_logpdf(r, gamma),
        MixingSpec::Lsm1 { lambda } => log_exp_pdf(s, lambda) + r.ln() - 0.5 * r * r,
        MixingSpec::Lsm2 { lambda1, lambda2 } => {
            al_logpdf(s, lambda1, lambda2) + r.ln() - 0.5 * r * r
        }
    };
    Ok(Some(v))
}

/// Log-density of the independent base latent variables, consistent with
/// [`sample_sr`]'s construction.
pub fn logdensity_latent(spec: &MixingSpec, latent: &[f64]) -> Result<f64> {
    let dim_err = |expected: usize| {
        Err(Error::DimensionMismatch(format!(
            "{} latent dimension is {expected}, got {}",
            spec.name(),
            latent.len()
        )))
    };
    let v = match *spec {
        MixingSpec::Gaussian => {
            if latent.is_empty() {
                0.0
            } else {
                return dim_err(0);
            }
        }
        MixingSpec::Lm1 { lambda } => {
            if latent.len() != 1 {
                return dim_err(1);
            }
            log_exp_pdf(latent[0], lambda)
        }
        MixingSpec::Lm2 { lambda1, lambda2 } => {
            if latent.len() != 2 {
                return dim_err(2);
            }
            log_exp_pdf(latent[0], lambda1) + log_exp_pdf(latent[1], lambda2)
        }
        MixingSpec::Sm1 => {
            if latent.len() != 1 {
                return dim_err(1);
            }
            log_exp_pdf(latent[0], 0.5)
        }
        MixingSpec::Sm2 { alpha } => {
            if latent.len() != 1 {
                return dim_err(1);
            }
            log_gamma_pdf(latent[0], alpha, 1.0)
        }
        MixingSpec::Sm3 { nu } => {
            if latent.len() != 1 {
                return dim_err(1);
            }
            log_gamma_pdf(latent[0], 0.5 * nu, 0.5 * nu)
        }
        MixingSpec::Sm4 { gamma } => {
            if latent.len() != 2 {
                return dim_err(2);
            }
            log_exp_pdf(latent[0], 0.5) + log_gamma_pdf(latent[1], 1.0 / gamma, 1.0 / gamma)
        }
        MixingSpec::Sm5 { gamma } => {
            if latent.len() != 1 {
                return dim_err(1);
            }
            gpd1_logpdf(latent[0], gamma)
        }
        MixingSpec::Lsm1 { lambda } => {
            if latent.len() != 2 {
                return dim_err(2);
            }
            log_exp_pdf(latent[0], lambda) + log_exp_pdf(latent[1], 0.5)
        }
        MixingSpec::Lsm2 { lambda1, lambda2 } => {
            if latent.len() != 3 {
                return dim_err(3);
            }
            log_exp_pdf(latent[0], lambda1)
                + log_exp_pdf(latent[1], lambda2)
                + log_exp_pdf(latent[2], 0.5)
        }
    };
    if v == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument(
            "latent component outside its support".into(),
        ));
    }
    Ok(v)
}

/// Parse a spec from a model name and flat parameter lookup.
pub fn spec_from_name(name: &str, get: impl Fn(&str) -> Option<f64>) -> Result<MixingSpec> {
    let need = |key: &str| {
        get(key).ok_or_else(|| {
            Error::InvalidParameter(format!("model {name} requires parameter {key}"))
        })
    };
    let spec = match name.to_ascii_lowercase().as_str() {
        "gaussian" => MixingSpec::Gaussian,
        "lm1" => MixingSpec::Lm1 { lambda: need("lambda")? },
        "lm2" => MixingSpec::Lm2 {
            lambda1: need("lambda1")?,
            lambda2: need("lambda2")?,
        },
        "sm1" => MixingSpec::Sm1,
        "sm2" => MixingSpec::Sm2 { alpha: need("alpha")? },
        "sm3" => MixingSpec::Sm3 { nu: need("nu")? },
        "sm4" => MixingSpec::Sm4 { gamma: need("gamma")? },
        "sm5" => MixingSpec::Sm5 { gamma: need("gamma")? },
        "lsm1" => MixingSpec::Lsm1 { lambda: need("lambda")? },
        "lsm2" => MixingSpec::Lsm2 {
            lambda1: need("lambda1")?,
            lambda2: need("lambda2")?,
        },
        other => {
            return Err(Error::InvalidParameter(format!("unknown model name {other}")))
        }
    };
    spec.validate()?;
    Ok(spec)
}
