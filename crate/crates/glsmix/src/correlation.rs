//! Matern correlation, correlation matrices over site sets and the
//! quadratic-form helper for spatial averages.

use crate::error::{Error, Result};
use crate::numkernel::bessel_k;
use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;
use std::path::Path;

/// Matern correlation parameters: range `phi` and smoothness `eta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternParams {
    pub range: f64,
    pub smoothness: f64,
}

impl MaternParams {
    pub fn new(range: f64, smoothness: f64) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Matern range must be positive, got {range}"
            )));
        }
        if !(smoothness > 0.0 && smoothness.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Matern smoothness must be positive, got {smoothness}"
            )));
        }
        Ok(Self { range, smoothness })
    }
}

/// Planar site coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSet {
    coords: Vec<[f64; 2]>,
}

impl SiteSet {
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 sites, got {}",
                coords.len()
            )));
        }
        let set = Self { coords };
        set.check_distinct()?;
        Ok(set)
    }

    fn check_distinct(&self) -> Result<()> {
        for i in 0..self.coords.len() {
            for j in (i + 1)..self.coords.len() {
                if self.distance(i, j) == 0.0 {
                    return Err(Error::DuplicateSites(i, j));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let a = self.coords[i];
        let b = self.coords[j];
        (a[0] - b[0]).hypot(a[1] - b[1])
    }

    /// Concatenate two site sets (conditioning sites first).
    pub fn concat(&self, other: &SiteSet) -> Result<SiteSet> {
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        SiteSet::new(coords)
    }

    /// Read a two-column (x, y) text file, comma or whitespace separated.
    /// A non-numeric first row is treated as a header and skipped.
    pub fn from_file(path: &Path) -> Result<SiteSet> {
        let text = std::fs::read_to_string(path)?;
        let mut coords = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            let parsed: Option<Vec<f64>> = fields.iter().map(|s| s.parse().ok()).collect();
            match parsed {
                Some(v) if v.len() == 2 => coords.push([v[0], v[1]]),
                None if lineno == 0 => continue, // header
                _ => {
                    return Err(Error::Data(format!(
                        "site file {}: line {} is not two numeric columns",
                        path.display(),
                        lineno + 1
                    )))
                }
            }
        }
        SiteSet::new(coords)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut out = String::from("x,y\n");
        for c in &self.coords {
            out.push_str(&format!("{:.16e},{:.16e}\n", c[0], c[1]));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Median pairwise distance, the default range start value for fitting.
    pub fn median_pairwise_distance(&self) -> f64 {
        let mut d = Vec::new();
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                d.push(self.distance(i, j));
            }
        }
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        d[d.len() / 2]
    }
}

/// Matern correlation at distance `h`.
pub fn matern_rho(h: f64, p: &MaternParams) -> Result<f64> {
    if h < 0.0 || !h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "distance must be nonnegative, got {h}"
        )));
    }
    if h == 0.0 {
        return Ok(1.0);
    }
    let eta = p.smoothness;
    let x = 2.0 * eta.sqrt() * h / p.range;
    // rho = x^eta K_eta(x) / (2^{eta-1} Gamma(eta)); assemble in log space to
    // postpone underflow at large distances.
    let k = bessel_k(eta, x)?;
    if k <= 0.0 {
        return Ok(f64::MIN_POSITIVE);
    }
    let log_rho = eta * x.ln() + k.ln() - (eta - 1.0) * std::f64::consts::LN_2 - ln_gamma(eta);
    Ok(log_rho.exp().clamp(f64::MIN_POSITIVE, 1.0))
}

/// Correlation matrix over a site set, with its lower Cholesky factor cached.
#[derive(Debug, Clone)]
pub struct CorrMatrix {
    sigma: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
}

impl CorrMatrix {
    /// Factorize a symmetric unit-diagonal matrix, escalating diagonal jitter
    /// from 1e-10 by factors of 10 up to 1e-6 if the Cholesky fails.
    pub fn from_matrix(sigma: DMatrix<f64>) -> Result<Self> {
        if let Some(ch) = sigma.clone().cholesky() {
            return Ok(Self {
                chol_lower: ch.l(),
                sigma,
            });
        }
        let mut jitter = 1e-10;
        while jitter <= 1e-6 {
            let mut jittered = sigma.clone();
            for i in 0..sigma.nrows() {
                jittered[(i, i)] += jitter;
            }
            if let Some(ch) = jittered.cholesky() {
                return Ok(Self {
                    chol_lower: ch.l(),
                    sigma,
                });
            }
            jitter *= 10.0;
        }
        Err(Error::CholeskyFailure)
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn chol_lower(&self) -> &DMatrix<f64> {
        &self.chol_lower
    }

    pub fn log_det(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.chol_lower[(i, i)].ln())
            .sum::<f64>()
            * 2.0
    }
}

/// Assemble the Matern correlation matrix over `sites`.
pub fn build_corr_matrix(sites: &SiteSet, p: &MaternParams) -> Result<CorrMatrix> {
    let m = sites.len();
    let mut sigma = DMatrix::identity(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let rho = matern_rho(sites.distance(i, j), p)?;
            sigma[(i, j)] = rho;
            sigma[(j, i)] = rho;
        }
    }
    CorrMatrix::from_matrix(sigma)
}

/// Variance of the spatial average of a unit-variance field: m^-2 1' Sigma 1.
pub fn avg_variance(corr: &CorrMatrix) -> f64 {
    let m = corr.dim() as f64;
    corr.sigma().sum() / (m * m)
}
