//! Unconditional simulation of X(s) = S + R W(s) and the Monte-Carlo
//! marginal cdf/quantile machinery used by the copula transforms.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::correlation::{build_corr_matrix, MaternParams, SiteSet};
use crate::error::{Error, Result};
use crate::mixing::{sample_sr, MixingSpec};

/// Default Monte-Carlo table size for marginal transforms.
pub const DEFAULT_TABLE_N: usize = 1_000_000;
/// Smaller table size for tables rebuilt inside optimizer loops.
pub const OPTIMIZER_TABLE_N: usize = 100_000;

/// Full model parameterization: dependence (Matern) plus mixing law.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub mixing: MixingSpec,
    pub corr: MaternParams,
}

impl ModelParams {
    pub fn new(mixing: MixingSpec, corr: MaternParams) -> Result<Self> {
        mixing.validate()?;
        Ok(Self { mixing, corr })
    }
}

/// Replicated observations: one row per independent replicate, one column per
/// site.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    sites: SiteSet,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>, sites: SiteSet) -> Result<Self> {
        if values.ncols() != sites.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} data columns but {} sites",
                values.ncols(),
                sites.len()
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::Data("data matrix needs at least one row".into()));
        }
        Ok(Self { values, sites })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    /// Read a data matrix from tabular text: one optional header line, then
    /// one comma- or whitespace-separated row per replicate.
    pub fn from_csv(path: &Path, sites: SiteSet) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let fields: Vec<&str> = trimmed
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|f| !f.is_empty())
                .collect();
            let parsed: std::result::Result<Vec<f64>, _> =
                fields.iter().map(|f| f.parse::<f64>()).collect();
            match parsed {
                Ok(v) => {
                    if v.len() != sites.len() {
                        return Err(Error::Data(format!(
                            "line {}: {} fields, expected {}",
                            lineno + 1,
                            v.len(),
                            sites.len()
                        )));
                    }
                    rows.push(v);
                }
                Err(_) if lineno == 0 => continue, // header line
                Err(e) => {
                    return Err(Error::Data(format!("line {}: {e}", lineno + 1)));
                }
            }
        }
        if rows.is_empty() {
            return Err(Error::Data(format!("{}: no data rows", path.display())));
        }
        let m = sites.len();
        let values = DMatrix::from_row_iterator(rows.len(), m, rows.into_iter().flatten());
        DataMatrix::new(values, sites)
    }

    /// Write the matrix as comma-separated text with a one-line header.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        let header: Vec<String> = (1..=self.ncols()).map(|j| format!("x_{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.nrows() {
            let row: Vec<String> = self
                .values
                .row(i)
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Sorted Monte-Carlo sample of the univariate marginal S + R W, W standard
/// normal.
#[derive(Debug, Clone)]
pub struct MonteCarloMarginal {
    draws: Vec<f64>,
}

impl MonteCarloMarginal {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    pub fn min(&self) -> f64 {
        self.draws[0]
    }

    pub fn max(&self) -> f64 {
        *self.draws.last().unwrap()
    }
}

fn row_rng(seed: u64, row: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(row);
    rng
}

/// Simulate `n` independent replicates of the process at the given sites.
///
/// Row `i` always consumes its own derived random stream, so the output is
/// identical for any level of parallelism.
pub fn simulate(params: &ModelParams, sites: &SiteSet, n: usize, seed: u64) -> Result<DataMatrix> {
    if n == 0 {
        return Err(Error::InvalidArgument("need n >= 1 replicates".into()));
    }
    params.mixing.validate()?;
    let corr = build_corr_matrix(sites, &params.corr)?;
    let m = sites.len();
    let chol = corr.chol_lower();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = row_rng(seed, i as u64);
            let draw = sample_sr(&params.mixing, &mut rng);
            let g = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let w = chol * g;
            (0..m).map(|j| draw.s + draw.r * w[j]).collect()
        })
        .collect();
    let values = DMatrix::from_row_iterator(n, m, rows.into_iter().flatten());
    DataMatrix::new(values, sites.clone())
}

/// Simulate `n` replicates of the spatial mean X-bar = s + r * sigma_W * g,
/// where sigma_W^2 is the variance of the site-averaged Gaussian field.
/// Shares the row-stream layout of [`simulate`].
pub fn simulate_spatial_mean(
    spec: &MixingSpec,
    sigma_wbar: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need n >= 1 draws".into()));
    }
    spec.validate()?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = row_rng(seed, i as u64);
            let draw = sample_sr(spec, &mut rng);
            let g: f64 = StandardNormal.sample(&mut rng);
            draw.s + draw.r * sigma_wbar * g
        })
        .collect())
}

/// Build the sorted Monte-Carlo marginal table of S + R W.
pub fn marginal_table(spec: &MixingSpec, n: usize, seed: u64) -> Result<MonteCarloMarginal> {
    mean_table(spec, 1.0, n, seed)
}

/// Build the sorted Monte-Carlo table of the spatial mean S + R sigma_W G.
pub fn mean_table(
    spec: &MixingSpec,
    sigma_wbar: f64,
    n: usize,
    seed: u64,
) -> Result<MonteCarloMarginal> {
    if n < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "marginal table needs at least 10^4 draws, got {n}"
        )));
    }
    if !(sigma_wbar > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "spatial-mean standard deviation must be positive, got {sigma_wbar}"
        )));
    }
    let mut draws = simulate_spatial_mean(spec, sigma_wbar, n, seed)?;
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(MonteCarloMarginal { draws })
}

/// Empirical cdf with the midpoint convention (rank - 1/2)/N; ties split
/// evenly. Always strictly inside (0, 1).
pub fn mc_cdf(table: &MonteCarloMarginal, x: f64) -> f64 {
    let n = table.draws.len();
    let less = table.draws.partition_point(|&v| v < x);
    let leq = table.draws.partition_point(|&v| v <= x);
    let rank = less as f64 + 0.5 * (leq - less) as f64;
    let p = (rank - 0.5).max(0.0) / n as f64 + 0.5 / n as f64;
    p.clamp(0.5 / n as f64, 1.0 - 0.5 / n as f64)
}

/// Empirical quantile: linear interpolation between order statistics under
/// the midpoint convention, clamped to the sample range.
pub fn mc_quantile(table: &MonteCarloMarginal, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "quantile requires u in (0,1), got {u}"
        )));
    }
    let n = table.draws.len() as f64;
    // Invert p = (i + 1/2)/N: fractional index u N - 1/2.
    let pos = u * n - 0.5;
    if pos <= 0.0 {
        return Ok(table.min());
    }
    let hi = table.draws.len() - 1;
    if pos >= hi as f64 {
        return Ok(table.max());
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    Ok(table.draws[i] + frac * (table.draws[i + 1] - table.draws[i]))
}

/// Apply the Monte-Carlo cdf elementwise, mapping data to (0, 1).
pub fn to_uniform(data: &DataMatrix, table: &MonteCarloMarginal) -> DataMatrix {
    let values = data.values.map(|x| mc_cdf(table, x));
    DataMatrix {
        values,
        sites: data.sites.clone(),
    }
}

/// Apply the Monte-Carlo quantile elementwise to uniform data.
pub fn from_uniform(udata: &DataMatrix, table: &MonteCarloMarginal) -> Result<DataMatrix> {
    let mut values = udata.values.clone();
    for v in values.iter_mut() {
        *v = mc_quantile(table, *v)?;
    }
    Ok(DataMatrix {
        values,
        sites: udata.sites.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::student_t_cdf;

    fn two_site_params(mixing: MixingSpec) -> (ModelParams, SiteSet) {
        let params = ModelParams::new(mixing, MaternParams::new(50.0, 0.5).unwrap()).unwrap();
        let sites = SiteSet::new(vec![[0.0, 0.0], [50.0, 0.0]]).unwrap();
        (params, sites)
    }

    #[test]
    fn gaussian_pairwise_correlation_matches_matern() {
        let (params, sites) = two_site_params(MixingSpec::Gaussian);
        let data = simulate(&params, &sites, 10_000, 7).unwrap();
        let a = data.column(0);
        let b = data.column(1);
        let n = a.len() as f64;
        let (ma, mb) = (
            a.iter().sum::<f64>() / n,
            b.iter().sum::<f64>() / n,
        );
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for i in 0..a.len() {
            sxy += (a[i] - ma) * (b[i] - mb);
            sxx += (a[i] - ma).powi(2);
            syy += (b[i] - mb).powi(2);
        }
        let rho = sxy / (sxx * syy).sqrt();
        // Matern(50, 0.5) at h = 50 is exp(-sqrt(2)) = 0.2431.
        assert!((rho - 0.2431).abs() < 0.02, "rho={rho}");
    }

    #[test]
    fn lm1_column_mean() {
        let (params, sites) = two_site_params(MixingSpec::Lm1 { lambda: 1.0 });
        let data = simulate(&params, &sites, 10_000, 3).unwrap();
        let col = data.column(0);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean={mean}");
    }

    #[test]
    fn simulate_is_deterministic_and_worker_independent() {
        let (params, sites) = two_site_params(MixingSpec::Sm1);
        let a = simulate(&params, &sites, 200, 42).unwrap();
        let b = simulate(&params, &sites, 200, 42).unwrap();
        assert_eq!(a.values(), b.values());
        let pool1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let c = pool1.install(|| simulate(&params, &sites, 200, 42).unwrap());
        assert_eq!(a.values(), c.values());
        let d = simulate(&params, &sites, 200, 43).unwrap();
        assert_ne!(a.values(), d.values());
    }

    #[test]
    fn sm3_marginal_is_student_t() {
        let table = marginal_table(&MixingSpec::Sm3 { nu: 2.0 }, 1_000_000, 5).unwrap();
        // Empirical cdf within 0.01 of the t_2 cdf on a grid.
        let mut x = -8.0;
        while x <= 8.0 {
            let emp = mc_cdf(&table, x);
            let thr = student_t_cdf(x, 2.0).unwrap();
            assert!((emp - thr).abs() < 0.01, "x={x}: {emp} vs {thr}");
            x += 0.25;
        }
    }

    #[test]
    fn marginal_table_medians() {
        let table = marginal_table(&MixingSpec::Gaussian, 100_000, 1).unwrap();
        let med = mc_quantile(&table, 0.5).unwrap();
        assert!(med.abs() < 3.0 / (100_000f64).sqrt() * 1.2533, "{med}");
        // SM1 symmetric: mean near zero.
        let t2 = marginal_table(&MixingSpec::Sm1, 100_000, 2).unwrap();
        let mean = t2.draws().iter().sum::<f64>() / t2.len() as f64;
        let sd = (t2.draws().iter().map(|x| x * x).sum::<f64>() / t2.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd / (t2.len() as f64).sqrt());
    }

    #[test]
    fn mc_cdf_quantile_contract() {
        let table = marginal_table(&MixingSpec::Gaussian, 1_000_000, 9).unwrap();
        assert!((mc_cdf(&table, 0.0) - 0.5).abs() < 0.005);
        assert!((mc_quantile(&table, 0.975).unwrap() - 1.96).abs() < 0.02);
        // Round trip on interior points.
        let mut x = -2.5;
        while x <= 2.5 {
            let u = mc_cdf(&table, x);
            let back = mc_quantile(&table, u).unwrap();
            assert!((back - x).abs() < 1e-3, "x={x} back={back}");
            x += 0.05;
        }
        assert!(mc_quantile(&table, 0.0).is_err());
        assert!(mc_quantile(&table, 1.0).is_err());
        // Degenerate u beyond the table clamps to the range.
        assert_eq!(mc_quantile(&table, 1e-9).unwrap(), table.min());
        assert_eq!(mc_quantile(&table, 1.0 - 1e-9).unwrap(), table.max());
    }

    #[test]
    fn uniform_round_trip() {
        let (params, sites) = two_site_params(MixingSpec::Lm1 { lambda: 1.0 });
        let data = simulate(&params, &sites, 500, 11).unwrap();
        let table = marginal_table(&MixingSpec::Lm1 { lambda: 1.0 }, 1_000_000, 12).unwrap();
        let u = to_uniform(&data, &table);
        for v in u.values().iter() {
            assert!(*v > 0.0 && *v < 1.0);
        }
        let back = from_uniform(&u, &table).unwrap();
        for (orig, rec) in data.values().iter().zip(back.values().iter()) {
            assert!((orig - rec).abs() < 1e-2, "{orig} vs {rec}");
        }
        // Rank order within each column is preserved exactly.
        for j in 0..data.ncols() {
            let col = data.column(j);
            let ucol = u.column(j);
            let mut idx: Vec<usize> = (0..col.len()).collect();
            idx.sort_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap());
            for w in idx.windows(2) {
                assert!(ucol[w[0]] <= ucol[w[1]]);
            }
        }
    }

    #[test]
    fn marginal_table_agrees_with_single_site_simulate() {
        // Two-sample KS between table draws and a single-site simulate run.
        let spec = MixingSpec::Lsm1 { lambda: 1.0 };
        let table = marginal_table(&spec, 50_000, 21).unwrap();
        let params = ModelParams::new(spec, MaternParams::new(10.0, 1.0).unwrap()).unwrap();
        let sites = SiteSet::new(vec![[0.0, 0.0], [1000.0, 0.0]]).unwrap();
        let data = simulate(&params, &sites, 50_000, 22).unwrap();
        let mut a = table.draws().to_vec();
        let mut b = data.column(0);
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        // two-sample KS statistic
        let (mut i, mut j) = (0usize, 0usize);
        let mut ks: f64 = 0.0;
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            ks = ks.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        let crit = 1.95 * ((a.len() + b.len()) as f64 / (a.len() * b.len()) as f64).sqrt();
        assert!(ks < crit, "ks={ks} crit={crit}");
    }

    #[test]
    fn gaussian_simulate_passes_mardia_checks() {
        let sites = SiteSet::new(vec![[0.0, 0.0], [30.0, 0.0], [0.0, 60.0]]).unwrap();
        let params =
            ModelParams::new(MixingSpec::Gaussian, MaternParams::new(50.0, 1.0).unwrap()).unwrap();
        let n = 10_000usize;
        let data = simulate(&params, &sites, n, 33).unwrap();
        let d = 3usize;
        // Center and whiten with the sample covariance.
        let x = data.values();
        let mean = DVector::from_iterator(d, (0..d).map(|j| x.column(j).sum() / n as f64));
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..n {
            let r = x.row(i).transpose() - &mean;
            cov += &r * r.transpose();
        }
        cov /= n as f64;
        let cinv = cov.clone().try_inverse().unwrap();
        let centered: Vec<DVector<f64>> =
            (0..n).map(|i| x.row(i).transpose() - &mean).collect();
        let white: Vec<DVector<f64>> = centered.iter().map(|v| &cinv * v).collect();
        // Mardia skewness: mean over pairs of (x_i' S^-1 x_j)^3.
        let b1: f64 = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..n {
                    let dot = centered[i].dot(&white[j]);
                    acc += dot * dot * dot;
                }
                acc
            })
            .sum::<f64>()
            / (n as f64 * n as f64);
        let skew_stat = n as f64 * b1 / 6.0; // ~ chi^2 with d(d+1)(d+2)/6 = 10 dof
        assert!(skew_stat < 29.59, "Mardia skewness stat {skew_stat}");
        // Mardia kurtosis: mean (x_i' S^-1 x_i)^2 ~ N(d(d+2), 8d(d+2)/n).
        let b2: f64 = (0..n)
            .map(|i| {
                let q = centered[i].dot(&white[i]);
                q * q
            })
            .sum::<f64>()
            / n as f64;
        let z = (b2 - (d * (d + 2)) as f64) / ((8 * d * (d + 2)) as f64 / n as f64).sqrt();
        assert!(z.abs() < 3.29, "Mardia kurtosis z {z}");
    }

    #[test]
    fn sm3_empirical_chi_matches_closed_form() {
        // rho = 0.5 via Matern(50, 0.5) at the distance where exp(-2h/phi
        // * sqrt(2*0.5)) ... pick h so rho = 0.5: exp(-sqrt(2) h / 50) = 0.5.
        let h = 50.0 * std::f64::consts::LN_2 / std::f64::consts::SQRT_2;
        let sites = SiteSet::new(vec![[0.0, 0.0], [h, 0.0]]).unwrap();
        let params = ModelParams::new(
            MixingSpec::Sm3 { nu: 2.0 },
            MaternParams::new(50.0, 0.5).unwrap(),
        )
        .unwrap();
        let n = 1_000_000usize;
        let data = simulate(&params, &sites, n, 44).unwrap();
        let mut a = data.column(0);
        let mut b = data.column(1);
        let q_idx = (0.99 * n as f64) as usize;
        let mut asort = a.clone();
        let mut bsort = b.clone();
        asort.sort_by(|x, y| x.partial_cmp(y).unwrap());
        bsort.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (qa, qb) = (asort[q_idx], bsort[q_idx]);
        let joint = a
            .iter_mut()
            .zip(b.iter_mut())
            .filter(|(x, y)| **x > qa && **y > qb)
            .count() as f64;
        let chi_hat = joint / (0.01 * n as f64);
        // Table value 2 T_3(-1) with T the Student cdf: about 0.391.
        let chi = 2.0 * student_t_cdf(-1.0, 3.0).unwrap();
        assert!((chi_hat - chi).abs() < 0.03, "{chi_hat} vs {chi}");
    }

    #[test]
    fn data_matrix_csv_round_trip() {
        let (params, sites) = two_site_params(MixingSpec::Gaussian);
        let data = simulate(&params, &sites, 50, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        data.to_csv(&path).unwrap();
        let back = DataMatrix::from_csv(&path, data.sites().clone()).unwrap();
        assert_eq!(data.nrows(), back.nrows());
        for (x, y) in data.values().iter().zip(back.values().iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn data_matrix_validation() {
        let sites = SiteSet::new(vec![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(DataMatrix::new(DMatrix::zeros(3, 3), sites.clone()).is_err());
        assert!(DataMatrix::new(DMatrix::zeros(0, 2), sites).is_err());
    }
}
