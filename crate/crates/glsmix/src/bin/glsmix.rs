//! Command-line front end: simulation studies, fitting, conditional
//! simulation, tail-dependence diagnostics, bootstrap intervals and
//! marginal fitting, all driven by a flat key=value config file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use glsmix::condsim::{conditional_predict, conditional_simulate, CondSimConfig};
use glsmix::config::{random_sites, RunConfig};
use glsmix::correlation::SiteSet;
use glsmix::error::{Error, Result};
use glsmix::estimate::{
    bootstrap_ci, fit_copula, fit_two_step, BootstrapMode, CvmConfig, FitResult,
};
use glsmix::marginal::egpd_fit;
use glsmix::process::{simulate, DataMatrix, ModelParams};
use glsmix::taildep::chi_by_distance;

/// Default thresholds for the chi-by-distance diagnostic.
const DEFAULT_CHI_THRESHOLDS: [f64; 6] = [0.5, 0.75, 0.9, 0.95, 0.975, 0.99];

#[derive(Parser)]
#[command(
    name = "glsmix",
    about = "Gaussian location-scale mixture processes for spatial extremes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run-configuration file (flat key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config's `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread count (default: GLSMIX_WORKERS or all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and its site set.
    Simulate,
    /// Two-step (or copula) parameter estimation.
    Fit,
    /// Conditional simulation at target sites given observed values.
    Condsim,
    /// Empirical chi-by-distance curves.
    Chi,
    /// Parametric bootstrap confidence intervals.
    Bootstrap,
    /// Fit the extended-GPD marginal model to a sample.
    MarginalFit,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.workers.or_else(|| {
        std::env::var("GLSMIX_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(w) = workers {
        // Ignore failure: the pool can only be configured once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter(_) | Error::InvalidArgument(_) => 2,
        Error::Data(_)
        | Error::Io(_)
        | Error::DimensionMismatch(_)
        | Error::DuplicateSites(_, _) => 3,
        Error::CholeskyFailure | Error::NonConvergence(_) | Error::Numerical(_) => 4,
    }
}

fn run(cli: &Cli) -> Result<()> {
    let path = cli.config.as_ref().ok_or_else(|| {
        Error::InvalidArgument("--config PATH is required for every command".into())
    })?;
    let cfg = RunConfig::from_file(path)?;
    let seed = match cli.seed {
        Some(s) => s,
        None => cfg.get_u64("seed")?.unwrap_or(0),
    };
    std::fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg, seed, &cli.out),
        Command::Fit => cmd_fit(&cfg, seed, &cli.out),
        Command::Condsim => cmd_condsim(&cfg, seed, &cli.out),
        Command::Chi => cmd_chi(&cfg, &cli.out),
        Command::Bootstrap => cmd_bootstrap(&cfg, seed, &cli.out),
        Command::MarginalFit => cmd_marginal_fit(&cfg, &cli.out),
    }
}

/// Sites from `sites.file`, or sampled uniformly on the study square.
fn load_or_sample_sites(cfg: &RunConfig, m: usize, seed: u64) -> Result<SiteSet> {
    match cfg.get("sites.file") {
        Some(p) => SiteSet::from_file(Path::new(p)),
        None => random_sites(m, seed ^ 0x5173_5173),
    }
}

fn load_sites(cfg: &RunConfig, key: &str) -> Result<SiteSet> {
    SiteSet::from_file(Path::new(cfg.require(key)?))
}

fn load_data(cfg: &RunConfig, sites: &SiteSet) -> Result<DataMatrix> {
    DataMatrix::from_csv(Path::new(cfg.require("data.file")?), sites.clone())
}

fn cvm_config(cfg: &RunConfig, seed: u64) -> Result<CvmConfig> {
    let mut c = CvmConfig {
        seed: seed ^ 0x00c7_ae5c,
        ..Default::default()
    };
    if let Some(n) = cfg.get_usize("fit.mc_draws")? {
        c.mc_draws = n;
    }
    if let Some(s) = cfg.get_u64("fit.seed")? {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn cmd_simulate(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let spec = cfg.mixing_spec()?;
    let matern = cfg.matern()?;
    let (m, n) = cfg.study_dims()?;
    let sites = load_or_sample_sites(cfg, m, seed)?;
    let params = ModelParams::new(spec, matern)?;
    let data = simulate(&params, &sites, n, seed)?;
    let sites_path = out.join("sites.csv");
    let data_path = out.join("data.csv");
    sites.write_file(&sites_path)?;
    data.to_csv(&data_path)?;
    println!("wrote {} ({} sites)", sites_path.display(), sites.len());
    println!(
        "wrote {} ({} rows x {} columns)",
        data_path.display(),
        data.nrows(),
        data.ncols()
    );
    Ok(())
}

fn write_fit_result(path: &Path, cfg: &RunConfig, fit: &FitResult, wall: f64) -> Result<()> {
    let mut lines = vec![
        format!("model.name = {}", cfg.require("model.name")?),
        format!("corr.range = {:.16e}", fit.theta_w.range),
        format!("corr.smoothness = {:.16e}", fit.theta_w.smoothness),
    ];
    for (name, value) in fit.spec.params() {
        lines.push(format!("model.{name} = {value:.16e}"));
    }
    lines.push(format!("fit.step1_objective = {:.16e}", fit.step1_objective));
    if let Some(t) = fit.step2_objective {
        lines.push(format!("fit.step2_objective = {t:.16e}"));
    }
    lines.push(format!("fit.sigma_wbar2 = {:.16e}", fit.sigma_wbar2));
    lines.push(format!("fit.converged = {}", fit.converged));
    lines.push(format!("fit.skipped_rows = {}", fit.skipped_rows));
    lines.push(format!("fit.wall_seconds = {wall:.3}"));
    std::fs::write(path, lines.join("\n") + "\n")?;
    Ok(())
}

fn cmd_fit(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let spec = cfg.mixing_spec()?;
    let sites = load_sites(cfg, "sites.file")?;
    let data = load_data(cfg, &sites)?;
    let cvm = cvm_config(cfg, seed)?;
    let copula = cfg.get_bool("fit.copula")?.unwrap_or(false);
    let start = Instant::now();
    let fit = if copula {
        fit_copula(&data, &spec, &cvm)?
    } else {
        fit_two_step(&data, &spec, &cvm)?
    };
    let wall = start.elapsed().as_secs_f64();
    let path = out.join("fit.txt");
    write_fit_result(&path, cfg, &fit, wall)?;
    println!("wrote {} ({wall:.3} s)", path.display());
    Ok(())
}

fn cmd_condsim(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let spec = cfg.mixing_spec()?;
    let matern = cfg.matern()?;
    let params = ModelParams::new(spec, matern)?;
    let sites1 = load_sites(cfg, "sites.file")?;
    let sites2 = load_sites(cfg, "condsim.targets.file")?;
    let data = load_data(cfg, &sites1)?;
    let row = cfg.get_usize("condsim.row")?.unwrap_or(0);
    if row >= data.nrows() {
        return Err(Error::InvalidArgument(format!(
            "condsim.row {row} out of range for {} data rows",
            data.nrows()
        )));
    }
    let x1 = data.row(row);
    let mut mc = CondSimConfig::default();
    if let Some(v) = cfg.get_usize("condsim.burnin")? {
        mc.burnin = v;
    }
    if let Some(v) = cfg.get_usize("condsim.steps")? {
        mc.steps = v;
    }
    if let Some(v) = cfg.get_usize("condsim.thin")? {
        mc.thin = v;
    }
    if let Some(v) = cfg.get_f64("condsim.prop_sd_s")? {
        mc.prop_sd_s = v;
    }
    if let Some(v) = cfg.get_f64("condsim.prop_sd_logr")? {
        mc.prop_sd_logr = v;
    }
    let draws = conditional_simulate(&params, &sites1, &x1, &sites2, &mc, seed)?;
    let medians = conditional_predict(&draws)?;

    let draws_path = out.join("draws.csv");
    let header: Vec<String> = (1..=sites2.len()).map(|j| format!("x_{j}")).collect();
    let mut text = header.join(",") + "\n";
    for d in &draws {
        let row: Vec<String> = d.iter().map(|v| format!("{v:.16e}")).collect();
        text.push_str(&(row.join(",") + "\n"));
    }
    std::fs::write(&draws_path, text)?;

    let med_path = out.join("medians.csv");
    let mut text = String::from("x,y,median\n");
    for (c, v) in sites2.coords().iter().zip(&medians) {
        text.push_str(&format!("{:.16e},{:.16e},{v:.16e}\n", c[0], c[1]));
    }
    std::fs::write(&med_path, text)?;
    println!("wrote {} ({} draws)", draws_path.display(), draws.len());
    println!("wrote {}", med_path.display());
    Ok(())
}

/// Midpoint-rank transform of every column to pseudo-uniform scores.
fn rank_transform(data: &DataMatrix) -> Result<DataMatrix> {
    let (n, m) = (data.nrows(), data.ncols());
    let mut values = data.values().clone();
    for j in 0..m {
        let col = data.column(j);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap());
        for (rank, &i) in idx.iter().enumerate() {
            values[(i, j)] = (rank as f64 + 0.5) / n as f64;
        }
    }
    DataMatrix::new(values, data.sites().clone())
}

fn cmd_chi(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sites = load_sites(cfg, "sites.file")?;
    let data = load_data(cfg, &sites)?;
    let thresholds = cfg
        .get_f64_list("chi.thresholds")?
        .unwrap_or_else(|| DEFAULT_CHI_THRESHOLDS.to_vec());
    let bin_width = cfg.get_f64("chi.bin_width")?.unwrap_or(10.0);
    let udata = rank_transform(&data)?;
    let curve = chi_by_distance(&udata, &thresholds, bin_width)?;
    let path = out.join("chi.csv");
    curve.write_file(&path)?;
    println!("wrote {} ({} bins)", path.display(), curve.bins.len());
    Ok(())
}

fn cmd_bootstrap(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let spec = cfg.mixing_spec()?;
    let matern = cfg.matern()?;
    let sites = load_sites(cfg, "sites.file")?;
    let (_, n_default) = cfg.study_dims().unwrap_or((sites.len(), 0));
    let n = match cfg.get_usize("bootstrap.n")? {
        Some(v) => v,
        None if n_default > 0 => n_default,
        None => {
            return Err(Error::InvalidArgument(
                "need `bootstrap.n` or a study configuration for the replicate size".into(),
            ))
        }
    };
    let b = cfg.get_usize("bootstrap.b")?.unwrap_or(100);
    let level = cfg.get_f64("bootstrap.level")?.unwrap_or(0.95);
    let mode = match cfg.get("bootstrap.mode").unwrap_or("fast") {
        "fast" => BootstrapMode::Fast,
        "standard" => BootstrapMode::Standard,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown bootstrap mode `{other}`; expected fast or standard"
            )))
        }
    };
    let cvm = cvm_config(cfg, seed)?;
    let corr = glsmix::correlation::build_corr_matrix(&sites, &matern)?;
    let fit = FitResult {
        theta_w: matern,
        spec,
        sigma_wbar2: glsmix::correlation::avg_variance(&corr),
        step1_objective: f64::NAN,
        step2_objective: None,
        converged: true,
        skipped_rows: 0,
    };
    let res = bootstrap_ci(&fit, &sites, n, b, level, mode, &cvm, seed)?;
    let path = out.join("intervals.csv");
    let mut text = String::from("name,estimate,lower,upper\n");
    for iv in &res.intervals {
        text.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e}\n",
            iv.name, iv.estimate, iv.lower, iv.upper
        ));
    }
    std::fs::write(&path, text)?;
    println!(
        "wrote {} ({} replicates, {} failed)",
        path.display(),
        res.replicates,
        res.failed
    );
    Ok(())
}

/// Read every numeric token from a text file; a non-numeric header line is
/// tolerated and skipped.
fn read_sample(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        let parsed: Option<Vec<f64>> = tokens.iter().map(|t| t.parse().ok()).collect();
        match parsed {
            Some(vals) => out.extend(vals),
            None if lineno == 0 => continue, // header
            None => {
                return Err(Error::Data(format!(
                    "{}: line {} is not numeric",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(out)
}

fn cmd_marginal_fit(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sample = read_sample(Path::new(cfg.require("data.file")?))?;
    let start = Instant::now();
    let par = egpd_fit(&sample)?;
    let wall = start.elapsed().as_secs_f64();
    let path = out.join("egpd.txt");
    let text = format!(
        "egpd.sigma = {:.16e}\negpd.xi = {:.16e}\negpd.p = {:.16e}\negpd.kappa1 = {:.16e}\negpd.kappa2 = {:.16e}\nfit.samples = {}\nfit.wall_seconds = {wall:.3}\n",
        par.sigma, par.xi, par.p, par.kappa1, par.kappa2, sample.len()
    );
    std::fs::write(&path, text)?;
    println!("wrote {} ({wall:.3} s)", path.display());
    Ok(())
}
