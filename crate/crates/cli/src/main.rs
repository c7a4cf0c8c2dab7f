//! `fnmiss`: mean estimation for functional outcomes missing at random.
//!
//! Subcommands:
//! - `estimate`: fit the OR / DR / CC estimators on a dataset CSV and emit
//!   curve tables with simultaneous and pointwise confidence bands;
//! - `simulate`: run the seeded Monte Carlo coverage study;
//! - `bands`: rebuild bands from a previously serialized estimate.
//!
//! Exit codes: 0 success, 2 input/schema error, 3 estimation failure,
//! 4 replicate failure rate exceeded.

mod conf;
mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fnmiss_core::bands::{build_pcb, build_scb, roughness};
use fnmiss_core::estimators::{estimate_cc, estimate_dr, estimate_or};
use fnmiss_core::nuisance::{fit_logistic, fit_ols, PropensityModel};
use fnmiss_core::simulation::{replicate_rng, run_study, StudyContext};
use fnmiss_core::{
    Error as CoreError, ErrorKind, MeanEstimate, Method, Misspec, Partition, SimConfig,
};

use conf::{parse_drop_list, parse_n_list, parse_partition, FileConfig};
use io::fmt_f;

/// An error carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    /// Malformed input or configuration (exit code 2).
    pub fn input(message: String) -> Self {
        CliError { code: 2, message }
    }

    /// Estimation failure (exit code 3).
    pub fn estimation(message: String) -> Self {
        CliError { code: 3, message }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::FailureRateExceeded { .. } => 4,
            _ => 3,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "fnmiss", version, about = "Mean curves under missing-at-random functional outcomes")]
struct Cli {
    /// Master seed for the simulation streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count (falls back to the FNMISS_THREADS environment
    /// variable, then to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory all output files are written into.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Flat key=value configuration file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the mean curve and its confidence bands from a dataset CSV.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo coverage study.
    Simulate(SimulateArgs),
    /// Rebuild bands from a serialized estimate at a new level or partition.
    Bands(BandsArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Wide-form dataset CSV with a leading `# grid:` line.
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated subset of or,dr,cc (default: all three).
    #[arg(long)]
    estimators: Option<String>,
    /// Band level.
    #[arg(long)]
    alpha: Option<f64>,
    /// Fairness-partition breakpoints, e.g. 0,0.25,1.
    #[arg(long)]
    partition: Option<String>,
    /// Zero-based covariate columns withheld from the outcome regression.
    #[arg(long)]
    drop_outcome: Option<String>,
    /// Zero-based covariate columns withheld from the propensity model.
    #[arg(long)]
    drop_propensity: Option<String>,
    /// Re-emit the parsed dataset to this file in the output directory.
    #[arg(long)]
    echo_dataset: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Comma-separated sample sizes.
    #[arg(long)]
    n: Option<String>,
    /// Replicates per sample size.
    #[arg(long)]
    reps: Option<usize>,
    /// Grid length.
    #[arg(long)]
    t_len: Option<usize>,
    /// Error family: gaussian or mvt.
    #[arg(long)]
    errors: Option<String>,
    /// Working-model misspecification: none, outcome, missingness, or both.
    #[arg(long)]
    misspec: Option<String>,
    /// Band level.
    #[arg(long)]
    alpha: Option<f64>,
    /// Fairness-partition breakpoints, e.g. 0,0.25,1.
    #[arg(long)]
    partition: Option<String>,
    /// Negate the missingness linear predictor so ~70% of curves are observed.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    calibrate_missingness: Option<bool>,
    /// Redraw the multivariate-t rotation per replicate.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    redraw_q: Option<bool>,
    /// Also write the first replicate's dataset for each sample size.
    #[arg(long)]
    export_dataset: bool,
}

#[derive(Args)]
struct BandsArgs {
    /// Serialized estimate produced by `estimate`.
    #[arg(long)]
    input: PathBuf,
    /// Band level.
    #[arg(long)]
    alpha: Option<f64>,
    /// Fairness-partition breakpoints, e.g. 0,0.25,1.
    #[arg(long)]
    partition: Option<String>,
    /// Output file name (default bands.csv).
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fnmiss: error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };

    let threads = cli
        .threads
        .or(cfg.threads)
        .or_else(|| {
            std::env::var("FNMISS_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        });
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::input("thread count must be at least 1".into()));
        }
        // a global pool may already exist (e.g. repeated calls in one
        // process); that is not an error
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }

    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", out_dir.display())))?;

    let seed = cli.seed.or(cfg.seed).unwrap_or(0);

    match &cli.command {
        Command::Estimate(args) => cmd_estimate(args, &cfg, &out_dir),
        Command::Simulate(args) => cmd_simulate(args, &cfg, &out_dir, seed),
        Command::Bands(args) => cmd_bands(args, &cfg, &out_dir),
    }
}

fn resolve_alpha(flag: Option<f64>, cfg: &FileConfig) -> Result<f64, CliError> {
    let alpha = flag.or(cfg.alpha).unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::input(format!("alpha = {alpha} is outside (0,1)")));
    }
    Ok(alpha)
}

fn resolve_partition(
    flag: &Option<String>,
    cfg: &FileConfig,
) -> Result<Partition, CliError> {
    match flag.as_deref().or(cfg.partition.as_deref()) {
        Some(text) => parse_partition(text),
        None => Ok(Partition::whole_domain()),
    }
}

fn parse_methods(text: &str) -> Result<Vec<Method>, CliError> {
    let mut methods = Vec::new();
    for part in text.split(',') {
        let m = match part.trim().to_ascii_lowercase().as_str() {
            "or" => Method::Or,
            "dr" => Method::Dr,
            "cc" => Method::Cc,
            other => {
                return Err(CliError::input(format!(
                    "unknown estimator {other:?} (expected or, dr, cc)"
                )))
            }
        };
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(CliError::input("estimator list is empty".into()));
    }
    Ok(methods)
}

fn parse_errors_kind(text: &str) -> Result<ErrorKind, CliError> {
    match text.trim().to_ascii_lowercase().as_str() {
        "gaussian" => Ok(ErrorKind::MaternGaussian),
        "mvt" => Ok(ErrorKind::MultivariateT),
        other => Err(CliError::input(format!(
            "unknown error family {other:?} (expected gaussian or mvt)"
        ))),
    }
}

fn parse_misspec(text: &str) -> Result<Misspec, CliError> {
    match text.trim().to_ascii_lowercase().as_str() {
        "none" => Ok(Misspec::None),
        "outcome" => Ok(Misspec::Outcome),
        "missingness" => Ok(Misspec::Missingness),
        "both" => Ok(Misspec::Both),
        other => Err(CliError::input(format!(
            "unknown misspecification {other:?} (expected none, outcome, missingness, both)"
        ))),
    }
}

fn method_slug(m: Method) -> &'static str {
    match m {
        Method::Or => "or",
        Method::Dr => "dr",
        Method::Cc => "cc",
    }
}

/// Propensity model when no outcome is missing: a huge intercept makes every
/// fitted propensity one, so the DR correction is exactly the OR residual
/// average (zero under an intercept).
fn saturated_propensity(p: usize) -> PropensityModel {
    let mut gamma = nalgebra::DVector::zeros(p);
    gamma[0] = 50.0;
    PropensityModel {
        gamma_hat: gamma,
        converged: true,
        iterations: 0,
        score_norm: 0.0,
        dropped_columns: Vec::new(),
    }
}

fn validate_drop(drop: &[usize], p: usize, what: &str) -> Result<(), CliError> {
    for &j in drop {
        if j >= p {
            return Err(CliError::input(format!(
                "{what} column index {j} out of range for {p} covariates"
            )));
        }
        if j == 0 {
            return Err(CliError::input(format!(
                "{what} cannot drop the intercept column 0"
            )));
        }
    }
    Ok(())
}

fn cmd_estimate(args: &EstimateArgs, cfg: &FileConfig, out_dir: &Path) -> Result<(), CliError> {
    let alpha = resolve_alpha(args.alpha, cfg)?;
    let partition = resolve_partition(&args.partition, cfg)?;
    let methods = match args.estimators.as_deref().or(cfg.estimators.as_deref()) {
        Some(text) => parse_methods(text)?,
        None => vec![Method::Or, Method::Dr, Method::Cc],
    };
    let drop_outcome = match args.drop_outcome.as_deref().or(cfg.drop_outcome.as_deref()) {
        Some(text) => parse_drop_list(text)?,
        None => Vec::new(),
    };
    let drop_propensity = match args
        .drop_propensity
        .as_deref()
        .or(cfg.drop_propensity.as_deref())
    {
        Some(text) => parse_drop_list(text)?,
        None => Vec::new(),
    };

    let loaded = io::read_dataset(&args.input)?;
    let ds = &loaded.dataset;
    validate_drop(&drop_outcome, ds.p(), "drop_outcome")?;
    validate_drop(&drop_propensity, ds.p(), "drop_propensity")?;

    if let Some(echo) = &args.echo_dataset {
        io::write_dataset(&out_dir.join(echo), ds, Some(&loaded.ids))?;
    }

    let om = fit_ols(ds, &drop_outcome)?;
    let needs_dr = methods.contains(&Method::Dr);
    let pm = if needs_dr {
        if ds.n_observed() == ds.n() {
            Some(saturated_propensity(ds.p()))
        } else {
            Some(fit_logistic(ds, &drop_propensity)?)
        }
    } else {
        None
    };

    // when the outcome model deliberately omits covariates, the band
    // roughness still comes from the all-covariate residual fit (omitted
    // smooth variance would otherwise contaminate the local-variation
    // estimate)
    let roughness_override = if drop_outcome.is_empty() {
        None
    } else {
        let om_full = fit_ols(ds, &[])?;
        Some(roughness(&om_full.sigma_eps_hat, ds.grid())?)
    };

    let mut manifest = String::new();
    manifest.push_str(&format!("n,{}\n", ds.n()));
    manifest.push_str(&format!("n_observed,{}\n", ds.n_observed()));
    manifest.push_str(&format!("p,{}\n", ds.p()));
    manifest.push_str(&format!("t_len,{}\n", ds.t_len()));
    manifest.push_str(&format!("alpha,{}\n", fmt_f(alpha)));
    let part_txt: Vec<String> = partition
        .intervals()
        .iter()
        .map(|&(a, b)| format!("[{},{}]", fmt_f(a), fmt_f(b)))
        .collect();
    manifest.push_str(&format!("partition,{}\n", part_txt.join(" ")));
    let fmt_drop = |d: &[usize]| {
        if d.is_empty() {
            "none".to_string()
        } else {
            d.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
        }
    };
    manifest.push_str(&format!("drop_outcome,{}\n", fmt_drop(&drop_outcome)));
    manifest.push_str(&format!("drop_propensity,{}\n", fmt_drop(&drop_propensity)));
    if let Some(pm) = &pm {
        manifest.push_str(&format!(
            "propensity_converged,{}\npropensity_iterations,{}\npropensity_score_norm,{}\n",
            pm.converged,
            pm.iterations,
            fmt_f(pm.score_norm)
        ));
    }

    for &method in &methods {
        let mut est = match method {
            Method::Or => estimate_or(ds, &om)?,
            Method::Dr => estimate_dr(ds, &om, pm.as_ref().expect("propensity model fitted"))?,
            Method::Cc => estimate_cc(ds)?,
        };
        if method != Method::Cc {
            if let Some(profile) = &roughness_override {
                est = est.with_roughness(profile.clone());
            }
        }
        write_band_outputs(&est, alpha, &partition, out_dir, method_slug(method), &mut manifest)?;
    }

    io::write_text(&out_dir.join("manifest.txt"), &manifest)?;
    Ok(())
}

/// Builds both bands for `est` and writes `estimate_{slug}.csv` and
/// `estimate_{slug}.est`; appends the Kac-Rice critical values to the
/// manifest.
fn write_band_outputs(
    est: &MeanEstimate,
    alpha: f64,
    partition: &Partition,
    out_dir: &Path,
    slug: &str,
    manifest: &mut String,
) -> Result<(), CliError> {
    let scb = build_scb(est, alpha, partition)?;
    let pcb = build_pcb(est, alpha)?;
    io::write_curve_table(&out_dir.join(format!("estimate_{slug}.csv")), est, &scb, &pcb)?;
    io::write_estimate(&out_dir.join(format!("estimate_{slug}.est")), est)?;
    manifest.push_str(&format!(
        "{slug}_u_scb_max,{}\n{slug}_u_pcb,{}\n",
        fmt_f(scb.u.max()),
        fmt_f(pcb.u[0])
    ));
    Ok(())
}

fn cmd_simulate(
    args: &SimulateArgs,
    cfg: &FileConfig,
    out_dir: &Path,
    seed: u64,
) -> Result<(), CliError> {
    let alpha = resolve_alpha(args.alpha, cfg)?;
    let partition = resolve_partition(&args.partition, cfg)?;
    let n_list = match args.n.as_deref().or(cfg.n.as_deref()) {
        Some(text) => parse_n_list(text)?,
        None => vec![500],
    };
    if n_list.is_empty() {
        return Err(CliError::input("sample-size list is empty".into()));
    }
    let reps = args.reps.or(cfg.reps).unwrap_or(1000);
    let t_len = args.t_len.or(cfg.t_len).unwrap_or(50);
    let errors = parse_errors_kind(args.errors.as_deref().or(cfg.errors.as_deref()).unwrap_or("gaussian"))?;
    let misspec = parse_misspec(args.misspec.as_deref().or(cfg.misspec.as_deref()).unwrap_or("none"))?;
    let calibrate = args
        .calibrate_missingness
        .or(cfg.calibrate_missingness)
        .unwrap_or(true);
    let redraw_q = args.redraw_q.or(cfg.redraw_q).unwrap_or(false);

    let mut coverage = String::from(
        "n,errors,misspec,estimator,band,coverage_pct,replicates_used,failures\n",
    );
    let mut metrics = String::from(
        "t,n,errors,misspec,estimator,bias,est_variance,mc_variance,mse\n",
    );

    for &n in &n_list {
        let mut sim = SimConfig::new(n, errors, misspec, seed);
        sim.t_len = t_len;
        sim.reps = reps;
        sim.alpha = alpha;
        sim.partition = partition.clone();
        sim.calibrate_missingness = calibrate;
        sim.redraw_q = redraw_q;
        sim.validate().map_err(|e| CliError::input(e.to_string()))?;

        if args.export_dataset {
            let ctx = StudyContext::new(sim.clone())?;
            let mut rng = replicate_rng(seed, 0);
            let gen = ctx.gen_dataset(&mut rng)?;
            io::write_dataset(&out_dir.join(format!("dataset_n{n}.csv")), &gen.dataset, None)?;
        }

        let result = run_study(&sim)?;
        for summary in &result.summaries {
            let slug = method_slug(summary.method);
            for (band, pct) in [
                ("scb", summary.scb_coverage_pct),
                ("pcb", summary.pcb_coverage_pct),
            ] {
                coverage.push_str(&format!(
                    "{n},{errors},{misspec},{slug},{band},{},{},{}\n",
                    fmt_f(pct),
                    result.replicates_used,
                    result.failures.len()
                ));
            }
            let grid = fnmiss_core::Grid::equidistant(t_len);
            for j in 0..t_len {
                metrics.push_str(&format!(
                    "{},{n},{errors},{misspec},{slug},{},{},{},{}\n",
                    fmt_f(grid.points()[j]),
                    fmt_f(summary.bias[j]),
                    fmt_f(summary.mean_est_variance[j]),
                    fmt_f(summary.mc_variance[j]),
                    fmt_f(summary.mse[j]),
                ));
            }
        }
    }

    io::write_text(&out_dir.join("coverage.csv"), &coverage)?;
    io::write_text(&out_dir.join("metrics.csv"), &metrics)?;
    Ok(())
}

fn cmd_bands(args: &BandsArgs, cfg: &FileConfig, out_dir: &Path) -> Result<(), CliError> {
    let alpha = resolve_alpha(args.alpha, cfg)?;
    let partition = resolve_partition(&args.partition, cfg)?;
    let est = io::read_estimate(&args.input)?;
    let scb = build_scb(&est, alpha, &partition)?;
    let pcb = build_pcb(&est, alpha)?;
    let name = args
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("bands.csv"));
    io::write_curve_table(&out_dir.join(name), &est, &scb, &pcb)?;
    Ok(())
}
