mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gbcalib::calibration::{
    calibrate_draws, credible_interval, omega_identity_residual, sandwich_at, target_sandwich,
};
use gbcalib::estimator::{fit_penalized, map_center, posterior_mean_center, wald_interval};
use gbcalib::experiment::{
    fmt_f64, oracle_seed, pseudo_true, sweep, sweep_with, write_metrics_csv, write_records_csv,
    PseudoTrue,
};
use gbcalib::io::{read_dataset_csv, read_draws_csv, write_draws_csv};
use gbcalib::linalg::{Matrix, SymMatrix};
use gbcalib::model::{whiten, WhitenedDataset};
use gbcalib::sampler::{run_chain, SamplerConfig};
use serde_json::json;

use config::{Layer, Settings};

#[derive(Parser, Debug)]
#[command(name = "gbcalib", version)]
#[command(about = "Calibrated generalized-Bayes inference for a robust random-intercept model")]
struct Cli {
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true, env = "GBCALIB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML file with settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the reduced desk-scale defaults.
    #[arg(long)]
    desk: bool,
    #[command(flatten)]
    layer: Layer,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Penalized Huber fit with sandwich variance and Wald intervals.
    Fit {
        data: PathBuf,
        /// Also write a per-coefficient CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Gibbs draws from the loss-based posterior.
    Sample {
        data: PathBuf,
        /// Draw CSV destination (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Map posterior draws through the sandwich calibration.
    Calibrate {
        data: PathBuf,
        draws: PathBuf,
        /// Calibrated draw CSV destination.
        #[arg(long)]
        out: PathBuf,
        /// JSON report destination (stdout if omitted).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Coverage study across the learning-rate grid.
    Experiment {
        /// Directory receiving metrics.csv and records.csv.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Use this pseudo-true value instead of running the oracle.
        #[arg(long, allow_hyphen_values = true)]
        target: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Oracle approximation of the penalized pseudo-true parameter.
    PseudoTrue {
        /// JSON destination (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn settings(common: &Common) -> Result<Settings> {
    let file = match &common.config {
        Some(path) => Layer::from_file(path)?,
        None => Layer::default(),
    };
    Settings::resolve(config::defaults(common.desk), &file.overlay(&common.layer))
}

fn load_data(path: &Path, s: &mut Settings) -> Result<WhitenedDataset> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let data = read_dataset_csv(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))?;
    s.fit_to_data(data.p())?;
    s.sim.validate()?;
    Ok(whiten(&data, &s.sim.working_cov()?)?)
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn sym_json(m: &SymMatrix) -> serde_json::Value {
    matrix_json(m.as_matrix())
}

fn matrix_json(m: &Matrix) -> serde_json::Value {
    (0..m.dim())
        .map(|i| (0..m.dim()).map(|j| m.get(i, j)).collect::<Vec<_>>())
        .collect()
}

fn cmd_fit(data: &Path, out: Option<&Path>, common: &Common) -> Result<()> {
    let mut s = settings(common)?;
    let wd = load_data(data, &mut s)?;
    let cfg = &s.sim;
    let (h, spec) = (cfg.huber()?, cfg.ridge()?);
    let fit = fit_penalized(&wd, &h, &spec, wd.n())?.require_converged()?;
    let target = target_sandwich(&wd, &h, &spec, &fit.beta_hat, wd.n())?;
    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "n = {}, groups = {}, p = {}",
        wd.n(),
        wd.groups().len(),
        wd.p()
    )?;
    writeln!(stdout, "newton iterations = {}", fit.iterations_used)?;
    writeln!(stdout, "V_target =")?;
    for i in 0..wd.p() {
        let row: Vec<String> = (0..wd.p())
            .map(|j| fmt_f64(target.v_target.get(i, j)))
            .collect();
        writeln!(stdout, "  {}", row.join(" "))?;
    }
    let mut rows = Vec::new();
    for k in 0..wd.p() {
        let w = wald_interval(&fit.beta_hat, &target.v_target, wd.n(), k, cfg.level)?;
        let se = (target.v_target.get(k, k) / wd.n() as f64).sqrt();
        writeln!(
            stdout,
            "beta_{} = {}  se = {}  {}% interval [{}, {}]",
            k + 1,
            fmt_f64(fit.beta_hat[k]),
            fmt_f64(se),
            100.0 * cfg.level,
            fmt_f64(w.lo()),
            fmt_f64(w.hi())
        )?;
        rows.push(format!(
            "{},{},{},{},{}",
            k + 1,
            fmt_f64(fit.beta_hat[k]),
            fmt_f64(se),
            fmt_f64(w.lo()),
            fmt_f64(w.hi())
        ));
    }
    if let Some(path) = out {
        let mut w = sink(Some(path))?;
        writeln!(w, "coord,beta_hat,se,lo,hi")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_sample(data: &Path, out: Option<&Path>, common: &Common) -> Result<()> {
    let mut s = settings(common)?;
    let wd = load_data(data, &mut s)?;
    let cfg = &s.sim;
    let scfg = SamplerConfig::new(s.eta, cfg.iterations, cfg.burn_in, s.seed)?
        .with_tempering(cfg.tempering);
    let draws = run_chain(&wd, &cfg.huber()?, &cfg.ridge()?, &scfg, wd.n())?;
    let mut w = sink(out)?;
    write_draws_csv(&draws, "beta", &mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_calibrate(
    data: &Path,
    draws: &Path,
    out: &Path,
    report: Option<&Path>,
    common: &Common,
) -> Result<()> {
    let mut s = settings(common)?;
    let wd = load_data(data, &mut s)?;
    let cfg = &s.sim;
    let file = File::open(draws).with_context(|| format!("opening {}", draws.display()))?;
    let raw = read_draws_csv(BufReader::new(file), "beta", s.eta, s.seed)
        .with_context(|| format!("reading {}", draws.display()))?;
    let (h, spec) = (cfg.huber()?, cfg.ridge()?);
    let center = map_center(&wd, &h, &spec, wd.n(), s.eta)?;
    let est = sandwich_at(&wd, &h, &spec, &center, wd.n(), &raw)?;
    let cal = calibrate_draws(&raw, &est)?;
    let residual = omega_identity_residual(&cal.omega_hat, &est.h0_inv_hat, &est.v_target_hat);
    let off_identity = cal.omega_hat.sub(&Matrix::identity(wd.p())).frobenius();
    let mut w = sink(Some(out))?;
    write_draws_csv(&cal.draws, "beta_calib", &mut w)?;
    w.flush()?;
    let mut intervals = Vec::new();
    for k in 0..wd.p() {
        let (lo, hi) = credible_interval(&cal.draws, k, cfg.level)?;
        let (rlo, rhi) = credible_interval(&raw, k, cfg.level)?;
        intervals.push(json!({ "coord": k + 1, "calibrated": [lo, hi], "raw": [rlo, rhi] }));
    }
    let doc = json!({
        "n_draws": est.n_draws,
        "level": cfg.level,
        "center": center,
        "posterior_mean": posterior_mean_center(&raw)?,
        "j_lambda_hat": sym_json(&est.j_lambda_hat),
        "k_hat": sym_json(&est.k_hat),
        "v_target_hat": sym_json(&est.v_target_hat),
        "h0_inv_hat": sym_json(&est.h0_inv_hat),
        "h0_clamped": est.h0_clamped,
        "omega_hat": matrix_json(&cal.omega_hat),
        "omega_minus_identity_frobenius": off_identity,
        "identity_residual": residual,
        "intervals": intervals,
    });
    let mut r = sink(report)?;
    serde_json::to_writer_pretty(&mut r, &doc)?;
    writeln!(r)?;
    r.flush()?;
    Ok(())
}

fn cmd_experiment(out_dir: &Path, target: Option<f64>, common: &Common) -> Result<()> {
    let s = settings(common)?;
    let cfg = &s.sim;
    cfg.validate()?;
    let res = match target {
        Some(v) => {
            let mut value = vec![0.0; cfg.p];
            value[cfg.coord] = v;
            let pt = PseudoTrue {
                value,
                oracle_g: 0,
                oracle_reps: 0,
                se: vec![0.0; cfg.p],
                skipped: 0,
            };
            sweep_with(cfg, pt)?
        }
        None => sweep(cfg)?,
    };
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut m = sink(Some(&out_dir.join("metrics.csv")))?;
    write_metrics_csv(&res.rows, &mut m)?;
    m.flush()?;
    let mut r = sink(Some(&out_dir.join("records.csv")))?;
    write_records_csv(&res.cells, res.pseudo_true.value[cfg.coord], &mut r)?;
    r.flush()?;
    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "pseudo-true {} = {}; {} of {} cells succeeded",
        cfg.coord + 1,
        fmt_f64(res.pseudo_true.value[cfg.coord]),
        res.cells.len(),
        res.attempted()
    )?;
    writeln!(
        stdout,
        "{:<13}{:>10}{:>10}{:>12}{:>12}{:>12}",
        "method", "eta", "coverage", "width", "bias", "bias_sd"
    )?;
    for row in &res.rows {
        writeln!(
            stdout,
            "{:<13}{:>10.4}{:>10.3}{:>12.5}{:>12.5}{:>12.5}",
            row.method.as_str(),
            row.eta,
            row.coverage,
            row.mean_width,
            row.bias,
            row.bias_sd
        )?;
    }
    for (e, r, err) in &res.failures {
        writeln!(stdout, "failed cell eta_index={e} rep={r}: {err}")?;
    }
    Ok(())
}

fn cmd_pseudo_true(out: Option<&Path>, common: &Common) -> Result<()> {
    let s = settings(common)?;
    let cfg = &s.sim;
    let seed = common
        .layer
        .seed
        .unwrap_or_else(|| oracle_seed(cfg.master_seed));
    let pt = pseudo_true(cfg, cfg.oracle_g, cfg.oracle_reps, seed)?;
    let doc = json!({
        "value": pt.value,
        "se": pt.se,
        "oracle_g": pt.oracle_g,
        "oracle_reps": pt.oracle_reps,
        "skipped": pt.skipped,
        "seed": seed,
    });
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, &doc)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        anyhow::ensure!(
            n >= 1,
            gbcalib::Error::InvalidConfig("--threads must be ≥ 1".into())
        );
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match &cli.command {
        Command::Fit { data, out, common } => cmd_fit(data, out.as_deref(), common),
        Command::Sample { data, out, common } => cmd_sample(data, out.as_deref(), common),
        Command::Calibrate {
            data,
            draws,
            out,
            report,
            common,
        } => cmd_calibrate(data, draws, out, report.as_deref(), common),
        Command::Experiment {
            out_dir,
            target,
            common,
        } => cmd_experiment(out_dir, *target, common),
        Command::PseudoTrue { out, common } => cmd_pseudo_true(out.as_deref(), common),
    }
}

/// 3 for numerical failures, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<gbcalib::Error>())
        .any(gbcalib::Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
