//! Simulation study comparing frequentist, raw posterior and calibrated
//! posterior intervals across a grid of learning rates.
//!
//! Every replication draws one dataset (seeded by the replication index
//! alone, so all learning rates see the same data) and, per learning rate,
//! one Gibbs chain seeded by `(η index, replication)`. Cells are
//! independent and run on the rayon pool; results are reduced in
//! `(η index, replication)` order so output does not depend on scheduling.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::calibration::{
    calibrate_draws, credible_interval, omega_identity_residual, sandwich_at, target_sandwich,
};
use crate::error::{Error, Result};
use crate::estimator::{fit_penalized, map_center, posterior_mean_center, wald_interval};
use crate::linalg::SymMatrix;
use crate::model::{whiten, Group, GroupedDataset, HuberSpec, WhitenedDataset, WorkingCov};
use crate::penalty::RidgeSpec;
use crate::sampler::{run_chain, PriorTempering, SamplerConfig};

const STREAM_DATA: u64 = 0x6461_7461;
const STREAM_CHAIN: u64 = 0x6368_6169;
const STREAM_ORACLE: u64 = 0x6f72_6163;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a sequence of stream coordinates.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn dataset_seed(master: u64, rep: usize) -> u64 {
    derive_seed(master, &[STREAM_DATA, rep as u64])
}

/// Seed of the pseudo-true oracle used by [`sweep`].
pub fn oracle_seed(master: u64) -> u64 {
    derive_seed(master, &[STREAM_ORACLE])
}

pub fn chain_seed(master: u64, eta_index: usize, rep: usize) -> u64 {
    derive_seed(master, &[STREAM_CHAIN, eta_index as u64, rep as u64])
}

/// `count` points equally spaced in log10 between `lo` and `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|k| {
            if k == 0 {
                lo
            } else if k == count - 1 {
                hi
            } else {
                10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub g: usize,
    pub n_i: usize,
    pub p: usize,
    pub beta_true: Vec<f64>,
    pub tau2: f64,
    pub sigma2: f64,
    pub contam_prob: f64,
    pub contam_sd: f64,
    pub c: f64,
    pub mu: Vec<f64>,
    pub lambda: f64,
    pub q: SymMatrix,
    pub eta_grid: Vec<f64>,
    pub reps: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub level: f64,
    pub master_seed: u64,
    /// Coordinate of β on which intervals are evaluated.
    pub coord: usize,
    pub oracle_g: usize,
    pub oracle_reps: usize,
    pub tempering: PriorTempering,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            g: 100,
            n_i: 5,
            p: 1,
            beta_true: vec![2.0],
            tau2: 2.0,
            sigma2: 1.0,
            contam_prob: 0.1,
            contam_sd: 10.0,
            c: 1.0,
            mu: vec![0.0],
            lambda: 0.5,
            q: SymMatrix::identity(1),
            eta_grid: log_grid(0.01, 100.0, 20),
            reps: 200,
            iterations: 1000,
            burn_in: 500,
            level: 0.95,
            master_seed: 20_240_601,
            coord: 0,
            oracle_g: 5000,
            oracle_reps: 1000,
            tempering: PriorTempering::Tempered,
        }
    }
}

impl SimConfig {
    /// Reduced grid and replication counts that finish in minutes.
    pub fn desk_scale() -> Self {
        Self {
            eta_grid: log_grid(0.01, 100.0, 8),
            reps: 50,
            oracle_g: 2000,
            oracle_reps: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.g == 0 || self.n_i == 0 || self.p == 0 {
            return bad("g, n_i and p must be ≥ 1".into());
        }
        if self.beta_true.len() != self.p || self.mu.len() != self.p || self.q.dim() != self.p {
            return bad(format!(
                "beta_true, mu and q must all have dimension p = {}",
                self.p
            ));
        }
        if !(self.tau2 > 0.0) || !(self.sigma2 > 0.0) {
            return bad("tau2 and sigma2 must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.contam_prob) {
            return bad(format!(
                "contam_prob must lie in [0, 1], got {}",
                self.contam_prob
            ));
        }
        if !(self.contam_sd >= 0.0) {
            return bad("contam_sd must be ≥ 0".into());
        }
        if !(self.c > 0.0) {
            return bad("c must be > 0".into());
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be ≥ 0".into());
        }
        if self.eta_grid.is_empty() {
            return bad("eta_grid must not be empty".into());
        }
        if self.eta_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("every eta must be > 0".into());
        }
        if self.eta_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("eta_grid must be strictly increasing".into());
        }
        if self.reps == 0 {
            return bad("reps must be ≥ 1".into());
        }
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return bad("burn_in must be smaller than iterations".into());
        }
        if self.iterations - self.burn_in < 2 {
            return bad("need at least 2 retained draws".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::BadLevel(self.level));
        }
        if self.coord >= self.p {
            return bad(format!(
                "coord {} out of range for p = {}",
                self.coord, self.p
            ));
        }
        if self.g < 2 {
            return bad("need at least 2 groups".into());
        }
        Ok(())
    }

    pub fn huber(&self) -> Result<HuberSpec> {
        HuberSpec::new(self.c)
    }

    pub fn working_cov(&self) -> Result<WorkingCov> {
        WorkingCov::new(self.tau2, self.sigma2)
    }

    pub fn ridge(&self) -> Result<RidgeSpec> {
        RidgeSpec::constant(self.mu.clone(), self.q.clone(), self.lambda)
    }
}

/// Simulated dataset together with how many errors were contaminated.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: GroupedDataset,
    pub contaminated: usize,
}

/// `y_ij = x_ijᵀβ + b_i + ε_ij`, with ε_ij shifted by ξ_ij ~ N(0, sd²)
/// independently per observation with probability `contam_prob`.
pub fn simulate(cfg: &SimConfig, groups: usize, seed: u64) -> Result<Simulated> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = cfg.p;
    let tau = cfg.tau2.sqrt();
    let sigma = cfg.sigma2.sqrt();
    let mut contaminated = 0;
    let mut out = Vec::with_capacity(groups);
    for _ in 0..groups {
        let b: f64 = tau * rng.sample::<f64, _>(StandardNormal);
        let mut x = Vec::with_capacity(cfg.n_i * p);
        let mut y = Vec::with_capacity(cfg.n_i);
        for _ in 0..cfg.n_i {
            let row: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let mut eps = sigma * rng.sample::<f64, _>(StandardNormal);
            let u: f64 = rng.random();
            let xi: f64 = cfg.contam_sd * rng.sample::<f64, _>(StandardNormal);
            if u < cfg.contam_prob {
                eps += xi;
                contaminated += 1;
            }
            let mean: f64 = row.iter().zip(&cfg.beta_true).map(|(a, b)| a * b).sum();
            y.push(mean + b + eps);
            x.extend(row);
        }
        out.push(Group::new(x, y, p)?);
    }
    Ok(Simulated {
        data: GroupedDataset::new(out, p)?,
        contaminated,
    })
}

pub fn generate_dataset(cfg: &SimConfig, seed: u64) -> Result<GroupedDataset> {
    Ok(simulate(cfg, cfg.g, seed)?.data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoTrue {
    pub value: Vec<f64>,
    pub oracle_g: usize,
    pub oracle_reps: usize,
    /// Monte Carlo standard error of each coordinate of `value`.
    pub se: Vec<f64>,
    pub skipped: usize,
}

/// Averages penalized estimates over `oracle_reps` large datasets. The
/// per-observation penalty weight λ is the same at every size, so the
/// average targets the solution of the penalized population equation.
pub fn pseudo_true(
    cfg: &SimConfig,
    oracle_g: usize,
    oracle_reps: usize,
    seed: u64,
) -> Result<PseudoTrue> {
    cfg.validate()?;
    if oracle_reps < 2 {
        return Err(Error::InvalidConfig("oracle_reps must be ≥ 2".into()));
    }
    let h = cfg.huber()?;
    let cov = cfg.working_cov()?;
    let spec = cfg.ridge()?;
    let fits: Vec<Result<Vec<f64>>> = (0..oracle_reps)
        .into_par_iter()
        .map(|r| {
            let data = simulate(cfg, oracle_g, derive_seed(seed, &[STREAM_ORACLE, r as u64]))?.data;
            let wd = whiten(&data, &cov)?;
            Ok(fit_penalized(&wd, &h, &spec, wd.n())?
                .require_converged()?
                .beta_hat)
        })
        .collect();
    let mut kept = Vec::with_capacity(oracle_reps);
    let mut skipped = 0;
    for f in fits {
        match f {
            Ok(b) => kept.push(b),
            Err(Error::NoConvergence { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped * 100 > oracle_reps {
        return Err(Error::InvalidConfig(format!(
            "{skipped} of {oracle_reps} oracle fits failed to converge"
        )));
    }
    let m = kept.len() as f64;
    let p = cfg.p;
    let value: Vec<f64> = (0..p)
        .map(|k| kept.iter().map(|b| b[k]).sum::<f64>() / m)
        .collect();
    let se = (0..p)
        .map(|k| {
            let var = kept.iter().map(|b| (b[k] - value[k]).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        })
        .collect();
    Ok(PseudoTrue {
        value,
        oracle_g,
        oracle_reps,
        se,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Calibrated,
    Frequentist,
    Uncalibrated,
}

impl Method {
    pub const ALL: [Method; 3] = [
        Method::Calibrated,
        Method::Frequentist,
        Method::Uncalibrated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Calibrated => "calibrated",
            Method::Frequentist => "frequentist",
            Method::Uncalibrated => "uncalibrated",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodOutput {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

impl MethodOutput {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn covers(&self, target: f64) -> bool {
        self.lo <= target && target <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub eta_index: usize,
    pub eta: f64,
    pub rep: usize,
    pub frequentist: MethodOutput,
    pub uncalibrated: MethodOutput,
    pub calibrated: MethodOutput,
    /// Relative residual of Ω̂Ĥ₀⁻¹Ω̂ᵀ = V̂.
    pub identity_residual: f64,
    pub h0_clamped: bool,
}

impl CellResult {
    pub fn output(&self, m: Method) -> MethodOutput {
        match m {
            Method::Calibrated => self.calibrated,
            Method::Frequentist => self.frequentist,
            Method::Uncalibrated => self.uncalibrated,
        }
    }
}

/// Whitened dataset of replication `rep`.
pub fn replication_data(cfg: &SimConfig, rep: usize) -> Result<WhitenedDataset> {
    let data = generate_dataset(cfg, dataset_seed(cfg.master_seed, rep))?;
    whiten(&data, &cfg.working_cov()?)
}

/// Runs the three procedures on replication `rep` at learning rate
/// `eta_grid[eta_index]`; the raw and calibrated intervals share one chain.
pub fn run_cell(cfg: &SimConfig, eta_index: usize, rep: usize) -> Result<CellResult> {
    let eta = *cfg
        .eta_grid
        .get(eta_index)
        .ok_or_else(|| Error::InvalidConfig(format!("eta index {eta_index} out of range")))?;
    let h = cfg.huber()?;
    let spec = cfg.ridge()?;
    let wd = replication_data(cfg, rep)?;
    let s_n = wd.n();
    let k = cfg.coord;

    let fit = fit_penalized(&wd, &h, &spec, s_n)?.require_converged()?;
    let target = target_sandwich(&wd, &h, &spec, &fit.beta_hat, s_n)?;
    let wald = wald_interval(&fit.beta_hat, &target.v_target, wd.n(), k, cfg.level)?;
    let frequentist = MethodOutput {
        point: fit.beta_hat[k],
        lo: wald.lo(),
        hi: wald.hi(),
    };

    let scfg = SamplerConfig::new(
        eta,
        cfg.iterations,
        cfg.burn_in,
        chain_seed(cfg.master_seed, eta_index, rep),
    )?
    .with_tempering(cfg.tempering);
    let draws = run_chain(&wd, &h, &spec, &scfg, s_n)?;
    let post_mean = posterior_mean_center(&draws)?;
    let (lo, hi) = credible_interval(&draws, k, cfg.level)?;
    let uncalibrated = MethodOutput {
        point: post_mean[k],
        lo,
        hi,
    };

    let center = map_center(&wd, &h, &spec, s_n, eta)?;
    let est = sandwich_at(&wd, &h, &spec, &center, s_n, &draws)?;
    let calib = calibrate_draws(&draws, &est)?;
    let identity_residual =
        omega_identity_residual(&calib.omega_hat, &est.h0_inv_hat, &est.v_target_hat);
    let (lo, hi) = credible_interval(&calib.draws, k, cfg.level)?;
    let calibrated = MethodOutput {
        point: center[k],
        lo,
        hi,
    };

    Ok(CellResult {
        eta_index,
        eta,
        rep,
        frequentist,
        uncalibrated,
        calibrated,
        identity_residual,
        h0_clamped: est.h0_clamped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: Method,
    pub eta: f64,
    pub coverage: f64,
    pub mean_width: f64,
    pub bias: f64,
    pub bias_sd: f64,
    pub reps: usize,
    pub covered: usize,
}

/// Metrics for one (method, η) cell from its per-replication outputs.
pub fn summarize(
    method: Method,
    eta: f64,
    outputs: &[MethodOutput],
    target: f64,
) -> Result<MetricsRow> {
    let r = outputs.len();
    if r < 2 {
        return Err(Error::TooFewReps(r));
    }
    let rf = r as f64;
    let covered = outputs.iter().filter(|o| o.covers(target)).count();
    let mean_width = outputs.iter().map(MethodOutput::width).sum::<f64>() / rf;
    let errs: Vec<f64> = outputs.iter().map(|o| o.point - target).collect();
    let bias = errs.iter().sum::<f64>() / rf;
    let bias_sd = (errs.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / (rf - 1.0)).sqrt();
    Ok(MetricsRow {
        method,
        eta,
        coverage: covered as f64 / rf,
        mean_width,
        bias,
        bias_sd,
        reps: r,
        covered,
    })
}

/// Rows sorted by method, then η.
pub fn aggregate(
    cells: &[CellResult],
    eta_grid: &[f64],
    coord_target: f64,
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::with_capacity(3 * eta_grid.len());
    for method in Method::ALL {
        for (ei, &eta) in eta_grid.iter().enumerate() {
            let outs: Vec<MethodOutput> = cells
                .iter()
                .filter(|c| c.eta_index == ei)
                .map(|c| c.output(method))
                .collect();
            rows.push(summarize(method, eta, &outs, coord_target)?);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<MetricsRow>,
    pub cells: Vec<CellResult>,
    pub failures: Vec<(usize, usize, Error)>,
    pub pseudo_true: PseudoTrue,
}

impl SweepResult {
    pub fn attempted(&self) -> usize {
        self.cells.len() + self.failures.len()
    }

    pub fn success_rate(&self) -> f64 {
        self.cells.len() as f64 / self.attempted() as f64
    }

    pub fn row(&self, method: Method, eta_index: usize) -> &MetricsRow {
        let n_eta = self.rows.len() / 3;
        let mi = Method::ALL
            .iter()
            .position(|m| *m == method)
            .expect("known method");
        &self.rows[mi * n_eta + eta_index]
    }
}

/// Runs every (η, replication) cell against a precomputed pseudo-true value.
pub fn sweep_with(cfg: &SimConfig, pseudo: PseudoTrue) -> Result<SweepResult> {
    cfg.validate()?;
    if cfg.reps < 2 {
        return Err(Error::TooFewReps(cfg.reps));
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.eta_grid.len())
        .flat_map(|e| (0..cfg.reps).map(move |r| (e, r)))
        .collect();
    let outcomes: Vec<Result<CellResult>> =
        jobs.par_iter().map(|&(e, r)| run_cell(cfg, e, r)).collect();
    let mut cells = Vec::with_capacity(jobs.len());
    let mut failures = Vec::new();
    for ((e, r), out) in jobs.into_iter().zip(outcomes) {
        match out {
            Ok(c) => cells.push(c),
            Err(err) if err.is_numerical() => failures.push((e, r, err)),
            Err(err) => return Err(err),
        }
    }
    let rows = aggregate(&cells, &cfg.eta_grid, pseudo.value[cfg.coord])?;
    Ok(SweepResult {
        rows,
        cells,
        failures,
        pseudo_true: pseudo,
    })
}

/// Computes the pseudo-true value from the configured oracle, then sweeps.
pub fn sweep(cfg: &SimConfig) -> Result<SweepResult> {
    cfg.validate()?;
    if cfg.reps < 2 {
        return Err(Error::TooFewReps(cfg.reps));
    }
    let pseudo = pseudo_true(
        cfg,
        cfg.oracle_g,
        cfg.oracle_reps,
        oracle_seed(cfg.master_seed),
    )?;
    sweep_with(cfg, pseudo)
}

/// Round-trip float formatting with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record([
        "method",
        "eta",
        "coverage",
        "mean_width",
        "bias",
        "bias_sd",
        "reps",
    ])
    .map_err(io)?;
    for r in rows {
        w.write_record([
            r.method.as_str().to_string(),
            fmt_f64(r.eta),
            fmt_f64(r.coverage),
            fmt_f64(r.mean_width),
            fmt_f64(r.bias),
            fmt_f64(r.bias_sd),
            r.reps.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-replication audit records, ordered by method, η, replication.
pub fn write_records_csv<W: Write>(cells: &[CellResult], target: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["method", "eta", "rep", "point", "lo", "hi", "covered"])
        .map_err(io)?;
    for m in Method::ALL {
        for c in cells {
            let o = c.output(m);
            w.write_record([
                m.as_str().to_string(),
                fmt_f64(c.eta),
                c.rep.to_string(),
                fmt_f64(o.point),
                fmt_f64(o.lo),
                fmt_f64(o.hi),
                u8::from(o.covers(target)).to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}
