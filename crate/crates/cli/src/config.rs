//! Layered settings: built-in defaults, then an optional TOML file, then
//! command-line flags. Every simulation field can be set in each layer.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use gbcalib::experiment::SimConfig;
use gbcalib::linalg::SymMatrix;
use gbcalib::sampler::PriorTempering;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Tempering {
    Tempered,
    LossOnly,
}

impl From<Tempering> for PriorTempering {
    fn from(t: Tempering) -> Self {
        match t {
            Tempering::Tempered => PriorTempering::Tempered,
            Tempering::LossOnly => PriorTempering::LossOnly,
        }
    }
}

/// One layer of optional settings. The same struct is filled from the
/// config file (snake_case keys) and from flags (kebab-case).
#[derive(Debug, Clone, Default, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    /// Number of groups.
    #[arg(long)]
    pub g: Option<usize>,
    /// Observations per group.
    #[arg(long)]
    pub n_i: Option<usize>,
    /// Number of covariates.
    #[arg(long)]
    pub p: Option<usize>,
    /// Generating coefficients, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta_true: Option<Vec<f64>>,
    /// Random-intercept variance of the working covariance.
    #[arg(long)]
    pub tau2: Option<f64>,
    /// Error variance of the working covariance.
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Per-observation contamination probability.
    #[arg(long)]
    pub contam_prob: Option<f64>,
    /// Standard deviation of the contaminating shift.
    #[arg(long)]
    pub contam_sd: Option<f64>,
    /// Huber threshold.
    #[arg(long)]
    pub c: Option<f64>,
    /// Ridge center, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub mu: Option<Vec<f64>>,
    /// Ridge weight per observation.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    /// Ridge matrix, row-major and comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub q: Option<Vec<f64>>,
    /// Learning rates, comma separated and increasing.
    #[arg(long, value_delimiter = ',')]
    pub eta_grid: Option<Vec<f64>>,
    /// Replications per learning rate.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Gibbs sweeps per chain, burn-in included.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Sweeps discarded at the start of each chain.
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Nominal interval level.
    #[arg(long, allow_hyphen_values = true)]
    pub level: Option<f64>,
    /// Seed from which every dataset and chain seed is derived.
    #[arg(long)]
    pub master_seed: Option<u64>,
    /// Coefficient on which intervals are reported.
    #[arg(long)]
    pub coord: Option<usize>,
    /// Groups per oracle dataset for the pseudo-true value.
    #[arg(long)]
    pub oracle_g: Option<usize>,
    /// Oracle replications for the pseudo-true value.
    #[arg(long)]
    pub oracle_reps: Option<usize>,
    /// Whether the prior is raised to the learning rate with the loss.
    #[arg(long, value_enum)]
    pub tempering: Option<Tempering>,
    /// Learning rate of a single chain.
    #[arg(long, allow_hyphen_values = true)]
    pub eta: Option<f64>,
    /// Seed of a single chain or oracle run.
    #[arg(long)]
    pub seed: Option<u64>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($f:ident),+) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )+
    };
}

impl Layer {
    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &Layer) -> Layer {
        overlay!(
            self,
            top,
            g,
            n_i,
            p,
            beta_true,
            tau2,
            sigma2,
            contam_prob,
            contam_sd,
            c,
            mu,
            lambda,
            q,
            eta_grid,
            reps,
            iterations,
            burn_in,
            level,
            master_seed,
            coord,
            oracle_g,
            oracle_reps,
            tempering,
            eta,
            seed
        );
        self
    }

    /// Reads a TOML file. Keys may sit at the top level or inside tables;
    /// table names are ignored.
    pub fn from_file(path: &Path) -> Result<Layer> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Layer> {
        let doc: toml::Table = text.parse()?;
        let mut flat = toml::Table::new();
        for (k, v) in doc {
            match v {
                toml::Value::Table(inner) => {
                    for (ik, iv) in inner {
                        if flat.insert(ik.clone(), iv).is_some() {
                            bail!("key {ik} set more than once");
                        }
                    }
                }
                other => {
                    if flat.insert(k.clone(), other).is_some() {
                        bail!("key {k} set more than once");
                    }
                }
            }
        }
        Ok(toml::Value::Table(flat).try_into()?)
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub sim: SimConfig,
    pub eta: f64,
    pub seed: u64,
    /// True when μ or Q came from a file or flag rather than the defaults.
    pub penalty_given: bool,
}

impl Settings {
    pub fn resolve(defaults: SimConfig, layer: &Layer) -> Result<Settings> {
        let mut s = defaults;
        let l = layer;
        macro_rules! set {
            ($($f:ident),+) => { $( if let Some(v) = &l.$f { s.$f = v.clone(); } )+ };
        }
        set!(
            g,
            n_i,
            p,
            beta_true,
            tau2,
            sigma2,
            contam_prob,
            contam_sd,
            c,
            mu,
            lambda,
            eta_grid,
            reps,
            iterations,
            burn_in,
            level,
            master_seed,
            coord,
            oracle_g,
            oracle_reps
        );
        if let Some(t) = l.tempering {
            s.tempering = t.into();
        }
        if let Some(q) = &l.q {
            let p = (q.len() as f64).sqrt().round() as usize;
            if p * p != q.len() {
                bail!("q must have p² entries, got {}", q.len());
            }
            s.q = SymMatrix::from_row_major(p, q.clone())?;
        }
        if l.p.is_some() && l.p != Some(s.beta_true.len()) {
            let p = s.p;
            if l.beta_true.is_none() {
                s.beta_true = vec![2.0; p];
            }
            if l.mu.is_none() {
                s.mu = vec![0.0; p];
            }
            if l.q.is_none() {
                s.q = SymMatrix::identity(p);
            }
        }
        Ok(Settings {
            sim: s.clone(),
            eta: l.eta.unwrap_or(1.0),
            seed: l.seed.unwrap_or(s.master_seed),
            penalty_given: l.mu.is_some() || l.q.is_some(),
        })
    }

    /// Adjusts the penalty to the covariate count of a loaded dataset when
    /// μ and Q were left at their defaults.
    pub fn fit_to_data(&mut self, p: usize) -> Result<()> {
        if self.sim.p == p {
            return Ok(());
        }
        if self.penalty_given {
            bail!(
                "mu/q have dimension {} but the data has p = {p}",
                self.sim.mu.len()
            );
        }
        self.sim.p = p;
        self.sim.mu = vec![0.0; p];
        self.sim.q = SymMatrix::identity(p);
        self.sim.beta_true = vec![0.0; p];
        if self.sim.coord >= p {
            bail!("coord {} out of range for p = {p}", self.sim.coord);
        }
        Ok(())
    }
}

/// Full-scale defaults or the reduced desk preset.
pub fn defaults(desk: bool) -> SimConfig {
    if desk {
        SimConfig::desk_scale()
    } else {
        SimConfig::default()
    }
}
