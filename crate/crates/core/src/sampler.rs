//! Data-augmented Gibbs sampler for the tempered Huber posterior.
//!
//! The Huber kernel is written as an infimal convolution of a Gaussian and a
//! Laplace term in a latent shift `t`, and the Laplace term as a normal scale
//! mixture with latent variance `ω`. Every block conditional is then exact:
//!
//! ```text
//! 1/ω | t    ~ InverseGaussian(mean = ηc/|t|, shape = (ηc)²)
//! t   | β, ω ~ N(σ²ηr̃, σ²),  σ² = (η + 1/ω)⁻¹
//! β   | t    ~ N(Λ⁻¹b, Λ⁻¹)
//! ```
//!
//! with `Λ = η Σ x̃ᵀx̃ + κ λ_n s_n Q`, `b = η Σ x̃ᵀ(ỹ − t) + κ λ_n s_n Q μ`, and
//! `κ = η` when the prior is tempered together with the loss (the default)
//! or `κ = 1` when only the loss carries the learning rate.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, sym_sqrt, SymMatrix, DEFAULT_EIG_TOL};
use crate::model::{HuberSpec, WhitenedDataset};
use crate::penalty::RidgeSpec;

/// Lower bound on |t| when forming the inverse-Gaussian mean.
pub const T_FLOOR: f64 = 1e-12;

/// How the learning rate enters the prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorTempering {
    /// Target ∝ exp{−η(M_n + λ_n s_n ρ)}: the posterior mode is the penalized
    /// estimator for every η and the limiting precision is η·J_λ.
    #[default]
    Tempered,
    /// Target ∝ exp{−η M_n}·π_n: only the loss is scaled.
    LossOnly,
}

impl PriorTempering {
    /// Multiplier κ on the prior precision.
    pub fn prior_weight(self, eta: f64) -> f64 {
        match self {
            PriorTempering::Tempered => eta,
            PriorTempering::LossOnly => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub eta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Starting β; `None` starts at zero.
    pub init_beta: Option<Vec<f64>>,
    pub tempering: PriorTempering,
}

impl SamplerConfig {
    pub fn new(eta: f64, iterations: usize, burn_in: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            eta,
            iterations,
            burn_in,
            seed,
            init_beta: None,
            tempering: PriorTempering::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_tempering(mut self, tempering: PriorTempering) -> Self {
        self.tempering = tempering;
        self
    }

    pub fn with_init_beta(mut self, beta: Vec<f64>) -> Self {
        self.init_beta = Some(beta);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eta must be > 0, got {}",
                self.eta
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be ≥ 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub beta: Vec<f64>,
    /// Latent shifts, one per observation in dataset order.
    pub t: Vec<f64>,
    /// Latent scales, strictly positive.
    pub omega: Vec<f64>,
}

impl AugmentedState {
    /// β as given (or zero), t = 0, ω = 1.
    pub fn initial(wd: &WhitenedDataset, beta: Option<&[f64]>) -> Result<Self> {
        let beta = match beta {
            Some(b) if b.len() != wd.p() => {
                return Err(Error::DimensionMismatch(format!(
                    "initial beta has length {}, expected {}",
                    b.len(),
                    wd.p()
                )))
            }
            Some(b) => b.to_vec(),
            None => vec![0.0; wd.p()],
        };
        Ok(Self {
            beta,
            t: vec![0.0; wd.n()],
            omega: vec![1.0; wd.n()],
        })
    }
}

/// Post burn-in β draws, stored row-major (D × p).
#[derive(Debug, Clone, PartialEq)]
pub struct DrawMatrix {
    data: Vec<f64>,
    p: usize,
    pub eta: f64,
    pub seed: u64,
}

impl DrawMatrix {
    pub fn from_rows(rows: &[Vec<f64>], eta: f64, seed: u64) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if p == 0 {
            return Err(Error::EmptyDraws { needed: 1, got: 0 });
        }
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::DimensionMismatch(
                "draw rows have unequal lengths".into(),
            ));
        }
        Ok(Self {
            data: rows.concat(),
            p,
            eta,
            seed,
        })
    }

    pub fn from_flat(data: Vec<f64>, p: usize, eta: f64, seed: u64) -> Result<Self> {
        if p == 0 || !data.len().is_multiple_of(p) {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of width {p}",
                data.len()
            )));
        }
        Ok(Self { data, p, eta, seed })
    }

    pub fn n_draws(&self) -> usize {
        self.data.len() / self.p
    }

    /// Number of retained draws; every Gibbs draw is accepted.
    pub fn accepted_count(&self) -> usize {
        self.n_draws()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, d: usize) -> &[f64] {
        &self.data[d * self.p..(d + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.p)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Inverse-Gaussian distribution IG(mean, shape), sampled by the
/// transformation-with-rejection method of Michael, Schucany and Haas.
#[derive(Debug, Clone, Copy)]
pub struct InverseGaussian {
    mean: f64,
    shape: f64,
}

impl InverseGaussian {
    pub fn new(mean: f64, shape: f64) -> Result<Self> {
        if !(mean > 0.0 && mean.is_finite()) || !(shape > 0.0 && shape.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "inverse Gaussian needs positive finite mean and shape, got ({mean}, {shape})"
            )));
        }
        Ok(Self { mean, shape })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.mean.powi(3) / self.shape
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mu = self.mean;
        let nu: f64 = rng.sample(StandardNormal);
        let a = mu * nu * nu / (2.0 * self.shape);
        // smaller root of the quadratic, μ(1 + a − √(a(2 + a))), written
        // without the cancellation that the expanded form suffers for large a
        let x = mu / (1.0 + a + (a * (2.0 + a)).sqrt());
        let z: f64 = rng.random();
        if z * (mu + x) <= mu {
            x
        } else {
            mu * mu / x
        }
    }
}

/// ω-update: ω_ij = 1/u_ij with u_ij ~ IG(ηc/|t_ij|, (ηc)²).
pub fn step_omega<R: Rng + ?Sized>(
    state: &mut AugmentedState,
    h: &HuberSpec,
    cfg: &SamplerConfig,
    rng: &mut R,
) {
    let kappa = cfg.eta * h.c();
    let shape = kappa * kappa;
    for (w, t) in state.omega.iter_mut().zip(&state.t) {
        let ig = InverseGaussian {
            mean: kappa / t.abs().max(T_FLOOR),
            shape,
        };
        *w = 1.0 / ig.sample(rng);
    }
}

/// Conditional mean and variance of t_ij given the residual and ω_ij.
#[inline]
pub fn t_conditional(eta: f64, omega: f64, residual: f64) -> (f64, f64) {
    let var = 1.0 / (eta + 1.0 / omega);
    (var * eta * residual, var)
}

/// t-update: t_ij ~ N(σ²ηr̃_ij, σ²) with σ² = (η + 1/ω_ij)⁻¹.
pub fn step_t<R: Rng + ?Sized>(
    state: &mut AugmentedState,
    wd: &WhitenedDataset,
    cfg: &SamplerConfig,
    rng: &mut R,
) {
    let mut k = 0;
    for g in wd.groups() {
        for j in 0..g.len() {
            let (mean, var) = t_conditional(cfg.eta, state.omega[k], g.residual(j, &state.beta));
            let z: f64 = rng.sample(StandardNormal);
            state.t[k] = mean + var.sqrt() * z;
            k += 1;
        }
    }
}

/// Gaussian full conditional of β with its t-independent pieces
/// precomputed.
#[derive(Debug, Clone)]
pub struct BetaConditional {
    precision: SymMatrix,
    cov_root: SymMatrix,
    prior_term: Vec<f64>,
    eta: f64,
}

impl BetaConditional {
    pub fn new(
        wd: &WhitenedDataset,
        spec: &RidgeSpec,
        cfg: &SamplerConfig,
        s_n: usize,
    ) -> Result<Self> {
        if spec.p() != wd.p() {
            return Err(Error::DimensionMismatch(format!(
                "penalty has dimension {}, data has p = {}",
                spec.p(),
                wd.p()
            )));
        }
        let prior_scale = cfg.tempering.prior_weight(cfg.eta) * spec.lambda() * s_n as f64;
        let prior_prec = spec.q().scale(prior_scale);
        let precision = wd.gram().scale(cfg.eta).add(&prior_prec);
        let cov_root = sym_sqrt(&precision, DEFAULT_EIG_TOL)?.inv_sqrt;
        let prior_term = prior_prec.matvec(spec.mu());
        Ok(Self {
            precision,
            cov_root,
            prior_term,
            eta: cfg.eta,
        })
    }

    pub fn precision(&self) -> &SymMatrix {
        &self.precision
    }

    /// Conditional mean Λ⁻¹{η Σ x̃ᵀ(ỹ − t) + κλ_n s_n Qμ}.
    pub fn mean(&self, wd: &WhitenedDataset, t: Option<&[f64]>) -> Result<Vec<f64>> {
        let cross = wd.cross(t);
        let rhs: Vec<f64> = cross
            .iter()
            .zip(&self.prior_term)
            .map(|(c, m)| self.eta * c + m)
            .collect();
        solve_spd(&self.precision, &rhs)
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        wd: &WhitenedDataset,
        t: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mean = self.mean(wd, Some(t))?;
        let z: Vec<f64> = (0..mean.len())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let shift = self.cov_root.matvec(&z);
        Ok(mean.iter().zip(shift).map(|(m, s)| m + s).collect())
    }
}

/// β-update from its Gaussian full conditional.
pub fn step_beta<R: Rng + ?Sized>(
    state: &mut AugmentedState,
    wd: &WhitenedDataset,
    spec: &RidgeSpec,
    cfg: &SamplerConfig,
    s_n: usize,
    rng: &mut R,
) -> Result<()> {
    let cond = BetaConditional::new(wd, spec, cfg, s_n)?;
    state.beta = cond.sample(wd, &state.t, rng)?;
    Ok(())
}

/// Runs ω → t → β sweeps and keeps the draws after burn-in.
pub fn run_chain(
    wd: &WhitenedDataset,
    h: &HuberSpec,
    spec: &RidgeSpec,
    cfg: &SamplerConfig,
    s_n: usize,
) -> Result<DrawMatrix> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AugmentedState::initial(wd, cfg.init_beta.as_deref())?;
    let cond = BetaConditional::new(wd, spec, cfg, s_n)?;
    let keep = cfg.iterations - cfg.burn_in;
    let mut draws = Vec::with_capacity(keep * wd.p());
    for it in 0..cfg.iterations {
        step_omega(&mut state, h, cfg, &mut rng);
        step_t(&mut state, wd, cfg, &mut rng);
        state.beta = cond.sample(wd, &state.t, &mut rng)?;
        if it >= cfg.burn_in {
            draws.extend_from_slice(&state.beta);
        }
    }
    DrawMatrix::from_flat(draws, wd.p(), cfg.eta, cfg.seed)
}

/// Effective sample size of a single chain using Geyer's initial monotone
/// sequence estimator on the autocorrelations.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        (0..n - lag)
            .map(|i| (x[i] - mean) * (x[i + lag] - mean))
            .sum::<f64>()
            / (n as f64 * c0)
    };
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = acf(2 * k) + acf(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64 * (n as f64).log10())
}
