//! Location–scale calibration of posterior draws.
//!
//! Given draws from the tempered posterior, their covariance estimates the
//! working curvature `Ĥ₀⁻¹ = s_n·Σ̂_post`, while the model supplies the
//! target sandwich `V̂ = Ĵ_λ⁻¹K̂Ĵ_λ⁻¹` at an admissible center. The operator
//! `Ω̂ = V̂^{1/2}Ĥ₀^{1/2}` then maps centered draws so that their spread
//! matches `V̂` regardless of the learning rate:
//!
//! ```text
//! θ_calib(d) = center + Ω̂(θ(d) − mean(θ))
//! ```

use crate::error::{Error, Result};
use crate::estimator::{check_level, per_obs_lambda};
use crate::linalg::{psd_sqrt, solve_spd_matrix, sym_sqrt, Matrix, SymMatrix, DEFAULT_EIG_TOL};
use crate::model::{hessian, k_hat, HuberSpec, WhitenedDataset};
use crate::penalty::{rho_hess, RidgeSpec};
use crate::sampler::DrawMatrix;

/// Ĵ_λ, K̂ and V̂_target at a center; no posterior draws involved.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSandwich {
    pub j_lambda: SymMatrix,
    pub k_hat: SymMatrix,
    pub v_target: SymMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichEstimates {
    pub j_lambda_hat: SymMatrix,
    pub k_hat: SymMatrix,
    pub v_target_hat: SymMatrix,
    /// Ĥ₀⁻¹ = s_n·Σ̂_post.
    pub h0_inv_hat: SymMatrix,
    pub center: Vec<f64>,
    pub n_draws: usize,
    /// Set when an eigenvalue of Ĥ₀⁻¹ had to be raised to the clamp floor.
    pub h0_clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedDraws {
    pub draws: DrawMatrix,
    pub omega_hat: Matrix,
    pub center: Vec<f64>,
}

/// Σ̂_post with divisor D.
pub fn posterior_cov(draws: &DrawMatrix) -> Result<SymMatrix> {
    let d = draws.n_draws();
    if d < 2 {
        return Err(Error::EmptyDraws { needed: 2, got: d });
    }
    let p = draws.p();
    let mut mean = vec![0.0; p];
    for row in draws.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= d as f64);
    let mut acc = vec![0.0; p * p];
    for row in draws.rows() {
        for a in 0..p {
            let da = row[a] - mean[a];
            for b in a..p {
                acc[a * p + b] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            acc[a * p + b] /= d as f64;
            acc[b * p + a] = acc[a * p + b];
        }
    }
    SymMatrix::from_row_major(p, acc)
}

/// `J⁻¹ K J⁻¹` by two SPD solves.
pub fn sandwich_product(j: &SymMatrix, k: &SymMatrix) -> Result<SymMatrix> {
    let jk = solve_spd_matrix(j, k.as_matrix())?;
    Ok(solve_spd_matrix(j, &jk.transpose())?.symmetrize())
}

pub fn target_sandwich(
    wd: &WhitenedDataset,
    h: &HuberSpec,
    spec: &RidgeSpec,
    center: &[f64],
    s_n: usize,
) -> Result<TargetSandwich> {
    if center.len() != spec.p() {
        return Err(Error::DimensionMismatch(format!(
            "center has length {}, expected {}",
            center.len(),
            spec.p()
        )));
    }
    let lam = per_obs_lambda(spec, s_n, wd.n());
    let j_lambda = hessian(wd, center, h)?.add(&rho_hess(spec).scale(lam));
    let k = k_hat(wd, center, h)?;
    let v_target = sandwich_product(&j_lambda, &k)?;
    Ok(TargetSandwich {
        j_lambda,
        k_hat: k,
        v_target,
    })
}

pub fn sandwich_at(
    wd: &WhitenedDataset,
    h: &HuberSpec,
    spec: &RidgeSpec,
    center: &[f64],
    s_n: usize,
    draws: &DrawMatrix,
) -> Result<SandwichEstimates> {
    if draws.p() != spec.p() {
        return Err(Error::DimensionMismatch(format!(
            "draws have width {}, expected {}",
            draws.p(),
            spec.p()
        )));
    }
    let target = target_sandwich(wd, h, spec, center, s_n)?;
    let h0_inv_hat = posterior_cov(draws)?.scale(s_n as f64);
    let h0_clamped = sym_sqrt(&h0_inv_hat, DEFAULT_EIG_TOL)?.clamped;
    Ok(SandwichEstimates {
        j_lambda_hat: target.j_lambda,
        k_hat: target.k_hat,
        v_target_hat: target.v_target,
        h0_inv_hat,
        center: center.to_vec(),
        n_draws: draws.n_draws(),
        h0_clamped,
    })
}

/// Ω̂ = V̂^{1/2}·(Ĥ₀⁻¹)^{−1/2}.
pub fn omega_from(v_target: &SymMatrix, h0_inv: &SymMatrix) -> Result<Matrix> {
    if v_target.dim() != h0_inv.dim() {
        return Err(Error::DimensionMismatch(
            "V̂ and Ĥ₀⁻¹ differ in dimension".into(),
        ));
    }
    let v_root = psd_sqrt(v_target, DEFAULT_EIG_TOL)?;
    let h0_root = sym_sqrt(h0_inv, DEFAULT_EIG_TOL)?.inv_sqrt;
    Ok(v_root.as_matrix().matmul(h0_root.as_matrix()))
}

pub fn build_omega(est: &SandwichEstimates) -> Result<Matrix> {
    omega_from(&est.v_target_hat, &est.h0_inv_hat)
}

/// ‖Ω̂Ĥ₀⁻¹Ω̂ᵀ − V̂‖_F / ‖V̂‖_F (absolute when V̂ = 0).
pub fn omega_identity_residual(omega: &Matrix, h0_inv: &SymMatrix, v_target: &SymMatrix) -> f64 {
    let push = omega.matmul(h0_inv.as_matrix()).matmul(&omega.transpose());
    let diff = push.sub(v_target.as_matrix()).frobenius();
    let scale = v_target.frobenius();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Applies `center + Ω(θ − mean(θ))` to every draw.
pub fn calibrate_with(
    draws: &DrawMatrix,
    center: &[f64],
    omega: &Matrix,
) -> Result<CalibratedDraws> {
    let d = draws.n_draws();
    if d < 2 {
        return Err(Error::EmptyDraws { needed: 2, got: d });
    }
    let p = draws.p();
    if center.len() != p || omega.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "center of length {} and Ω of dim {} for draws of width {p}",
            center.len(),
            omega.dim()
        )));
    }
    let mut mean = vec![0.0; p];
    for row in draws.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= d as f64);
    let mut out = Vec::with_capacity(d * p);
    let mut centered = vec![0.0; p];
    for row in draws.rows() {
        for k in 0..p {
            centered[k] = row[k] - mean[k];
        }
        let shifted = omega.matvec(&centered);
        out.extend(center.iter().zip(shifted).map(|(c, s)| c + s));
    }
    Ok(CalibratedDraws {
        draws: DrawMatrix::from_flat(out, p, draws.eta, draws.seed)?,
        omega_hat: omega.clone(),
        center: center.to_vec(),
    })
}

pub fn calibrate_draws(draws: &DrawMatrix, est: &SandwichEstimates) -> Result<CalibratedDraws> {
    let omega = build_omega(est)?;
    calibrate_with(draws, &est.center, &omega)
}

/// Linear interpolation between order statistics at index `q·(len − 1)`.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Equal-tailed interval from the empirical quantiles of one coordinate.
pub fn credible_interval(draws: &DrawMatrix, coord: usize, level: f64) -> Result<(f64, f64)> {
    check_level(level)?;
    let d = draws.n_draws();
    if d < 2 {
        return Err(Error::EmptyDraws { needed: 2, got: d });
    }
    if coord >= draws.p() {
        return Err(Error::DimensionMismatch(format!(
            "coordinate {coord} out of range for width {}",
            draws.p()
        )));
    }
    let mut col = draws.column(coord);
    col.sort_by(|a, b| a.total_cmp(b));
    Ok((
        empirical_quantile(&col, 0.5 * (1.0 - level)),
        empirical_quantile(&col, 0.5 * (1.0 + level)),
    ))
}
