//! Ridge penalty ρ(β) = ½(β−μ)ᵀQ(β−μ) and its Gaussian-prior reading.

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, SymMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSpec {
    mu: Vec<f64>,
    q: SymMatrix,
    /// λ_n, the value used at the current sample size.
    lambda: f64,
    /// λ, the limit of the λ_n sequence.
    lambda_limit: f64,
}

impl RidgeSpec {
    pub fn new(mu: Vec<f64>, q: SymMatrix, lambda: f64, lambda_limit: f64) -> Result<Self> {
        if mu.len() != q.dim() {
            return Err(Error::DimensionMismatch(format!(
                "ridge center has length {}, penalty matrix is {}x{}",
                mu.len(),
                q.dim(),
                q.dim()
            )));
        }
        if !(lambda >= 0.0) || !(lambda_limit >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "penalty weights must be ≥ 0, got {lambda} and {lambda_limit}"
            )));
        }
        let eig = sym_eigen(&q);
        let lmin = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let lmax = eig.values.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
        if !(lmin > 1e-12 * lmax) {
            return Err(Error::NotPsd {
                min_eigenvalue: lmin,
                threshold: 1e-12 * lmax,
            });
        }
        Ok(Self {
            mu,
            q,
            lambda,
            lambda_limit,
        })
    }

    /// Constant weight sequence λ_n ≡ λ.
    pub fn constant(mu: Vec<f64>, q: SymMatrix, lambda: f64) -> Result<Self> {
        Self::new(mu, q, lambda, lambda)
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lambda_limit(&self) -> f64 {
        self.lambda_limit
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.mu.clone(), self.q.clone(), lambda, self.lambda_limit)
    }

    fn diff(&self, beta: &[f64]) -> Result<Vec<f64>> {
        if beta.len() != self.mu.len() {
            return Err(Error::DimensionMismatch(format!(
                "beta has length {}, expected {}",
                beta.len(),
                self.mu.len()
            )));
        }
        Ok(beta.iter().zip(&self.mu).map(|(b, m)| b - m).collect())
    }
}

pub fn rho(spec: &RidgeSpec, beta: &[f64]) -> Result<f64> {
    let d = spec.diff(beta)?;
    Ok(0.5 * spec.q.quad_form(&d))
}

/// ∇ρ(β) = Q(β − μ).
pub fn rho_grad(spec: &RidgeSpec, beta: &[f64]) -> Result<Vec<f64>> {
    let d = spec.diff(beta)?;
    Ok(spec.q.matvec(&d))
}

pub fn rho_hess(spec: &RidgeSpec) -> SymMatrix {
    spec.q.clone()
}

/// Log-density of the prior N(μ, {(λ_n s_n)Q}⁻¹) at β, including its
/// normalizing constant.
pub fn log_prior_density(spec: &RidgeSpec, beta: &[f64], s_n: usize) -> Result<f64> {
    let scale = spec.lambda * s_n as f64;
    if !(scale > 0.0) {
        return Err(Error::InvalidConfig(
            "prior precision λ_n·s_n must be > 0".into(),
        ));
    }
    let p = spec.p() as f64;
    let log_det_q: f64 = sym_eigen(&spec.q).values.iter().map(|l| l.ln()).sum();
    let log_norm = 0.5 * (p * scale.ln() + log_det_q) - 0.5 * p * (2.0 * std::f64::consts::PI).ln();
    Ok(log_norm - scale * rho(spec, beta)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_spec() -> RidgeSpec {
        RidgeSpec::constant(vec![0.0], SymMatrix::scalar(1.0), 0.5).unwrap()
    }

    #[test]
    fn value_at_center_and_scalar() {
        let s = scalar_spec();
        assert_eq!(rho(&s, &[0.0]).unwrap(), 0.0);
        assert_eq!(rho(&s, &[2.0]).unwrap(), 2.0);
        assert_eq!(rho_grad(&s, &[0.0]).unwrap(), vec![0.0]);
        assert_eq!(rho_grad(&s, &[2.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn hessian_is_q() {
        assert_eq!(rho_hess(&scalar_spec()), SymMatrix::scalar(1.0));
        let q = SymMatrix::from_diag(&[2.0, 3.0]);
        let s = RidgeSpec::constant(vec![0.0, 0.0], q.clone(), 1.0).unwrap();
        assert_eq!(rho_hess(&s), q);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(RidgeSpec::constant(vec![0.0], SymMatrix::scalar(-1.0), 1.0).is_err());
        assert!(RidgeSpec::constant(vec![0.0], SymMatrix::scalar(1.0), -1.0).is_err());
        assert!(RidgeSpec::constant(vec![0.0, 1.0], SymMatrix::scalar(1.0), 1.0).is_err());
        assert!(matches!(
            rho(&scalar_spec(), &[1.0, 2.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn scalar_prior_density_matches_normal_pdf() {
        // λ s_n = 0.5·4 = 2 → N(0, 1/2)
        let s = scalar_spec();
        let lp = log_prior_density(&s, &[0.3], 4).unwrap();
        let var = 0.5_f64;
        let expect = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.09 / (2.0 * var);
        assert!((lp - expect).abs() < 1e-14);
    }
}
