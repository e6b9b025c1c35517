//! Random-intercept linear mixed model under Huber loss.
//!
//! Each group is whitened by the inverse symmetric root of its working
//! compound-symmetry covariance `τ²·11ᵀ + σ²·I`; the Huber criterion, its
//! score and Hessian, and the per-group score covariance are then plain sums
//! over whitened rows.

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    /// n_i × p covariates, row-major.
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Group {
    pub fn new(x: Vec<f64>, y: Vec<f64>, p: usize) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::DimensionMismatch("group has no observations".into()));
        }
        if x.len() != y.len() * p {
            return Err(Error::DimensionMismatch(format!(
                "group has {} responses but {} covariate entries for p = {p}",
                y.len(),
                x.len()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    groups: Vec<Group>,
    n: usize,
    p: usize,
}

impl GroupedDataset {
    pub fn new(groups: Vec<Group>, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::DimensionMismatch(
                "covariate dimension must be ≥ 1".into(),
            ));
        }
        for (i, g) in groups.iter().enumerate() {
            if g.x.len() != g.y.len() * p {
                return Err(Error::DimensionMismatch(format!(
                    "group {i} does not have width {p}"
                )));
            }
        }
        let n = groups.iter().map(Group::len).sum();
        Ok(Self { groups, n, p })
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkingCov {
    tau2: f64,
    sigma2: f64,
}

impl WorkingCov {
    pub fn new(tau2: f64, sigma2: f64) -> Result<Self> {
        if !(tau2 > 0.0 && tau2.is_finite()) || !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "variance components must be positive, got tau2 = {tau2}, sigma2 = {sigma2}"
            )));
        }
        Ok(Self { tau2, sigma2 })
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Σ = τ²·11ᵀ + σ²·I for a group of size `size`.
    pub fn covariance(&self, size: usize) -> SymMatrix {
        let mut data = vec![self.tau2; size * size];
        for i in 0..size {
            data[i * size + i] += self.sigma2;
        }
        SymMatrix::from_row_major(size, data).expect("square")
    }

    /// Coefficients `(a, b)` of the symmetric root `L = a·I + b·11ᵀ`.
    pub fn root_coefficients(&self, size: usize) -> (f64, f64) {
        let a = self.sigma2.sqrt();
        let m = size as f64;
        let b = ((self.sigma2 + m * self.tau2).sqrt() - a) / m;
        (a, b)
    }

    /// Dense symmetric root `L` for a group of size `size`.
    pub fn root(&self, size: usize) -> SymMatrix {
        let (a, b) = self.root_coefficients(size);
        let mut data = vec![b; size * size];
        for i in 0..size {
            data[i * size + i] += a;
        }
        SymMatrix::from_row_major(size, data).expect("square")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberSpec {
    c: f64,
}

impl HuberSpec {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "Huber constant must be > 0, got {c}"
            )));
        }
        Ok(Self { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    #[inline]
    pub fn rho(&self, u: f64) -> f64 {
        let a = u.abs();
        if a <= self.c {
            0.5 * u * u
        } else {
            self.c * a - 0.5 * self.c * self.c
        }
    }

    #[inline]
    pub fn psi(&self, u: f64) -> f64 {
        u.clamp(-self.c, self.c)
    }

    /// Second-derivative weight; 1 on the closed interval [−c, c].
    #[inline]
    pub fn weight(&self, u: f64) -> f64 {
        if u.abs() <= self.c {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedGroup {
    /// n_i × p whitened covariates, row-major.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl WhitenedGroup {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    #[inline]
    pub fn row(&self, j: usize, p: usize) -> &[f64] {
        &self.x[j * p..(j + 1) * p]
    }

    /// Whitened residual r̃_j(β) = ỹ_j − x̃_jᵀβ.
    #[inline]
    pub fn residual(&self, j: usize, beta: &[f64]) -> f64 {
        let p = beta.len();
        self.y[j]
            - self
                .row(j, p)
                .iter()
                .zip(beta)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedDataset {
    groups: Vec<WhitenedGroup>,
    n: usize,
    p: usize,
}

impl WhitenedDataset {
    /// Builds a whitened dataset directly; used for synthetic inputs where
    /// x̃ and ỹ are given.
    pub fn from_groups(groups: Vec<WhitenedGroup>, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::DimensionMismatch(
                "covariate dimension must be ≥ 1".into(),
            ));
        }
        for (i, g) in groups.iter().enumerate() {
            if g.x.len() != g.y.len() * p {
                return Err(Error::DimensionMismatch(format!(
                    "group {i} does not have width {p}"
                )));
            }
        }
        let n = groups.iter().map(WhitenedGroup::len).sum();
        Ok(Self { groups, n, p })
    }

    pub fn groups(&self) -> &[WhitenedGroup] {
        &self.groups
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "beta has length {}, expected {}",
                beta.len(),
                self.p
            )));
        }
        Ok(())
    }

    /// Σ_i x̃_iᵀ x̃_i.
    pub fn gram(&self) -> SymMatrix {
        let p = self.p;
        let mut acc = vec![0.0; p * p];
        for g in &self.groups {
            for j in 0..g.len() {
                let row = g.row(j, p);
                for a in 0..p {
                    for b in 0..p {
                        acc[a * p + b] += row[a] * row[b];
                    }
                }
            }
        }
        SymMatrix::from_row_major(p, acc).expect("square")
    }

    /// Σ_i x̃_iᵀ (ỹ_i − offset_i), with `offset` laid out in observation order.
    pub fn cross(&self, offset: Option<&[f64]>) -> Vec<f64> {
        let p = self.p;
        let mut acc = vec![0.0; p];
        let mut k = 0;
        for g in &self.groups {
            for j in 0..g.len() {
                let target = g.y[j] - offset.map_or(0.0, |o| o[k]);
                for (a, xa) in g.row(j, p).iter().enumerate() {
                    acc[a] += xa * target;
                }
                k += 1;
            }
        }
        acc
    }

    /// All whitened residuals in observation order.
    pub fn residuals(&self, beta: &[f64]) -> Result<Vec<f64>> {
        self.check_beta(beta)?;
        let mut out = Vec::with_capacity(self.n);
        for g in &self.groups {
            for j in 0..g.len() {
                out.push(g.residual(j, beta));
            }
        }
        Ok(out)
    }
}

/// Premultiplies every group by `L_i⁻¹`, using the closed form
/// `L⁻¹ = a⁻¹(I − γ·11ᵀ)` with `γ = b / (a + n_i·b)`.
pub fn whiten(data: &GroupedDataset, cov: &WorkingCov) -> Result<WhitenedDataset> {
    let p = data.p;
    let groups = data
        .groups
        .iter()
        .map(|g| {
            let m = g.len();
            let (a, b) = cov.root_coefficients(m);
            let gamma = b / (a + m as f64 * b);
            let inv_a = 1.0 / a;
            let y_sum: f64 = g.y.iter().sum();
            let y = g.y.iter().map(|v| inv_a * (v - gamma * y_sum)).collect();
            let mut col_sums = vec![0.0; p];
            for j in 0..m {
                for (s, v) in col_sums.iter_mut().zip(&g.x[j * p..(j + 1) * p]) {
                    *s += v;
                }
            }
            let mut x = Vec::with_capacity(m * p);
            for j in 0..m {
                for (k, v) in g.x[j * p..(j + 1) * p].iter().enumerate() {
                    x.push(inv_a * (v - gamma * col_sums[k]));
                }
            }
            WhitenedGroup { x, y }
        })
        .collect();
    WhitenedDataset::from_groups(groups, p)
}

/// M_n(β) = Σ_ij ρ_c(r̃_ij(β)).
pub fn loss(wd: &WhitenedDataset, beta: &[f64], h: &HuberSpec) -> Result<f64> {
    wd.check_beta(beta)?;
    Ok(wd
        .groups
        .iter()
        .flat_map(|g| (0..g.len()).map(move |j| h.rho(g.residual(j, beta))))
        .sum())
}

/// U_n(β) = −n⁻¹ Σ_i x̃_iᵀ ψ_c(r̃_i(β)).
pub fn score(wd: &WhitenedDataset, beta: &[f64], h: &HuberSpec) -> Result<Vec<f64>> {
    wd.check_beta(beta)?;
    let p = wd.p;
    let mut acc = vec![0.0; p];
    for g in &wd.groups {
        for j in 0..g.len() {
            let psi = h.psi(g.residual(j, beta));
            for (a, xa) in acc.iter_mut().zip(g.row(j, p)) {
                *a -= xa * psi;
            }
        }
    }
    let inv_n = 1.0 / wd.n as f64;
    Ok(acc.into_iter().map(|v| v * inv_n).collect())
}

/// J_n(β) = n⁻¹ Σ_i x̃_iᵀ W_i(β) x̃_i.
pub fn hessian(wd: &WhitenedDataset, beta: &[f64], h: &HuberSpec) -> Result<SymMatrix> {
    wd.check_beta(beta)?;
    let p = wd.p;
    let mut acc = vec![0.0; p * p];
    for g in &wd.groups {
        for j in 0..g.len() {
            if h.weight(g.residual(j, beta)) == 0.0 {
                continue;
            }
            let row = g.row(j, p);
            for a in 0..p {
                for b in a..p {
                    acc[a * p + b] += row[a] * row[b];
                }
            }
        }
    }
    let inv_n = 1.0 / wd.n as f64;
    for a in 0..p {
        for b in a..p {
            acc[a * p + b] *= inv_n;
            acc[b * p + a] = acc[a * p + b];
        }
    }
    SymMatrix::from_row_major(p, acc)
}

/// Per-group score contributions Û_i = −x̃_iᵀ ψ_c(r̃_i(β)).
pub fn group_scores(wd: &WhitenedDataset, beta: &[f64], h: &HuberSpec) -> Result<Vec<Vec<f64>>> {
    wd.check_beta(beta)?;
    let p = wd.p;
    Ok(wd
        .groups
        .iter()
        .map(|g| {
            let mut u = vec![0.0; p];
            for j in 0..g.len() {
                let psi = h.psi(g.residual(j, beta));
                for (a, xa) in u.iter_mut().zip(g.row(j, p)) {
                    *a -= xa * psi;
                }
            }
            u
        })
        .collect())
}

/// K̂ = n⁻¹ Σ_i Û_i Û_iᵀ, summing over groups (the independent units).
pub fn k_hat(wd: &WhitenedDataset, beta: &[f64], h: &HuberSpec) -> Result<SymMatrix> {
    if wd.groups.len() < 2 {
        return Err(Error::TooFewGroups(wd.groups.len()));
    }
    let p = wd.p;
    let mut acc = vec![0.0; p * p];
    for u in group_scores(wd, beta, h)? {
        for a in 0..p {
            for b in 0..p {
                acc[a * p + b] += u[a] * u[b];
            }
        }
    }
    let inv_n = 1.0 / wd.n as f64;
    acc.iter_mut().for_each(|v| *v *= inv_n);
    SymMatrix::from_row_major(p, acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sym_sqrt, DEFAULT_EIG_TOL};

    fn one_obs(x: f64, y: f64) -> WhitenedDataset {
        WhitenedDataset::from_groups(
            vec![WhitenedGroup {
                x: vec![x],
                y: vec![y],
            }],
            1,
        )
        .unwrap()
    }

    #[test]
    fn whiten_scalar_group() {
        let data =
            GroupedDataset::new(vec![Group::new(vec![1.5], vec![3.0], 1).unwrap()], 1).unwrap();
        let wd = whiten(&data, &WorkingCov::new(2.0, 1.0).unwrap()).unwrap();
        let s3 = 3.0_f64.sqrt();
        assert!((wd.groups()[0].y[0] - 3.0 / s3).abs() < 1e-15);
        assert!((wd.groups()[0].x[0] - 1.5 / s3).abs() < 1e-15);
    }

    #[test]
    fn whiten_identity_limit() {
        let x = vec![0.3, -1.2, 2.0];
        let data = GroupedDataset::new(
            vec![Group::new(x.clone(), vec![1.0, 2.0, 3.0], 1).unwrap()],
            1,
        )
        .unwrap();
        let wd = whiten(&data, &WorkingCov::new(1e-12, 1.0).unwrap()).unwrap();
        for (a, b) in wd.groups()[0].x.iter().zip(&x) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn closed_form_root_matches_eigen_root() {
        let cov = WorkingCov::new(2.0, 1.0).unwrap();
        let closed = cov.root(5);
        let eig = sym_sqrt(&cov.covariance(5), DEFAULT_EIG_TOL).unwrap().sqrt;
        for i in 0..5 {
            for j in 0..5 {
                assert!((closed.get(i, j) - eig.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn whitening_is_invertible() {
        let cov = WorkingCov::new(2.0, 1.0).unwrap();
        let x = vec![0.5, 1.0, -0.3, 2.2, 0.7, -1.1, 0.0, 0.4];
        let data =
            GroupedDataset::new(vec![Group::new(x.clone(), vec![0.0; 4], 2).unwrap()], 2).unwrap();
        let wd = whiten(&data, &cov).unwrap();
        let l = cov.root(4);
        for k in 0..2 {
            let col: Vec<f64> = (0..4).map(|j| wd.groups()[0].x[j * 2 + k]).collect();
            let back = l.matvec(&col);
            for j in 0..4 {
                let orig = x[j * 2 + k];
                assert!((back[j] - orig).abs() <= 1e-9 * (1.0 + orig.abs()));
            }
        }
    }

    #[test]
    fn huber_branches() {
        let h = HuberSpec::new(1.0).unwrap();
        assert_eq!(loss(&one_obs(1.0, 0.0), &[0.0], &h).unwrap(), 0.0);
        assert_eq!(loss(&one_obs(1.0, 0.5), &[0.0], &h).unwrap(), 0.125);
        assert_eq!(loss(&one_obs(1.0, 2.0), &[0.0], &h).unwrap(), 1.5);
        assert_eq!(h.psi(1.0), 1.0);
        assert_eq!(h.weight(1.0), 1.0);
        assert_eq!(h.weight(-1.0 - 1e-15), 0.0);
        assert!(HuberSpec::new(0.0).is_err());
    }

    #[test]
    fn score_saturates() {
        let h = HuberSpec::new(1.0).unwrap();
        assert_eq!(score(&one_obs(1.0, 3.0), &[0.0], &h).unwrap(), vec![-1.0]);
        assert_eq!(score(&one_obs(1.0, 0.0), &[0.0], &h).unwrap(), vec![0.0]);
    }

    #[test]
    fn hessian_weight_extremes() {
        let h = HuberSpec::new(1.0).unwrap();
        let wd = WhitenedDataset::from_groups(
            vec![
                WhitenedGroup {
                    x: vec![1.0, 2.0],
                    y: vec![5.0, -9.0],
                },
                WhitenedGroup {
                    x: vec![0.5],
                    y: vec![4.0],
                },
            ],
            1,
        )
        .unwrap();
        assert_eq!(hessian(&wd, &[0.0], &h).unwrap().get(0, 0), 0.0);
        let big = HuberSpec::new(100.0).unwrap();
        let j = hessian(&wd, &[0.0], &big).unwrap().get(0, 0);
        assert!((j - (1.0 + 4.0 + 0.25) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn k_hat_direct_sum() {
        let h = HuberSpec::new(10.0).unwrap();
        // Û₁ = −1·1 = −1, Û₂ = −1·(−1) = 1
        let wd = WhitenedDataset::from_groups(
            vec![
                WhitenedGroup {
                    x: vec![1.0],
                    y: vec![1.0],
                },
                WhitenedGroup {
                    x: vec![1.0],
                    y: vec![-1.0],
                },
            ],
            1,
        )
        .unwrap();
        assert_eq!(k_hat(&wd, &[0.0], &h).unwrap().get(0, 0), 1.0);
        let zero = WhitenedDataset::from_groups(
            vec![
                WhitenedGroup {
                    x: vec![1.0],
                    y: vec![0.0],
                },
                WhitenedGroup {
                    x: vec![2.0],
                    y: vec![0.0],
                },
            ],
            1,
        )
        .unwrap();
        assert_eq!(k_hat(&zero, &[0.0], &h).unwrap(), SymMatrix::zeros(1));
        assert!(matches!(
            k_hat(&one_obs(1.0, 1.0), &[0.0], &h),
            Err(Error::TooFewGroups(1))
        ));
    }

    #[test]
    fn beta_length_is_checked() {
        let h = HuberSpec::new(1.0).unwrap();
        let wd = one_obs(1.0, 1.0);
        assert!(matches!(
            loss(&wd, &[0.0, 1.0], &h),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            score(&wd, &[], &h),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            hessian(&wd, &[1.0, 1.0], &h),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn invalid_group_shapes() {
        assert!(Group::new(vec![1.0], vec![], 1).is_err());
        assert!(Group::new(vec![1.0, 2.0, 3.0], vec![1.0], 2).is_err());
        assert!(WorkingCov::new(0.0, 1.0).is_err());
    }
}
