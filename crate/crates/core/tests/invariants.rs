use gbcalib::calibration::{
    credible_interval, empirical_quantile, omega_from, omega_identity_residual,
};
use gbcalib::linalg::{sym_sqrt, Matrix, SymMatrix, DEFAULT_EIG_TOL};
use gbcalib::model::{HuberSpec, WorkingCov};
use gbcalib::sampler::{DrawMatrix, InverseGaussian};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spd(p: usize) -> impl Strategy<Value = SymMatrix> {
    proptest::collection::vec(-2.0f64..2.0, p * p).prop_map(move |a| {
        let mut m = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                m[i * p + j] = (0..p).map(|k| a[i * p + k] * a[j * p + k]).sum::<f64>()
                    + if i == j { 0.1 } else { 0.0 };
            }
        }
        SymMatrix::from_row_major(p, m).unwrap()
    })
}

proptest! {
    #[test]
    fn huber_psi_is_bounded_and_rho_below_quadratic(u in -50.0f64..50.0, c in 0.01f64..10.0) {
        let h = HuberSpec::new(c).unwrap();
        prop_assert!(h.psi(u).abs() <= c);
        prop_assert!(h.rho(u) <= 0.5 * u * u + 1e-12);
        prop_assert!(h.rho(u) >= 0.0);
        let w = h.weight(u);
        prop_assert!(w == 0.0 || w == 1.0);
    }

    #[test]
    fn huber_rho_is_convex(a in -20.0f64..20.0, b in -20.0f64..20.0, t in 0.0f64..1.0, c in 0.1f64..5.0) {
        let h = HuberSpec::new(c).unwrap();
        let mid = h.rho(t * a + (1.0 - t) * b);
        prop_assert!(mid <= t * h.rho(a) + (1.0 - t) * h.rho(b) + 1e-10);
    }

    #[test]
    fn sym_sqrt_reconstructs(m in (1usize..7).prop_flat_map(spd)) {
        let f = sym_sqrt(&m, DEFAULT_EIG_TOL).unwrap();
        let s = f.sqrt.as_matrix();
        let err = s.matmul(s).sub(m.as_matrix()).frobenius() / m.frobenius();
        prop_assert!(err <= 1e-10);
        let id = s.matmul(f.inv_sqrt.as_matrix()).sub(&Matrix::identity(m.dim())).frobenius();
        prop_assert!(id <= 1e-8 * (m.dim() as f64));
    }

    #[test]
    fn calibration_identity_holds((v, h) in (1usize..6).prop_flat_map(|p| (spd(p), spd(p)))) {
        let omega = omega_from(&v, &h).unwrap();
        prop_assert!(omega_identity_residual(&omega, &h, &v) <= 1e-9);
    }

    #[test]
    fn whitening_root_squares_to_covariance(tau2 in 0.01f64..10.0, sigma2 in 0.01f64..10.0, m in 1usize..12) {
        let cov = WorkingCov::new(tau2, sigma2).unwrap();
        let l = cov.root(m);
        let s = cov.covariance(m);
        let err = l.as_matrix().matmul(l.as_matrix()).sub(s.as_matrix()).frobenius() / s.frobenius();
        prop_assert!(err <= 1e-12);
    }

    #[test]
    fn credible_interval_is_ordered_and_nested(xs in proptest::collection::vec(-100.0f64..100.0, 2..200), l1 in 0.05f64..0.95, dl in 0.0f64..0.04) {
        let d = DrawMatrix::from_flat(xs.clone(), 1, 1.0, 0).unwrap();
        let (a, b) = credible_interval(&d, 0, l1).unwrap();
        let (c, e) = credible_interval(&d, 0, l1 + dl).unwrap();
        prop_assert!(a <= b);
        prop_assert!(c <= a && b <= e);
        let mut sorted = xs;
        sorted.sort_by(f64::total_cmp);
        prop_assert!(sorted[0] <= a && b <= *sorted.last().unwrap());
        prop_assert_eq!(empirical_quantile(&sorted, 0.0), sorted[0]);
    }

    #[test]
    fn inverse_gaussian_draws_are_positive_and_finite(mean in 1e-6f64..1e12, shape in 1e-6f64..1e6, seed in any::<u64>()) {
        let ig = InverseGaussian::new(mean, shape).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let x = ig.sample(&mut rng);
            prop_assert!(x > 0.0 && x.is_finite());
        }
    }
}
