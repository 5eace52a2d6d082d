//! Bayesian logistic regression, the Laplace baseline and credible-ellipsoid
//! coverage accounting.

mod coverage;
mod laplace;
mod model;

pub use coverage::{
    binomial_band, coverage_study, fit_sivi_posterior, sivi_posterior_moments, Approximator, CoverageReport,
    ReplicationOutcome, SiviPosteriorConfig, CREDIBLE_LEVEL, MIN_MOMENT_SAMPLES,
};
pub use laplace::{
    ellipsoid_covers, empirical_moments, laplace_fit, within_credible_level, GaussianApprox, MAX_HALVINGS,
    NEWTON_MAX_ITERATIONS, NEWTON_TOLERANCE,
};
pub use model::{
    generate_data, sigmoid, softplus, Dataset, LinearGaussianPosterior, LogisticModel, LogisticPosterior,
    SmoothLogPosterior,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::chi_squared_quantile;
    use crate::ndcore::linalg::Cholesky;
    use crate::ndcore::{DenseNet, RealArray, Rng};
    use crate::sivi::{LogJoint, SiviFamily};

    fn dataset(d: usize, n: usize, seed: u64) -> (LogisticModel, Dataset) {
        let model = LogisticModel::standard(d);
        let data = generate_data(&model, n, &mut Rng::new(seed));
        (model, data)
    }

    #[test]
    fn labels_are_balanced_at_zero_parameter() {
        let model = LogisticModel {
            theta_star: vec![0.0; 3],
            prior_var: 25.0,
        };
        let data = generate_data(&model, 10_000, &mut Rng::new(1));
        let mean = data.y.iter().sum::<f64>() / 1e4;
        assert!((mean - 0.5).abs() < 3.0 * (0.25f64 / 1e4).sqrt());
    }

    #[test]
    fn link_probability_at_unit_covariates() {
        let model = LogisticModel::standard(5);
        let eta: f64 = model.theta_star.iter().sum();
        assert!((sigmoid(eta) - 0.622_459_331).abs() < 1e-8);
        assert!((softplus(-800.0)).abs() < 1e-300 && (softplus(800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic_and_nested() {
        let (_, a) = dataset(5, 200, 3);
        let (_, b) = dataset(5, 200, 3);
        assert_eq!(a, b);
        let (_, c) = dataset(5, 50, 3);
        assert_eq!(c.x.data(), &a.x.data()[..250]);
        assert_eq!(c.y, a.y[..50]);
    }

    #[test]
    fn prior_only_derivatives() {
        let (model, data) = dataset(4, 0, 0);
        let (_, g, h) = LogisticPosterior {
            model: &model,
            data: &data,
        }
        .value_grad_hessian(&[0.0; 4]);
        assert!(g.iter().all(|v| *v == 0.0));
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(h[a * 4 + b], if a == b { -1.0 / 25.0 } else { 0.0 });
            }
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let (model, data) = dataset(5, 300, 4);
        let post = LogisticPosterior {
            model: &model,
            data: &data,
        };
        let mut rng = Rng::new(5);
        for _ in 0..5 {
            let theta: Vec<f64> = (0..5).map(|_| 0.5 * rng.standard_normal()).collect();
            let (_, g, h) = post.value_grad_hessian(&theta);
            let step = 1e-5;
            for j in 0..5 {
                let mut up = theta.clone();
                up[j] += step;
                let mut dn = theta.clone();
                dn[j] -= step;
                let (vu, gu, _) = post.value_grad_hessian(&up);
                let (vd, gd, _) = post.value_grad_hessian(&dn);
                assert!(rel(g[j], (vu - vd) / (2.0 * step)) < 1e-6);
                for a in 0..5 {
                    assert!(rel(h[a * 5 + j], (gu[a] - gd[a]) / (2.0 * step)) < 1e-5);
                }
            }
            let (v2, g2) = post.log_joint_and_grad(&theta).unwrap();
            let (v, _, _) = post.value_grad_hessian(&theta);
            assert_eq!((v, &g), (v2, &g2));
        }
    }

    #[test]
    fn hessian_is_negative_definite() {
        let (model, data) = dataset(5, 200, 6);
        let post = LogisticPosterior {
            model: &model,
            data: &data,
        };
        let mut rng = Rng::new(7);
        for _ in 0..100 {
            let theta: Vec<f64> = (0..5).map(|_| 3.0 * rng.standard_normal()).collect();
            let (_, _, h) = post.value_grad_hessian(&theta);
            let neg: Vec<f64> = h.iter().map(|v| -v).collect();
            assert!(Cholesky::new(&neg, 5).is_ok());
        }
    }

    #[test]
    fn laplace_without_data_is_the_prior() {
        let (model, data) = dataset(5, 0, 0);
        let a = laplace_fit(&LogisticPosterior {
            model: &model,
            data: &data,
        })
        .unwrap();
        assert!(a.mean.iter().all(|m| *m == 0.0));
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(a.covariance[i * 5 + j], if i == j { 25.0 } else { 0.0 });
            }
        }
    }

    /// Gauss-Jordan inverse, independent of the Cholesky path.
    fn gauss_jordan_inverse(a: &[f64], n: usize) -> Vec<f64> {
        let mut m = a.to_vec();
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            inv[i * n + i] = 1.0;
        }
        for c in 0..n {
            let p = (c..n)
                .max_by(|&x, &y| m[x * n + c].abs().total_cmp(&m[y * n + c].abs()))
                .unwrap();
            for k in 0..n {
                m.swap(c * n + k, p * n + k);
                inv.swap(c * n + k, p * n + k);
            }
            let piv = m[c * n + c];
            for k in 0..n {
                m[c * n + k] /= piv;
                inv[c * n + k] /= piv;
            }
            for r in 0..n {
                if r != c {
                    let f = m[r * n + c];
                    for k in 0..n {
                        m[r * n + k] -= f * m[c * n + k];
                        inv[r * n + k] -= f * inv[c * n + k];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn laplace_recovers_conjugate_posterior() {
        let theta_star = [0.3, -0.2, 0.5];
        let data = LinearGaussianPosterior::generate(&theta_star, 40, &mut Rng::new(8));
        let post = LinearGaussianPosterior {
            prior_var: 25.0,
            data: &data,
        };
        let fit = laplace_fit(&post).unwrap();
        let mut prec = vec![0.0; 9];
        let mut xty = [0.0; 3];
        for (x, y) in data.x.row_iter().zip(&data.y) {
            for a in 0..3 {
                xty[a] += x[a] * y;
                for b in 0..3 {
                    prec[a * 3 + b] += x[a] * x[b];
                }
            }
        }
        for a in 0..3 {
            prec[a * 4] += 1.0 / 25.0;
        }
        let cov = gauss_jordan_inverse(&prec, 3);
        for a in 0..3 {
            let m: f64 = (0..3).map(|b| cov[a * 3 + b] * xty[b]).sum();
            assert!((fit.mean[a] - m).abs() < 1e-8);
            for b in 0..3 {
                assert!((fit.covariance[a * 3 + b] - cov[a * 3 + b]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn laplace_mode_is_near_truth_and_deterministic() {
        let model = LogisticModel::standard(5);
        let root = Rng::new(9);
        let mut close = 0;
        for r in 0..100 {
            let data = generate_data(&model, 300, &mut root.split(r));
            let post = LogisticPosterior {
                model: &model,
                data: &data,
            };
            let a = laplace_fit(&post).unwrap();
            if r == 0 {
                assert_eq!(a, laplace_fit(&post).unwrap());
            }
            let ok = (0..5).all(|j| (a.mean[j] - 0.1).abs() <= 3.0 * a.covariance[j * 6].sqrt());
            close += ok as usize;
        }
        assert!(close >= 95, "{close}");
    }

    #[test]
    fn ellipsoid_membership() {
        let a = GaussianApprox::new(vec![0.0; 5], crate::ndcore::linalg::identity(5)).unwrap();
        assert!(ellipsoid_covers(&a, &[0.0; 5], 0.95).unwrap());
        let q = chi_squared_quantile(5.0, 0.95);
        assert!(within_credible_level(q, 5, 0.95));
        assert!(!within_credible_level(q * (1.0 + 1e-12), 5, 0.95));
        let far = [12f64.sqrt(), 0.0, 0.0, 0.0, 0.0];
        assert!(!ellipsoid_covers(&a, &far, 0.95).unwrap());
        assert!(GaussianApprox::new(vec![0.0; 2], vec![1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(GaussianApprox::new(vec![0.0; 2], vec![1.0, 0.1, 0.2, 1.0]).is_err());
    }

    #[test]
    fn exact_conjugate_coverage_is_calibrated() {
        let model = LogisticModel::standard(5);
        let rep = coverage_study(&model, 300, 100, &Approximator::ExactConjugate, &Rng::new(10)).unwrap();
        assert!(
            rep.coverage >= rep.band.0 && rep.coverage <= rep.band.1,
            "{}",
            rep.coverage
        );
        assert_eq!(rep.failures, 0);
    }

    #[test]
    fn single_replication_coverage_is_binary() {
        let model = LogisticModel::standard(5);
        let rep = coverage_study(&model, 100, 1, &Approximator::Laplace, &Rng::new(11)).unwrap();
        assert!(rep.coverage == 0.0 || rep.coverage == 1.0);
    }

    #[test]
    fn laplace_coverage_near_nominal() {
        let model = LogisticModel::standard(5);
        let rep = coverage_study(&model, 300, 100, &Approximator::Laplace, &Rng::new(12)).unwrap();
        assert!((0.89..=0.99).contains(&rep.coverage), "{}", rep.coverage);
    }

    #[test]
    fn moments_of_a_fixed_standard_normal_family() {
        let d = 3;
        let fam = SiviFamily::from_nets(
            DenseNet::zeros(&[d, d]).unwrap(),
            DenseNet::zeros(&[d, d]).unwrap(),
            0.0,
        )
        .unwrap();
        let n = 100_000;
        let m = sivi_posterior_moments(&fam, n, &mut Rng::new(13)).unwrap();
        let tol = 3.0 / (n as f64).sqrt();
        for a in 0..d {
            assert!(m.mean[a].abs() < tol);
            for b in 0..d {
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((m.covariance[a * d + b] - target).abs() < 2.0 * tol);
            }
        }
        assert!(sivi_posterior_moments(&fam, 10, &mut Rng::new(0)).is_err());
        let degenerate = RealArray::matrix(200, 2, vec![1.0; 400]).unwrap();
        assert!(empirical_moments(&degenerate, 100).is_err());
    }
}
