//! Divergence and diagnostic estimators.
//!
//! Sampling TV uses the one-sided identity `TV = int (p - q)_+ = E_p[(1 - q/p)_+]`;
//! the integrand lies in `[0, 1]`, so it avoids the heavy-tailed ratio variance of
//! `1/2 E_p|1 - q/p|`.

mod branches;
mod curve;
mod grid;
mod sampling;

pub use branches::{branch_masses, mode_ratio, MIN_MODE_SAMPLES};
pub use curve::{empirical_objective_affine, gamma_distance, population_objective_affine, ObjectiveCurve};
pub use grid::{
    hellinger_from_values, hellinger_grid, tv_from_values, tv_grid, tv_grid_with_error, GridAxis, GridSpec,
};
pub use sampling::{kl_forward_from, kl_forward_mc, tv_sampling, tv_sampling_from, Estimate, KlEstimate};

/// Radius of the branch disks around the three-branch centers.
pub const BRANCH_RADIUS: f64 = 0.4;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::{Density, Gaussian, GaussianMixture, StudentT1D, THREE_BRANCH_CENTERS};
    use crate::error::SiviError;
    use crate::ndcore::{RealArray, Rng};
    use proptest::prelude::*;

    const GAUSS_TV_SHIFT3: f64 = 0.866_385_597_462_284;
    const GAUSS_HELLINGER_SHIFT3: f64 = 1.162_193_6;

    fn normal(mean: f64, var: f64) -> Gaussian {
        Gaussian::diagonal(vec![mean], vec![var]).unwrap()
    }

    fn line() -> GridSpec {
        GridSpec::line(-8.0, 8.0, 4000).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::line(0.0, 1.0, 1).is_err());
        assert!(GridSpec::line(1.0, 1.0, 10).is_err());
        let g = GridSpec::square(-2.0, 2.0, 200).unwrap();
        assert_eq!(g.num_cells(), 40_000);
        assert!((g.cell_volume() - 4e-4).abs() < 1e-15);
        let mut x = [0.0; 2];
        g.node(1, &mut x);
        assert!((x[0] + 1.99).abs() < 1e-12 && (x[1] + 1.97).abs() < 1e-12);
    }

    #[test]
    fn tv_grid_oracles() {
        let (a, b) = (normal(0.0, 1.0), normal(3.0, 1.0));
        assert_eq!(tv_grid(|x| a.density(x), |x| a.density(x), &line()).unwrap(), 0.0);
        let tv = tv_grid(|x| a.density(x), |x| b.density(x), &line()).unwrap();
        assert!((tv - GAUSS_TV_SHIFT3).abs() < 1e-3, "{tv}");
        let box1 = |x: &[f64]| if (0.0..1.0).contains(&x[0]) { 1.0 } else { 0.0 };
        let box2 = |x: &[f64]| if (2.0..3.0).contains(&x[0]) { 1.0 } else { 0.0 };
        let tv = tv_grid(box1, box2, &GridSpec::line(-1.0, 4.0, 5000).unwrap()).unwrap();
        assert!((tv - 1.0).abs() < 1e-3);
    }

    #[test]
    fn non_finite_and_negative_values_rejected() {
        let g = GridSpec::line(-1.0, 1.0, 10).unwrap();
        assert!(matches!(
            tv_grid(|_| f64::NAN, |_| 1.0, &g),
            Err(SiviError::NonFiniteDensity { index: 0 })
        ));
        assert!(matches!(
            hellinger_grid(|_| 1.0, |x| x[0], &g),
            Err(SiviError::NegativeDensity { .. })
        ));
    }

    #[test]
    fn richardson_error_bound_is_small_and_honest() {
        let (a, b) = (normal(0.0, 1.0), normal(3.0, 1.0));
        let (tv, err) = tv_grid_with_error(
            |x| a.density(x),
            |x| b.density(x),
            &GridSpec::line(-8.0, 8.0, 200).unwrap(),
        )
        .unwrap();
        assert!(err < 1e-3);
        assert!((tv - GAUSS_TV_SHIFT3).abs() < 3.0 * err + 1e-6, "{tv} ± {err}");
    }

    #[test]
    fn summation_order_is_irrelevant() {
        let mut rng = Rng::new(1);
        let p: Vec<f64> = (0..40_000).map(|_| rng.uniform() * 1e3).collect();
        let q: Vec<f64> = (0..40_000).map(|_| rng.uniform() * 1e-3).collect();
        let fwd = tv_from_values(&p, &q, 1e-4).unwrap();
        let (pr, qr): (Vec<f64>, Vec<f64>) = (p.iter().rev().copied().collect(), q.iter().rev().copied().collect());
        let rev = tv_from_values(&pr, &qr, 1e-4).unwrap();
        assert!((fwd - rev).abs() <= 1e-12 * fwd);
    }

    #[test]
    fn tv_sampling_oracles() {
        let (a, b) = (normal(0.0, 1.0), normal(3.0, 1.0));
        let same = tv_sampling(&a, |x| a.log_density_unchecked(x), 10_000, &mut Rng::new(2)).unwrap();
        assert!(same.value.abs() <= 3.0 * same.stderr + 1e-15);
        let est = tv_sampling(&a, |x| b.log_density_unchecked(x), 100_000, &mut Rng::new(3)).unwrap();
        assert!((est.value - GAUSS_TV_SHIFT3).abs() < 0.01, "{est:?}");
    }

    #[test]
    fn zero_density_at_own_sample_is_an_error() {
        let s = RealArray::matrix(3, 1, vec![0.0, 5.0, 1.0]).unwrap();
        let p = |x: &[f64]| if x[0] > 2.0 { f64::NEG_INFINITY } else { 0.0 };
        assert!(matches!(
            tv_sampling_from(&s, p, |_| 0.0),
            Err(SiviError::ZeroDensityAtSample { index: 1 })
        ));
    }

    #[test]
    fn sampling_and_grid_tv_agree_on_a_mixture_pair() {
        let p = GaussianMixture::symmetric_bimodal();
        let q = normal(0.5, 4.0);
        let (grid_tv, err) = tv_grid_with_error(|x| p.density(x), |x| q.density(x), &line()).unwrap();
        let est = tv_sampling(&p, |x| q.log_density_unchecked(x), 100_000, &mut Rng::new(4)).unwrap();
        assert!(
            (grid_tv - est.value).abs() <= 3.0 * (est.stderr + err),
            "{grid_tv} vs {est:?}"
        );
    }

    #[test]
    fn kl_oracles() {
        let (a, b) = (normal(1.0, 1.0), normal(0.0, 1.0));
        let same = kl_forward_mc(&a, |x| a.log_density_unchecked(x), 10_000, &mut Rng::new(5)).unwrap();
        assert!(same.value.abs() <= 3.0 * same.stderr + 1e-15);
        let est = kl_forward_mc(&a, |x| b.log_density_unchecked(x), 100_000, &mut Rng::new(6)).unwrap();
        assert!((est.value - 0.5).abs() < 0.01, "{est:?}");
        assert!(est.underflow_at.is_none());
    }

    #[test]
    fn kl_underflow_is_flagged_with_the_sample() {
        let s = RealArray::matrix(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let est = kl_forward_from(&s, |_| 0.0, |x| if x[0] > 0.5 { f64::NEG_INFINITY } else { 0.0 }).unwrap();
        assert_eq!(est.value, f64::INFINITY);
        assert_eq!(est.underflow_at, Some(vec![1.0]));
    }

    /// `KL(t3 || N(0, s^2))` by trapezoidal quadrature on `[-L, L]` plus the analytic
    /// tail contribution of the quadratic term.
    fn kl_t3_gauss_quadrature(var: f64) -> f64 {
        let t = StudentT1D::new(3.0).unwrap();
        let g = normal(0.0, var);
        let (l, n) = (2000.0, 4_000_000);
        let h = 2.0 * l / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let x = -l + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let lp = t.log_pdf(x);
            s += w * lp.exp() * (lp - g.log_density_unchecked(&[x]));
        }
        s * h
    }

    #[test]
    fn student_t_against_gaussians_keeps_a_gap() {
        let t = StudentT1D::new(3.0).unwrap();
        let mut best = f64::INFINITY;
        for i in 0..=25 {
            let sd = 0.5 + 0.1 * i as f64;
            let g = normal(0.0, sd * sd);
            let est = kl_forward_mc(&t, |x| g.log_density_unchecked(x), 100_000, &mut Rng::new(7)).unwrap();
            best = best.min(est.value);
        }
        let oracle = (0..=25)
            .map(|i| kl_t3_gauss_quadrature((0.5 + 0.1 * i as f64).powi(2)))
            .fold(f64::INFINITY, f64::min);
        assert!(oracle > 0.05 && best > 0.05, "{best} / {oracle}");
    }

    #[test]
    fn hellinger_oracles() {
        let (a, b) = (normal(0.0, 1.0), normal(3.0, 1.0));
        assert_eq!(
            hellinger_grid(|x| a.density(x), |x| a.density(x), &line()).unwrap(),
            0.0
        );
        let h = hellinger_grid(|x| a.density(x), |x| b.density(x), &line()).unwrap();
        assert!((h - GAUSS_HELLINGER_SHIFT3).abs() < 1e-3, "{h}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn divergence_ordering(m1 in -3.0f64..3.0, m2 in -3.0f64..3.0, v1 in 0.2f64..4.0, v2 in 0.2f64..4.0) {
            let (a, b) = (normal(m1, v1), normal(m2, v2));
            let grid = GridSpec::line(-20.0, 20.0, 8000).unwrap();
            let tv = tv_grid(|x| a.density(x), |x| b.density(x), &grid).unwrap();
            let h = hellinger_grid(|x| a.density(x), |x| b.density(x), &grid).unwrap();
            let kl = crate::dists::gaussian_kl(&a, &b).unwrap();
            let tol = 1e-6;
            prop_assert!(h * h <= 2.0 * tv + tol);
            prop_assert!(tv <= h * 2f64.sqrt() + tol);
            prop_assert!(tv <= (kl / 2.0).sqrt() + tol);
            prop_assert!(tv <= 1.0 + tol && h <= 2f64.sqrt() + tol);
        }

        #[test]
        fn gamma_distance_is_a_metric(
            a in proptest::collection::vec(-5.0f64..5.0, 11),
            b in proptest::collection::vec(-5.0f64..5.0, 11),
            c in proptest::collection::vec(-5.0f64..5.0, 11),
        ) {
            let grid = ObjectiveCurve::uniform_grid(-1.0, 1.0, 11);
            let mk = |v: &Vec<f64>| ObjectiveCurve { grid: grid.clone(), values: v.clone() };
            let (ca, cb, cc) = (mk(&a), mk(&b), mk(&c));
            let ab = gamma_distance(&ca, &cb).unwrap();
            prop_assert_eq!(ab, gamma_distance(&cb, &ca).unwrap());
            prop_assert_eq!(gamma_distance(&ca, &ca).unwrap(), 0.0);
            prop_assert!(gamma_distance(&ca, &cc).unwrap() <= ab + gamma_distance(&cb, &cc).unwrap() + 1e-12);
        }
    }

    #[test]
    fn mode_ratio_cases() {
        let sym: Vec<f64> = (0..2000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(mode_ratio(&sym).unwrap(), 1.0);
        let pos = vec![2.0; 1000];
        let r = mode_ratio(&pos).unwrap();
        assert!(r.is_finite() && r > 1000.0);
        assert!(mode_ratio(&[1.0; 10]).is_err());
        let s = GaussianMixture::symmetric_bimodal()
            .sample(&mut Rng::new(8), 100_000)
            .unwrap();
        let r = mode_ratio(s.data()).unwrap();
        assert!((0.95..=1.05).contains(&r), "{r}");
    }

    #[test]
    fn branch_masses_of_the_target() {
        let s = GaussianMixture::three_branch()
            .sample(&mut Rng::new(9), 100_000)
            .unwrap();
        for m in branch_masses(&s, &THREE_BRANCH_CENTERS, BRANCH_RADIUS).unwrap() {
            assert!((m - 1.0 / 3.0).abs() < 0.01, "{m}");
        }
    }

    #[test]
    fn branch_masses_edge_cases() {
        let c = THREE_BRANCH_CENTERS;
        let at_one = RealArray::matrix(5, 2, [c[0]; 5].concat()).unwrap();
        assert_eq!(branch_masses(&at_one, &c, BRANCH_RADIUS).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            branch_masses(&at_one, &[[0.0, 0.0], [0.5, 0.0]], BRANCH_RADIUS),
            Err(SiviError::OverlappingRegions { first: 0, second: 1 })
        ));
    }

    /// Area of a disk clipped to `[-1, 1]^2`, by a fine midpoint lattice.
    fn clipped_disk_area(c: [f64; 2], r: f64) -> f64 {
        let n = 4000;
        let h = 2.0 / n as f64;
        let mut count = 0usize;
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h);
                if (x - c[0]).powi(2) + (y - c[1]).powi(2) <= r * r {
                    count += 1;
                }
            }
        }
        count as f64 * h * h
    }

    #[test]
    fn branch_masses_of_uniform_points_match_clipped_areas() {
        let mut rng = Rng::new(10);
        let n = 200_000;
        let data: Vec<f64> = (0..2 * n).map(|_| 2.0 * rng.uniform() - 1.0).collect();
        let s = RealArray::matrix(n, 2, data).unwrap();
        let masses = branch_masses(&s, &THREE_BRANCH_CENTERS, BRANCH_RADIUS).unwrap();
        for (m, c) in masses.iter().zip(THREE_BRANCH_CENTERS) {
            let expected = clipped_disk_area(c, BRANCH_RADIUS) / 4.0;
            let se = (expected * (1.0 - expected) / n as f64).sqrt();
            assert!((m - expected).abs() < 4.0 * se, "{m} vs {expected}");
            // Unclipped area ratio pi r^2 / 4 bounds every clipped mass from above.
            assert!(*m < std::f64::consts::PI * 0.16 / 4.0);
        }
    }

    #[test]
    fn gamma_distance_cases() {
        let grid = ObjectiveCurve::default_grid();
        assert_eq!(grid.len(), 601);
        let a = ObjectiveCurve::tabulate(grid.clone(), |t| t.sin());
        let b = ObjectiveCurve::tabulate(grid.clone(), |t| t.sin() - 0.7);
        assert_eq!(gamma_distance(&a, &a).unwrap(), 0.0);
        assert!((gamma_distance(&a, &b).unwrap() - 0.7).abs() < 1e-12);
        let c = ObjectiveCurve::tabulate(ObjectiveCurve::uniform_grid(-3.0, 3.0, 600), |t| t);
        assert!(matches!(gamma_distance(&a, &c), Err(SiviError::GridMismatch)));
    }

    #[test]
    fn population_objective_cases() {
        assert!((population_objective_affine(0.0, 0.0) + 1.418_938_533).abs() < 1e-8);
        for l in [0.1, 0.7, 2.0] {
            assert_eq!(
                population_objective_affine(l, 0.03),
                population_objective_affine(-l, 0.03)
            );
        }
        let curve = ObjectiveCurve::tabulate(ObjectiveCurve::default_grid(), |l| population_objective_affine(l, 0.03));
        assert!(
            (curve.argmax().abs() - 0.03).abs() <= 0.01 + 1e-12,
            "{}",
            curve.argmax()
        );
    }

    #[test]
    fn empirical_affine_curve_approaches_population() {
        let (n, k) = (10_000, 500);
        let mut rng = Rng::new(11);
        let data: Vec<f64> = (0..n).map(|_| 0.03 + rng.standard_normal()).collect();
        let latents: Vec<f64> = (0..n * k).map(|_| rng.standard_normal()).collect();
        let grid = ObjectiveCurve::uniform_grid(-3.0, 3.0, 61);
        let emp = ObjectiveCurve::tabulate(grid.clone(), |l| empirical_objective_affine(l, &data, &latents, k));
        let pop = ObjectiveCurve::tabulate(grid, |l| population_objective_affine(l, 0.03));
        assert!(gamma_distance(&emp, &pop).unwrap() < 0.05);
    }
}
