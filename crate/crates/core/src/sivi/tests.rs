use super::*;
use crate::error::SiviError;
use crate::ndcore::{mean_and_stderr, DenseNet, RealArray, Rng};

fn linear(weight: f64, bias: f64) -> DenseNet {
    let mut net = DenseNet::zeros(&[1, 1]).unwrap();
    net.weights_mut(0).data_mut()[0] = weight;
    net.biases_mut(0).data_mut()[0] = bias;
    net
}

/// `mu(z) = lambda z`, unit conditional scale.
fn affine(lambda: f64) -> SiviFamily {
    SiviFamily::from_nets(linear(lambda, 0.0), linear(0.0, 0.0), 0.0).unwrap()
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (x - mean).powi(2) / var
}

fn variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

#[test]
fn identity_family_marginal_is_standard_normal() {
    let s = affine(0.0).sample_marginal(&mut Rng::new(1), 1_000_000).unwrap();
    assert!((variance(s.data()) - 1.0).abs() < 0.01);
}

#[test]
fn affine_marginal_variance() {
    let s = affine(0.03).sample_marginal(&mut Rng::new(2), 1_000_000).unwrap();
    assert!((variance(s.data()) - 1.0009).abs() < 0.005, "{}", variance(s.data()));
}

#[test]
fn full_tail_weight_draws_from_t5() {
    let fam = affine(0.0).with_tail(TailComponent::student_t5(1.0).unwrap()).unwrap();
    let s = fam.sample_marginal(&mut Rng::new(3), 1_000_000).unwrap();
    assert!((variance(s.data()) - 5.0 / 3.0).abs() < 0.05, "{}", variance(s.data()));
    let t5 = crate::dists::StudentT1D::new(5.0).unwrap();
    let est = fam.marginal_log_density_mc(&[1.3], 4, &mut Rng::new(0)).unwrap();
    assert!((est.log_density - t5.log_pdf(1.3)).abs() < 1e-14);
}

#[test]
fn tail_needs_one_dimension() {
    let mut rng = Rng::new(0);
    let fam = SiviFamily::new(
        FamilyShape {
            latent_dim: 2,
            dim: 2,
            width: 4,
            variance_floor: 0.0,
        },
        &mut rng,
    )
    .unwrap();
    assert!(fam.with_tail(TailComponent::student_t5(0.05).unwrap()).is_err());
}

#[test]
fn single_draw_estimate_matches_direct_evaluation() {
    let fam = affine(0.5);
    let est = fam.marginal_log_density_mc(&[0.0], 1, &mut Rng::new(9)).unwrap();
    let z1 = Rng::new(9).standard_normal();
    assert!((est.log_density - ln_normal(0.0, 0.5 * z1, 1.0)).abs() < 1e-14);
    assert!(!est.underflow);
}

#[test]
fn large_k_estimate_matches_closed_form_marginal() {
    let fam = affine(0.03);
    let mut rng = Rng::new(4);
    let reps: Vec<f64> = (0..10_000)
        .map(|_| fam.marginal_log_density_mc(&[0.0], 512, &mut rng).unwrap().log_density)
        .collect();
    let (m, _) = mean_and_stderr(&reps);
    assert!((m - ln_normal(0.0, 0.0, 1.0009)).abs() < 0.01);
}

#[test]
fn underflow_is_flagged() {
    let fam = affine(0.0);
    let est = fam.marginal_log_density_mc(&[60.0], 8, &mut Rng::new(0)).unwrap();
    assert!(est.underflow);
    assert_eq!(est.log_density, f64::NEG_INFINITY);
    let data = RealArray::matrix(2, 1, vec![0.0, 60.0]).unwrap();
    assert!(matches!(
        density_fit_objective(&fam, &data, 4, LatentSharing::Shared, &mut Rng::new(0)),
        Err(SiviError::ObjectiveUnderflow { index: 1 })
    ));
}

/// Paired streams: the K-atom estimate uses the first K of one shared latent draw.
fn paired_means(fam: &SiviFamily, x: f64, ks: &[usize], reps: usize, seed: u64) -> Vec<(f64, f64)> {
    let kmax = *ks.iter().max().unwrap();
    let mut rng = Rng::new(seed);
    let mut per_k = vec![Vec::with_capacity(reps); ks.len()];
    for _ in 0..reps {
        let z = rng.standard_normal_array(&[kmax, 1]);
        for (slot, &k) in per_k.iter_mut().zip(ks) {
            let bank = fam
                .latent_bank_from(RealArray::matrix(k, 1, z.data()[..k].to_vec()).unwrap())
                .unwrap();
            slot.push(fam.log_marginal_with_bank(&bank, &[x], &mut Vec::new()).log_density);
        }
    }
    per_k.iter().map(|v| mean_and_stderr(v)).collect()
}

#[test]
fn estimate_is_monotone_in_k() {
    let fam = affine(1.0);
    let ks = [1, 2, 8, 64];
    let means = paired_means(&fam, 1.5, &ks, 10_000, 11);
    for w in means.windows(2) {
        assert!(w[1].0 >= w[0].0 - 1e-3, "{means:?}");
    }
}

#[test]
fn jensen_gap_is_nonnegative_and_shrinks() {
    let lambda = 1.0;
    let fam = affine(lambda);
    let x = 1.5;
    let exact = ln_normal(x, 0.0, 1.0 + lambda * lambda);
    let means = paired_means(&fam, x, &[2, 8, 64], 10_000, 12);
    let gaps: Vec<f64> = means.iter().map(|(m, _)| exact - m).collect();
    for ((m, se), g) in means.iter().zip(&gaps) {
        assert!(*m <= exact + 3.0 * se, "{m} vs {exact}");
        assert!(*g > -3.0 * se);
    }
    assert!(gaps[2] < gaps[1] && gaps[1] < gaps[0], "{gaps:?}");
}

#[test]
fn variance_floor_examples() {
    let floored = SiviFamily::from_nets(linear(0.0, 0.0), linear(0.0, -10.0), 0.0025).unwrap();
    let z = RealArray::matrix(3, 1, vec![-1.0, 0.0, 2.0]).unwrap();
    for s in floored.enforce_variance_floor(&z).unwrap().data() {
        assert!((s - 0.05).abs() < 1e-6);
    }
    let free = SiviFamily::from_nets(linear(0.0, 0.0), linear(0.7, -0.3), 0.0).unwrap();
    let sig = free.enforce_variance_floor(&z).unwrap();
    for (s, z) in sig.data().iter().zip(z.data()) {
        assert_eq!(*s, (0.7 * z - 0.3f64).exp());
    }
    let unit = SiviFamily::from_nets(linear(0.0, 0.0), linear(0.0, 0.0), 0.0025).unwrap();
    let s = unit.enforce_variance_floor(&z).unwrap().data()[0];
    assert!(s >= 1.0 && (s - 1.00125).abs() < 1e-5, "{s}");
}

#[test]
fn variance_floor_holds_for_random_networks() {
    let floor = 0.05f64.powi(2);
    let mut rng = Rng::new(5);
    let mut fam = SiviFamily::new(
        FamilyShape {
            latent_dim: 2,
            dim: 2,
            width: 16,
            variance_floor: floor,
        },
        &mut rng,
    )
    .unwrap();
    let mut p = fam.params();
    let split = fam.mu_net().num_params();
    for v in &mut p[split..] {
        *v = *v * 3.0 - 0.5;
    }
    fam.set_params(&p).unwrap();
    let z = fam.draw_latents(&mut rng, 100_000);
    let sig = fam.enforce_variance_floor(&z).unwrap();
    let min = sig.data().iter().map(|s| s * s).fold(f64::INFINITY, f64::min);
    assert!(min >= floor - 1e-12);
}

#[test]
fn reparam_sample_identity() {
    let mut rng = Rng::new(6);
    let fam = SiviFamily::new(
        FamilyShape {
            latent_dim: 2,
            dim: 3,
            width: 8,
            variance_floor: 0.01,
        },
        &mut rng,
    )
    .unwrap();
    for s in fam.sample_reparam(&mut rng, 50).unwrap() {
        let kp = fam
            .kernel_params(&RealArray::matrix(1, 2, s.z.clone()).unwrap())
            .unwrap();
        for j in 0..3 {
            let t = kp.mu.data()[j] + kp.sigma.data()[j] * s.eps[j];
            assert!((t - s.theta[j]).abs() < 1e-12);
        }
        let lk = diag_normal_log_pdf(&s.theta, kp.mu.data(), kp.sigma.data());
        assert!((lk - s.log_kernel).abs() < 1e-10);
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central differences of `f` at `params`, all evaluations under the same seed.
fn check_gradient<F>(fam: &mut SiviFamily, f: F, seed: u64, tol: f64)
where
    F: Fn(&SiviFamily, &mut Rng) -> ObjectiveValue,
{
    let p0 = fam.params();
    let analytic = f(fam, &mut Rng::new(seed)).grad;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] = p0[i] + h;
        fam.set_params(&p).unwrap();
        let up = f(fam, &mut Rng::new(seed)).value;
        p[i] = p0[i] - h;
        fam.set_params(&p).unwrap();
        let down = f(fam, &mut Rng::new(seed)).value;
        let fd = (up - down) / (2.0 * h);
        let err = relative_error(analytic[i], fd);
        worst = worst.max(err);
        assert!(err < tol, "param {i}: analytic {} vs fd {fd}", analytic[i]);
    }
    fam.set_params(&p0).unwrap();
    assert!(worst < tol);
}

fn width8(latent: usize, dim: usize, floor: f64, seed: u64) -> SiviFamily {
    SiviFamily::new(
        FamilyShape {
            latent_dim: latent,
            dim,
            width: 8,
            variance_floor: floor,
        },
        &mut Rng::new(seed),
    )
    .unwrap()
}

#[test]
fn density_fit_gradient_matches_finite_differences() {
    let data = Rng::new(20).standard_normal_array(&[32, 2]);
    for (sharing, floor) in [(LatentSharing::PerDatum, 0.0), (LatentSharing::Shared, 0.0025)] {
        let mut fam = width8(2, 2, floor, 21);
        check_gradient(
            &mut fam,
            |f, r| density_fit_objective(f, &data, 8, sharing, r).unwrap(),
            22,
            1e-4,
        );
    }
}

#[test]
fn tail_mixture_gradient_matches_finite_differences() {
    let data = Rng::new(23).standard_normal_array(&[32, 1]);
    let mut fam = width8(1, 1, 0.0, 24)
        .with_tail(TailComponent::student_t5(0.05).unwrap())
        .unwrap();
    check_gradient(
        &mut fam,
        |f, r| density_fit_objective(f, &data, 8, LatentSharing::PerDatum, r).unwrap(),
        25,
        1e-4,
    );
}

fn conjugate(n_obs: usize, value: f64, dim: usize) -> ConjugateGaussianModel {
    ConjugateGaussianModel {
        prior_mean: vec![0.0; dim],
        prior_var: 1.0,
        noise_var: 1.0,
        data: RealArray::matrix(n_obs, dim, vec![value; n_obs * dim]).unwrap(),
    }
}

#[test]
fn posterior_gradient_matches_finite_differences() {
    let model = conjugate(3, 0.7, 3);
    for (k, sharing) in [
        (0, LatentSharing::Shared),
        (8, LatentSharing::Shared),
        (4, LatentSharing::PerDatum),
    ] {
        let mut fam = width8(2, 3, 0.001, 26);
        let cfg = PosteriorObjective {
            k,
            outer_samples: 4,
            sharing,
        };
        check_gradient(
            &mut fam,
            |f, r| posterior_objective(f, &model, &cfg, r).unwrap(),
            27,
            1e-4,
        );
    }
}

#[test]
fn k_zero_is_the_plain_elbo() {
    let model = conjugate(1, 1.0, 1);
    let fam = affine(0.4);
    let cfg = PosteriorObjective {
        k: 0,
        outer_samples: 1,
        sharing: LatentSharing::Shared,
    };
    let v = posterior_objective(&fam, &model, &cfg, &mut Rng::new(30))
        .unwrap()
        .value;
    let mut r = Rng::new(30);
    let z = r.standard_normal();
    let e = r.standard_normal();
    let theta = 0.4 * z + e;
    let (lp, _) = model.log_joint_and_grad(&[theta]).unwrap();
    assert!((v - (lp - ln_normal(theta, 0.4 * z, 1.0))).abs() < 1e-12);
}

#[test]
fn gradient_vanishes_when_family_equals_target() {
    let fam = affine(0.0);
    let mut rng = Rng::new(31);
    let grads: Vec<Vec<f64>> = (0..20)
        .map(|_| {
            let data = rng.standard_normal_array(&[1000, 1]);
            density_fit_objective(&fam, &data, 16, LatentSharing::PerDatum, &mut rng)
                .unwrap()
                .grad
        })
        .collect();
    for i in 0..fam.num_params() {
        let col: Vec<f64> = grads.iter().map(|g| g[i]).collect();
        let (m, se) = mean_and_stderr(&col);
        assert!(m.abs() <= 3.0 * se + 1e-12, "param {i}: {m} ± {se}");
    }
}

#[test]
fn stochastic_gradient_is_unbiased_for_the_mean_objective() {
    let data = Rng::new(40).standard_normal_array(&[16, 1]);
    let mut fam = SiviFamily::new(
        FamilyShape {
            latent_dim: 1,
            dim: 1,
            width: 3,
            variance_floor: 0.0,
        },
        &mut Rng::new(41),
    )
    .unwrap();
    // Zero biases put some pre-activations exactly on a ReLU kink; move to a generic point.
    let mut jitter = Rng::new(42);
    let p: Vec<f64> = fam
        .params()
        .iter()
        .map(|v| v + 0.1 * jitter.standard_normal())
        .collect();
    fam.set_params(&p).unwrap();
    let mean_objective = |f: &SiviFamily| -> f64 {
        (0..2000u64)
            .map(|s| {
                density_fit_objective(f, &data, 4, LatentSharing::PerDatum, &mut Rng::new(10_000 + s))
                    .unwrap()
                    .value
            })
            .sum::<f64>()
            / 2000.0
    };
    let grads: Vec<Vec<f64>> = (0..200u64)
        .map(|s| {
            density_fit_objective(&fam, &data, 4, LatentSharing::PerDatum, &mut Rng::new(s))
                .unwrap()
                .grad
        })
        .collect();
    let p0 = fam.params();
    let h = 1e-5;
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] += h;
        fam.set_params(&p).unwrap();
        let up = mean_objective(&fam);
        p[i] -= 2.0 * h;
        fam.set_params(&p).unwrap();
        let down = mean_objective(&fam);
        fam.set_params(&p0).unwrap();
        let fd = (up - down) / (2.0 * h);
        let col: Vec<f64> = grads.iter().map(|g| g[i]).collect();
        let (m, se) = mean_and_stderr(&col);
        assert!((m - fd).abs() <= 3.0 * se + 1e-6, "param {i}: {m} ± {se} vs {fd}");
    }
}

#[test]
fn finite_k_objective_at_zero_matches_population_value() {
    let theta_star = 0.03;
    let mut rng = Rng::new(50);
    let mut data = rng.standard_normal_array(&[10_000, 1]);
    for v in data.data_mut() {
        *v += theta_star;
    }
    let v = density_fit_objective(&affine(0.0), &data, 500, LatentSharing::PerDatum, &mut rng)
        .unwrap()
        .value;
    let population = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * (1.0 + theta_star * theta_star);
    assert!((v - population).abs() < 0.02, "{v} vs {population}");
}

fn posterior_fit(model: &ConjugateGaussianModel, seed: u64) -> (f64, f64) {
    let mut rng = Rng::new(seed);
    let mut fam = SiviFamily::new(
        FamilyShape {
            latent_dim: 1,
            dim: 1,
            width: 16,
            variance_floor: 0.0,
        },
        &mut rng,
    )
    .unwrap();
    let cfg = TrainConfig {
        iterations: 20_000,
        batch_size: 1,
        adam: crate::ndcore::AdamConfig::with_learning_rate(1e-3),
        early_stopping: None,
    };
    let obj = PosteriorObjective {
        k: 10,
        outer_samples: 64,
        sharing: LatentSharing::Shared,
    };
    let report = train_posterior(&mut fam, model, &obj, &cfg, &mut rng).unwrap();
    assert!(!report.diverged);
    let s = fam.sample_marginal(&mut rng, 100_000).unwrap();
    let (m, _) = mean_and_stderr(s.data());
    (m, variance(s.data()))
}

#[test]
fn conjugate_posterior_is_recovered() {
    let model = conjugate(1, 1.0, 1);
    let (mean, var) = model.posterior();
    assert!((mean[0] - 0.5).abs() < 1e-15 && (var - 0.5).abs() < 1e-15);
    let (m, v) = posterior_fit(&model, 60);
    assert!((m - 0.5).abs() < 0.02, "mean {m}");
    assert!((v - 0.5).abs() < 0.05, "var {v}");
}

#[test]
fn no_observations_recovers_the_prior() {
    let model = conjugate(0, 0.0, 1);
    let (m, v) = posterior_fit(&model, 61);
    assert!(m.abs() < 0.05, "mean {m}");
    assert!((v - 1.0).abs() < 0.1, "var {v}");
}

#[test]
fn density_fit_training_improves_heldout_objective() {
    let mut rng = Rng::new(70);
    let target = crate::dists::GaussianMixture::symmetric_bimodal();
    use crate::dists::Density;
    let train = target.sample(&mut rng, 4000).unwrap();
    let val = target.sample(&mut rng, 1000).unwrap();
    let mut fam = SiviFamily::new(
        FamilyShape {
            latent_dim: 1,
            dim: 1,
            width: 16,
            variance_floor: 0.0,
        },
        &mut rng,
    )
    .unwrap();
    let before = heldout_objective(&fam, &val, 32, 1).unwrap();
    let cfg = TrainConfig {
        iterations: 1500,
        batch_size: 64,
        adam: crate::ndcore::AdamConfig::with_learning_rate(1e-2),
        early_stopping: Some(EarlyStopping {
            every: 100,
            patience: 5,
            min_improvement: 1e-4,
        }),
    };
    let report = train_density_fit(&mut fam, &train, Some(&val), 32, LatentSharing::Shared, &cfg, &mut rng).unwrap();
    let after = heldout_objective(&fam, &val, 32, 1).unwrap();
    assert!(after > before + 0.5, "{before} -> {after}");
    assert!(report.best_validation.is_some());
}
