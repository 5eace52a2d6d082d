use std::f64::consts::PI;

use super::config::ExperimentId;
use super::record::{params, read_csv, write_csv, ExperimentRecord};
use crate::dists::{normal_cdf, Density, Gaussian};
use crate::error::Result;
use crate::metrics::{hellinger_grid, kl_forward_mc, tv_grid, tv_sampling, GridSpec};
use crate::ndcore::Rng;
use crate::sivi::{density_fit_objective, FamilyShape, LatentSharing, SiviFamily};
use crate::theory::{branch_bound, BranchBoundInput};

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> SelftestCheck {
    SelftestCheck { name, passed, detail }
}

fn divergence_oracles() -> Result<Vec<SelftestCheck>> {
    let a = Gaussian::diagonal(vec![0.0], vec![1.0])?;
    let b = Gaussian::diagonal(vec![3.0], vec![1.0])?;
    let c = Gaussian::diagonal(vec![1.0], vec![1.0])?;
    let line = GridSpec::line(-10.0, 13.0, 8000)?;
    let tv_exact = 2.0 * normal_cdf(1.5) - 1.0;
    let h_exact = (2.0 * (1.0 - (-9.0f64 / 8.0).exp())).sqrt();

    let tv = tv_grid(|x| a.density(x), |x| b.density(x), &line)?;
    let mut rng = Rng::new(11);
    let tvs = tv_sampling(&a, |x| b.log_density_unchecked(x), 100_000, &mut rng)?;
    let kl = kl_forward_mc(&a, |x| c.log_density_unchecked(x), 100_000, &mut rng)?;
    let h = hellinger_grid(|x| a.density(x), |x| b.density(x), &line)?;
    Ok(vec![
        check(
            "tv_grid_gaussian_shift",
            (tv - tv_exact).abs() < 1e-3,
            format!("{tv:.6} vs {tv_exact:.6}"),
        ),
        check(
            "tv_sampling_gaussian_shift",
            (tvs.value - tv_exact).abs() < 3.0 * tvs.stderr,
            format!("{:.5} ± {:.5} vs {tv_exact:.6}", tvs.value, tvs.stderr),
        ),
        check(
            "kl_mc_gaussian_shift",
            (kl.value - 0.5).abs() < 3.0 * kl.stderr,
            format!("{:.5} ± {:.5} vs 0.5", kl.value, kl.stderr),
        ),
        check(
            "hellinger_grid_gaussian_shift",
            (h - h_exact).abs() < 1e-3,
            format!("{h:.6} vs {h_exact:.6}"),
        ),
    ])
}

fn gradient_check() -> Result<SelftestCheck> {
    let mut rng = Rng::new(5);
    let fam = SiviFamily::new(
        FamilyShape {
            latent_dim: 2,
            dim: 2,
            width: 6,
            variance_floor: 0.01,
        },
        &mut rng,
    )?;
    let data = rng.standard_normal_array(&[5, 2]);
    let seed = 99;
    let value = |f: &SiviFamily| density_fit_objective(f, &data, 4, LatentSharing::PerDatum, &mut Rng::new(seed));
    let analytic = value(&fam)?.grad;
    let base = fam.params();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in (0..base.len()).step_by(7) {
        let mut f = fam.clone();
        let mut p = base.clone();
        p[i] = base[i] + h;
        f.set_params(&p)?;
        let up = value(&f)?.value;
        p[i] = base[i] - h;
        f.set_params(&p)?;
        let down = value(&f)?.value;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-3));
    }
    Ok(check(
        "density_fit_gradient_fd",
        worst < 1e-4,
        format!("max relative error {worst:.2e}"),
    ))
}

fn affine_objective_check() -> SelftestCheck {
    // population objective of N(0, 1 + l^2) against N(t, 1) has its maximizer at |l| = t
    let t: f64 = 0.3;
    let f = |l: f64| crate::metrics::population_objective_affine(l, t);
    let ok = f(t) > f(t + 0.01) && f(t) > f(t - 0.01);
    let exact = -0.5 * (2.0 * PI * (1.0 + t * t)).ln() - 0.5;
    check(
        "affine_population_objective",
        ok && (f(t) - exact).abs() < 1e-12,
        format!("L({t}) = {:.9}", f(t)),
    )
}

fn csv_round_trip() -> Result<SelftestCheck> {
    let recs = vec![ExperimentRecord::new(
        ExperimentId::Exp1,
        Some(1),
        params([("W", 8usize.into())]),
        "tv_grid",
        0.1 + 0.2,
    )
    .with_stderr(1e-9)];
    let mut buf = Vec::new();
    write_csv(&recs, &mut buf)?;
    let back = read_csv(buf.as_slice())?;
    Ok(check("csv_round_trip", back == recs, format!("{} bytes", buf.len())))
}

fn branch_bound_monotone() -> SelftestCheck {
    let b = |a: f64| {
        branch_bound(&BranchBoundInput {
            separation: a,
            window: 2.0,
            scale: 0.05,
            variance_floor: 0.01,
        })
    };
    let ok = b(1.0) >= b(1.4) && b(1.4) >= b(2.0);
    check(
        "branch_bound_monotone_in_separation",
        ok,
        format!("{:.3e} {:.3e} {:.3e}", b(1.0), b(1.4), b(2.0)),
    )
}

/// Fast oracle and invariant checks covering the numerical core.
pub fn run_selftest() -> Result<Vec<SelftestCheck>> {
    let mut out = divergence_oracles()?;
    out.push(gradient_check()?);
    out.push(affine_objective_check());
    out.push(csv_round_trip()?);
    out.push(branch_bound_monotone());
    Ok(out)
}
