//! Multivariate t probabilities, with and without variable reordering.

use nalgebra::DMatrix;
use nvmix::distribution::{prob, prob_with, ProbOptions};
use nvmix::{MixtureSpec, NvmModel, RqmcConfig};

fn main() -> nvmix::Result<()> {
    let cfg = RqmcConfig::default();

    // Orthant probability: 1/4 + asin(rho)/(2 pi) for every normal variance mixture.
    let rho: f64 = 0.5;
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
    for nu in [1.0, 4.0, 20.0] {
        let model = NvmModel::centered(sigma.clone(), MixtureSpec::inverse_gamma(nu)?)?;
        let r = prob(&[f64::NEG_INFINITY; 2], &[0.0, 0.0], &model, &cfg, 1)?;
        println!("nu = {nu:>4}: {:.5} (exact {:.5})", r.estimate, 0.25 + rho.asin() / (2.0 * std::f64::consts::PI));
    }

    // A 20-dimensional box at a tighter tolerance; reordering lowers the work needed.
    let cfg = cfg.with_tol(1e-4);
    let d = 20;
    let sigma = DMatrix::from_fn(d, d, |i, j| 0.6f64.powi((i as i32 - j as i32).abs()));
    let upper: Vec<f64> = (0..d).map(|i| 0.5 + 0.2 * i as f64).collect();
    let lower = vec![f64::NEG_INFINITY; d];
    let model = NvmModel::centered(sigma, MixtureSpec::inverse_gamma(3.0)?)?;
    for reorder in [false, true] {
        let r = prob_with(&lower, &upper, &model, &cfg, 7, ProbOptions { reorder, antithetic: true })?;
        println!(
            "d = {d}, reorder = {reorder:<5}: {:.5} ± {:.1e} using {} points per randomization",
            r.estimate, r.error_estimate, r.n_per_randomization
        );
    }
    Ok(())
}
