//! Plain and log-space RQMC estimates of integrals over the unit cube.

use nvmix::rqmc::{rqmc_estimate, rqmc_log_estimate};
use nvmix::RqmcConfig;

fn main() -> nvmix::Result<()> {
    let cfg = RqmcConfig::default().with_tol(1e-6);

    // ∫ u1 u2 u3 du = 1/8
    let r = rqmc_estimate(|u: &[f64]| u.iter().product(), 3, &cfg, 42)?;
    println!("product integral: {:.8} ± {:.1e} (exact 0.125), n = {}", r.estimate, r.error_estimate, r.n_per_randomization);

    // A tiny integrand is handled on the log scale: log ∫ exp(-5000 - u1) du.
    let log_r = rqmc_log_estimate(|u: &[f64]| -5000.0 - u[0], 1, &cfg, 42)?;
    let exact = -5000.0 + (1.0 - (-1f64).exp()).ln();
    println!("log integral: {:.8} (exact {exact:.8})", log_r.estimate);
    let naive = rqmc_estimate(|u: &[f64]| (-5000.0 - u[0]).exp(), 1, &cfg, 42)?;
    println!("naive estimate underflows to {}", naive.estimate);
    Ok(())
}
