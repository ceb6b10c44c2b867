//! A mixing distribution given only by its quantile function.

use nalgebra::DMatrix;
use nvmix::density::{log_density_batch, DensityOptions};
use nvmix::distribution::prob;
use nvmix::mixtures::SupportHint;
use nvmix::{MixtureSpec, NvmModel, RqmcConfig};

fn main() -> nvmix::Result<()> {
    // W uniform on (1, 1 + p): a bounded mixing variable with no closed forms.
    let mix = MixtureSpec::blackbox("uniform", |u, p| 1.0 + p[0] * u, vec![2.0])?.with_support(SupportHint::Bounded);
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
    let model = NvmModel::centered(sigma, mix)?;
    let cfg = RqmcConfig::default();

    let r = prob(&[-1.0, -1.0], &[1.0, 2.0], &model, &cfg, 5)?;
    println!("P(-1 < X <= (1, 2)) = {:.5} ± {:.1e}", r.estimate, r.error_estimate);

    let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, -1.0, 4.0, 4.0]);
    for (i, r) in log_density_batch(&x, &model, &cfg, &DensityOptions::default(), 5)?.iter().enumerate() {
        println!("log f(x{i}) = {:.6} ± {:.1e}", r.estimate, r.error_estimate);
    }
    Ok(())
}
