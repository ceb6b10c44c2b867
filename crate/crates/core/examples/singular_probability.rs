//! Probabilities under a rank-deficient scale matrix.

use nalgebra::DMatrix;
use nvmix::distribution::prob;
use nvmix::special::norm_cdf;
use nvmix::{MixtureSpec, NvmModel, RqmcConfig};

fn main() -> nvmix::Result<()> {
    // X1 = X2 = Z
    let model = NvmModel::centered(DMatrix::from_element(2, 2, 1.0), MixtureSpec::constant(1.0)?)?;
    println!("rank {} of {}", model.factor.rank, model.dim());
    let lo = [f64::NEG_INFINITY; 2];
    let cfg = RqmcConfig::default();
    let r = prob(&lo, &[0.0, 0.0], &model, &cfg, 1)?;
    println!("P(X1 <= 0, X2 <= 0)  = {:.5} (exact 0.5)", r.estimate);
    let r = prob(&lo, &[0.0, -1.0], &model, &cfg, 1)?;
    println!("P(X1 <= 0, X2 <= -1) = {:.5} (exact {:.5})", r.estimate, norm_cdf(-1.0));

    // Three t margins driven by two factors.
    let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.6, 0.8, 0.8, 0.6]);
    let model = NvmModel::centered(&a * a.transpose(), MixtureSpec::inverse_gamma(4.0)?)?;
    let r = prob(&[f64::NEG_INFINITY; 3], &[1.0, 0.5, 0.0], &model, &cfg, 3)?;
    println!("rank-2 t probability: {:.5} ± {:.1e}", r.estimate, r.error_estimate);
    Ok(())
}
