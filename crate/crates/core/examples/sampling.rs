//! Pseudo-random and Sobol' samples from a normal variance mixture.

use nalgebra::DMatrix;
use nvmix::sampling::{rnvmix, SampleMethod};
use nvmix::stats::{column_means, sample_covariance};
use nvmix::{MixtureSpec, NvmModel};

fn main() -> nvmix::Result<()> {
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
    // Cov(X) = nu / (nu - 2) * Sigma = 1.5 Sigma for nu = 6.
    let model = NvmModel::centered(sigma, MixtureSpec::inverse_gamma(6.0)?)?;
    for method in [SampleMethod::Pseudo, SampleMethod::Sobol] {
        let x = rnvmix(100_000, &model, 2024, method)?;
        let (m, c) = (column_means(&x), sample_covariance(&x));
        println!(
            "{method:?}: mean ({:.3}, {:.3}), covariance ({:.3}, {:.3}, {:.3}), expected (1.5, 0.75, 3.0)",
            m[0], m[1], c[(0, 0)], c[(0, 1)], c[(1, 1)]
        );
    }
    Ok(())
}
