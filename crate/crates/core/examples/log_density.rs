//! Adaptive log-density estimates compared with closed forms, far into the tails.

use nalgebra::DMatrix;
use nvmix::density::{closed_log_density, log_density_batch, DensityOptions};
use nvmix::{MixtureSpec, NvmModel, RqmcConfig};

fn main() -> nvmix::Result<()> {
    let d = 10;
    let radii = [0.0, 1.0, 3.0, 10.0, 100.0, 1e4];
    // Points along the diagonal at the given Euclidean distances.
    let x = DMatrix::from_fn(radii.len(), d, |i, _| radii[i] / (d as f64).sqrt());
    for mix in [MixtureSpec::inverse_gamma(4.0)?, MixtureSpec::pareto(6.0)?] {
        let model = NvmModel::standard(d, mix.clone())?;
        let est = log_density_batch(&x, &model, &RqmcConfig::default(), &DensityOptions::default(), 1)?;
        println!("{mix}");
        for (i, r) in est.iter().enumerate() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let exact = closed_log_density(&model, &row)?;
            println!("  |x| = {:>7}: {:>12.6} (closed form {exact:>12.6})", radii[i], r.estimate);
        }
    }
    Ok(())
}
