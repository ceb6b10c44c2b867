//! Joint quantile shortfall probabilities against the normal baseline.

use nalgebra::DMatrix;
use nvmix::gammamix::{shortfall_prob, QuantileOptions};
use nvmix::{MixtureSpec, NvmModel, RqmcConfig};

fn main() -> nvmix::Result<()> {
    let d = 5;
    let corr = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.5 });
    let cfg = RqmcConfig::default().with_tol(1e-5);
    let opts = QuantileOptions::default();
    let normal = NvmModel::centered(corr.clone(), MixtureSpec::constant(1.0)?)?;
    println!("{:>6} {:>12} {:>12} {:>8}", "u", "t(3)", "normal", "ratio");
    let t = NvmModel::centered(corr, MixtureSpec::inverse_gamma(3.0)?)?;
    for u in [0.1, 0.05, 0.01, 0.001] {
        let a = shortfall_prob(u, &t, &cfg, &opts, 1)?.estimate;
        let b = shortfall_prob(u, &normal, &cfg, &opts, 1)?.estimate;
        println!("{u:>6} {a:>12.3e} {b:>12.3e} {:>8.2}", a / b);
    }
    Ok(())
}
