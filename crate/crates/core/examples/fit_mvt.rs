//! ECME fit of a multivariate t to simulated data, with closed-form and
//! numerically estimated weights and likelihood.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use nvmix::fitting::{fit, Evaluation, FitConfig};
use nvmix::sampling::{rnvmix, SampleMethod};
use nvmix::{MixtureSpec, NvmModel};

fn main() -> nvmix::Result<()> {
    let d = 5;
    let mix = MixtureSpec::inverse_gamma(3.5)?;
    let loc = DVector::from_fn(d, |i, _| i as f64);
    let scale = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.4 });
    let x = rnvmix(1000, &NvmModel::new(loc, scale, mix.clone())?, 11, SampleMethod::Pseudo)?;

    for mode in [Evaluation::Auto, Evaluation::Estimated] {
        let t = Instant::now();
        let r = fit(&x, &mix, &FitConfig::default().with_evaluation(mode), 3)?;
        let inner: usize = r.trace.iter().map(|e| e.inner_iterations).sum();
        println!(
            "{mode:?}: nu = {:.4}, loglik = {:.3}, {} ECME / {inner} location-scale iterations, {:.2?}",
            r.nu[0],
            r.loglik,
            r.trace.len(),
            t.elapsed()
        );
        let loc: Vec<String> = r.loc.iter().map(|v| format!("{v:.3}")).collect();
        println!("  loc = ({}), scale[0,1] = {:.4}", loc.join(", "), r.scale[(0, 1)]);
    }
    Ok(())
}
