//! QQ-plot data: sorted squared Mahalanobis distances against the
//! quantiles implied by a correct and a misspecified model.

use nalgebra::DMatrix;
use nvmix::cli::qq_points;
use nvmix::sampling::{rnvmix, SampleMethod};
use nvmix::{MixtureSpec, NvmModel};

fn main() -> nvmix::Result<()> {
    let d = 3;
    let scale = DMatrix::identity(d, d);
    let truth = NvmModel::centered(scale.clone(), MixtureSpec::inverse_gamma(3.0)?)?;
    let x = rnvmix(400, &truth, 8, SampleMethod::Pseudo)?;
    for model in [truth, NvmModel::centered(scale, MixtureSpec::constant(1.0)?)?] {
        let qq = qq_points(&x, &model, 1)?;
        println!("{}", model.mix);
        for p in [0.5, 0.9, 0.99] {
            let q = qq[(p * qq.len() as f64) as usize];
            println!("  p = {:.4}: theoretical {:>8.3}, empirical {:>8.3}", q.p, q.theoretical, q.empirical);
        }
    }
    Ok(())
}
