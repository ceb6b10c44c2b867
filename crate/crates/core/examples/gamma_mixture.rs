//! Distribution, density and quantiles of the squared Mahalanobis distance.

use nvmix::gammamix::{dgammamix, pgammamix, qgammamix, QuantileOptions};
use nvmix::{MixtureSpec, RqmcConfig};

fn main() -> nvmix::Result<()> {
    let (d, nu) = (4, 5.0);
    let mix = MixtureSpec::inverse_gamma(nu)?;
    let cfg = RqmcConfig::default();
    println!("D^2 for a t distribution with d = {d}, nu = {nu}  (D^2/d is F(d, nu))");
    for x in [0.5, 2.0, 8.0, 30.0] {
        let p = pgammamix(x, d, &mix, &cfg, 1)?;
        let f = dgammamix(x, d, &mix, &cfg, 1, false)?;
        println!("  x = {x:>5}: cdf {:.5}, density {:.6}", p.estimate, f.estimate);
    }
    let opts = QuantileOptions::default();
    for u in [0.5, 0.9, 0.99] {
        let q = qgammamix(u, d, &mix, &opts, 1)?;
        println!("  {u}-quantile: {q:.4}, cdf there {:.5}", pgammamix(q, d, &mix, &cfg, 2)?.estimate);
    }
    Ok(())
}
