//! Mean estimated error against sample size for MC and RQMC, with and
//! without reordering. Pass dimensions as arguments (default 10).

use nvmix::bench::{bench_convergence, ConvergenceConfig};
use nvmix::MixtureSpec;

fn main() -> nvmix::Result<()> {
    let dims: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("dimension")).collect();
    let dims = if dims.is_empty() { vec![10] } else { dims };
    let cfg = ConvergenceConfig::new(MixtureSpec::inverse_gamma(2.0)?, dims);
    let report = bench_convergence(&cfg, 1)?;
    println!("{:<16} {:>4} {:>6} {:>12} {:>8}", "method", "d", "n", "mean error", "slope");
    for s in report.summary() {
        println!("{:<16} {:>4} {:>6} {:>12.3e} {:>8.3}", s.method.name(), s.d, s.n, s.mean_abs_error, s.slope);
    }
    Ok(())
}
