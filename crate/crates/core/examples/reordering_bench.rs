//! How often reordering lowers the variance of the integrand.

use nvmix::bench::{bench_reordering, ReorderingConfig};

fn main() -> nvmix::Result<()> {
    let cfg = ReorderingConfig { settings: 50, ..ReorderingConfig::default() };
    let report = bench_reordering(&cfg, 3)?;
    for r in report.records.iter().take(5) {
        println!("d = {:>2}, nu = {:.2}: variance {:.3e} -> {:.3e}", r.d, r.nu, r.var_plain, r.var_reordered);
    }
    println!(
        "variance reduced in {:.0}% of {} settings ({} exceedances)",
        100.0 * report.fraction_reduced(),
        report.records.len(),
        report.exceedances()
    );
    Ok(())
}
