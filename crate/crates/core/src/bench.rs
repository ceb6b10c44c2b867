//! Desk-scale experiments: error decay of the distribution-function
//! estimators and the variance reduction from variable reordering.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::density::derive_seed;
use crate::distribution::{antithetic_g, integrand_g, prepare, ReorderedProblem};
use crate::error::{NvmixError, Result};
use crate::mixtures::MixtureSpec;
use crate::model::NvmModel;
use crate::rqmc::{PointSet, PointStream, RqmcConfig, RqmcRun};
use crate::stats::{regression_slope, sample_variance};

/// A random upper limit `b ~ U(0, 3 sqrt(d))^d` (lower limit `-∞`) and a
/// correlation matrix from a standardized Wishart draw with `d` degrees of
/// freedom.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomSetting {
    pub upper: Vec<f64>,
    pub corr: DMatrix<f64>,
}

impl RandomSetting {
    pub fn draw<R: Rng>(d: usize, rng: &mut R) -> Self {
        let hi = 3.0 * (d as f64).sqrt();
        let upper = (0..d).map(|_| rng.random::<f64>() * hi).collect();
        let z = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = z.transpose() * z;
        let scale: Vec<f64> = (0..d).map(|i| 1.0 / s[(i, i)].sqrt()).collect();
        let mut corr = DMatrix::identity(d, d);
        for i in 0..d {
            for j in i + 1..d {
                let r = s[(i, j)] * scale[i] * scale[j];
                corr[(i, j)] = r;
                corr[(j, i)] = r;
            }
        }
        Self { upper, corr }
    }

    pub fn lower(&self) -> Vec<f64> {
        vec![f64::NEG_INFINITY; self.upper.len()]
    }

    pub fn problem(&self, mix: &MixtureSpec, reorder: bool) -> Result<ReorderedProblem> {
        let model = NvmModel::centered(self.corr.clone(), mix.clone())?;
        prepare(&self.lower(), &self.upper, &model, reorder)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMethod {
    Mc,
    McReordered,
    Rqmc,
    RqmcReordered,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 4] = [Self::Mc, Self::McReordered, Self::Rqmc, Self::RqmcReordered];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mc => "mc",
            Self::McReordered => "mc-reordered",
            Self::Rqmc => "rqmc",
            Self::RqmcReordered => "rqmc-reordered",
        }
    }

    fn points(self) -> PointSet {
        match self {
            Self::Mc | Self::McReordered => PointSet::Pseudo,
            Self::Rqmc | Self::RqmcReordered => PointSet::Sobol,
        }
    }

    fn reorder(self) -> bool {
        matches!(self, Self::McReordered | Self::RqmcReordered)
    }
}

impl std::str::FromStr for BenchMethod {
    type Err = NvmixError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| NvmixError::InvalidInput(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Debug)]
pub struct ConvergenceConfig {
    pub mix: MixtureSpec,
    pub dims: Vec<usize>,
    pub settings: usize,
    /// Sample sizes per randomization; multiples of `rqmc.n0`.
    pub ns: Vec<usize>,
    pub methods: Vec<BenchMethod>,
    pub rqmc: RqmcConfig,
}

impl ConvergenceConfig {
    /// 15 settings per dimension, `n = 2^7, ..., 2^12`, all four methods.
    pub fn new(mix: MixtureSpec, dims: Vec<usize>) -> Self {
        Self {
            mix,
            dims,
            settings: 15,
            ns: (7..=12).map(|k| 1usize << k).collect(),
            methods: BenchMethod::ALL.to_vec(),
            rqmc: RqmcConfig::default(),
        }
    }
}

/// Estimated absolute error of one method on one setting at one `n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub method: BenchMethod,
    pub d: usize,
    pub setting: usize,
    pub n: usize,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceSummary {
    pub method: BenchMethod,
    pub d: usize,
    pub n: usize,
    pub mean_abs_error: f64,
    /// Slope of log mean error on log n over all `n` of this method and `d`.
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub records: Vec<ConvergenceRecord>,
}

impl ConvergenceReport {
    fn select(&self, method: BenchMethod, d: usize) -> impl Iterator<Item = &ConvergenceRecord> {
        self.records.iter().filter(move |r| r.method == method && r.d == d)
    }

    fn ns(&self, method: BenchMethod, d: usize) -> Vec<usize> {
        let mut ns: Vec<usize> = self.select(method, d).map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        ns
    }

    pub fn mean_error(&self, method: BenchMethod, d: usize, n: usize) -> f64 {
        let e: Vec<f64> = self.select(method, d).filter(|r| r.n == n).map(|r| r.error).collect();
        e.iter().sum::<f64>() / e.len() as f64
    }

    pub fn slope(&self, method: BenchMethod, d: usize) -> f64 {
        let ns = self.ns(method, d);
        let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
        let y: Vec<f64> = ns.iter().map(|&n| self.mean_error(method, d, n).ln()).collect();
        regression_slope(&x, &y)
    }

    /// Fraction of settings in which `a` has a smaller error than `b` at `n`.
    pub fn fraction_better(&self, a: BenchMethod, b: BenchMethod, d: usize, n: usize) -> f64 {
        let ea: Vec<&ConvergenceRecord> = self.select(a, d).filter(|r| r.n == n).collect();
        let wins = ea
            .iter()
            .filter(|ra| {
                self.select(b, d).any(|rb| rb.n == n && rb.setting == ra.setting && ra.error < rb.error)
            })
            .count();
        wins as f64 / ea.len() as f64
    }

    pub fn summary(&self) -> Vec<ConvergenceSummary> {
        let mut keys: Vec<(BenchMethod, usize)> = self.records.iter().map(|r| (r.method, r.d)).collect();
        keys.dedup();
        keys.sort_by_key(|&(m, d)| (d, m as u8));
        keys.dedup();
        let mut out = Vec::new();
        for (method, d) in keys {
            let slope = self.slope(method, d);
            for n in self.ns(method, d) {
                out.push(ConvergenceSummary { method, d, n, mean_abs_error: self.mean_error(method, d, n), slope });
            }
        }
        out
    }
}

/// Estimated errors of the distribution-function estimators as `n` grows.
/// Every method runs once per setting and is read off after each batch.
pub fn bench_convergence(cfg: &ConvergenceConfig, seed: u64) -> Result<ConvergenceReport> {
    let n_max = *cfg.ns.iter().max().ok_or_else(|| NvmixError::InvalidInput("no sample sizes".into()))?;
    if cfg.ns.iter().any(|n| n % cfg.rqmc.n0 != 0 || *n == 0) {
        return Err(NvmixError::InvalidInput(format!("sample sizes must be positive multiples of {}", cfg.rqmc.n0)));
    }
    let mut jobs = Vec::new();
    for &d in &cfg.dims {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, d as u64));
        for s in 0..cfg.settings {
            let setting = RandomSetting::draw(d, &mut rng);
            for &m in &cfg.methods {
                jobs.push((d, s, setting.clone(), m, derive_seed(seed ^ 0x5eed, (d * 100_000 + s) as u64)));
            }
        }
    }
    let batches: Vec<Vec<ConvergenceRecord>> = jobs
        .into_par_iter()
        .map(|(d, s, setting, method, run_seed)| {
            let problem = setting.problem(&cfg.mix, method.reorder())?;
            let rc = RqmcConfig { i_max: n_max / cfg.rqmc.n0, tol: f64::MIN_POSITIVE, points: method.points(), ..cfg.rqmc.clone() };
            let mut run = RqmcRun::new(d, &rc, run_seed)?;
            let g = |u: &[f64]| antithetic_g(u, &problem, &cfg.mix);
            let mut out = Vec::new();
            while run.n_per_randomization() < n_max {
                run.step(&g)?;
                let n = run.n_per_randomization();
                if cfg.ns.contains(&n) {
                    out.push(ConvergenceRecord { method, d, setting: s, n, error: run.result().error_estimate });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(ConvergenceReport { records: batches.into_iter().flatten().collect() })
}

#[derive(Clone, Debug)]
pub struct ReorderingConfig {
    pub settings: usize,
    pub d_min: usize,
    pub d_max: usize,
    pub nu_min: f64,
    pub nu_max: f64,
    /// Samples per variance estimate.
    pub n_samples: usize,
}

impl Default for ReorderingConfig {
    fn default() -> Self {
        Self { settings: 200, d_min: 5, d_max: 50, nu_min: 0.1, nu_max: 5.0, n_samples: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReorderingRecord {
    pub setting: usize,
    pub d: usize,
    pub nu: f64,
    pub var_plain: f64,
    pub var_reordered: f64,
    /// `var_reordered / var_plain`; 1 when both vanish.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReorderingReport {
    pub records: Vec<ReorderingRecord>,
}

impl ReorderingReport {
    /// Settings where reordering did not reduce the variance.
    pub fn exceedances(&self) -> usize {
        self.records.iter().filter(|r| !(r.ratio < 1.0)).count()
    }

    pub fn fraction_reduced(&self) -> f64 {
        1.0 - self.exceedances() as f64 / self.records.len() as f64
    }
}

/// Variance of the integrand with and without reordering for random
/// multivariate t problems, from common pseudo-random points.
pub fn bench_reordering(cfg: &ReorderingConfig, seed: u64) -> Result<ReorderingReport> {
    if cfg.d_min == 0 || cfg.d_min > cfg.d_max || !(cfg.nu_min > 0.0 && cfg.nu_min <= cfg.nu_max) || cfg.n_samples < 2 {
        return Err(NvmixError::InvalidInput("invalid reordering benchmark ranges".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let jobs: Vec<(usize, usize, f64, RandomSetting)> = (0..cfg.settings)
        .map(|s| {
            let d = rng.random_range(cfg.d_min..=cfg.d_max);
            let nu = cfg.nu_min + (cfg.nu_max - cfg.nu_min) * rng.random::<f64>();
            (s, d, nu, RandomSetting::draw(d, &mut rng))
        })
        .collect();
    let records: Vec<ReorderingRecord> = jobs
        .into_par_iter()
        .map(|(s, d, nu, setting)| {
            let mix = MixtureSpec::inverse_gamma(nu)?;
            let plain = setting.problem(&mix, false)?;
            let reordered = setting.problem(&mix, true)?;
            let mut points = PointStream::new(PointSet::Pseudo, d, derive_seed(seed, s as u64))?;
            let mut u = vec![0.0; d];
            let mut gp = Vec::with_capacity(cfg.n_samples);
            let mut gr = Vec::with_capacity(cfg.n_samples);
            for _ in 0..cfg.n_samples {
                points.next_into(&mut u);
                gp.push(integrand_g(&u, &plain, &mix));
                gr.push(integrand_g(&u, &reordered, &mix));
            }
            let (vp, vr) = (sample_variance(&gp), sample_variance(&gr));
            let ratio = if vp == 0.0 && vr == 0.0 { 1.0 } else { vr / vp };
            Ok(ReorderingRecord { setting: s, d, nu, var_plain: vp, var_reordered: vr, ratio })
        })
        .collect::<Result<_>>()?;
    Ok(ReorderingReport { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_setting_is_a_correlation_matrix() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let s = RandomSetting::draw(6, &mut rng);
        for i in 0..6 {
            assert_eq!(s.corr[(i, i)], 1.0);
            assert!(s.upper[i] >= 0.0 && s.upper[i] <= 3.0 * 6f64.sqrt());
            for j in 0..6 {
                assert_eq!(s.corr[(i, j)], s.corr[(j, i)]);
                assert!(s.corr[(i, j)].abs() <= 1.0);
            }
        }
        assert!(crate::linalg::cholesky(&s.corr).is_ok());
    }

    #[test]
    fn one_dimension_ratio_is_one() {
        let cfg = ReorderingConfig { settings: 3, d_min: 1, d_max: 1, n_samples: 500, ..Default::default() };
        let r = bench_reordering(&cfg, 4).unwrap();
        assert!(r.records.iter().all(|x| x.ratio == 1.0), "{r:?}");
    }

    #[test]
    fn reports_are_reproducible() {
        let cfg = ReorderingConfig { settings: 4, d_min: 3, d_max: 8, n_samples: 1000, ..Default::default() };
        assert_eq!(bench_reordering(&cfg, 9).unwrap(), bench_reordering(&cfg, 9).unwrap());
        let mut c = ConvergenceConfig::new(MixtureSpec::inverse_gamma(2.0).unwrap(), vec![3]);
        c.settings = 2;
        c.ns = vec![128, 256];
        let a = bench_convergence(&c, 2).unwrap();
        assert_eq!(a, bench_convergence(&c, 2).unwrap());
        assert_eq!(a.records.len(), 2 * 4 * 2);
        assert_eq!(a.summary().len(), 4 * 2);
    }

    #[test]
    fn rqmc_beats_mc_in_low_dimension() {
        let mut c = ConvergenceConfig::new(MixtureSpec::inverse_gamma(2.0).unwrap(), vec![5]);
        c.settings = 5;
        c.ns = vec![128, 512, 2048];
        c.methods = vec![BenchMethod::Mc, BenchMethod::RqmcReordered];
        let r = bench_convergence(&c, 3).unwrap();
        assert!(r.slope(BenchMethod::Mc, 5) < -0.3);
        assert!(r.slope(BenchMethod::RqmcReordered, 5) < r.slope(BenchMethod::Mc, 5));
        assert!(r.mean_error(BenchMethod::RqmcReordered, 5, 2048) < r.mean_error(BenchMethod::Mc, 5, 2048));
    }
}
