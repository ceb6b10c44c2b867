//! Randomized quasi-Monte Carlo engine.
//!
//! `B` independently shifted Sobol' streams are advanced in equal batches of
//! `n0` points. Each randomization keeps a running mean (or a running
//! log-mean), and the spread of the `B` means gives the error estimate.

mod sobol;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NvmixError, Result};

pub use sobol::{max_dimension, SobolStream};

/// How the error estimate is compared against the tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TolType {
    Absolute,
    Relative,
}

/// Which points drive the estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointSet {
    /// Digitally shifted Sobol' points.
    Sobol,
    /// Plain pseudo-random points (Monte Carlo), for comparison.
    Pseudo,
}

/// Error-control parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RqmcConfig {
    /// Number of randomizations.
    pub b: usize,
    /// Points added per randomization and iteration.
    pub n0: usize,
    /// Maximum number of batches per randomization.
    pub i_max: usize,
    pub tol: f64,
    pub tol_type: TolType,
    /// Multiplier turning the standard error into a CI half-width.
    pub ci_mult: f64,
    pub points: PointSet,
}

impl Default for RqmcConfig {
    fn default() -> Self {
        Self {
            b: 15,
            n0: 128,
            i_max: 1000,
            tol: 1e-3,
            tol_type: TolType::Absolute,
            ci_mult: 3.5,
            points: PointSet::Sobol,
        }
    }
}

impl RqmcConfig {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_i_max(mut self, i_max: usize) -> Self {
        self.i_max = i_max;
        self
    }

    pub fn with_tol_type(mut self, tol_type: TolType) -> Self {
        self.tol_type = tol_type;
        self
    }

    pub fn with_points(mut self, points: PointSet) -> Self {
        self.points = points;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.b < 2 {
            return Err(NvmixError::Domain("need at least two randomizations".into()));
        }
        if self.n0 == 0 || self.i_max == 0 {
            return Err(NvmixError::Domain("n0 and i_max must be positive".into()));
        }
        if !(self.tol > 0.0) || !(self.ci_mult > 0.0) {
            return Err(NvmixError::Domain("tol and ci_mult must be positive".into()));
        }
        Ok(())
    }

    /// Whether `err` is small enough for the estimate `est`.
    pub fn meets(&self, est: f64, err: f64) -> bool {
        match self.tol_type {
            TolType::Relative if est.abs() >= 1e-16 => err <= self.tol * est.abs(),
            _ => err <= self.tol,
        }
    }
}

/// Outcome of an estimation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RqmcResult {
    pub estimate: f64,
    /// CI half-width: `ci_mult * sd / sqrt(B)`.
    pub error_estimate: f64,
    pub n_per_randomization: usize,
    pub iterations_used: usize,
    pub converged: bool,
}

impl RqmcResult {
    /// Result of a closed-form evaluation.
    pub fn exact(value: f64) -> Self {
        Self {
            estimate: value,
            error_estimate: 0.0,
            n_per_randomization: 0,
            iterations_used: 0,
            converged: true,
        }
    }
}

/// Log of a sum of exponentials.
pub fn lse(c: &[f64]) -> Result<f64> {
    if c.is_empty() {
        return Err(NvmixError::Domain("lse of an empty set".into()));
    }
    Ok(lse_slice(c))
}

pub(crate) fn lse_slice(c: &[f64]) -> f64 {
    let m = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + c.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Expand one master seed into `b` independent stream seeds.
pub fn randomization_seeds(seed: u64, b: usize) -> Vec<u64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..b).map(|_| rng.random()).collect()
}

/// Smallest positive value the engine hands to integrands.
pub(crate) const U_FLOOR: f64 = 1.0 / 8_589_934_592.0;

/// A point stream: shifted Sobol' or pseudo-random.
#[derive(Clone, Debug)]
pub enum PointStream {
    Sobol(SobolStream),
    Pseudo { dim: usize, rng: ChaCha20Rng },
}

impl PointStream {
    pub fn new(kind: PointSet, dim: usize, seed: u64) -> Result<Self> {
        match kind {
            PointSet::Sobol => Ok(PointStream::Sobol(SobolStream::new(dim, seed)?)),
            PointSet::Pseudo => {
                if dim == 0 {
                    return Err(NvmixError::Domain("dimension must be positive".into()));
                }
                Ok(PointStream::Pseudo { dim, rng: ChaCha20Rng::seed_from_u64(seed) })
            }
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            PointStream::Sobol(s) => s.dimension(),
            PointStream::Pseudo { dim, .. } => *dim,
        }
    }

    /// Next point, with exact zeros nudged into (0,1).
    pub fn next_into(&mut self, out: &mut [f64]) {
        match self {
            PointStream::Sobol(s) => s.next_into(out),
            PointStream::Pseudo { rng, .. } => {
                for o in out.iter_mut() {
                    *o = rng.random::<f64>();
                }
            }
        }
        for o in out.iter_mut() {
            if *o == 0.0 {
                *o = U_FLOOR;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Space {
    Plain,
    Log,
}

/// Resumable estimation run. Each call to a `step` method adds one batch of
/// `n0` points to every randomization.
#[derive(Clone, Debug)]
pub struct RqmcRun {
    cfg: RqmcConfig,
    space: Space,
    streams: Vec<PointStream>,
    means: Vec<f64>,
    iterations: usize,
}

impl RqmcRun {
    /// Plain-space run estimating `∫ g`.
    pub fn new(dim: usize, cfg: &RqmcConfig, seed: u64) -> Result<Self> {
        Self::build(dim, cfg, seed, Space::Plain)
    }

    /// Log-space run estimating `log ∫ exp(log_g)`.
    pub fn new_log(dim: usize, cfg: &RqmcConfig, seed: u64) -> Result<Self> {
        Self::build(dim, cfg, seed, Space::Log)
    }

    fn build(dim: usize, cfg: &RqmcConfig, seed: u64, space: Space) -> Result<Self> {
        cfg.validate()?;
        let streams = randomization_seeds(seed, cfg.b)
            .into_iter()
            .map(|s| PointStream::new(cfg.points, dim, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cfg: cfg.clone(), space, streams, means: vec![0.0; cfg.b], iterations: 0 })
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn n_per_randomization(&self) -> usize {
        self.iterations * self.cfg.n0
    }

    /// Per-randomization running means (log-means for a log run).
    pub fn per_randomization(&self) -> &[f64] {
        &self.means
    }

    /// Add one batch; `g` maps a point to the integrand (or its log).
    pub fn step<G>(&mut self, g: &G) -> Result<()>
    where
        G: Fn(&[f64]) -> f64 + Sync,
    {
        let n0 = self.cfg.n0;
        let space = self.space;
        let batches: Vec<Result<f64>> = self
            .streams
            .par_iter_mut()
            .map(|s| batch_mean(s, n0, g, space))
            .collect();
        let i = self.iterations as f64;
        for (m, bm) in self.means.iter_mut().zip(batches) {
            let bm = bm?;
            *m = if self.iterations == 0 {
                bm
            } else {
                match space {
                    Space::Plain => (i * *m + bm) / (i + 1.0),
                    Space::Log => -(i + 1.0).ln() + lse_pair(i.ln() + *m, bm),
                }
            };
        }
        self.iterations += 1;
        Ok(())
    }

    /// Current combined estimate.
    pub fn result(&self) -> RqmcResult {
        let (estimate, error_estimate) = match self.space {
            Space::Plain => combine_plain(&self.means, self.cfg.ci_mult),
            Space::Log => combine_log(&self.means, self.cfg.ci_mult),
        };
        RqmcResult {
            estimate,
            error_estimate,
            n_per_randomization: self.n_per_randomization(),
            iterations_used: self.iterations,
            converged: self.iterations > 0 && self.cfg.meets(estimate, error_estimate),
        }
    }

    /// Step until the tolerance is met or `i_max` batches were used.
    pub fn run<G>(&mut self, g: &G) -> Result<RqmcResult>
    where
        G: Fn(&[f64]) -> f64 + Sync,
    {
        loop {
            if self.iterations >= self.cfg.i_max {
                return Ok(self.result());
            }
            self.step(g)?;
            let r = self.result();
            if r.converged {
                return Ok(r);
            }
        }
    }
}

fn lse_pair(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn batch_mean<G>(s: &mut PointStream, n0: usize, g: &G, space: Space) -> Result<f64>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    let mut u = vec![0.0; s.dimension()];
    match space {
        Space::Plain => {
            let mut sum = 0.0;
            for _ in 0..n0 {
                s.next_into(&mut u);
                let v = g(&u);
                if v.is_nan() {
                    return Err(NvmixError::NanIntegrand { point: u });
                }
                sum += v;
            }
            Ok(sum / n0 as f64)
        }
        Space::Log => {
            let mut vals = Vec::with_capacity(n0);
            for _ in 0..n0 {
                s.next_into(&mut u);
                let v = g(&u);
                if v.is_nan() {
                    return Err(NvmixError::NanIntegrand { point: u });
                }
                vals.push(v);
            }
            Ok(lse_slice(&vals) - (n0 as f64).ln())
        }
    }
}

pub(crate) fn combine_plain(means: &[f64], ci_mult: f64) -> (f64, f64) {
    let b = means.len() as f64;
    let est = means.iter().sum::<f64>() / b;
    let var = means.iter().map(|m| (m - est).powi(2)).sum::<f64>() / (b - 1.0);
    (est, ci_mult * var.sqrt() / b.sqrt())
}

pub(crate) fn combine_log(means: &[f64], ci_mult: f64) -> (f64, f64) {
    let b = means.len() as f64;
    let est = lse_slice(means) - b.ln();
    if means.iter().all(|&m| m == f64::NEG_INFINITY) {
        return (f64::NEG_INFINITY, 0.0);
    }
    if means.iter().any(|m| !m.is_finite()) {
        return (est, f64::INFINITY);
    }
    let (_, err) = combine_plain(means, ci_mult);
    (est, err)
}

/// Estimate `∫_{(0,1)^dim} g`.
pub fn rqmc_estimate<G>(g: G, dim: usize, cfg: &RqmcConfig, seed: u64) -> Result<RqmcResult>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    RqmcRun::new(dim, cfg, seed)?.run(&g)
}

/// Estimate `log ∫_{(0,1)^dim} exp(log_g)` without leaving log space.
pub fn rqmc_log_estimate<G>(log_g: G, dim: usize, cfg: &RqmcConfig, seed: u64) -> Result<RqmcResult>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    RqmcRun::new_log(dim, cfg, seed)?.run(&log_g)
}
