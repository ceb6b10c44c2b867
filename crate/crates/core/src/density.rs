//! Log-densities of normal variance mixtures.
//!
//! The density at `x` is `∫_0^1 h(u) du` with
//! `h(u) = (2π w)^{-d/2} |Σ|^{-1/2} exp(-D²/(2w))`, `w = F_W^{-1}(u)`.
//! Everything here works with the more general kernel
//! `log_c - k log w - d2 / (2w)` so the same machinery also serves the
//! ECME weights and the density of `W χ²_d`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NvmixError, Result};
use crate::linalg::{mahalanobis_rows, mahalanobis_sq};
use crate::mixtures::{Family, MixtureSpec};
use crate::model::NvmModel;
use crate::rqmc::{
    combine_log, randomization_seeds, rqmc_log_estimate, PointStream, RqmcConfig, RqmcResult, RqmcRun,
};
use crate::special::{ln_gamma, ln_lower_incomplete_gamma};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Orders of magnitude between the peak of `h` and the region threshold.
pub const DEFAULT_K_TH: f64 = 10.0;
pub const DEFAULT_EPS_BISEC: f64 = 1e-6;
/// Iterations of the shared pilot run.
pub const PILOT_I_MAX: usize = 4;
/// Below this squared distance the integrand is monotone and the crude
/// estimator is used throughout.
const D2_CRUDE: f64 = 1e-12;
const MAX_BISECTIONS: usize = 1100;
const U_TINY: f64 = 1e-300;
const U_TOP: f64 = 1.0 - f64::EPSILON / 2.0;
/// A pilot whose largest observed `log h` falls this far below the
/// theoretical peak has missed the peak.
const PILOT_PEAK_GAP: f64 = 1.0;

/// Inputs of the univariate density integral.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityIntegrandParams {
    /// Squared Mahalanobis distance.
    pub d2: f64,
    pub d: usize,
    pub log_det: f64,
    /// Power of `1/w`; `d/2` for the density itself.
    pub shift_k: f64,
}

impl DensityIntegrandParams {
    pub fn new(d2: f64, d: usize, log_det: f64) -> Self {
        Self { d2, d, log_det, shift_k: d as f64 / 2.0 }
    }

    pub fn with_shift_k(mut self, k: f64) -> Self {
        self.shift_k = k;
        self
    }

    pub fn kernel(&self) -> LogKernel {
        LogKernel {
            log_c: -0.5 * self.d as f64 * LN_2PI - 0.5 * self.log_det,
            k: self.shift_k,
            d2: self.d2,
        }
    }
}

/// `log h(w) = log_c - k log w - d2 / (2w)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogKernel {
    pub log_c: f64,
    pub k: f64,
    pub d2: f64,
}

impl From<DensityIntegrandParams> for LogKernel {
    fn from(p: DensityIntegrandParams) -> Self {
        p.kernel()
    }
}

impl LogKernel {
    /// Kernel value at a mixing realization. `w = 0` with `d2 = 0` has no
    /// limit and yields NaN.
    #[inline]
    pub fn log_h_w(&self, w: f64) -> f64 {
        if w > 0.0 {
            if w.is_infinite() {
                return f64::NEG_INFINITY;
            }
            self.log_c - self.k * w.ln() - self.d2 / (2.0 * w)
        } else if w == 0.0 && self.d2 > 0.0 {
            f64::NEG_INFINITY
        } else {
            f64::NAN
        }
    }

    /// Location of the maximum over all `w > 0`.
    pub fn w_star(&self) -> f64 {
        self.d2 / (2.0 * self.k)
    }

    /// Maximum over all `w > 0`; independent of the mixing distribution.
    pub fn log_h_max(&self) -> f64 {
        self.log_c - self.k * self.w_star().ln() - self.k
    }
}

/// `log h(u)` for the density integrand.
pub fn log_h(u: f64, params: &DensityIntegrandParams, mix: &MixtureSpec) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(NvmixError::Domain(format!("u = {u} outside (0,1)")));
    }
    let w = mix.quantile(u)?;
    let v = params.kernel().log_h_w(w);
    if v.is_nan() {
        return Err(NvmixError::Domain("zero mixing realization at zero distance".into()));
    }
    Ok(v)
}

/// Sorted `(t, w)` pairs of quantile evaluations. In the plain orientation
/// `t = u` and `w = F_W^{-1}(u)`; in the mirrored one `t = 1 - u`, which
/// keeps full precision for levels close to 1.
#[derive(Clone, Debug, Default)]
pub struct QuantileCache {
    ts: Vec<f64>,
    ws: Vec<f64>,
    mirrored: bool,
}

impl QuantileCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Plain-orientation cache from `(u, w)` pairs.
    pub fn from_pairs(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.dedup_by(|a, b| a.0 == b.0);
        let (ts, ws) = pairs.into_iter().unzip();
        Self { ts, ws, mirrored: false }
    }

    /// Same evaluations in the opposite orientation.
    pub fn mirrored(&self) -> Self {
        Self {
            ts: self.ts.iter().rev().map(|t| 1.0 - t).collect(),
            ws: self.ws.iter().rev().copied().collect(),
            mirrored: !self.mirrored,
        }
    }

    pub fn is_mirrored(&self) -> bool {
        self.mirrored
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn ts(&self) -> &[f64] {
        &self.ts
    }

    pub fn ws(&self) -> &[f64] {
        &self.ws
    }

    /// Mixing value at coordinate `t`, bypassing the cache.
    #[inline]
    pub fn eval(&self, t: f64, mix: &MixtureSpec) -> f64 {
        orient(self.mirrored, t, mix)
    }

    /// Mixing value at coordinate `t`, from the cache if present.
    pub fn quantile(&mut self, t: f64, mix: &MixtureSpec) -> f64 {
        match self.ts.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => self.ws[i],
            Err(i) => {
                let w = orient(self.mirrored, t, mix);
                self.ts.insert(i, t);
                self.ws.insert(i, w);
                w
            }
        }
    }

    // Is `w` reached before the coordinate of `target`?
    fn before(&self, w: f64, target: f64) -> bool {
        if self.mirrored {
            w > target
        } else {
            w < target
        }
    }

    /// Cached coordinates enclosing the point where the mixing value crosses
    /// `target` (0 and 1 when there is none on a side).
    pub fn bracket(&self, target: f64) -> (f64, f64) {
        let p = self.ws.partition_point(|&w| self.before(w, target));
        let lo = if p > 0 { self.ts[p - 1] } else { 0.0 };
        let hi = if p < self.ts.len() { self.ts[p] } else { 1.0 };
        (lo, hi)
    }
}

#[inline]
fn orient(mirrored: bool, t: f64, mix: &MixtureSpec) -> f64 {
    if mirrored {
        mix.quantile_upper_raw(t)
    } else {
        mix.quantile_raw(t)
    }
}

// Bisection stops once the bracket is small relative to the distance to the
// nearer end of (0,1), so peaks squeezed against 0 or 1 are still resolved.
fn bracket_done(lo: f64, hi: f64, eps: f64) -> bool {
    let mid = 0.5 * (lo + hi);
    if mid <= lo || mid >= hi {
        return true;
    }
    hi - lo <= eps * hi.min(1.0 - lo).min(1.0)
}

/// Peak of `h` in the coordinate of a cache.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub u_star: f64,
    pub log_h_max: f64,
    /// The maximum sits on the boundary of (0,1).
    pub boundary: bool,
}

/// Locate `u*` where the mixing value equals `d2 / (2k)` by bisection,
/// seeded from the cache.
pub fn peak(kernel: &LogKernel, mix: &MixtureSpec, cache: &mut QuantileCache, eps_bisec: f64) -> Result<Peak> {
    if !(kernel.d2 > 0.0) || !(kernel.k > 0.0) {
        return Err(NvmixError::Domain("peak needs d2 > 0 and k > 0".into()));
    }
    let target = kernel.w_star();
    let (mut lo, mut hi) = cache.bracket(target);
    for _ in 0..MAX_BISECTIONS {
        if bracket_done(lo, hi, eps_bisec) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let w = cache.quantile(mid, mix);
        if w.is_nan() {
            return Err(NvmixError::InvalidMixture { u: mid, value: w });
        }
        if cache.before(w, target) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi < U_TINY || lo >= U_TOP {
            break;
        }
    }
    if hi < U_TINY {
        // the support ends before w*: h is monotone
        let w0 = cache.quantile(U_TINY, mix);
        return Ok(Peak { u_star: 0.0, log_h_max: kernel.log_h_w(w0), boundary: true });
    }
    if lo >= U_TOP {
        let w1 = cache.quantile(U_TOP, mix);
        return Ok(Peak { u_star: 1.0, log_h_max: kernel.log_h_w(w1), boundary: true });
    }
    Ok(Peak { u_star: 0.5 * (lo + hi), log_h_max: kernel.log_h_max(), boundary: false })
}

/// `(u_l, u_r)` with `h > threshold` exactly on `(u_l, u_r)`, where the
/// threshold is `k_th` orders of magnitude below the peak.
pub fn region_bounds(
    kernel: &LogKernel,
    mix: &MixtureSpec,
    cache: &mut QuantileCache,
    pk: &Peak,
    k_th: f64,
    eps_bisec: f64,
) -> Result<(f64, f64)> {
    let th = pk.log_h_max - k_th * std::f64::consts::LN_10;
    let lh = |cache: &mut QuantileCache, t: f64| kernel.log_h_w(cache.quantile(t, mix));

    let u_l = if pk.u_star <= 0.0 {
        0.0
    } else {
        // h increases up to the peak
        let mut lo = 0.0;
        let mut hi = pk.u_star;
        let split = cache.ts.partition_point(|&t| t < pk.u_star);
        for i in (0..split).rev() {
            if kernel.log_h_w(cache.ws[i]) <= th {
                lo = cache.ts[i];
                if i + 1 < split {
                    hi = cache.ts[i + 1];
                }
                break;
            }
        }
        if lo == 0.0 {
            let probe = U_TINY.min(hi);
            if lh(cache, probe) > th {
                hi = 0.0;
            } else {
                lo = probe;
            }
        }
        while hi > 0.0 && !bracket_done(lo, hi, eps_bisec) {
            let mid = 0.5 * (lo + hi);
            if lh(cache, mid) > th {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if hi == 0.0 {
            0.0
        } else {
            lo
        }
    };

    let u_r = if pk.u_star >= 1.0 {
        1.0
    } else {
        // h decreases after the peak
        let mut lo = pk.u_star;
        let mut hi = 1.0;
        let split = cache.ts.partition_point(|&t| t <= pk.u_star);
        for i in split..cache.ts.len() {
            if kernel.log_h_w(cache.ws[i]) <= th {
                hi = cache.ts[i];
                if i > split {
                    lo = cache.ts[i - 1];
                }
                break;
            }
        }
        if hi == 1.0 {
            let probe = U_TOP.max(lo);
            if lh(cache, probe) > th {
                lo = 1.0;
            } else {
                hi = probe;
            }
        }
        while lo < 1.0 && !bracket_done(lo, hi, eps_bisec) {
            let mid = 0.5 * (lo + hi);
            if lh(cache, mid) > th {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo == 1.0 {
            1.0
        } else {
            hi
        }
    };
    Ok((u_l, u_r))
}

/// Log of the trapezoidal rule over the cached knots in `[from, to]`.
fn log_trapezoid(kernel: &LogKernel, cache: &QuantileCache, from: f64, to: f64) -> f64 {
    let a = cache.ts.partition_point(|&t| t < from);
    let b = cache.ts.partition_point(|&t| t <= to);
    if b < a + 2 {
        return f64::NEG_INFINITY;
    }
    let mut terms = Vec::with_capacity(b - a - 1);
    let mut prev = kernel.log_h_w(cache.ws[a]);
    for i in a + 1..b {
        let cur = kernel.log_h_w(cache.ws[i]);
        let width = cache.ts[i] - cache.ts[i - 1];
        if width > 0.0 {
            terms.push((0.5 * width).ln() + ln_add(prev, cur));
        }
        prev = cur;
    }
    crate::rqmc::lse_slice(&terms)
}

fn ln_add(a: f64, b: f64) -> f64 {
    crate::special::ln_add_exp(a, b)
}

/// Tuning of the adaptive estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityOptions {
    pub k_th: f64,
    pub eps_bisec: f64,
    /// Pilot iterations before the adaptive phase.
    pub pilot_i_max: usize,
    /// Skip the adaptive phase entirely (crude estimator only).
    pub crude_only: bool,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self { k_th: DEFAULT_K_TH, eps_bisec: DEFAULT_EPS_BISEC, pilot_i_max: PILOT_I_MAX, crude_only: false }
    }
}

pub(crate) fn derive_seed(seed: u64, j: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ j.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Estimates of `log ∫_0^1 exp(log_h(F_W^{-1}(u))) du` for many kernels
/// sharing one mixing distribution.
pub fn log_integral_batch(
    kernels: &[LogKernel],
    mix: &MixtureSpec,
    cfg: &RqmcConfig,
    opts: &DensityOptions,
    seed: u64,
) -> Result<Vec<RqmcResult>> {
    cfg.validate()?;
    let n = kernels.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if mix.is_constant() {
        let w = mix.quantile(0.5)?;
        return kernels
            .iter()
            .map(|k| {
                let v = k.log_h_w(w);
                if v.is_nan() {
                    Err(NvmixError::Domain("zero mixing value at zero distance".into()))
                } else {
                    Ok(RqmcResult::exact(v))
                }
            })
            .collect();
    }

    // pilot: crude log-space RQMC on all inputs with shared realizations
    let b = cfg.b;
    let n0 = cfg.n0;
    let pilot_iters = opts.pilot_i_max.min(cfg.i_max).max(1);
    let mut streams: Vec<PointStream> = randomization_seeds(seed, b)
        .into_iter()
        .map(|s| PointStream::new(cfg.points, 1, s))
        .collect::<Result<_>>()?;
    let mut means = vec![vec![0.0; b]; n];
    let mut pilot_max = vec![f64::NEG_INFINITY; n];
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(b * n0 * pilot_iters);
    let mut results: Vec<Option<RqmcResult>> = vec![None; n];
    for it in 0..pilot_iters {
        let batch: Vec<(Vec<f64>, Vec<f64>)> = streams
            .par_iter_mut()
            .map(|s| {
                let mut us = vec![0.0; n0];
                for u in us.iter_mut() {
                    let mut p = [0.0];
                    s.next_into(&mut p);
                    *u = p[0];
                }
                let ws: Vec<f64> = us.iter().map(|&u| mix.quantile_raw(u)).collect();
                (us, ws)
            })
            .collect();
        for (us, ws) in &batch {
            for (&u, &w) in us.iter().zip(ws) {
                if !(w >= 0.0) {
                    return Err(NvmixError::InvalidMixture { u, value: w });
                }
                pairs.push((u, w));
            }
        }
        let fi = it as f64;
        let upd: Vec<Result<(Vec<f64>, f64)>> = kernels
            .par_iter()
            .map(|k| {
                let mut bm = Vec::with_capacity(b);
                let mut mx = f64::NEG_INFINITY;
                let mut vals = vec![0.0; n0];
                for (_, ws) in &batch {
                    for (v, &w) in vals.iter_mut().zip(ws) {
                        *v = k.log_h_w(w);
                        if v.is_nan() {
                            return Err(NvmixError::Domain("zero mixing value at zero distance".into()));
                        }
                        mx = mx.max(*v);
                    }
                    bm.push(crate::rqmc::lse_slice(&vals) - (n0 as f64).ln());
                }
                Ok((bm, mx))
            })
            .collect();
        let mut all_done = true;
        for (j, r) in upd.into_iter().enumerate() {
            let (bm, mx) = r?;
            pilot_max[j] = pilot_max[j].max(mx);
            for (m, x) in means[j].iter_mut().zip(bm) {
                *m = if it == 0 { x } else { -(fi + 1.0).ln() + ln_add(fi.ln() + *m, x) };
            }
            let (est, err) = combine_log(&means[j], cfg.ci_mult);
            let k = &kernels[j];
            let missed = k.d2 >= D2_CRUDE && pilot_max[j] < k.log_h_max() - PILOT_PEAK_GAP;
            let ok = cfg.meets(est, err) && !missed;
            if !ok {
                all_done = false;
            }
            results[j] = Some(RqmcResult {
                estimate: est,
                error_estimate: err,
                n_per_randomization: (it + 1) * n0,
                iterations_used: it + 1,
                converged: ok,
            });
        }
        if all_done {
            break;
        }
    }
    if opts.crude_only {
        return Ok(results.into_iter().map(|r| r.unwrap()).collect());
    }

    let plain = QuantileCache::from_pairs(pairs);
    let mirrored = plain.mirrored();
    let w_med = mix.quantile_raw(0.5);
    results
        .into_par_iter()
        .enumerate()
        .map(|(j, r)| {
            let r = r.unwrap();
            if r.converged {
                return Ok(r);
            }
            let k = &kernels[j];
            let sj = derive_seed(seed, j as u64);
            if k.d2 < D2_CRUDE {
                // h decreases in u; a pole at 0 is handled in log-coordinates
                if log_scale_pays(k, mix, false, 1.0) {
                    return log_coordinate_estimate(k, mix, false, 0.0, 1.0, cfg, sj);
                }
                return rqmc_log_estimate(|u: &[f64]| k.log_h_w(mix.quantile_raw(u[0])), 1, cfg, sj);
            }
            // work from whichever end of (0,1) the peak is closer to
            let mut local = if k.w_star() > w_med { mirrored.clone() } else { plain.clone() };
            adaptive_one(k, mix, &mut local, cfg, opts, sj)
        })
        .collect()
}

/// Fraction of the region below which a peak counts as squeezed against
/// the inner end; the region is then integrated in log-coordinates.
const SQUEEZE: f64 = 1e-2;
const TRIM_GRID: usize = 256;
/// Orders of magnitude below the maximum at which the log-coordinate
/// region is cut on the left.
const TRIM_DECADES: f64 = 16.0;

/// Region-splitting estimate for one kernel, in the coordinate of `cache`.
fn adaptive_one(
    k: &LogKernel,
    mix: &MixtureSpec,
    cache: &mut QuantileCache,
    cfg: &RqmcConfig,
    opts: &DensityOptions,
    seed: u64,
) -> Result<RqmcResult> {
    let pk = peak(k, mix, cache, opts.eps_bisec)?;
    let m = cache.is_mirrored();
    if pk.boundary && pk.u_star <= 0.0 && log_scale_pays(k, mix, m, 1.0) {
        // peak lost to underflow at the inner end: same shape as D² = 0
        return log_coordinate_estimate(k, mix, m, 0.0, 1.0, cfg, seed);
    }
    let (t_l, t_r) = region_bounds(k, mix, cache, &pk, opts.k_th, opts.eps_bisec)?;
    let left = if t_l > 0.0 { log_trapezoid(k, cache, 0.0, t_l) } else { f64::NEG_INFINITY };
    let right = if t_r < 1.0 { log_trapezoid(k, cache, t_r, 1.0) } else { f64::NEG_INFINITY };
    let squeezed = !pk.boundary && pk.u_star - t_l < SQUEEZE * (t_r - t_l);
    let mid = if squeezed {
        log_coordinate_estimate(k, mix, m, t_l, t_r, cfg, seed)?
    } else {
        let width = t_r - t_l;
        let mut r = log_estimate_two_batches(|v: &[f64]| k.log_h_w(orient(m, t_l + width * v[0], mix)), cfg, seed)?;
        r.estimate += width.ln();
        r
    };
    let est = crate::rqmc::lse_slice(&[left, mid.estimate, right]);
    // a peak pushed against the far end by rounding cannot be resolved
    let far_end = if m { pk.u_star <= 0.0 } else { pk.u_star >= 1.0 };
    let pinned = pk.boundary && far_end && unbounded_above(mix);
    Ok(RqmcResult { estimate: est, converged: mid.converged && !pinned, ..mid })
}

/// A boundary maximum at the inner end still favours log-coordinates when
/// `h` keeps growing towards 0 (a peak lost to underflow) rather than
/// flattening out (a genuinely bounded support).
fn log_scale_pays(k: &LogKernel, mix: &MixtureSpec, m: bool, t_r: f64) -> bool {
    k.log_h_w(orient(m, U_TINY, mix)) - k.log_h_w(orient(m, SQUEEZE * t_r, mix)) > 1.0
}

/// Estimate over `(t_l, t_r)` with the substitution `t = e^y`. A region
/// reaching 0 starts at `U_TINY`; the mass below it is negligible.
fn log_coordinate_estimate(
    k: &LogKernel,
    mix: &MixtureSpec,
    m: bool,
    t_l: f64,
    t_r: f64,
    cfg: &RqmcConfig,
    seed: u64,
) -> Result<RqmcResult> {
    let (mut a, b) = (t_l.max(U_TINY).ln(), t_r.ln());
    let g = |y: f64| k.log_h_w(orient(m, y.exp(), mix)) + y;
    // Drop the left stretch where e^g is negligible against its maximum;
    // otherwise most points land where there is no mass.
    let grid: Vec<f64> = (0..=TRIM_GRID).map(|i| g(a + (b - a) * i as f64 / TRIM_GRID as f64)).collect();
    let g_max = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cut = g_max - TRIM_DECADES * std::f64::consts::LN_10 - (b - a).ln();
    if let Some(first) = grid.iter().position(|&v| v > cut) {
        if first > 1 {
            a += (b - a) * (first - 1) as f64 / TRIM_GRID as f64;
        }
    }
    let span = b - a;
    let mut r = log_estimate_two_batches(
        |v: &[f64]| {
            let y = a + span * v[0];
            k.log_h_w(orient(m, y.exp(), mix)) + y
        },
        cfg,
        seed,
    )?;
    r.estimate += span.ln();
    Ok(r)
}

// One-dimensional log-space run that never stops after a single batch: on
// smooth peaked integrands the first batch's spread is unreliable.
fn log_estimate_two_batches<G>(g: G, cfg: &RqmcConfig, seed: u64) -> Result<RqmcResult>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    let mut run = RqmcRun::new_log(1, cfg, seed)?;
    run.step(&g)?;
    run.run(&g)
}

fn unbounded_above(mix: &MixtureSpec) -> bool {
    match mix.family() {
        Family::InverseGamma | Family::InverseBurr | Family::Pareto => true,
        Family::Constant => false,
        Family::Blackbox { support, .. } => *support != crate::mixtures::SupportHint::Bounded,
    }
}

/// Closed-form log-density for the constant, inverse-gamma and Pareto
/// mixtures.
pub fn closed_log_density(model: &NvmModel, x: &[f64]) -> Result<f64> {
    let d2 = mahalanobis_sq(x, model.loc.as_slice(), &model.factor)?;
    closed_log_density_d2(d2, model.dim(), model.factor.log_det()?, &model.mix)
}

/// Closed form in terms of the squared Mahalanobis distance.
pub fn closed_log_density_d2(d2: f64, d: usize, log_det: f64, mix: &MixtureSpec) -> Result<f64> {
    let df = d as f64;
    let base = -0.5 * df * LN_2PI - 0.5 * log_det;
    match mix.family() {
        Family::Constant => {
            let c = mix.params()[0];
            Ok(base - 0.5 * df * c.ln() - d2 / (2.0 * c))
        }
        Family::InverseGamma => {
            let nu = mix.params()[0];
            Ok(ln_gamma(0.5 * (nu + df)) - ln_gamma(0.5 * nu) - 0.5 * df * (nu * std::f64::consts::PI).ln()
                - 0.5 * log_det
                - 0.5 * (nu + df) * (d2 / nu).ln_1p())
        }
        Family::Pareto => {
            let alpha = mix.params()[0];
            let a = alpha + 0.5 * df;
            if d2 < D2_CRUDE {
                return Ok(base + alpha.ln() - a.ln());
            }
            Ok(base + alpha.ln() - a * (0.5 * d2).ln() + ln_lower_incomplete_gamma(a, 0.5 * d2))
        }
        _ => Err(NvmixError::Unsupported(format!("no closed-form density for {}", mix.family().name()))),
    }
}

/// `log f(x_i)` for the rows of `x`.
pub fn log_density_batch(
    x: &DMatrix<f64>,
    model: &NvmModel,
    cfg: &RqmcConfig,
    opts: &DensityOptions,
    seed: u64,
) -> Result<Vec<RqmcResult>> {
    if !model.is_full_rank() {
        return Err(NvmixError::Singular { rank: model.factor.rank, dim: model.dim() });
    }
    if x.ncols() != model.dim() {
        return Err(NvmixError::DimensionMismatch(format!("points have {} columns, dimension is {}", x.ncols(), model.dim())));
    }
    let d2 = mahalanobis_rows(x, &model.loc, &model.factor)?;
    let log_det = model.factor.log_det()?;
    let kernels: Vec<LogKernel> =
        d2.iter().map(|&m| DensityIntegrandParams::new(m, model.dim(), log_det).kernel()).collect();
    log_integral_batch(&kernels, &model.mix, cfg, opts, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use statrs::distribution::{ContinuousCDF, InverseGamma};

    fn ig(nu: f64) -> MixtureSpec {
        MixtureSpec::inverse_gamma(nu).unwrap()
    }

    #[test]
    fn log_h_examples() {
        let one = MixtureSpec::constant(1.0).unwrap();
        let p = DensityIntegrandParams::new(0.0, 4, 0.0);
        for u in [0.1, 0.5, 0.9] {
            assert_relative_eq!(log_h(u, &p, &one).unwrap(), -2.0 * LN_2PI, epsilon = 1e-14);
        }
        let p = DensityIntegrandParams::new(2.0, 2, 0.0);
        assert_relative_eq!(log_h(0.3, &p, &one).unwrap(), -2.837_877_066_409_345, epsilon = 1e-12);
        let mut prev = f64::INFINITY;
        for d2 in [0.0, 1.0, 10.0, 100.0, 1e4] {
            let v = log_h(0.4, &DensityIntegrandParams::new(d2, 3, 0.0), &ig(2.0)).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(log_h(0.0, &p, &one).is_err());
    }

    #[test]
    fn peak_matches_inverse_gamma_cdf() {
        for (nu, d2) in [(4.0, 6.0), (2.0, 40.0), (1.0, 3.0)] {
            let p = DensityIntegrandParams::new(d2, 5, 0.3);
            let k = p.kernel();
            let pk = peak(&k, &ig(nu), &mut QuantileCache::new(), 1e-9).unwrap();
            let oracle = InverseGamma::new(nu / 2.0, nu / 2.0).unwrap().cdf(d2 / 5.0);
            assert_relative_eq!(pk.u_star, oracle, max_relative = 1e-7);
            assert!(!pk.boundary);
        }
        let k = DensityIntegrandParams::new(2.0, 2, 0.0).kernel();
        assert_relative_eq!(k.log_h_max(), (-1.0f64).exp().ln() - LN_2PI, epsilon = 1e-14);
        assert_relative_eq!(k.log_h_max().exp(), 0.058_549_831_524_319_16, max_relative = 1e-12);
    }

    #[test]
    fn pareto_peak_on_boundary() {
        // w* = 0.2 lies below the support [1, inf)
        let k = DensityIntegrandParams::new(2.0, 5, 0.0).kernel();
        let mix = MixtureSpec::pareto(3.0).unwrap();
        let pk = peak(&k, &mix, &mut QuantileCache::new(), 1e-6).unwrap();
        assert!(pk.boundary);
        assert_eq!(pk.u_star, 0.0);
        assert_relative_eq!(pk.log_h_max, k.log_h_w(1.0), max_relative = 1e-10);
    }

    #[test]
    fn unimodal_with_distribution_free_peak() {
        let params = DensityIntegrandParams::new(7.0, 4, 0.2);
        let k = params.kernel();
        for mix in [ig(3.0), MixtureSpec::pareto(1.5).unwrap()] {
            let n = 10_000;
            let vals: Vec<f64> = (1..n).map(|i| k.log_h_w(mix.quantile_raw(i as f64 / n as f64))).collect();
            let imax = (0..vals.len()).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
            for i in 1..vals.len() {
                if i <= imax {
                    assert!(vals[i] >= vals[i - 1] - 1e-12, "{} ascent broken at {i}", mix);
                } else {
                    assert!(vals[i] <= vals[i - 1] + 1e-12, "{} descent broken at {i}", mix);
                }
            }
            assert_relative_eq!(vals[imax], k.log_h_max(), max_relative = 1e-6);
        }
    }

    #[test]
    fn region_bounds_hit_threshold() {
        let k = DensityIntegrandParams::new(300.0, 10, 0.0).kernel();
        let mix = ig(2.0);
        let mut cache = QuantileCache::new();
        let pk = peak(&k, &mix, &mut cache, 1e-9).unwrap();
        let (ul, ur) = region_bounds(&k, &mix, &mut cache, &pk, 10.0, 1e-9).unwrap();
        assert!(0.0 < ul && ul < pk.u_star && pk.u_star < ur && ur < 1.0);
        let th = pk.log_h_max - 10.0 * std::f64::consts::LN_10;
        for u in [ul, ur] {
            assert!((k.log_h_w(mix.quantile_raw(u)) - th).abs() < 1e-3, "u={u}");
        }
        // larger k_th widens the region
        let (ul2, ur2) = region_bounds(&k, &mix, &mut cache, &pk, 40.0, 1e-9).unwrap();
        assert!(ul2 < ul && ur2 > ur);
    }

    #[test]
    fn cache_bracket() {
        let c = QuantileCache::from_pairs(vec![(0.5, 2.0), (0.1, 1.0), (0.9, 3.0)]);
        assert_eq!(c.bracket(2.5), (0.5, 0.9));
        assert_eq!(c.bracket(2.0), (0.1, 0.5));
        assert_eq!(c.bracket(0.1), (0.0, 0.1));
        assert_eq!(c.bracket(9.0), (0.9, 1.0));
        let m = c.mirrored();
        assert!(m.is_mirrored());
        assert_eq!(m.ts(), &[0.09999999999999998, 0.5, 0.9]);
        assert_eq!(m.bracket(2.5), (0.09999999999999998, 0.5));
    }

    #[test]
    fn closed_form_examples() {
        let cauchy = NvmModel::standard(1, ig(1.0)).unwrap();
        assert_relative_eq!(closed_log_density(&cauchy, &[0.0]).unwrap(), -std::f64::consts::PI.ln(), epsilon = 1e-14);
        let t10 = NvmModel::standard(10, ig(4.0)).unwrap();
        let want = ln_gamma(7.0) - ln_gamma(2.0) - 5.0 * (4.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(closed_log_density(&t10, &[0.0; 10]).unwrap(), want, epsilon = 1e-12);
        let n2 = NvmModel::standard(2, MixtureSpec::constant(1.0).unwrap()).unwrap();
        assert_relative_eq!(closed_log_density(&n2, &[0.0, 0.0]).unwrap(), -LN_2PI, epsilon = 1e-14);
        let bb = NvmModel::standard(2, MixtureSpec::inverse_burr(2.0, 2.0).unwrap()).unwrap();
        assert!(matches!(closed_log_density(&bb, &[0.0, 0.0]), Err(NvmixError::Unsupported(_))));
    }

    // Simpson's rule in t = log w for the Pareto mixture density.
    fn pareto_quadrature(alpha: f64, d: usize, d2: f64) -> f64 {
        let df = d as f64;
        let f = |t: f64| {
            let w = t.exp();
            (-0.5 * df * (LN_2PI + t) - d2 / (2.0 * w) + alpha.ln() - alpha * t).exp()
        };
        let (a, b, n) = (0.0, 80.0, 200_000);
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        (s * h / 3.0).ln()
    }

    #[test]
    fn pareto_closed_form_against_quadrature() {
        let mix = MixtureSpec::pareto(6.0).unwrap();
        for d2 in [0.5, 5.0, 30.0, 200.0] {
            let got = closed_log_density_d2(d2, 10, 0.0, &mix).unwrap();
            assert_relative_eq!(got, pareto_quadrature(6.0, 10, d2), max_relative = 1e-8);
        }
    }

    fn spread_points(d: usize, radii: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(radii.len(), d, |i, j| radii[i] * ((j + 1) as f64).sqrt() / (d as f64 * (d as f64 + 1.0) / 2.0).sqrt())
    }

    #[test]
    fn adaptive_matches_closed_forms() {
        let cfg = RqmcConfig::default();
        let radii = [0.5, 2.0, 5.0, 20.0, 100.0, 1e3, 1e5];
        let x = spread_points(10, &radii);
        for mix in [ig(4.0), MixtureSpec::pareto(6.0).unwrap()] {
            let model = NvmModel::standard(10, mix.clone()).unwrap();
            let est = log_density_batch(&x, &model, &cfg, &DensityOptions::default(), 3).unwrap();
            for (i, r) in est.iter().enumerate() {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                let want = closed_log_density(&model, &row).unwrap();
                assert!((r.estimate - want).abs() < 1e-3, "{mix} r={} got {} want {want}", radii[i], r.estimate);
                assert!(r.converged, "{mix} r={} {r:?}", radii[i]);
            }
        }
    }

    #[test]
    fn deep_tail_log_density() {
        // log-density around -100 for a t distribution
        let model = NvmModel::standard(10, ig(4.0)).unwrap();
        let x = spread_points(10, &[1.6e3, 2.5e3]);
        let est = log_density_batch(&x, &model, &RqmcConfig::default(), &DensityOptions::default(), 9).unwrap();
        for (i, r) in est.iter().enumerate() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let want = closed_log_density(&model, &row).unwrap();
            assert!(want < -95.0 && want > -110.0, "{want}");
            assert!((r.estimate - want).abs() < 1e-3, "got {} want {want}", r.estimate);
        }
    }

    #[test]
    fn extreme_distances() {
        let model = NvmModel::standard(10, ig(4.0)).unwrap();
        let x = spread_points(10, &[1e8]);
        let r = log_density_batch(&x, &model, &RqmcConfig::default(), &DensityOptions::default(), 9).unwrap();
        let want = closed_log_density(&model, x.row(0).iter().copied().collect::<Vec<_>>().as_slice()).unwrap();
        assert!(want < -250.0);
        assert!((r[0].estimate - want).abs() < 1e-3 && r[0].converged, "{r:?} vs {want}");
        // peak beyond the smallest representable tail level
        let k = DensityIntegrandParams::new(1e200, 10, 0.0).kernel();
        let r = log_integral_batch(&[k], &ig(4.0), &RqmcConfig::default(), &DensityOptions::default(), 1).unwrap();
        assert!(!r[0].converged);
    }

    #[test]
    fn crude_path_is_biased_far_out() {
        let model = NvmModel::standard(10, ig(2.0)).unwrap();
        let x = spread_points(10, &[1e4]);
        let cfg = RqmcConfig::default();
        let crude = DensityOptions { crude_only: true, ..Default::default() };
        let c = log_density_batch(&x, &model, &cfg, &crude, 1).unwrap()[0].estimate;
        let a = log_density_batch(&x, &model, &cfg, &DensityOptions::default(), 1).unwrap()[0].estimate;
        let want = closed_log_density(&model, x.row(0).iter().copied().collect::<Vec<_>>().as_slice()).unwrap();
        assert!((a - want).abs() < 1e-3);
        assert!((c - want).abs() > 1e-2, "crude {c} want {want}");
    }

    #[test]
    fn constant_mixture_is_exact() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = NvmModel::new(DVector::from_vec(vec![1.0, -1.0]), s, MixtureSpec::constant(1.0).unwrap()).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 3.0, 1.0]);
        let r = log_density_batch(&x, &m, &RqmcConfig::default(), &DensityOptions::default(), 1).unwrap();
        for (i, ri) in r.iter().enumerate() {
            assert_eq!(ri.error_estimate, 0.0);
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            assert_relative_eq!(ri.estimate, closed_log_density(&m, &row).unwrap(), epsilon = 1e-14);
        }
    }

    #[test]
    fn origin_uses_crude_path() {
        let model = NvmModel::standard(3, ig(5.0)).unwrap();
        let x = DMatrix::zeros(1, 3);
        let r = log_density_batch(&x, &model, &RqmcConfig::default(), &DensityOptions::default(), 2).unwrap();
        let want = closed_log_density(&model, &[0.0; 3]).unwrap();
        assert!((r[0].estimate - want).abs() < 1e-3);
    }

    #[test]
    fn small_distances_in_ten_dimensions() {
        // the peak underflows to u = 0 and h has a pole in log(1/u) there
        let mix_list = [ig(2.5), ig(10.0), MixtureSpec::pareto(2.0).unwrap()];
        let d2s = [0.0, 1e-13, 1e-6, 1e-3, 1e-2, 0.1, 0.5];
        for mix in &mix_list {
            let kernels: Vec<LogKernel> = d2s.iter().map(|&d2| DensityIntegrandParams::new(d2, 10, 0.0).kernel()).collect();
            let res = log_integral_batch(&kernels, mix, &RqmcConfig::default(), &DensityOptions::default(), 4).unwrap();
            for (r, &d2) in res.iter().zip(&d2s) {
                let want = closed_log_density_d2(d2, 10, 0.0, mix).unwrap();
                assert!(r.converged && r.iterations_used < 100, "{mix} at {d2}: {r:?}");
                assert!((r.estimate - want).abs() < 1e-3, "{mix} at {d2}: {} vs {want}", r.estimate);
            }
        }
    }

    #[test]
    fn batch_is_deterministic() {
        let model = NvmModel::standard(3, ig(1.5)).unwrap();
        let x = spread_points(3, &[0.1, 10.0, 1e3]);
        let a = log_density_batch(&x, &model, &RqmcConfig::default(), &DensityOptions::default(), 5).unwrap();
        let b = log_density_batch(&x, &model, &RqmcConfig::default(), &DensityOptions::default(), 5).unwrap();
        assert_eq!(a, b);
    }
}
