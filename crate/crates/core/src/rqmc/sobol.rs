//! Extensible Sobol' sequence with Joe-Kuo direction numbers and a digital
//! shift.
//!
//! Points are produced in Gray-code order. A stream remembers how many points
//! it has handed out, so asking for `n` and then `m` points returns exactly
//! the first `n + m` points of the sequence.

use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{NvmixError, Result};

/// Number of bits in each coordinate.
const BITS: usize = 32;
const SCALE: f64 = 1.0 / 4_294_967_296.0;

static JOE_KUO_TABLE: &str = include_str!("../../data/new-joe-kuo-6.21201");

/// Primitive polynomial and initial direction numbers for one dimension.
struct Primitive {
    degree: u32,
    coeffs: u32,
    m: Vec<u32>,
}

fn primitives() -> &'static [Primitive] {
    static TABLE: OnceLock<Vec<Primitive>> = OnceLock::new();
    TABLE.get_or_init(|| {
        JOE_KUO_TABLE
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let mut it = line.split_ascii_whitespace().map(|t| t.parse::<u32>().unwrap());
                let _dim = it.next().unwrap();
                let degree = it.next().unwrap();
                let coeffs = it.next().unwrap();
                let m: Vec<u32> = it.collect();
                debug_assert_eq!(m.len(), degree as usize);
                Primitive { degree, coeffs, m }
            })
            .collect()
    })
}

/// Largest dimension covered by the bundled direction numbers.
pub fn max_dimension() -> usize {
    primitives().len() + 1
}

/// Direction numbers `v[j][k]` for coordinate `j` and bit `k` (k = 0 is the
/// most significant bit).
fn direction_numbers(dim: usize) -> Result<Vec<[u32; BITS]>> {
    let max = max_dimension();
    if dim == 0 || dim > max {
        return Err(NvmixError::UnsupportedDimension { requested: dim, max });
    }
    let table = primitives();
    let mut out = Vec::with_capacity(dim);
    let mut first = [0u32; BITS];
    for (k, v) in first.iter_mut().enumerate() {
        *v = 1u32 << (BITS - 1 - k);
    }
    out.push(first);
    for p in table.iter().take(dim - 1) {
        let s = p.degree as usize;
        let mut v = [0u32; BITS];
        for k in 0..s.min(BITS) {
            v[k] = p.m[k] << (BITS - 1 - k);
        }
        for k in s..BITS {
            let mut x = v[k - s] ^ (v[k - s] >> s);
            for i in 1..s {
                if (p.coeffs >> (s - 1 - i)) & 1 == 1 {
                    x ^= v[k - i];
                }
            }
            v[k] = x;
        }
        out.push(v);
    }
    Ok(out)
}

/// Digitally shifted Sobol' point stream.
#[derive(Clone, Debug)]
pub struct SobolStream {
    dim: usize,
    skip: u64,
    shift: Vec<u32>,
    directions: Arc<Vec<[u32; BITS]>>,
    // Unshifted integer state of the point with index `skip`.
    state: Vec<u32>,
}

impl SobolStream {
    /// Stream with a digital shift drawn from `seed`.
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let shift = (0..dim).map(|_| rng.random::<u32>()).collect();
        Self::with_shift(dim, shift)
    }

    /// Unrandomized stream (zero shift); the first point is the origin.
    pub fn unshifted(dim: usize) -> Result<Self> {
        Self::with_shift(dim, vec![0; dim])
    }

    /// Stream with an explicit per-coordinate shift.
    pub fn with_shift(dim: usize, shift: Vec<u32>) -> Result<Self> {
        if shift.len() != dim {
            return Err(NvmixError::DimensionMismatch(format!(
                "shift has {} entries, dimension is {dim}",
                shift.len()
            )));
        }
        let directions = Arc::new(direction_numbers(dim)?);
        Ok(Self { dim, skip: 0, shift, directions, state: vec![0; dim] })
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// Number of points already consumed.
    pub fn skip(&self) -> u64 {
        self.skip
    }

    /// Position the stream at point index `skip` without generating the
    /// intermediate points.
    pub fn set_skip(&mut self, skip: u64) {
        let gray = skip ^ (skip >> 1);
        for (j, s) in self.state.iter_mut().enumerate() {
            let v = &self.directions[j];
            let mut x = 0u32;
            for (k, vk) in v.iter().enumerate() {
                if (gray >> k) & 1 == 1 {
                    x ^= vk;
                }
            }
            *s = x;
        }
        self.skip = skip;
    }

    /// Write the next point into `out` (length `dim`) and advance.
    pub fn next_into(&mut self, out: &mut [f64]) {
        for ((o, &s), &sh) in out.iter_mut().zip(&self.state).zip(&self.shift) {
            *o = (s ^ sh) as f64 * SCALE;
        }
        // Gray-code update: flip the direction number of the lowest zero bit.
        let c = (!self.skip).trailing_zeros() as usize;
        if c < BITS {
            for (s, v) in self.state.iter_mut().zip(self.directions.iter()) {
                *s ^= v[c];
            }
        }
        self.skip += 1;
    }

    /// Next `n` points, row-major (`n * dim` values).
    pub fn points(&mut self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * self.dim];
        for row in out.chunks_exact_mut(self.dim) {
            self.next_into(row);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_dimension_is_van_der_corput() {
        let mut s = SobolStream::unshifted(1).unwrap();
        assert_eq!(s.points(4), vec![0.0, 0.5, 0.75, 0.25]);
    }

    #[test]
    fn matches_reference_points() {
        // first eight unscrambled points, dimensions 1..=5, from a reference
        // Joe-Kuo implementation
        let want: [[f64; 5]; 8] = [
            [0.0, 0.0, 0.0, 0.0, 0.0],
            [0.5, 0.5, 0.5, 0.5, 0.5],
            [0.75, 0.25, 0.25, 0.25, 0.75],
            [0.25, 0.75, 0.75, 0.75, 0.25],
            [0.375, 0.375, 0.625, 0.875, 0.375],
            [0.875, 0.875, 0.125, 0.375, 0.875],
            [0.625, 0.125, 0.875, 0.625, 0.625],
            [0.125, 0.625, 0.375, 0.125, 0.125],
        ];
        let mut s = SobolStream::unshifted(5).unwrap();
        let pts = s.points(8);
        for (i, row) in want.iter().enumerate() {
            assert_eq!(&pts[i * 5..(i + 1) * 5], row, "point {i}");
        }
    }

    #[test]
    fn extensible() {
        let mut a = SobolStream::new(7, 11).unwrap();
        let mut b = SobolStream::new(7, 11).unwrap();
        let mut first = a.points(4);
        first.extend(a.points(4));
        assert_eq!(first, b.points(8));
    }

    #[test]
    fn set_skip_jumps_to_same_state() {
        let mut a = SobolStream::new(3, 5).unwrap();
        let _ = a.points(37);
        let mut b = SobolStream::new(3, 5).unwrap();
        b.set_skip(37);
        assert_eq!(a.points(10), b.points(10));
    }

    #[test]
    fn dimension_limit() {
        assert!(max_dimension() >= 1111);
        assert!(matches!(
            SobolStream::unshifted(max_dimension() + 1),
            Err(NvmixError::UnsupportedDimension { .. })
        ));
        assert!(SobolStream::unshifted(max_dimension()).is_ok());
    }

    #[test]
    fn shifted_net_is_stratified() {
        let n = 1024;
        let mut s = SobolStream::new(5, 2024).unwrap();
        let pts = s.points(n);
        for j in 0..5 {
            let mut seen = vec![0u32; n];
            for i in 0..n {
                let u = pts[i * 5 + j];
                assert!((0.0..1.0).contains(&u));
                seen[(u * n as f64) as usize] += 1;
            }
            assert!(seen.iter().all(|&c| c == 1), "coordinate {j}");
        }
    }
}
