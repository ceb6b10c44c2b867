//! Random variates from a normal variance mixture by inversion.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{NvmixError, Result};
use crate::model::NvmModel;
use crate::rqmc::SobolStream;
use crate::rqmc::U_FLOOR;
use crate::special::norm_quantile;

/// Rows generated per independent block of the underlying stream.
pub const BLOCK_ROWS: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SampleMethod {
    #[default]
    Pseudo,
    Sobol,
}

impl std::str::FromStr for SampleMethod {
    type Err = NvmixError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pseudo" | "prng" => Ok(Self::Pseudo),
            "sobol" | "inversion-sobol" => Ok(Self::Sobol),
            other => Err(NvmixError::InvalidInput(format!("unknown sampling method '{other}'"))),
        }
    }
}

/// `n x d` draws `μ + sqrt(W) L Z`. Row `i` uses uniforms `(u_0, ..., u_r)`:
/// `W = F_W^-1(u_0)` and `Z_j = Φ^-1(u_j)`.
pub fn rnvmix(n: usize, model: &NvmModel, seed: u64, method: SampleMethod) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(NvmixError::Domain("n must be at least 1".into()));
    }
    let d = model.dim();
    let l = model.factor.loading_matrix();
    let r = l.ncols();
    let dim = r + 1;
    let sobol = match method {
        SampleMethod::Sobol => Some(SobolStream::new(dim, seed)?),
        SampleMethod::Pseudo => None,
    };
    let n_blocks = n.div_ceil(BLOCK_ROWS);
    let blocks: Vec<Vec<f64>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * BLOCK_ROWS;
            let rows = BLOCK_ROWS.min(n - start);
            let mut u = vec![0.0; dim * rows];
            match &sobol {
                Some(s) => {
                    let mut s = s.clone();
                    s.set_skip(start as u64);
                    for row in u.chunks_exact_mut(dim) {
                        s.next_into(row);
                    }
                }
                None => {
                    let mut rng = ChaCha20Rng::seed_from_u64(seed);
                    rng.set_stream(b as u64);
                    for x in u.iter_mut() {
                        *x = rng.random::<f64>();
                    }
                }
            }
            let mut out = vec![0.0; rows * d];
            let mut z = vec![0.0; r];
            for (k, row) in u.chunks_exact(dim).enumerate() {
                let nudge = |x: f64| if x == 0.0 { U_FLOOR } else { x };
                let sw = model.mix.quantile(nudge(row[0]))?.sqrt();
                for (zj, &uj) in z.iter_mut().zip(&row[1..]) {
                    *zj = norm_quantile(nudge(uj));
                }
                for i in 0..d {
                    let mut s = 0.0;
                    for (j, zj) in z.iter().enumerate() {
                        s += l[(i, j)] * zj;
                    }
                    out[k * d + i] = model.loc[i] + sw * s;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = blocks.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(n, d, &flat))
}
