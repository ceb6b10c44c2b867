//! Normal variance mixture model: location, scale and mixing distribution.

use nalgebra::{DMatrix, DVector};

use crate::error::{NvmixError, Result};
use crate::linalg::{factorize, ScaleFactor};
use crate::mixtures::MixtureSpec;

/// `X = μ + sqrt(W) A Z` with `A Aᵀ = Σ`.
#[derive(Clone, Debug)]
pub struct NvmModel {
    pub loc: DVector<f64>,
    pub scale: DMatrix<f64>,
    pub factor: ScaleFactor,
    pub mix: MixtureSpec,
}

impl NvmModel {
    /// Build a model; a rank-deficient scale matrix gets the staircase factor.
    pub fn new(loc: DVector<f64>, scale: DMatrix<f64>, mix: MixtureSpec) -> Result<Self> {
        if loc.len() != scale.nrows() {
            return Err(NvmixError::DimensionMismatch(format!(
                "location has {} entries, scale is {}x{}",
                loc.len(),
                scale.nrows(),
                scale.ncols()
            )));
        }
        let factor = factorize(&scale, true)?;
        Ok(Self { loc, scale, factor, mix })
    }

    /// Zero location, identity scale.
    pub fn standard(d: usize, mix: MixtureSpec) -> Result<Self> {
        Self::new(DVector::zeros(d), DMatrix::identity(d, d), mix)
    }

    /// Zero location and the given scale matrix.
    pub fn centered(scale: DMatrix<f64>, mix: MixtureSpec) -> Result<Self> {
        Self::new(DVector::zeros(scale.nrows()), scale, mix)
    }

    pub fn dim(&self) -> usize {
        self.loc.len()
    }

    pub fn is_full_rank(&self) -> bool {
        self.factor.is_full_rank()
    }

    pub fn with_mixture(&self, mix: MixtureSpec) -> Self {
        Self { mix, ..self.clone() }
    }
}
