//! Mixing variables described by their quantile function.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{NvmixError, Result};
use crate::special::gamma_quantile;

/// User-supplied quantile function `(u, nu) -> F_W^{-1}(u; nu)`.
pub type QuantileFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// What is known about the support of `W`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupportHint {
    UnboundedPositive,
    Bounded,
    Unknown,
}

/// Parametric family of the mixing variable.
#[derive(Clone)]
pub enum Family {
    /// `W = c` almost surely.
    Constant,
    /// Inverse-gamma with shape and scale `nu/2` (multivariate t).
    InverseGamma,
    /// Pareto with scale 1 and tail index `alpha`.
    Pareto,
    /// Reciprocal of a Burr(`nu1`, `nu2`) variable.
    InverseBurr,
    /// Black-box quantile function with `p` parameters.
    Blackbox { name: String, quantile: QuantileFn, p: usize, support: SupportHint },
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Constant => write!(f, "Constant"),
            Family::InverseGamma => write!(f, "InverseGamma"),
            Family::Pareto => write!(f, "Pareto"),
            Family::InverseBurr => write!(f, "InverseBurr"),
            Family::Blackbox { name, p, .. } => write!(f, "Blackbox({name}, p={p})"),
        }
    }
}

impl Family {
    pub fn name(&self) -> &str {
        match self {
            Family::Constant => "constant",
            Family::InverseGamma => "inverse.gamma",
            Family::Pareto => "pareto",
            Family::InverseBurr => "inverse.burr",
            Family::Blackbox { name, .. } => name,
        }
    }

    /// Number of mixing parameters.
    pub fn n_params(&self) -> usize {
        match self {
            Family::Constant | Family::InverseGamma | Family::Pareto => 1,
            Family::InverseBurr => 2,
            Family::Blackbox { p, .. } => *p,
        }
    }

    /// Starting parameters used when nothing better is available.
    pub fn default_params(&self) -> Vec<f64> {
        match self {
            Family::Constant => vec![1.0],
            Family::InverseGamma => vec![5.0],
            Family::Pareto => vec![2.0],
            Family::InverseBurr => vec![2.0, 2.0],
            Family::Blackbox { p, .. } => vec![1.0; *p],
        }
    }
}

/// A mixing distribution: family plus parameter vector.
#[derive(Clone, Debug)]
pub struct MixtureSpec {
    family: Family,
    params: Vec<f64>,
}

impl MixtureSpec {
    pub fn constant(c: f64) -> Result<Self> {
        Self::new(Family::Constant, vec![c])
    }

    pub fn inverse_gamma(nu: f64) -> Result<Self> {
        Self::new(Family::InverseGamma, vec![nu])
    }

    pub fn pareto(alpha: f64) -> Result<Self> {
        Self::new(Family::Pareto, vec![alpha])
    }

    pub fn inverse_burr(nu1: f64, nu2: f64) -> Result<Self> {
        Self::new(Family::InverseBurr, vec![nu1, nu2])
    }

    /// Mixture given only through a quantile callback.
    pub fn blackbox<F>(name: &str, quantile: F, params: Vec<f64>) -> Result<Self>
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        let family = Family::Blackbox {
            name: name.to_string(),
            quantile: Arc::new(quantile),
            p: params.len(),
            support: SupportHint::Unknown,
        };
        Self::new(family, params)
    }

    /// Attach a support hint to a black-box mixture.
    pub fn with_support(mut self, hint: SupportHint) -> Self {
        if let Family::Blackbox { support, .. } = &mut self.family {
            *support = hint;
        }
        self
    }

    pub fn new(family: Family, params: Vec<f64>) -> Result<Self> {
        if params.len() != family.n_params() {
            return Err(NvmixError::Domain(format!(
                "{} takes {} parameter(s), got {}",
                family.name(),
                family.n_params(),
                params.len()
            )));
        }
        let builtin = !matches!(family, Family::Blackbox { .. });
        if builtin && params.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(NvmixError::Domain(format!(
                "{} parameters must be positive and finite, got {params:?}",
                family.name()
            )));
        }
        Ok(Self { family, params })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Same family, new parameters.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        Self::new(self.family.clone(), params.to_vec())
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.family, Family::Constant)
    }

    pub fn support_hint(&self) -> SupportHint {
        match &self.family {
            Family::Constant => SupportHint::Bounded,
            Family::InverseGamma | Family::InverseBurr => SupportHint::UnboundedPositive,
            // support [1, inf): bounded away from zero
            Family::Pareto => SupportHint::Bounded,
            Family::Blackbox { support, .. } => *support,
        }
    }

    /// `F_W^{-1}(u)` without argument checks. May return NaN or a negative
    /// value for a misbehaving black box.
    #[inline]
    pub fn quantile_raw(&self, u: f64) -> f64 {
        let p = &self.params;
        match &self.family {
            Family::Constant => p[0],
            Family::InverseGamma => {
                let half = 0.5 * p[0];
                half / gamma_quantile(half, u, true)
            }
            Family::Pareto => (-(-u).ln_1p() / p[0]).exp(),
            Family::InverseBurr => (-u.ln() / p[1]).exp_m1().powf(-1.0 / p[0]),
            Family::Blackbox { quantile, .. } => quantile(u, p),
        }
    }

    /// `F_W^{-1}(1 - p)`, accurate for small `p`. Black boxes only see `1 - p`.
    #[inline]
    pub fn quantile_upper_raw(&self, p: f64) -> f64 {
        let par = &self.params;
        match &self.family {
            Family::Constant => par[0],
            Family::InverseGamma => {
                let half = 0.5 * par[0];
                half / gamma_quantile(half, p, false)
            }
            Family::Pareto => (-p.ln() / par[0]).exp(),
            Family::InverseBurr => (-(-p).ln_1p() / par[1]).exp_m1().powf(-1.0 / par[0]),
            Family::Blackbox { quantile, .. } => quantile(1.0 - p, par),
        }
    }

    /// `F_W^{-1}(u)` for `u` in (0,1).
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(NvmixError::Domain(format!("quantile level {u} outside (0,1)")));
        }
        let w = self.quantile_raw(u);
        if w.is_nan() || w < 0.0 {
            return Err(NvmixError::InvalidMixture { u, value: w });
        }
        Ok(w)
    }

    /// E(sqrt(W)): exact for a constant, otherwise a midpoint rule over
    /// `n_pilot` quantile levels.
    pub fn mean_sqrt_w(&self, n_pilot: usize) -> f64 {
        if let Family::Constant = self.family {
            return self.params[0].sqrt();
        }
        let n = n_pilot.max(1) as f64;
        let s: f64 = (0..n_pilot.max(1))
            .map(|k| {
                let w = self.quantile_raw((k as f64 + 0.5) / n);
                if w.is_finite() && w >= 0.0 {
                    w.sqrt()
                } else {
                    0.0
                }
            })
            .sum();
        s / n
    }
}

impl fmt::Display for MixtureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p: Vec<String> = self.params.iter().map(|v| v.to_string()).collect();
        write!(f, "{}:{}", self.family.name(), p.join(","))
    }
}

impl FromStr for MixtureSpec {
    type Err = NvmixError;

    /// `"constant:1"`, `"inverse.gamma:2.5"`, `"pareto:1.6"`,
    /// `"inverse.burr:2.15,3.61"`. Without parameters the family's default
    /// starting values are used.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a)),
            None => (s.trim(), None),
        };
        let family = match name.to_ascii_lowercase().as_str() {
            "constant" | "normal" => Family::Constant,
            "inverse.gamma" | "inverse_gamma" | "t" => Family::InverseGamma,
            "pareto" => Family::Pareto,
            "inverse.burr" | "inverse_burr" => Family::InverseBurr,
            other => return Err(NvmixError::InvalidInput(format!("unknown mixture '{other}'"))),
        };
        let params = match args {
            Some(a) => a
                .split(',')
                .map(|t| {
                    t.trim().parse::<f64>().map_err(|_| {
                        NvmixError::InvalidInput(format!("bad mixture parameter '{t}'"))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            None => family.default_params(),
        };
        Self::new(family, params)
    }
}
