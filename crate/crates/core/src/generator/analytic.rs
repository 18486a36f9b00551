//! Closed-form flow for an isotropic Gaussian data law `x ~ N(m, s²I)`.
//!
//! With the interpolation path `z_t = (1−t)x + tε`, write `a = 1−t`, `b = t`
//! and `D = a²s² + b²`. Jointly Gaussian conditioning gives
//!
//! ```text
//! E[x | z_t] = m + (a s² / D)(z_t − a m)
//! E[ε | z_t] =     (b    / D)(z_t − a m)
//! v*(z_t, t) = E[ε − x | z_t] = ((b − a s²) / D)(z_t − a m) − m
//! Var[ε − x | z_t] = 1 + s² − (b − a s²)² / D      (per entry)
//! ```

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{LatentDims, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticGaussian {
    mean: Tensor,
    scale: f64,
}

impl AnalyticGaussian {
    pub fn new(mean: Tensor, scale: f64) -> Result<Self> {
        LatentDims::of(&mean)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::OutOfRange {
                what: "analytic scale",
                value: scale,
            });
        }
        Ok(Self { mean, scale })
    }

    /// Uniform mean `m` over every entry.
    pub fn isotropic(dims: LatentDims, mean: f64, scale: f64) -> Result<Self> {
        Self::new(Tensor::full(&dims.shape(), mean), scale)
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dims(&self) -> LatentDims {
        LatentDims::of(&self.mean).expect("validated at construction")
    }

    /// Slope `(b − a s²)/D` of the optimal velocity in `z_t`.
    pub fn velocity_gain(&self, t: f64) -> f64 {
        let (a, b) = (1.0 - t, t);
        let s2 = self.scale * self.scale;
        (b - a * s2) / (a * a * s2 + b * b)
    }

    /// Per-entry variance of `ε − x` given `z_t`, i.e. the Bayes-optimal
    /// flow-matching loss at time `t` under the mean reduction.
    pub fn conditional_variance(&self, t: f64) -> f64 {
        let (a, b) = (1.0 - t, t);
        let s2 = self.scale * self.scale;
        let cov = b - a * s2;
        1.0 + s2 - cov * cov / (a * a * s2 + b * b)
    }

    /// Posterior means `(E[x|z_t], E[ε|z_t])`.
    pub fn posterior_means(&self, zt: &Tensor, t: f64) -> Result<(Tensor, Tensor)> {
        let (a, b) = (1.0 - t, t);
        let s2 = self.scale * self.scale;
        let d = a * a * s2 + b * b;
        let centered = zt.sub(&self.mean.scale(a))?;
        let ex = self.mean.add(&centered.scale(a * s2 / d))?;
        let eps = centered.scale(b / d);
        Ok((ex, eps))
    }

    pub(crate) fn velocity_node(&self, g: &mut Graph, z: Var, t: f64) -> Result<Var> {
        let a = 1.0 - t;
        let centered = g.add_const(z, &self.mean.scale(-a))?;
        let scaled = g.scale(centered, self.velocity_gain(t));
        g.add_const(scaled, &self.mean.scale(-1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive_scale() {
        let dims = LatentDims::new(1, 1, 1, 1);
        assert!(AnalyticGaussian::isotropic(dims, 0.0, 0.0).is_err());
        assert!(AnalyticGaussian::isotropic(dims, 0.0, -1.0).is_err());
    }

    #[test]
    fn standard_law_gain_matches_hand_form() {
        // m=0, s=1: velocity = ((b−a)/(a²+b²)) z
        let g = AnalyticGaussian::isotropic(LatentDims::new(1, 1, 1, 1), 0.0, 1.0).unwrap();
        for &t in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            let (a, b) = (1.0 - t, t);
            let expect = (b - a) / (a * a + b * b);
            assert!((g.velocity_gain(t) - expect).abs() < 1e-15);
        }
        assert_eq!(g.velocity_gain(0.5), 0.0);
    }

    #[test]
    fn conditional_variance_endpoints() {
        let g = AnalyticGaussian::isotropic(LatentDims::new(1, 1, 1, 1), 0.3, 0.7).unwrap();
        // t = 1: z = ε, so only x is unknown
        assert!((g.conditional_variance(1.0) - 0.49).abs() < 1e-12);
        // t = 0: z = x, so only ε is unknown
        assert!((g.conditional_variance(0.0) - 1.0).abs() < 1e-12);
    }
}
