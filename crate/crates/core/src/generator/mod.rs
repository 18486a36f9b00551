//! Frozen velocity-field models `v̂(z_t, t, c)`.
//!
//! Convention: clean latent `x` at `t = 0`, pure noise at `t = 1`,
//! `z_t = (1−t)x + tε` and target velocity `v* = ε − x`.

mod analytic;
mod tinynet;
mod train;

pub use analytic::AnalyticGaussian;
pub use tinynet::{BoundNet, ConditionSpec, Nonlinearity, TinyNet, TinyNetArch};
pub use train::{flow_matching_loss, train_flow_model, TrainConfig, TrainedModel};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{LatentDims, Tensor};

/// Conditioning input `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// An `[H, W, C]` anchor frame (image-to-video analog).
    AnchorFrame(Tensor),
    /// A small class index (text-prompt analog).
    ClassId(u32),
}

impl Condition {
    /// Short stable identifier used in reports.
    pub fn id(&self) -> alloc::string::String {
        match self {
            Condition::ClassId(k) => alloc::format!("class-{k}"),
            Condition::AnchorFrame(_) => "anchor-frame".into(),
        }
    }
}

/// An immutable velocity-field model. Fields are private; evaluation never
/// mutates the handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorHandle {
    AnalyticGaussian(AnalyticGaussian),
    TinyNet(TinyNet),
}

impl From<AnalyticGaussian> for GeneratorHandle {
    fn from(g: AnalyticGaussian) -> Self {
        GeneratorHandle::AnalyticGaussian(g)
    }
}

impl From<TinyNet> for GeneratorHandle {
    fn from(n: TinyNet) -> Self {
        GeneratorHandle::TinyNet(n)
    }
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: "velocity time",
            value: t,
        })
    }
}

impl GeneratorHandle {
    pub fn latent_dims(&self) -> LatentDims {
        match self {
            GeneratorHandle::AnalyticGaussian(a) => a.dims(),
            GeneratorHandle::TinyNet(n) => n.arch().dims,
        }
    }

    pub fn as_analytic(&self) -> Option<&AnalyticGaussian> {
        match self {
            GeneratorHandle::AnalyticGaussian(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_tiny_net(&self) -> Option<&TinyNet> {
        match self {
            GeneratorHandle::TinyNet(n) => Some(n),
            _ => None,
        }
    }

    /// Register the model's (constant) parameters on `g`.
    pub fn bind<'a>(&'a self, g: &mut Graph) -> BoundGenerator<'a> {
        match self {
            GeneratorHandle::AnalyticGaussian(a) => BoundGenerator::Analytic(a),
            GeneratorHandle::TinyNet(n) => BoundGenerator::TinyNet(n.bind(g, false)),
        }
    }

    /// Evaluate `v̂(z_t, t, c)` for `t ∈ (0, 1]`.
    pub fn velocity(&self, zt: &Tensor, t: f64, c: &Condition) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let z = g.constant(zt.clone());
        let v = bound.velocity(&mut g, z, t, c)?;
        Ok(g.value(v).clone())
    }
}

/// A generator whose parameters live on a particular [`Graph`].
#[derive(Debug)]
pub enum BoundGenerator<'a> {
    Analytic(&'a AnalyticGaussian),
    TinyNet(BoundNet<'a>),
}

impl BoundGenerator<'_> {
    fn dims(&self) -> LatentDims {
        match self {
            BoundGenerator::Analytic(a) => a.dims(),
            BoundGenerator::TinyNet(n) => n.dims(),
        }
    }

    pub fn velocity(&self, g: &mut Graph, z: Var, t: f64, c: &Condition) -> Result<Var> {
        check_time(t)?;
        let dims = self.dims();
        if g.value(z).shape() != dims.shape() {
            return Err(Error::shape("velocity", g.value(z).shape(), &dims.shape()));
        }
        match self {
            BoundGenerator::Analytic(a) => a.velocity_node(g, z, t),
            BoundGenerator::TinyNet(n) => n.velocity(g, z, t, c),
        }
    }
}

impl BoundNet<'_> {
    fn dims(&self) -> LatentDims {
        self.arch().dims
    }
}
