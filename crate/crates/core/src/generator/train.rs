//! Flow-matching regression: `E‖v̂(z_t,t,c) − (ε − x)‖²` with
//! `z_t = (1−t)x + tε`, `t ~ U(0,1)`, `ε ~ N(0,I)`, minimized by mini-batch Adam.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BoundGenerator, Condition, GeneratorHandle, TinyNet, TinyNetArch};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{substream, tag};
use crate::tensor::{LatentVideo, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct TrainConfig {
    pub dataset_size: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset_size: 2048,
            batch_size: 16,
            steps: 3000,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset_size == 0 || self.batch_size == 0 {
            return Err(Error::invalid("dataset and batch sizes must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::OutOfRange {
                what: "learning rate",
                value: self.learning_rate,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub handle: GeneratorHandle,
    /// Mini-batch loss at every step.
    pub loss_curve: Vec<f64>,
}

/// Draw `t ∈ (0, 1]`.
fn draw_time<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

fn example_loss(
    g: &mut Graph,
    model: &BoundGenerator<'_>,
    x: &Tensor,
    c: &Condition,
    t: f64,
    eps: &Tensor,
) -> Result<Var> {
    let zt = x.scale(1.0 - t).add(&eps.scale(t))?;
    let target = eps.sub(x)?;
    let z = g.constant(zt);
    let v = model.velocity(g, z, t, c)?;
    let r = g.add_const(v, &target.scale(-1.0))?;
    let sq = g.square(r);
    Ok(g.mean(sq))
}

/// Train a tiny-net on `data` (the first `cfg.dataset_size` items).
pub fn train_flow_model(
    arch: TinyNetArch,
    cfg: &TrainConfig,
    data: &[(LatentVideo, Condition)],
) -> Result<TrainedModel> {
    cfg.validate()?;
    let n = cfg.dataset_size.min(data.len());
    if n == 0 {
        return Err(Error::invalid("training data is empty"));
    }
    let data = &data[..n];
    for (x, _) in data {
        if x.shape() != arch.dims.shape() {
            return Err(Error::shape("training item", x.shape(), &arch.dims.shape()));
        }
    }
    let mut net = TinyNet::init(arch, &mut substream(cfg.seed, &[tag::INIT]))?;
    let mut params: Vec<f64> = net.params().data().to_vec();
    let mut adam = AdamState::new(params.len(), AdamConfig::default());
    let mut rng = substream(cfg.seed, &[tag::TRAIN]);
    let mut curve = Vec::with_capacity(cfg.steps);
    let shape = net.arch().dims.shape();

    for step in 0..cfg.steps {
        let mut g = Graph::new();
        let bound = net.bind(&mut g, true);
        let model = BoundGenerator::TinyNet(bound);
        let mut total: Option<Var> = None;
        for _ in 0..cfg.batch_size {
            let idx = rng.random_range(0..n);
            let (x, c) = &data[idx];
            let t = draw_time(&mut rng);
            let eps = Tensor::randn(&shape, &mut rng);
            let l = example_loss(&mut g, &model, x, c, t, &eps)?;
            total = Some(match total {
                Some(acc) => g.add(acc, l)?,
                None => l,
            });
        }
        let total = total.expect("batch_size > 0");
        let loss = g.scale(total, 1.0 / cfg.batch_size as f64);
        let value = g.value(loss).item().expect("scalar loss");
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: "training loss",
                iteration: step,
            });
        }
        curve.push(value);
        let grads = g.backward(loss)?;
        let flat = match &model {
            BoundGenerator::TinyNet(b) => b.flat_gradient(&grads),
            BoundGenerator::Analytic(_) => unreachable!(),
        };
        adam.step(&mut params, &flat, cfg.learning_rate)?;
        let arch = net.arch().clone();
        net = TinyNet::new(arch, Tensor::from_vec(&[params.len()], params.clone())?)?;
    }

    let arch = net.arch().clone();
    let frozen = Tensor::from_vec(&[params.len()], params)?.round_to_f32();
    Ok(TrainedModel {
        handle: TinyNet::new(arch, frozen)?.into(),
        loss_curve: curve,
    })
}

/// Monte-Carlo flow-matching loss of `model` on `data`, `draws` `(t, ε)`
/// pairs per item.
pub fn flow_matching_loss(
    model: &GeneratorHandle,
    data: &[(LatentVideo, Condition)],
    draws: usize,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() || draws == 0 {
        return Err(Error::invalid("flow_matching_loss needs data and draws"));
    }
    let mut rng = substream(seed, &[tag::DATA]);
    let shape = model.latent_dims().shape();
    let mut acc = 0.0;
    for (x, c) in data {
        for _ in 0..draws {
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let t = draw_time(&mut rng);
            let eps = Tensor::randn(&shape, &mut rng);
            let l = example_loss(&mut g, &bound, x, c, t, &eps)?;
            acc += g.value(l).item().expect("scalar");
        }
    }
    Ok(acc / (data.len() * draws) as f64)
}
