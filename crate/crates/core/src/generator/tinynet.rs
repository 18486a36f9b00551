//! A small frame-wise MLP velocity field.
//!
//! Each frame is one row. A row sees its own flattened `[H,W,C]` frame plus
//! the previous and next frames (zero padded at the ends), a sinusoidal time
//! embedding and a condition embedding. The output adds a learned,
//! time-dependent multiple of the input latent so that the full-rank part of
//! the velocity does not have to pass through the hidden bottleneck.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Condition;
use crate::autodiff::{Graph, Gradients, Var};
use crate::error::{Error, Result};
use crate::tensor::{LatentDims, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConditionSpec {
    /// Learned embedding table with one row per class.
    ClassId { num_classes: usize },
    /// Linear projection of the spatially mean-pooled anchor frame.
    AnchorFrame,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TinyNetArch {
    pub dims: LatentDims,
    pub hidden: Vec<usize>,
    pub time_frequencies: usize,
    pub cond_width: usize,
    pub nonlinearity: Nonlinearity,
    pub condition: ConditionSpec,
}

impl TinyNetArch {
    pub fn new(dims: LatentDims, condition: ConditionSpec) -> Self {
        Self {
            dims,
            hidden: vec![128, 128],
            time_frequencies: 8,
            cond_width: 16,
            nonlinearity: Nonlinearity::Tanh,
            condition,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::invalid("latent dims must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be a non-empty list of positive counts"));
        }
        if self.time_frequencies == 0 || self.cond_width == 0 {
            return Err(Error::invalid("embedding widths must be positive"));
        }
        if let ConditionSpec::ClassId { num_classes: 0 } = self.condition {
            return Err(Error::invalid("class-id conditioning needs at least one class"));
        }
        Ok(())
    }

    fn time_width(&self) -> usize {
        2 * self.time_frequencies
    }

    /// Named parameter blocks in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let f = self.dims.frame_len();
        let h0 = self.hidden[0];
        let tw = self.time_width();
        let cw = self.cond_width;
        let mut out: Vec<(String, Vec<usize>)> = vec![
            ("in.prev".into(), vec![f, h0]),
            ("in.cur".into(), vec![f, h0]),
            ("in.next".into(), vec![f, h0]),
            ("in.time".into(), vec![tw, h0]),
            ("in.cond".into(), vec![cw, h0]),
            ("in.bias".into(), vec![h0]),
        ];
        for (i, w) in self.hidden.windows(2).enumerate() {
            out.push((alloc::format!("hidden{}.weight", i + 1), vec![w[0], w[1]]));
            out.push((alloc::format!("hidden{}.bias", i + 1), vec![w[1]]));
        }
        let last = *self.hidden.last().expect("validated");
        out.push(("out.weight".into(), vec![last, f]));
        out.push(("out.bias".into(), vec![f]));
        out.push(("skip.time".into(), vec![tw, 1]));
        out.push(("skip.bias".into(), vec![1]));
        match self.condition {
            ConditionSpec::ClassId { num_classes } => {
                out.push(("cond.table".into(), vec![num_classes, cw]))
            }
            ConditionSpec::AnchorFrame => {
                out.push(("cond.proj".into(), vec![self.dims.channels, cw]))
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Sinusoidal embedding `[sin(kπt), cos(kπt)]` for `k = 1..=F`, as `[1, 2F]`.
    pub fn time_embedding(&self, t: f64) -> Tensor {
        let nf = self.time_frequencies;
        let mut e = vec![0.0; 2 * nf];
        for k in 0..nf {
            let w = PI * (k + 1) as f64;
            e[k] = libm::sin(w * t);
            e[nf + k] = libm::cos(w * t);
        }
        Tensor::from_vec(&[1, 2 * nf], e).expect("sized above")
    }

    /// Constant input row feeding the condition weights.
    fn condition_input(&self, c: &Condition) -> Result<Tensor> {
        match (self.condition, c) {
            (ConditionSpec::ClassId { num_classes }, Condition::ClassId(id)) => {
                let id = *id as usize;
                if id >= num_classes {
                    return Err(Error::invalid(alloc::format!(
                        "class id {id} exceeds table size {num_classes}"
                    )));
                }
                let mut onehot = vec![0.0; num_classes];
                onehot[id] = 1.0;
                Tensor::from_vec(&[1, num_classes], onehot)
            }
            (ConditionSpec::AnchorFrame, Condition::AnchorFrame(frame)) => {
                let d = self.dims;
                let expect = [d.height, d.width, d.channels];
                if frame.shape() != expect {
                    return Err(Error::shape("anchor frame", frame.shape(), &expect));
                }
                let mut pooled = vec![0.0; d.channels];
                for (i, v) in frame.data().iter().enumerate() {
                    pooled[i % d.channels] += v;
                }
                let inv = 1.0 / (d.height * d.width) as f64;
                pooled.iter_mut().for_each(|p| *p *= inv);
                Tensor::from_vec(&[1, d.channels], pooled)
            }
            _ => Err(Error::invalid("condition kind does not match the network")),
        }
    }
}

/// A frozen tiny-net: architecture plus flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyNet {
    arch: TinyNetArch,
    params: Tensor,
}

impl TinyNet {
    pub fn new(arch: TinyNetArch, params: Tensor) -> Result<Self> {
        arch.validate()?;
        let n = arch.param_count();
        if params.shape() != [n] {
            return Err(Error::shape("tiny-net params", params.shape(), &[n]));
        }
        Ok(Self { arch, params })
    }

    pub fn zeros(arch: TinyNetArch) -> Result<Self> {
        let n = arch.param_count();
        Self::new(arch, Tensor::zeros(&[n]))
    }

    /// Glorot-uniform weights, zero biases, small normal condition table.
    /// Values are rounded to `f32` so checkpoints round-trip exactly.
    pub fn init<R: Rng + ?Sized>(arch: TinyNetArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut data = Vec::with_capacity(arch.param_count());
        let f = arch.dims.frame_len();
        let fan_in0 = 3 * f + arch.time_width() + arch.cond_width;
        for (name, shape) in arch.layout() {
            let n: usize = shape.iter().product();
            if name.ends_with("bias") || name.starts_with("skip") {
                data.extend(core::iter::repeat_n(0.0, n));
            } else if name.starts_with("cond.") {
                data.extend((0..n).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)));
            } else {
                let fan_in = if name.starts_with("in.") { fan_in0 } else { shape[0] };
                let limit = libm::sqrt(6.0 / (fan_in + shape[1]) as f64);
                data.extend((0..n).map(|_| rng.random_range(-limit..limit)));
            }
        }
        let params = Tensor::from_vec(&[data.len()], data)?.round_to_f32();
        Self::new(arch, params)
    }

    pub fn arch(&self) -> &TinyNetArch {
        &self.arch
    }

    pub fn params(&self) -> &Tensor {
        &self.params
    }

    /// Register every parameter block on `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundNet<'_> {
        let mut vars = Vec::new();
        let mut offset = 0;
        for (_, shape) in self.arch.layout() {
            let n: usize = shape.iter().product();
            let block = Tensor::from_vec(&shape, self.params.data()[offset..offset + n].to_vec())
                .expect("layout matches parameter count");
            offset += n;
            vars.push(if trainable {
                g.param(block)
            } else {
                g.constant(block)
            });
        }
        BoundNet { net: self, vars }
    }
}

/// Parameter handles of a [`TinyNet`] on one graph.
#[derive(Debug)]
pub struct BoundNet<'a> {
    net: &'a TinyNet,
    vars: Vec<Var>,
}

impl BoundNet<'_> {
    pub fn arch(&self) -> &TinyNetArch {
        &self.net.arch
    }

    pub fn velocity(&self, g: &mut Graph, z: Var, t: f64, c: &Condition) -> Result<Var> {
        let arch = &self.net.arch;
        let d = arch.dims;
        let f = d.frame_len();
        let act = |g: &mut Graph, v: Var| match arch.nonlinearity {
            Nonlinearity::Tanh => g.tanh(v),
            Nonlinearity::Relu => g.relu(v),
        };
        let p = &self.vars;
        let n_hidden = arch.hidden.len();

        let rows = g.reshape(z, &[d.frames, f])?;
        let prev = g.shift_rows(rows, 1)?;
        let next = g.shift_rows(rows, -1)?;
        let hp = g.matmul(prev, p[0])?;
        let hc = g.matmul(rows, p[1])?;
        let hn = g.matmul(next, p[2])?;
        let h = g.add(hp, hc)?;
        let h = g.add(h, hn)?;

        let temb = g.constant(arch.time_embedding(t));
        let cin = g.constant(arch.condition_input(c)?);
        let cond_weight = p[p.len() - 1];
        let cvec = g.matmul(cin, cond_weight)?;
        let et = g.matmul(temb, p[3])?;
        let ec = g.matmul(cvec, p[4])?;
        let extra = g.add(et, ec)?;
        let extra = g.reshape(extra, &[arch.hidden[0]])?;
        let extra = g.add(extra, p[5])?;
        let h = g.add(h, extra)?;
        let mut h = act(g, h);

        let mut idx = 6;
        for _ in 1..n_hidden {
            let lin = g.matmul(h, p[idx])?;
            let lin = g.add(lin, p[idx + 1])?;
            h = act(g, lin);
            idx += 2;
        }
        let out = g.matmul(h, p[idx])?;
        let out = g.add(out, p[idx + 1])?;

        let k = g.matmul(temb, p[idx + 2])?;
        let k = g.reshape(k, &[1])?;
        let k = g.add(k, p[idx + 3])?;
        let skip = g.mul(rows, k)?;
        let v = g.add(out, skip)?;
        g.reshape(v, &d.shape())
    }

    /// Gradients of every parameter block, flattened in storage order.
    pub fn flat_gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.net.params.len());
        for (var, (_, shape)) in self.vars.iter().zip(self.net.arch.layout()) {
            match grads.get(*var) {
                Some(gt) => out.extend_from_slice(gt.data()),
                None => out.extend(core::iter::repeat_n(0.0, shape.iter().product())),
            }
        }
        out
    }
}
