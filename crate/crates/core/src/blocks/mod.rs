//! Vector-valued EfficientNetV2 building blocks recorded on a [`Tape`].
//!
//! Trainable tensors live in a [`ParamStore`]; blocks hold [`ParamId`]s and
//! the batch-norm running statistics. A [`Forward`] pass records one batch
//! and collects the running-statistic updates produced in training mode,
//! which the owner applies afterwards.

mod mbconv;

pub use mbconv::{FusedMBConv, FusedMBConvSpec, MBConv, MBConvSpec, SqueezeExcite};

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::AlgebraTensor;
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{invalid, shape_err, Result};
use crate::layers::{glorot_limit, VTensor};
use crate::scalar::Real;
use crate::tensor::{ConvGeometry, Padding, Tensor};

pub const BN_EPSILON: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Split activation, applied to every real coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Silu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Silu => "silu",
        }
    }
}

/// Batch statistics observed by one batch-norm layer during a training pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate<T> {
    pub gamma: ParamId,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// State for recording one forward pass.
pub struct Forward<'a, T: Real> {
    pub tape: Tape<T>,
    pub params: &'a ParamStore<T>,
    pub alg: &'a AlgebraTensor,
    pub mode: Mode,
    pub activation: Activation,
    vars: HashMap<ParamId, Var>,
    pub bn_updates: Vec<BnUpdate<T>>,
}

impl<'a, T: Real> Forward<'a, T> {
    pub fn new(params: &'a ParamStore<T>, alg: &'a AlgebraTensor, mode: Mode, activation: Activation) -> Self {
        Forward {
            tape: Tape::new(),
            params,
            alg,
            mode,
            activation,
            vars: HashMap::new(),
            bn_updates: Vec::new(),
        }
    }

    /// Tape variable for a parameter, recorded on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.vars.get(&id) {
            return v;
        }
        let v = self.tape.param(id, self.params.get(id));
        self.vars.insert(id, v);
        v
    }

    pub fn activate(&mut self, x: Var) -> Var {
        match self.activation {
            Activation::Relu => self.tape.relu(x),
            Activation::Silu => self.tape.silu(x),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }
}

/// Anything that maps a vector feature map to another on a tape.
pub trait Block<T: Real> {
    fn forward(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var>;

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm<T>>;

    /// Folds training-pass statistics into the running averages.
    fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        for bn in self.batch_norms_mut() {
            if let Some(u) = updates.iter().find(|u| u.gamma == bn.gamma) {
                bn.update(u);
            }
        }
    }
}

/// Runs `block` on a single input outside of any training loop; running
/// statistics are updated in training mode.
pub fn apply_block<T: Real, B: Block<T>>(
    block: &mut B,
    params: &ParamStore<T>,
    alg: &AlgebraTensor,
    activation: Activation,
    mode: Mode,
    x: &VTensor<T>,
) -> Result<VTensor<T>> {
    let mut f = Forward::new(params, alg, mode, activation);
    let xv = f.tape.constant(x.base().clone());
    let y = block.forward(&mut f, xv)?;
    let out = VTensor::new(f.value(y).clone(), alg.dim())?;
    let updates = std::mem::take(&mut f.bn_updates);
    drop(f);
    block.apply_bn_updates(&updates);
    Ok(out)
}

/// Vector convolution (regular or depthwise) with optional vector bias.
#[derive(Debug, Clone, PartialEq)]
pub struct VConv {
    pub weights: ParamId,
    pub bias: Option<ParamId>,
    pub geometry: ConvGeometry,
    pub depthwise: bool,
    /// `(fh, fw, C, K)`.
    pub dims: (usize, usize, usize, usize),
}

impl VConv {
    /// Glorot-uniform weights on the realized fan-in/out, zero bias, same padding.
    #[allow(clippy::too_many_arguments)]
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        kernel: usize,
        stride: usize,
        (c, k): (usize, usize),
        depthwise: bool,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bank = crate::layers::VFilterBank::<T>::glorot(d, kernel, kernel, c, k, depthwise, rng);
        let weights = store.add(format!("{name}.w"), bank.components);
        let bias = bias.then(|| {
            let n = if depthwise { d * k * c } else { d * k };
            store.add(format!("{name}.b"), Tensor::zeros(&[n]))
        });
        Ok(VConv {
            weights,
            bias,
            geometry: ConvGeometry::new(stride, stride, Padding::Same)?,
            depthwise,
            dims: (kernel, kernel, c, k),
        })
    }

    /// Output vector channels.
    pub fn out_vchannels(&self) -> usize {
        let (_, _, c, k) = self.dims;
        if self.depthwise {
            c * k
        } else {
            k
        }
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.param(self.weights);
        let b = self.bias.map(|b| f.param(b));
        if self.depthwise {
            f.tape.vdepthwise(x, w, b, f.alg, self.geometry)
        } else {
            f.tape.vconv2d(x, w, b, f.alg, self.geometry)
        }
    }
}

/// Vector dense layer acting on the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VDense {
    pub weights: ParamId,
    pub bias: Option<ParamId>,
    pub in_units: usize,
    pub out_units: usize,
}

impl VDense {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        in_units: usize,
        out_units: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let lim = glorot_limit(d * in_units, d * out_units);
        let w = Tensor::from_fn(&[d, out_units, in_units], |_| T::of_f64(rng.gen_range(-lim..=lim)));
        VDense {
            weights: store.add(format!("{name}.w"), w),
            bias: bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[d * out_units]))),
            in_units,
            out_units,
        }
    }

    /// `x` is `N×(d·in)`.
    pub fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.param(self.weights);
        let b = self.bias.map(|b| f.param(b));
        f.tape.vdense(x, w, b, f.alg)
    }
}

/// Split batch normalization over the `d·C` real channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub moving_mean: Vec<T>,
    pub moving_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Real> BatchNorm<T> {
    pub fn init(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            moving_mean: vec![T::zero(); channels],
            moving_var: vec![T::one(); channels],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.moving_mean.len()
    }

    pub fn forward(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let c = f.value(x).channels();
        if c != self.channels() {
            return Err(shape_err!("batch norm over {} channels got {c}", self.channels()));
        }
        let (g, b) = (f.param(self.gamma), f.param(self.beta));
        match f.mode {
            Mode::Train => {
                let (y, mean, var) = f.tape.batch_norm_train(x, g, b, self.epsilon)?;
                f.bn_updates.push(BnUpdate {
                    gamma: self.gamma,
                    mean,
                    var,
                });
                Ok(y)
            }
            Mode::Infer => f.tape.batch_norm_infer(x, g, b, &self.moving_mean, &self.moving_var, self.epsilon),
        }
    }

    /// `moving = momentum·moving + (1 − momentum)·batch`.
    pub fn update(&mut self, u: &BnUpdate<T>) {
        let m = T::of_f64(self.momentum);
        let r = T::one() - m;
        for (mv, &bm) in self.moving_mean.iter_mut().zip(&u.mean) {
            *mv = m * *mv + r * bm;
        }
        for (mv, &bv) in self.moving_var.iter_mut().zip(&u.var) {
            *mv = (m * *mv + r * bv).max(T::zero());
        }
    }

    pub fn set_running(&mut self, mean: Vec<T>, var: Vec<T>) -> Result<()> {
        if mean.len() != self.channels() || var.len() != self.channels() {
            return Err(shape_err!("running statistics for {} channels", self.channels()));
        }
        if var.iter().any(|&v| v.is_nan() || v < T::zero()) {
            return Err(invalid!("running variance must be non-negative"));
        }
        self.moving_mean = mean;
        self.moving_var = var;
        Ok(())
    }
}

impl<T: Real> Block<T> for BatchNorm<T> {
    fn forward(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        BatchNorm::forward(self, f, x)
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        vec![self]
    }
}

/// Spatial mean per real channel, `N×H×W×dC → N×(dC)`.
pub fn pooled_features<T: Real>(f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
    let pooled = f.tape.global_avg_pool(x)?;
    let shape = f.value(pooled).shape().to_vec();
    let n = if shape.len() == 4 { shape[0] } else { 1 };
    f.tape.reshape(pooled, &[n, *shape.last().unwrap()])
}
