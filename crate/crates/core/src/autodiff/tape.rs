use std::collections::BTreeMap;
use std::sync::Arc;

use super::loss::softmax_rows;
use super::ParamId;
use crate::error::{invalid, shape_err, Result};
use crate::layers::{kron_sum, kron_sum_backward};
use crate::scalar::Real;
use crate::tensor::channels::{gather_channels, scatter_channels, sum_channel_groups_backward};
use crate::tensor::{
    conv2d, conv2d_backward_filter, conv2d_backward_input, depthwise_conv2d,
    depthwise_conv2d_backward_filter, depthwise_conv2d_backward_input, matmul, split_channels,
    sum_channel_groups, ConvGeometry, GroupPlan, Tensor,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddChannelBias(Var, Var),
    MulBroadcast(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv2d(Var, Var, ConvGeometry),
    Depthwise(Var, Var, ConvGeometry),
    KronSum {
        comps: Var,
        mats: Arc<Vec<Vec<T>>>,
        p: usize,
        q: usize,
    },
    SumGroups(Var, Arc<GroupPlan>),
    Gather(Var, Arc<Vec<usize>>),
    Relu(Var),
    Sigmoid(Var),
    Silu(Var),
    GlobalAvgPool(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        /// Batch statistics feed the normalization (training) or not (inference).
        batch_stats: bool,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Append-only record of primitive applications. Every node's inputs precede
/// it, so a reverse sweep visits each node after all of its consumers.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
}

/// Output of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: BTreeMap<ParamId, Tensor<T>>,
    /// Registered parameters the loss does not depend on; their gradient is zero.
    pub detached: Vec<ParamId>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Gradient of the loss with respect to any recorded value.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> impl Iterator<Item = (&ParamId, &Tensor<T>)> {
        self.params.iter()
    }
}

/// Rows of a channel-last tensor grouped per batch sample:
/// `(batch, positions per sample, channels)`.
fn batch_layout(shape: &[usize]) -> (usize, usize, usize) {
    let c = *shape.last().unwrap();
    match shape.len() {
        4 => (shape[0], shape[1] * shape[2], c),
        _ => (1, shape[..shape.len() - 1].iter().product(), c),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a trainable leaf; its gradient is reported under `id`.
    pub fn param(&mut self, id: ParamId, value: &Tensor<T>) -> Var {
        let v = self.push(value.clone(), Op::Leaf);
        self.params.push((id, v));
        v
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err!(
                "{:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of_f64(s);
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    /// Adds `bias` (one value per channel, any shape) to every position.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).channels();
        if self.value(bias).len() != c {
            return Err(shape_err!("bias of {} values for {c} channels", self.value(bias).len()));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for px in out.data_mut().chunks_exact_mut(c) {
            for (o, &bv) in px.iter_mut().zip(&b) {
                *o = *o + bv;
            }
        }
        Ok(self.push(out, Op::AddChannelBias(x, bias)))
    }

    /// `x[n, …, c] · s[n, c]`: per-sample, per-channel gating broadcast over
    /// spatial positions. `s` holds `N·C` values (e.g. shape `N×1×1×C`).
    pub fn mul_broadcast(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, pos, c) = batch_layout(self.value(x).shape());
        if self.value(s).len() != n * c {
            return Err(shape_err!(
                "gate of {} values for {n} samples × {c} channels",
                self.value(s).len()
            ));
        }
        let gate = self.value(s).data().to_vec();
        let mut out = self.value(x).clone();
        for b in 0..n {
            for p in 0..pos {
                let row = &mut out.data_mut()[(b * pos + p) * c..(b * pos + p + 1) * c];
                for (o, &g) in row.iter_mut().zip(&gate[b * c..(b + 1) * c]) {
                    *o = *o * g;
                }
            }
        }
        Ok(self.push(out, Op::MulBroadcast(x, s)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        Ok(self.push(v, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    pub fn conv2d(&mut self, x: Var, f: Var, g: ConvGeometry) -> Result<Var> {
        let v = conv2d(self.value(x), self.value(f), &g)?;
        Ok(self.push(v, Op::Conv2d(x, f, g)))
    }

    pub fn depthwise_conv2d(&mut self, x: Var, f: Var, g: ConvGeometry) -> Result<Var> {
        let v = depthwise_conv2d(self.value(x), self.value(f), &g)?;
        Ok(self.push(v, Op::Depthwise(x, f, g)))
    }

    /// `Σ_j mats[j] ⊗ comps[j]` over the last two axes (see
    /// [`crate::layers`] for the index convention).
    pub fn kron_sum(&mut self, comps: Var, mats: Arc<Vec<Vec<T>>>, p: usize, q: usize) -> Result<Var> {
        let shape = self.value(comps).shape();
        if shape.len() < 3 || shape[0] != mats.len() || mats.iter().any(|m| m.len() != p * q) {
            return Err(shape_err!("kron_sum components {shape:?} vs {} blocks of {p}×{q}", mats.len()));
        }
        let v = kron_sum(self.value(comps), &mats, p, q);
        Ok(self.push(v, Op::KronSum { comps, mats, p, q }))
    }

    pub fn sum_channel_groups(&mut self, x: Var, plan: Arc<GroupPlan>) -> Result<Var> {
        let v = sum_channel_groups(self.value(x), &plan)?;
        Ok(self.push(v, Op::SumGroups(x, plan)))
    }

    /// Output channel `p` takes input channel `index[p]`.
    pub fn gather_channels(&mut self, x: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let v = gather_channels(self.value(x), &index)?;
        Ok(self.push(v, Op::Gather(x, index)))
    }

    pub fn permute_channels(&mut self, x: Var, perm: Arc<Vec<usize>>) -> Result<Var> {
        crate::tensor::channels::validate_permutation(&perm)?;
        if perm.len() != self.value(x).channels() {
            return Err(shape_err!("permutation length {} vs {} channels", perm.len(), self.value(x).channels()));
        }
        self.gather_channels(x, perm)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        // Written out rather than `max` so that NaN propagates.
        let v = self.value(x).map(|a| if a < T::zero() { T::zero() } else { a });
        self.push(v, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    /// `x·σ(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * sigmoid(a));
        self.push(v, Op::Silu(x))
    }

    /// Spatial mean per channel: `N×H×W×C → N×1×1×C` (or `H×W×C → 1×1×C`).
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if !(3..=4).contains(&shape.len()) {
            return Err(shape_err!("global_avg_pool expects a 3-D or 4-D map, got {shape:?}"));
        }
        let (n, pos, c) = batch_layout(&shape);
        let inv = T::one() / T::of_f64(pos as f64);
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); n * c];
        for b in 0..n {
            let acc = &mut out[b * c..(b + 1) * c];
            for p in 0..pos {
                for (a, &v) in acc.iter_mut().zip(&xs[(b * pos + p) * c..(b * pos + p + 1) * c]) {
                    *a = *a + v;
                }
            }
            acc.iter_mut().for_each(|a| *a = *a * inv);
        }
        let out_shape = if shape.len() == 4 { vec![n, 1, 1, c] } else { vec![1, 1, c] };
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::GlobalAvgPool(x)))
    }

    /// Per-channel normalization with batch statistics (biased variance);
    /// returns the output and the batch mean and variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (rows, c) = split_channels(self.value(x).shape())?;
        self.check_affine(gamma, beta, c)?;
        if rows < 2 {
            return Err(invalid!("batch normalization needs at least 2 values per channel in training"));
        }
        let xs = self.value(x).data();
        let m = T::of_f64(rows as f64);
        let mut mean = vec![T::zero(); c];
        for px in xs.chunks_exact(c) {
            mean.iter_mut().zip(px).for_each(|(a, &v)| *a = *a + v);
        }
        mean.iter_mut().for_each(|a| *a = *a / m);
        // A constant channel gets its value back as the mean exactly, so x̂ = 0
        // rather than rounding noise scaled by 1/√ε.
        for (ch, mu) in mean.iter_mut().enumerate() {
            let first = xs[ch];
            if xs.chunks_exact(c).all(|px| px[ch] == first) {
                *mu = first;
            }
        }
        let mut var = vec![T::zero(); c];
        for px in xs.chunks_exact(c) {
            for ((a, &v), &mu) in var.iter_mut().zip(px).zip(&mean) {
                let dlt = v - mu;
                *a = *a + dlt * dlt;
            }
        }
        var.iter_mut().for_each(|a| *a = *a / m);
        let out = self.normalize(x, gamma, beta, &mean, &var, eps, true);
        Ok((out, mean, var))
    }

    /// Normalization with fixed statistics (inference mode).
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let c = self.value(x).channels();
        self.check_affine(gamma, beta, c)?;
        if mean.len() != c || var.len() != c {
            return Err(shape_err!("running statistics do not match {c} channels"));
        }
        Ok(self.normalize(x, gamma, beta, mean, var, eps, false))
    }

    fn check_affine(&self, gamma: Var, beta: Var, c: usize) -> Result<()> {
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(shape_err!("batch-norm scale/shift do not match {c} channels"));
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
        batch_stats: bool,
    ) -> Var {
        let c = mean.len();
        let eps = T::of_f64(eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let xs = self.value(x);
        let mut xhat = xs.clone();
        let mut out = xs.clone();
        for (hp, op) in xhat
            .data_mut()
            .chunks_exact_mut(c)
            .zip(out.data_mut().chunks_exact_mut(c))
        {
            for ch in 0..c {
                let h = (hp[ch] - mean[ch]) * inv_std[ch];
                hp[ch] = h;
                op[ch] = g[ch] * h + b[ch];
            }
        }
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean cross-entropy of `N×classes` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let loss = super::cross_entropy_loss(self.value(logits), labels)?;
        let probs = softmax_rows(self.value(logits))?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(invalid!(
                "loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut params = BTreeMap::new();
        let mut detached = Vec::new();
        for &(id, v) in &self.params {
            let g = grads.get(v.0).and_then(Option::as_ref);
            if g.is_none() && !params.contains_key(&id) {
                detached.push(id);
            }
            let g = g.cloned().unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
            match params.get_mut(&id) {
                Some(acc) => Tensor::add_assign(acc, &g),
                None => {
                    params.insert(id, g);
                }
            }
        }
        detached.retain(|id| {
            self.params
                .iter()
                .filter(|(pid, _)| pid == id)
                .all(|(_, v)| grads.get(v.0).and_then(Option::as_ref).is_none())
        });
        detached.dedup();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            nodes: grads,
            params,
            detached,
        })
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, t: Tensor<T>| {
            debug_assert_eq!(t.shape(), self.value(v).shape());
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |x, y| x * y)?);
                acc(*b, g.zip_map(self.value(*a), |x, y| x * y)?);
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::AddChannelBias(x, b) => {
                let c = g.channels();
                let mut gb = vec![T::zero(); c];
                for px in g.data().chunks_exact(c) {
                    gb.iter_mut().zip(px).for_each(|(a, &v)| *a = *a + v);
                }
                acc(*x, g.clone());
                acc(*b, Tensor::from_parts(self.value(*b).shape().to_vec(), gb));
            }
            Op::MulBroadcast(x, s) => {
                let (n, pos, c) = batch_layout(g.shape());
                let (xv, sv) = (self.value(*x).data(), self.value(*s).data());
                let mut gx = g.clone();
                let mut gs = vec![T::zero(); n * c];
                for b in 0..n {
                    for p in 0..pos {
                        let r = (b * pos + p) * c;
                        for ch in 0..c {
                            let gv = g.data()[r + ch];
                            gx.data_mut()[r + ch] = gv * sv[b * c + ch];
                            gs[b * c + ch] = gs[b * c + ch] + gv * xv[r + ch];
                        }
                    }
                }
                acc(*x, gx);
                acc(*s, Tensor::from_parts(self.value(*s).shape().to_vec(), gs));
            }
            Op::MatMul(a, b) => {
                acc(*a, matmul(g, &self.value(*b).transpose()?)?);
                acc(*b, matmul(&self.value(*a).transpose()?, g)?);
            }
            Op::Transpose(a) => acc(*a, g.transpose()?),
            Op::Reshape(a) => acc(*a, g.reshape(self.value(*a).shape())?),
            Op::Conv2d(x, f, geom) => {
                let (xv, fv) = (self.value(*x), self.value(*f));
                acc(*x, conv2d_backward_input(g, xv.shape(), fv, geom)?);
                acc(*f, conv2d_backward_filter(g, xv, fv.shape(), geom)?);
            }
            Op::Depthwise(x, f, geom) => {
                let (xv, fv) = (self.value(*x), self.value(*f));
                acc(*x, depthwise_conv2d_backward_input(g, xv.shape(), fv, geom)?);
                acc(*f, depthwise_conv2d_backward_filter(g, xv, fv.shape(), geom)?);
            }
            Op::KronSum { comps, mats, p, q } => {
                acc(*comps, kron_sum_backward(g, self.value(*comps).shape(), mats, *p, *q));
            }
            Op::SumGroups(x, plan) => acc(*x, sum_channel_groups_backward(g, plan)),
            Op::Gather(x, index) => {
                acc(*x, scatter_channels(g, index, self.value(*x).channels()));
            }
            Op::Relu(x) => {
                acc(*x, g.zip_map(self.value(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() })?);
            }
            Op::Sigmoid(x) => {
                acc(*x, g.zip_map(out, |gv, y| gv * y * (T::one() - y))?);
            }
            Op::Silu(x) => {
                acc(*x, g.zip_map(self.value(*x), |gv, xv| {
                    let s = sigmoid(xv);
                    gv * (s + xv * s * (T::one() - s))
                })?);
            }
            Op::GlobalAvgPool(x) => {
                let shape = self.value(*x).shape();
                let (n, pos, c) = batch_layout(shape);
                let inv = T::one() / T::of_f64(pos as f64);
                let mut gx = Vec::with_capacity(n * pos * c);
                for b in 0..n {
                    for _ in 0..pos {
                        gx.extend(g.data()[b * c..(b + 1) * c].iter().map(|&v| v * inv));
                    }
                }
                acc(*x, Tensor::from_parts(shape.to_vec(), gx));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = inv_std.len();
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (gp, hp) in g.data().chunks_exact(c).zip(xhat.data().chunks_exact(c)) {
                    for ch in 0..c {
                        sum_g[ch] = sum_g[ch] + gp[ch];
                        sum_gx[ch] = sum_gx[ch] + gp[ch] * hp[ch];
                    }
                }
                let mut gx = g.clone();
                if *batch_stats {
                    let m = T::of_f64((g.len() / c) as f64);
                    for (gp, hp) in gx.data_mut().chunks_exact_mut(c).zip(xhat.data().chunks_exact(c)) {
                        for ch in 0..c {
                            gp[ch] = gam[ch] * inv_std[ch] / m
                                * (m * gp[ch] - sum_g[ch] - hp[ch] * sum_gx[ch]);
                        }
                    }
                } else {
                    for gp in gx.data_mut().chunks_exact_mut(c) {
                        for ch in 0..c {
                            gp[ch] = gp[ch] * gam[ch] * inv_std[ch];
                        }
                    }
                }
                acc(*x, gx);
                acc(*gamma, Tensor::from_parts(self.value(*gamma).shape().to_vec(), sum_gx));
                acc(*beta, Tensor::from_parts(self.value(*beta).shape().to_vec(), sum_g));
            }
            Op::Sum(x) => acc(*x, Tensor::full(self.value(*x).shape(), g.data()[0])),
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = probs.shape()[1];
                let scale = g.data()[0] / T::of_f64(labels.len() as f64);
                let mut gl = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    let v = &mut gl.data_mut()[r * k + l];
                    *v = *v - T::one();
                }
                acc(*logits, gl.scale(scale));
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_grad;
    use crate::tensor::Padding;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Checks every coordinate of every input of `build` against central
    /// differences; the built value is contracted with a fixed random probe.
    fn gradcheck(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let run = |vals: &[Tensor<f64>], probe: &Tensor<f64>| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = vals.iter().enumerate().map(|(i, v)| tape.param(ParamId(i), v)).collect();
            let y = build(&mut tape, &vars);
            let pv = tape.constant(probe.clone());
            let m = tape.mul(y, pv).unwrap();
            let l = tape.sum(m);
            (tape, l)
        };
        let shape = {
            let mut t = Tape::new();
            let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, v)| t.param(ParamId(i), v)).collect();
            let y = build(&mut t, &vars);
            t.value(y).shape().to_vec()
        };
        let probe = rand_t(&shape, &mut rng);
        let (tape, l) = run(&inputs, &probe);
        let grads = tape.backward(l).unwrap();
        for i in 0..inputs.len() {
            let fd = finite_diff_grad(
                |t| {
                    let mut vals = inputs.clone();
                    vals[i] = t.clone();
                    let (tape, l) = run(&vals, &probe);
                    tape.value(l).data()[0]
                },
                &inputs[i],
                1e-6,
            )
            .unwrap();
            let an = grads.param(ParamId(i)).unwrap();
            for (j, (&a, &n)) in an.data().iter().zip(fd.data()).enumerate() {
                assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "input {i} coord {j}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn elementwise_ops() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (rand_t(&[3, 4], &mut r), rand_t(&[3, 4], &mut r));
        gradcheck(vec![a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap());
        gradcheck(vec![a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]).unwrap());
        gradcheck(vec![a.clone()], |t, v| t.scale(v[0], -2.5));
        gradcheck(vec![a.clone()], |t, v| t.sigmoid(v[0]));
        gradcheck(vec![a.clone()], |t, v| t.silu(v[0]));
        gradcheck(vec![a.map(|x| if x.abs() < 0.05 { 0.5 } else { x })], |t, v| t.relu(v[0]));
        gradcheck(vec![a.clone(), rand_t(&[4], &mut r)], |t, v| t.add_channel_bias(v[0], v[1]).unwrap());
    }

    #[test]
    fn linear_algebra_ops() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        gradcheck(vec![rand_t(&[3, 4], &mut r), rand_t(&[4, 2], &mut r)], |t, v| t.matmul(v[0], v[1]).unwrap());
        gradcheck(vec![rand_t(&[3, 4], &mut r)], |t, v| t.transpose(v[0]).unwrap());
        gradcheck(vec![rand_t(&[2, 3, 4], &mut r)], |t, v| t.reshape(v[0], &[6, 4]).unwrap());
        let mats = Arc::new(vec![vec![1.0, 0.5, -1.0, 2.0], vec![0.0, 3.0, 1.0, -0.5]]);
        gradcheck(vec![rand_t(&[2, 3, 2], &mut r)], move |t, v| t.kron_sum(v[0], mats.clone(), 2, 2).unwrap());
    }

    #[test]
    fn convolution_ops() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for geom in [ConvGeometry::valid(), ConvGeometry::new(2, 1, Padding::Same).unwrap()] {
            gradcheck(vec![rand_t(&[2, 5, 4, 3], &mut r), rand_t(&[3, 2, 3, 2], &mut r)], move |t, v| {
                t.conv2d(v[0], v[1], geom).unwrap()
            });
            gradcheck(vec![rand_t(&[5, 4, 3], &mut r), rand_t(&[3, 3, 3, 2], &mut r)], move |t, v| {
                t.depthwise_conv2d(v[0], v[1], geom).unwrap()
            });
        }
    }

    #[test]
    fn channel_ops() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let plan = Arc::new(GroupPlan::new(5, vec![vec![0, 3], vec![1], vec![2, 4]]).unwrap());
        gradcheck(vec![rand_t(&[2, 2, 5], &mut r)], move |t, v| t.sum_channel_groups(v[0], plan.clone()).unwrap());
        let perm = Arc::new(vec![2, 0, 3, 1]);
        gradcheck(vec![rand_t(&[3, 4], &mut r)], move |t, v| t.permute_channels(v[0], perm.clone()).unwrap());
        gradcheck(vec![rand_t(&[2, 3, 3, 4], &mut r)], |t, v| t.global_avg_pool(v[0]).unwrap());
        gradcheck(vec![rand_t(&[2, 3, 3, 4], &mut r), rand_t(&[2, 1, 1, 4], &mut r)], |t, v| {
            t.mul_broadcast(v[0], v[1]).unwrap()
        });
    }

    #[test]
    fn batch_norm_modes() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let inputs = vec![rand_t(&[2, 3, 2, 3], &mut r), rand_t(&[3], &mut r), rand_t(&[3], &mut r)];
        gradcheck(inputs.clone(), |t, v| t.batch_norm_train(v[0], v[1], v[2], 1e-3).unwrap().0);
        gradcheck(inputs, |t, v| {
            t.batch_norm_infer(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-3).unwrap()
        });
    }

    #[test]
    fn batch_norm_train_statistics() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 6.0]).unwrap());
        let g = tape.constant(Tensor::full(&[1], 1.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        let (y, mean, var) = tape.batch_norm_train(x, g, b, 0.0).unwrap();
        assert_eq!(mean, vec![3.0]);
        assert_eq!(var, vec![3.5]);
        let s: f64 = tape.value(y).data().iter().sum();
        assert!(s.abs() < 1e-12);
        let flat = tape.constant(Tensor::full(&[3, 1], 0.1));
        let beta = tape.constant(Tensor::full(&[1], 0.7));
        let (y, _, var) = tape.batch_norm_train(flat, g, beta, 1e-3).unwrap();
        assert_eq!(var, vec![0.0]);
        assert_eq!(tape.value(y).data(), &[0.7, 0.7, 0.7]);
        let one = tape.constant(Tensor::full(&[1, 1], 1.0));
        assert!(tape.batch_norm_train(one, g, b, 1e-3).is_err());
    }

    #[test]
    fn cross_entropy_gradient() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        gradcheck(vec![rand_t(&[4, 3], &mut r)], |t, v| t.cross_entropy(v[0], &[0, 2, 1, 2]).unwrap());
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), &Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.param(ParamId(0)).unwrap().data(), &[7.0]);
        assert_eq!(g.wrt(y).unwrap().data(), &[1.0]);
    }

    #[test]
    fn unreached_params_get_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), &Tensor::scalar(2.0));
        let _unused = tape.param(ParamId(1), &Tensor::full(&[2], 1.0));
        let l = tape.scale(x, 4.0);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.detached, vec![ParamId(1)]);
        assert_eq!(g.param(ParamId(1)).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2]));
        assert!(tape.backward(x).is_err());
    }
}
