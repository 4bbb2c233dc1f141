//! Plain real-valued CNN pieces written directly from their textbook
//! definitions (NHWC, f64), plus a driver that checks the `d = 1` vector
//! layers, blocks and a whole model against them with exact equality.
//!
//! Accumulation order follows the usual loop nest (taps row-major, then input
//! channels), which is also the order the library uses.

#![allow(dead_code, clippy::too_many_arguments)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vnet_core::autodiff::ParamStore;
use vnet_core::blocks::{
    apply_block, Activation, BatchNorm, FusedMBConv, FusedMBConvSpec, MBConv, MBConvSpec, Mode, SqueezeExcite,
    VConv, VDense,
};
use vnet_core::layers::{vconv2d_forward, vdense_forward, vdepthwise_forward, VDenseWeights, VFilterBank, VTensor};
use vnet_core::model::{build_model, model_forward, Model, StageBlock, VNetConfig};
use vnet_core::tensor::{ConvGeometry, Padding};
use vnet_core::{AlgebraTensor, BuiltinAlgebra, Tensor};

/// `N×H×W×C` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn from_tensor(t: &Tensor<f64>) -> Map {
        let s = t.shape();
        let (n, h, w, c) = match *s {
            [h, w, c] => (1, h, w, c),
            [n, h, w, c] => (n, h, w, c),
            _ => panic!("not a feature map: {s:?}"),
        };
        Map { n, h, w, c, data: t.data().to_vec() }
    }

    fn at(&self, b: usize, y: usize, x: usize, ch: usize) -> f64 {
        self.data[((b * self.h + y) * self.w + x) * self.c + ch]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Map {
        Map { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }
}

/// Output length and top/left padding for one axis. "Same" pads to
/// `ceil(len / stride)` outputs with the odd pixel at the far end.
pub fn axis(len: usize, kernel: usize, stride: usize, same: bool) -> (usize, usize) {
    if same {
        let out = len.div_ceil(stride);
        let need = (out - 1) * stride + kernel;
        let total = need.saturating_sub(len);
        (out, total / 2)
    } else {
        ((len - kernel) / stride + 1, 0)
    }
}

/// Filter layout `fh×fw×C×K`.
pub fn conv(x: &Map, f: &[f64], fh: usize, fw: usize, k: usize, stride: usize, same: bool, bias: Option<&[f64]>) -> Map {
    let (oh, pt) = axis(x.h, fh, stride, same);
    let (ow, pl) = axis(x.w, fw, stride, same);
    let mut data = Vec::with_capacity(x.n * oh * ow * k);
    for b in 0..x.n {
        for i in 0..oh {
            for j in 0..ow {
                for kk in 0..k {
                    let mut s = 0.0;
                    for m in 0..fh {
                        let y = (i * stride + m) as isize - pt as isize;
                        if y < 0 || y >= x.h as isize {
                            continue;
                        }
                        for nn in 0..fw {
                            let xx = (j * stride + nn) as isize - pl as isize;
                            if xx < 0 || xx >= x.w as isize {
                                continue;
                            }
                            for ch in 0..x.c {
                                s += x.at(b, y as usize, xx as usize, ch) * f[((m * fw + nn) * x.c + ch) * k + kk];
                            }
                        }
                    }
                    if let Some(bias) = bias {
                        s += bias[kk];
                    }
                    data.push(s);
                }
            }
        }
    }
    Map { n: x.n, h: oh, w: ow, c: k, data }
}

/// Depthwise convolution with multiplier `k`; output channel `c·K + k`.
pub fn depthwise(x: &Map, f: &[f64], fh: usize, fw: usize, k: usize, stride: usize, same: bool, bias: Option<&[f64]>) -> Map {
    let (oh, pt) = axis(x.h, fh, stride, same);
    let (ow, pl) = axis(x.w, fw, stride, same);
    let mut data = Vec::with_capacity(x.n * oh * ow * x.c * k);
    for b in 0..x.n {
        for i in 0..oh {
            for j in 0..ow {
                for ch in 0..x.c {
                    for kk in 0..k {
                        let mut s = 0.0;
                        for m in 0..fh {
                            let y = (i * stride + m) as isize - pt as isize;
                            if y < 0 || y >= x.h as isize {
                                continue;
                            }
                            for nn in 0..fw {
                                let xx = (j * stride + nn) as isize - pl as isize;
                                if xx < 0 || xx >= x.w as isize {
                                    continue;
                                }
                                s += x.at(b, y as usize, xx as usize, ch) * f[((m * fw + nn) * x.c + ch) * k + kk];
                            }
                        }
                        if let Some(bias) = bias {
                            s += bias[ch * k + kk];
                        }
                        data.push(s);
                    }
                }
            }
        }
    }
    Map { n: x.n, h: oh, w: ow, c: x.c * k, data }
}

/// `rows×in` times `W` (`out×in`) transposed, plus bias.
pub fn dense(x: &[f64], inp: usize, w: &[f64], out: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len() / inp * out);
    for row in x.chunks_exact(inp) {
        for o in 0..out {
            let mut s = 0.0;
            for p in 0..inp {
                s += row[p] * w[o * inp + p];
            }
            if let Some(b) = bias {
                s += b[o];
            }
            y.push(s);
        }
    }
    y
}

pub fn relu(v: f64) -> f64 {
    if v < 0.0 {
        0.0
    } else {
        v
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        v.exp() / (1.0 + v.exp())
    }
}

pub fn act(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Relu => relu(v),
        Activation::Silu => v * sigmoid(v),
    }
}

/// Per-sample channel means, `N×C`.
pub fn global_avg_pool(x: &Map) -> Vec<f64> {
    let pos = x.h * x.w;
    let inv = 1.0 / pos as f64;
    let mut out = Vec::with_capacity(x.n * x.c);
    for b in 0..x.n {
        for ch in 0..x.c {
            let mut s = 0.0;
            for p in 0..pos {
                s += x.data[(b * pos + p) * x.c + ch];
            }
            out.push(s * inv);
        }
    }
    out
}

/// Batch statistics over every position and sample; biased variance. A
/// channel whose values are all equal has exactly that value as its mean.
pub fn batch_stats(x: &Map) -> (Vec<f64>, Vec<f64>) {
    let rows = x.data.len() / x.c;
    let m = rows as f64;
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    for ch in 0..x.c {
        let col: Vec<f64> = (0..rows).map(|r| x.data[r * x.c + ch]).collect();
        let mut s = 0.0;
        for &v in &col {
            s += v;
        }
        mean[ch] = if col.iter().all(|&v| v == col[0]) { col[0] } else { s / m };
        let mut q = 0.0;
        for &v in &col {
            q += (v - mean[ch]) * (v - mean[ch]);
        }
        var[ch] = q / m;
    }
    (mean, var)
}

pub fn normalize(x: &Map, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Map {
    let mut y = x.clone();
    for (i, v) in y.data.iter_mut().enumerate() {
        let ch = i % x.c;
        let inv_std = 1.0 / (var[ch] + eps).sqrt();
        *v = gamma[ch] * ((*v - mean[ch]) * inv_std) + beta[ch];
    }
    y
}

pub fn squeeze_excite(x: &Map, w1: &[f64], b1: &[f64], r: usize, w2: &[f64], b2: &[f64], a: Activation) -> Map {
    let pooled = global_avg_pool(x);
    let hidden: Vec<f64> = dense(&pooled, x.c, w1, r, Some(b1)).into_iter().map(|v| act(a, v)).collect();
    let gate: Vec<f64> = dense(&hidden, r, w2, x.c, Some(b2)).into_iter().map(sigmoid).collect();
    let pos = x.h * x.w;
    let mut y = x.clone();
    for (i, v) in y.data.iter_mut().enumerate() {
        let b = i / (pos * x.c);
        *v *= gate[b * x.c + i % x.c];
    }
    y
}

fn add(a: &Map, b: &Map) -> Map {
    assert_eq!((a.n, a.h, a.w, a.c), (b.n, b.h, b.w, b.c));
    Map { data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(), ..a.clone() }
}

/// Reads the library's parameters into the plain-real routines above.
pub struct Oracle<'a> {
    pub params: &'a ParamStore<f64>,
    pub mode: Mode,
    pub activation: Activation,
}

impl Oracle<'_> {
    fn p(&self, id: vnet_core::autodiff::ParamId) -> &[f64] {
        self.params.get(id).data()
    }

    pub fn conv(&self, c: &VConv, x: &Map) -> Map {
        let (fh, fw, _, k) = c.dims;
        let same = c.geometry.padding == Padding::Same;
        let bias = c.bias.map(|b| self.p(b));
        if c.depthwise {
            depthwise(x, self.p(c.weights), fh, fw, k, c.geometry.stride_h, same, bias)
        } else {
            conv(x, self.p(c.weights), fh, fw, k, c.geometry.stride_h, same, bias)
        }
    }

    pub fn bn(&self, bn: &BatchNorm<f64>, x: &Map) -> Map {
        let (g, b) = (self.p(bn.gamma), self.p(bn.beta));
        match self.mode {
            Mode::Train => {
                let (mean, var) = batch_stats(x);
                normalize(x, g, b, &mean, &var, bn.epsilon)
            }
            Mode::Infer => normalize(x, g, b, &bn.moving_mean, &bn.moving_var, bn.epsilon),
        }
    }

    fn act(&self, x: &Map) -> Map {
        let a = self.activation;
        x.map(|v| act(a, v))
    }

    pub fn dense(&self, l: &VDense, x: &[f64]) -> Vec<f64> {
        dense(x, l.in_units, self.p(l.weights), l.out_units, l.bias.map(|b| self.p(b)))
    }

    pub fn se(&self, se: &SqueezeExcite, x: &Map) -> Map {
        squeeze_excite(
            x,
            self.p(se.reduce.weights),
            self.p(se.reduce.bias.unwrap()),
            se.reduce.out_units,
            self.p(se.expand.weights),
            self.p(se.expand.bias.unwrap()),
            self.activation,
        )
    }

    pub fn mbconv(&self, b: &MBConv<f64>, x: &Map) -> Map {
        let h = self.act(&self.bn(&b.bn_expand, &self.conv(&b.expand, x)));
        let mut h = self.act(&self.bn(&b.bn_depthwise, &self.conv(&b.depthwise, &h)));
        if let Some(se) = &b.se {
            h = self.se(se, &h);
        }
        let h = self.bn(&b.bn_project, &self.conv(&b.project, &h));
        if b.spec.use_skip {
            add(&h, x)
        } else {
            h
        }
    }

    pub fn fused(&self, b: &FusedMBConv<f64>, x: &Map) -> Map {
        let mut h = self.act(&self.bn(&b.bn_fused, &self.conv(&b.fused, x)));
        if let Some((c, bn)) = &b.project {
            h = self.bn(bn, &self.conv(c, &h));
        }
        if b.spec.use_skip {
            add(&h, x)
        } else {
            h
        }
    }

    pub fn logits(&self, m: &Model<f64>, x: &Map) -> Vec<f64> {
        let mut h = self.act(&self.bn(&m.stem_bn, &self.conv(&m.stem, x)));
        for b in &m.blocks {
            h = match b {
                StageBlock::Fused(f) => self.fused(f, &h),
                StageBlock::MB(mb) => self.mbconv(mb, &h),
            };
        }
        let h = self.act(&self.bn(&m.head_bn, &self.conv(&m.head, &h)));
        self.dense(&m.classifier, &global_avg_pool(&h))
    }
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Replaces every parameter with uniform noise and every running statistic
/// with plausible values, so that nothing is trivially zero or one.
fn scramble(params: &mut ParamStore<f64>, bns: Vec<&mut BatchNorm<f64>>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let shape = params.get(id).shape().to_vec();
        params.set(id, rand_tensor(&shape, rng)).unwrap();
    }
    for bn in bns {
        let c = bn.channels();
        let mean = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let var = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
        bn.set_running(mean, var).unwrap();
    }
}

fn first_mismatch(got: &[f64], want: &[f64]) -> Option<String> {
    if got.len() != want.len() {
        return Some(format!("length {} vs {}", got.len(), want.len()));
    }
    got.iter()
        .zip(want)
        .position(|(a, b)| a != b)
        .map(|i| format!("index {i}: {} vs {}", got[i], want[i]))
}

/// One named comparison of the suite.
#[derive(Debug)]
pub struct Check {
    pub name: String,
    pub values: usize,
    pub mismatch: Option<String>,
}

fn check(name: impl Into<String>, got: &[f64], want: &[f64]) -> Check {
    Check { name: name.into(), values: want.len(), mismatch: first_mismatch(got, want) }
}

fn real() -> AlgebraTensor {
    AlgebraTensor::builtin(BuiltinAlgebra::Real)
}

/// Every `d = 1` layer, block and a whole model against the plain-real code.
pub fn reduction_suite(seed: u64) -> Vec<Check> {
    let alg = real();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // Stand-alone layer routes.
    for (trial, &(stride, same)) in [(1, true), (2, true), (1, false), (2, false)].iter().enumerate() {
        let x = rand_tensor(&[2, 7, 6, 3], &mut rng);
        let comps = rand_tensor(&[1, 3, 2, 3, 4], &mut rng);
        let bias = rand_tensor(&[1, 4], &mut rng);
        let geom = ConvGeometry::new(stride, stride, if same { Padding::Same } else { Padding::Valid }).unwrap();
        let bank = VFilterBank::new(comps.clone(), Some(bias.clone())).unwrap();
        let vx = VTensor::new(x.clone(), 1).unwrap();
        let got = vconv2d_forward(&vx, &bank, &alg, &geom).unwrap();
        let want = conv(&Map::from_tensor(&x), comps.data(), 3, 2, 4, stride, same, Some(bias.data()));
        out.push(check(format!("vconv2d #{trial}"), got.base().data(), &want.data));

        let dw_bias = rand_tensor(&[1, 12], &mut rng);
        let bank = VFilterBank::new(comps.clone(), Some(dw_bias.clone())).unwrap();
        let got = vdepthwise_forward(&vx, &bank, &alg, &geom).unwrap();
        let want = depthwise(&Map::from_tensor(&x), comps.data(), 3, 2, 4, stride, same, Some(dw_bias.data()));
        out.push(check(format!("vdepthwise #{trial}"), got.base().data(), &want.data));
    }
    let x = rand_tensor(&[5, 6], &mut rng);
    let w = rand_tensor(&[1, 4, 6], &mut rng);
    let b = rand_tensor(&[1, 4], &mut rng);
    let got = vdense_forward(
        &VTensor::new(x.clone(), 1).unwrap(),
        &VDenseWeights::new(w.clone(), Some(b.clone())).unwrap(),
        &alg,
    )
    .unwrap();
    out.push(check("vdense", got.base().data(), &dense(x.data(), 6, w.data(), 4, Some(b.data()))));

    // Blocks, both modes and both activations.
    for activation in [Activation::Relu, Activation::Silu] {
        for mode in [Mode::Train, Mode::Infer] {
            let tag = format!("{activation:?}/{mode:?}").to_lowercase();
            let x = rand_tensor(&[2, 6, 6, 4], &mut rng);
            let xm = Map::from_tensor(&x);
            let vx = VTensor::new(x.clone(), 1).unwrap();

            let mut params = ParamStore::new();
            let spec = MBConvSpec::new(4, 4, 4.0, 3, 1, 0.25).unwrap();
            let mut mb = MBConv::init(&mut params, "mb", 1, spec, &mut rng).unwrap();
            let spec2 = MBConvSpec::new(4, 6, 6.0, 5, 2, 0.25).unwrap();
            let mut mb2 = MBConv::init(&mut params, "mb2", 1, spec2, &mut rng).unwrap();
            let spec = FusedMBConvSpec::new(4, 4, 4.0, 3, 1).unwrap();
            let mut fu = FusedMBConv::init(&mut params, "fused", 1, spec, &mut rng).unwrap();
            let spec = FusedMBConvSpec::new(4, 5, 1.0, 3, 2).unwrap();
            let mut fu1 = FusedMBConv::init(&mut params, "fused1", 1, spec, &mut rng).unwrap();
            let mut bns = Vec::new();
            bns.extend([&mut mb.bn_expand, &mut mb.bn_depthwise, &mut mb.bn_project]);
            bns.extend([&mut mb2.bn_expand, &mut mb2.bn_depthwise, &mut mb2.bn_project]);
            bns.push(&mut fu.bn_fused);
            bns.push(&mut fu.project.as_mut().unwrap().1);
            bns.push(&mut fu1.bn_fused);
            scramble(&mut params, bns, &mut rng);

            // The oracle reads the running statistics before they are updated.
            let o = Oracle { params: &params, mode, activation };
            let want_mb = o.mbconv(&mb, &xm);
            let want_mb2 = o.mbconv(&mb2, &xm);
            let want_fu = o.fused(&fu, &xm);
            let want_fu1 = o.fused(&fu1, &xm);
            let se = mb.se.clone().unwrap();
            let exp = Map::from_tensor(&rand_tensor(&[2, 3, 3, 16], &mut rng));
            let want_se = o.se(&se, &exp);
            let want_bn = o.bn(&mb.bn_expand, &exp);

            let got = apply_block(&mut mb, &params, &alg, activation, mode, &vx).unwrap();
            out.push(check(format!("mbconv skip {tag}"), got.base().data(), &want_mb.data));
            let got = apply_block(&mut mb2, &params, &alg, activation, mode, &vx).unwrap();
            out.push(check(format!("mbconv stride 2 {tag}"), got.base().data(), &want_mb2.data));
            let got = apply_block(&mut fu, &params, &alg, activation, mode, &vx).unwrap();
            out.push(check(format!("fused-mbconv skip {tag}"), got.base().data(), &want_fu.data));
            let got = apply_block(&mut fu1, &params, &alg, activation, mode, &vx).unwrap();
            out.push(check(format!("fused-mbconv single conv {tag}"), got.base().data(), &want_fu1.data));

            let mut f = vnet_core::blocks::Forward::new(&params, &alg, mode, activation);
            let ev = f.tape.constant(Tensor::new(vec![2, 3, 3, 16], exp.data.clone()).unwrap());
            let y = se.forward(&mut f, ev).unwrap();
            out.push(check(format!("squeeze-excite {tag}"), f.value(y).data(), &want_se.data));
            let y = mb.bn_expand.forward(&mut f, ev).unwrap();
            out.push(check(format!("batch norm {tag}"), f.value(y).data(), &want_bn.data));
        }
    }

    // Whole real B0 on a small input.
    for mode in [Mode::Train, Mode::Infer] {
        let mut cfg = VNetConfig::b0("real", 1.0, 2, 32).unwrap();
        cfg.seed = seed;
        let mut model: Model<f64> = build_model(&cfg).unwrap();
        let mut params = std::mem::replace(&mut model.params, ParamStore::new());
        scramble(&mut params, model.batch_norms_mut(), &mut rng);
        // Scrambled weights blow activations up through 16 blocks; shrink
        // them so the logits stay finite and informative.
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let t = params.get(id).scale(0.3);
            params.set(id, t).unwrap();
        }
        model.params = params;
        let x = Tensor::from_fn(&[2, 32, 32, 3], |_| rng.gen_range(0.0..1.0));
        let want = Oracle { params: &model.params, mode, activation: cfg.activation }.logits(&model, &Map::from_tensor(&x));
        let got = model_forward(&mut model, &VTensor::new(x, 1).unwrap(), mode).unwrap();
        let tag = format!("{mode:?}").to_lowercase();
        assert!(want.iter().all(|v| v.is_finite()), "oracle logits not finite: {want:?}");
        out.push(check(format!("real B0 logits {tag}"), got.data(), &want));
    }
    out
}
