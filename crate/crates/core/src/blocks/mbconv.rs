use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{pooled_features, BatchNorm, Block, Forward, VConv, VDense};
use crate::autodiff::{ParamStore, Var};
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Real;

fn round_count(x: f64) -> usize {
    x.round_ties_even().max(1.0) as usize
}

fn check_common(in_v: usize, out_v: usize, expand: f64, kernel: usize, stride: usize) -> Result<()> {
    if in_v == 0 || out_v == 0 {
        return Err(invalid!("channel counts must be positive"));
    }
    if !(expand.is_finite() && expand > 0.0) {
        return Err(invalid!("expand ratio must be positive, got {expand}"));
    }
    if kernel == 0 || !(1..=2).contains(&stride) {
        return Err(invalid!("kernel {kernel} / stride {stride} out of range"));
    }
    Ok(())
}

/// Mobile inverted bottleneck: 1×1 expand, depthwise k×k, SE, 1×1 project.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MBConvSpec {
    pub in_vchannels: usize,
    pub out_vchannels: usize,
    pub expand_ratio: f64,
    pub kernel: usize,
    pub stride: usize,
    /// `0` disables squeeze-and-excitation.
    pub se_ratio: f64,
    pub use_skip: bool,
}

impl MBConvSpec {
    pub fn new(in_v: usize, out_v: usize, expand_ratio: f64, kernel: usize, stride: usize, se_ratio: f64) -> Result<Self> {
        check_common(in_v, out_v, expand_ratio, kernel, stride)?;
        if !(0.0..=1.0).contains(&se_ratio) {
            return Err(invalid!("se ratio must lie in [0, 1], got {se_ratio}"));
        }
        Ok(MBConvSpec {
            in_vchannels: in_v,
            out_vchannels: out_v,
            expand_ratio,
            kernel,
            stride,
            se_ratio,
            use_skip: stride == 1 && in_v == out_v,
        })
    }

    pub fn expanded(&self) -> usize {
        round_count(self.expand_ratio * self.in_vchannels as f64)
    }

    pub fn se_reduce(&self) -> Option<usize> {
        (self.se_ratio > 0.0).then(|| round_count(self.se_ratio * self.in_vchannels as f64))
    }
}

/// Fused-MBConv: one regular k×k convolution replaces expand + depthwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedMBConvSpec {
    pub in_vchannels: usize,
    pub out_vchannels: usize,
    pub expand_ratio: f64,
    pub kernel: usize,
    pub stride: usize,
    pub use_skip: bool,
}

impl FusedMBConvSpec {
    pub fn new(in_v: usize, out_v: usize, expand_ratio: f64, kernel: usize, stride: usize) -> Result<Self> {
        check_common(in_v, out_v, expand_ratio, kernel, stride)?;
        Ok(FusedMBConvSpec {
            in_vchannels: in_v,
            out_vchannels: out_v,
            expand_ratio,
            kernel,
            stride,
            use_skip: stride == 1 && in_v == out_v,
        })
    }

    pub fn expanded(&self) -> usize {
        round_count(self.expand_ratio * self.in_vchannels as f64)
    }
}

fn check_input<T: Real>(f: &Forward<'_, T>, x: Var, vchannels: usize) -> Result<()> {
    let c = f.value(x).channels();
    if c != f.alg.dim() * vchannels {
        return Err(shape_err!(
            "block expects {vchannels} vector channels (d = {}), got {c} real channels",
            f.alg.dim()
        ));
    }
    Ok(())
}

fn residual<T: Real>(f: &mut Forward<'_, T>, x: Var, y: Var, use_skip: bool) -> Result<Var> {
    if use_skip {
        f.tape.add(y, x)
    } else {
        Ok(y)
    }
}

/// `x ⊙ σ(dense₂(act(dense₁(GAP(x)))))`, gated per real channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SqueezeExcite {
    pub reduce: VDense,
    pub expand: VDense,
}

impl SqueezeExcite {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        vchannels: usize,
        reduce: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if reduce == 0 {
            return Err(invalid!("squeeze-and-excitation needs at least one reduced channel"));
        }
        Ok(SqueezeExcite {
            reduce: VDense::init(store, &format!("{name}.reduce"), d, vchannels, reduce, true, rng),
            expand: VDense::init(store, &format!("{name}.expand"), d, reduce, vchannels, true, rng),
        })
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        check_input(f, x, self.reduce.in_units)?;
        let s = pooled_features(f, x)?;
        let s = self.reduce.forward(f, s)?;
        let s = f.activate(s);
        let s = self.expand.forward(f, s)?;
        let gate = f.tape.sigmoid(s);
        f.tape.mul_broadcast(x, gate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MBConv<T> {
    pub spec: MBConvSpec,
    pub expand: VConv,
    pub bn_expand: BatchNorm<T>,
    pub depthwise: VConv,
    pub bn_depthwise: BatchNorm<T>,
    pub se: Option<SqueezeExcite>,
    pub project: VConv,
    pub bn_project: BatchNorm<T>,
}

impl<T: Real> MBConv<T> {
    pub fn init(store: &mut ParamStore<T>, name: &str, d: usize, spec: MBConvSpec, rng: &mut impl Rng) -> Result<Self> {
        let e = spec.expanded();
        let expand = VConv::init(store, &format!("{name}.expand"), d, 1, 1, (spec.in_vchannels, e), false, false, rng)?;
        let bn_expand = BatchNorm::init(store, &format!("{name}.expand_bn"), d * e);
        let depthwise = VConv::init(store, &format!("{name}.dw"), d, spec.kernel, spec.stride, (e, 1), true, false, rng)?;
        let bn_depthwise = BatchNorm::init(store, &format!("{name}.dw_bn"), d * e);
        let se = match spec.se_reduce() {
            Some(r) => Some(SqueezeExcite::init(store, &format!("{name}.se"), d, e, r, rng)?),
            None => None,
        };
        let project = VConv::init(store, &format!("{name}.project"), d, 1, 1, (e, spec.out_vchannels), false, false, rng)?;
        let bn_project = BatchNorm::init(store, &format!("{name}.project_bn"), d * spec.out_vchannels);
        Ok(MBConv {
            spec,
            expand,
            bn_expand,
            depthwise,
            bn_depthwise,
            se,
            project,
            bn_project,
        })
    }
}

impl<T: Real> Block<T> for MBConv<T> {
    fn forward(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        check_input(f, x, self.spec.in_vchannels)?;
        let h = self.expand.forward(f, x)?;
        let h = self.bn_expand.forward(f, h)?;
        let h = f.activate(h);
        let h = self.depthwise.forward(f, h)?;
        let h = self.bn_depthwise.forward(f, h)?;
        let mut h = f.activate(h);
        if let Some(se) = &self.se {
            h = se.forward(f, h)?;
        }
        let h = self.project.forward(f, h)?;
        let h = self.bn_project.forward(f, h)?;
        residual(f, x, h, self.spec.use_skip)
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        vec![&mut self.bn_expand, &mut self.bn_depthwise, &mut self.bn_project]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedMBConv<T> {
    pub spec: FusedMBConvSpec,
    pub fused: VConv,
    pub bn_fused: BatchNorm<T>,
    /// Absent when the expand ratio is 1.
    pub project: Option<(VConv, BatchNorm<T>)>,
}

impl<T: Real> FusedMBConv<T> {
    pub fn init(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        spec: FusedMBConvSpec,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let single = spec.expand_ratio == 1.0;
        let width = if single { spec.out_vchannels } else { spec.expanded() };
        let fused = VConv::init(store, &format!("{name}.fused"), d, spec.kernel, spec.stride, (spec.in_vchannels, width), false, false, rng)?;
        let bn_fused = BatchNorm::init(store, &format!("{name}.fused_bn"), d * width);
        let project = if single {
            None
        } else {
            let conv = VConv::init(store, &format!("{name}.project"), d, 1, 1, (width, spec.out_vchannels), false, false, rng)?;
            Some((conv, BatchNorm::init(store, &format!("{name}.project_bn"), d * spec.out_vchannels)))
        };
        Ok(FusedMBConv {
            spec,
            fused,
            bn_fused,
            project,
        })
    }
}

impl<T: Real> Block<T> for FusedMBConv<T> {
    fn forward(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        check_input(f, x, self.spec.in_vchannels)?;
        let h = self.fused.forward(f, x)?;
        let h = self.bn_fused.forward(f, h)?;
        let mut h = f.activate(h);
        if let Some((conv, bn)) = &self.project {
            h = conv.forward(f, h)?;
            h = bn.forward(f, h)?;
        }
        residual(f, x, h, self.spec.use_skip)
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        let mut v = vec![&mut self.bn_fused];
        if let Some((_, bn)) = &mut self.project {
            v.push(bn);
        }
        v
    }
}
