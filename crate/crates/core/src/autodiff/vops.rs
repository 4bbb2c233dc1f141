//! Vector-valued layers recorded on a tape as compositions of primitives,
//! mirroring the emulation routes in [`crate::layers`].

use std::sync::Arc;

use super::{Tape, Var};
use crate::algebra::AlgebraTensor;
use crate::error::{shape_err, Result};
use crate::layers::{depthwise_plan, left_blocks, right_blocks};
use crate::scalar::Real;
use crate::tensor::{ConvGeometry, Tensor};

fn comps_dims<T: Real>(t: &Tensor<T>, d: usize, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [dd, fh, fw, c, k] if dd == d => Ok([fh, fw, c, k]),
        ref s => Err(shape_err!("{what} components must be [{d}, fh, fw, C, K], got {s:?}")),
    }
}

impl<T: Real> Tape<T> {
    /// Vector convolution: `comps` is `[d, fh, fw, C, K]`, `bias` holds `d·K` values.
    pub fn vconv2d(
        &mut self,
        x: Var,
        comps: Var,
        bias: Option<Var>,
        alg: &AlgebraTensor,
        geom: ConvGeometry,
    ) -> Result<Var> {
        let d = alg.dim();
        let [_, _, c, _] = comps_dims(self.value(comps), d, "conv")?;
        if self.value(x).channels() != d * c {
            return Err(shape_err!("image has {} channels, expected {}", self.value(x).channels(), d * c));
        }
        let bank = self.kron_sum(comps, Arc::new(right_blocks::<T>(alg)), d, d)?;
        let y = self.conv2d(x, bank, geom)?;
        match bias {
            Some(b) => self.add_channel_bias(y, b),
            None => Ok(y),
        }
    }

    /// Vector depthwise convolution: `comps` is `[d, fh, fw, C, K]`, `bias`
    /// holds `d·K·C` values; output vector channel `k + c·K`.
    pub fn vdepthwise(
        &mut self,
        x: Var,
        comps: Var,
        bias: Option<Var>,
        alg: &AlgebraTensor,
        geom: ConvGeometry,
    ) -> Result<Var> {
        let d = alg.dim();
        let [_, _, c, k] = comps_dims(self.value(comps), d, "depthwise")?;
        if self.value(x).channels() != d * c {
            return Err(shape_err!("image has {} channels, expected {}", self.value(x).channels(), d * c));
        }
        let plan = depthwise_plan(d, c, k);
        let bank = self.kron_sum(comps, Arc::new(right_blocks::<T>(alg)), d, d)?;
        let aug = self.depthwise_conv2d(x, bank, geom)?;
        let mixed = self.sum_channel_groups(aug, Arc::new(plan.groups.clone()))?;
        let y = self.gather_channels(mixed, Arc::new(plan.perm.clone()))?;
        match bias {
            Some(b) => self.add_channel_bias(y, b),
            None => Ok(y),
        }
    }

    /// Vector dense layer on `N×(d·in)` rows: `comps` is `[d, out, in]`.
    pub fn vdense(&mut self, x: Var, comps: Var, bias: Option<Var>, alg: &AlgebraTensor) -> Result<Var> {
        let d = alg.dim();
        let inp = match *self.value(comps).shape() {
            [dd, _, i] if dd == d => i,
            ref s => return Err(shape_err!("dense components must be [{d}, out, in], got {s:?}")),
        };
        if self.value(x).ndim() != 2 || self.value(x).channels() != d * inp {
            return Err(shape_err!("dense input must be N×{}, got {:?}", d * inp, self.value(x).shape()));
        }
        let w = self.kron_sum(comps, Arc::new(left_blocks::<T>(alg)), d, d)?;
        let wt = self.transpose(w)?;
        let y = self.matmul(x, wt)?;
        match bias {
            Some(b) => self.add_channel_bias(y, b),
            None => Ok(y),
        }
    }
}
