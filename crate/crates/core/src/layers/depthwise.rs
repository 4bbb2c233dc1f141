//! Vector-valued depthwise convolution through a real depthwise convolution.
//!
//! Index algebra, with `A`, `B` component indices, `c < C`, `k < K`:
//!
//! 1. The realized bank `F^R` has input channel `A·C + c` and multiplier
//!    `B·K + k`, holding `Σ_j π_{A j B} F_j[.., c, k]`.
//! 2. Real depthwise convolution of the `dC`-channel image with `F^R`
//!    (multiplier `dK`) yields the augmented image `J^a` with `d²CK`
//!    channels; channel `(B·K + k) + (A·C + c)·dK` is `I_A[c] ∗ F^R[A·C+c, B·K+k]`.
//! 3. Summing over `A` gives the mixed image `J~` with `dKC` channels, channel
//!    `c·dK + B·K + k` (groups ordered by their smallest member).
//! 4. Permuting `J~` so that position `B·KC + (k + c·K)` takes channel
//!    `c·dK + B·K + k` yields the component-blocked output `[J_0 | … | J_{d-1}]`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use super::vconv::{add_channel_bias, check_image, ref_geometry};
use super::{realize_conv_filters, VFilterBank, VTensor};
use crate::algebra::{multiply_into, AlgebraTensor};
use crate::error::{shape_err, Result};
use crate::scalar::Real;
use crate::tensor::{
    depthwise_conv2d, permute_channels, sum_channel_groups, ConvGeometry, GroupPlan, Tensor,
};

/// Group-sum and permutation bookkeeping for one `(d, C, K)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthwisePlan {
    pub d: usize,
    pub c: usize,
    pub k: usize,
    pub groups: GroupPlan,
    pub perm: Vec<usize>,
}

impl DepthwisePlan {
    pub fn new(d: usize, c: usize, k: usize) -> Self {
        let dk = d * k;
        let mut groups = Vec::with_capacity(d * k * c);
        for cc in 0..c {
            for b in 0..d {
                for kk in 0..k {
                    groups.push((0..d).map(|a| (b * k + kk) + (a * c + cc) * dk).collect());
                }
            }
        }
        let mut perm = Vec::with_capacity(d * k * c);
        for b in 0..d {
            for cc in 0..c {
                for kk in 0..k {
                    perm.push(cc * dk + b * k + kk);
                }
            }
        }
        DepthwisePlan {
            d,
            c,
            k,
            groups: GroupPlan::new(d * d * c * k, groups).expect("plan is a partition"),
            perm,
        }
    }
}

type PlanCache = Mutex<HashMap<(usize, usize, usize), Arc<DepthwisePlan>>>;

/// Cached [`DepthwisePlan`] for `(d, C, K)`.
pub fn depthwise_plan(d: usize, c: usize, k: usize) -> Arc<DepthwisePlan> {
    static CACHE: OnceLock<PlanCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut map = cache.lock().expect("plan cache poisoned");
    map.entry((d, c, k))
        .or_insert_with(|| Arc::new(DepthwisePlan::new(d, c, k)))
        .clone()
}

/// Intermediate tensors of the emulation pipeline.
#[derive(Debug, Clone)]
pub struct DepthwiseStages<T> {
    pub realized: Tensor<T>,
    pub augmented: Tensor<T>,
    pub mixed: Tensor<T>,
    pub output: VTensor<T>,
}

pub fn vdepthwise_stages<T: Real>(
    x: &VTensor<T>,
    f: &VFilterBank<T>,
    alg: &AlgebraTensor,
    g: &ConvGeometry,
) -> Result<DepthwiseStages<T>> {
    f.check(alg)?;
    let (_, _, c, k) = f.dims();
    check_image(x, alg, c)?;
    if let Some(b) = &f.bias {
        if b.shape() != [alg.dim(), k * c] {
            return Err(shape_err!("depthwise bias must be [d, K·C], got {:?}", b.shape()));
        }
    }
    let plan = depthwise_plan(alg.dim(), c, k);
    let realized = realize_conv_filters(f, alg)?;
    let augmented = depthwise_conv2d(x.base(), &realized, g)?;
    let mixed = sum_channel_groups(&augmented, &plan.groups)?;
    let mut out = permute_channels(&mixed, &plan.perm)?;
    if let Some(b) = &f.bias {
        add_channel_bias(&mut out, b);
    }
    Ok(DepthwiseStages {
        realized,
        augmented,
        mixed,
        output: VTensor::new(out, alg.dim())?,
    })
}

/// Emulated vector-valued depthwise convolution; output has `K·C` vector
/// channels ordered `k + c·K`.
pub fn vdepthwise_forward<T: Real>(
    x: &VTensor<T>,
    f: &VFilterBank<T>,
    alg: &AlgebraTensor,
    g: &ConvGeometry,
) -> Result<VTensor<T>> {
    Ok(vdepthwise_stages(x, f, alg, g)?.output)
}

/// Direct evaluation of
/// `J[i, j, k + cK] = Σ_{m,n} I[i·s_H + m, j·s_W + n, c] × F[m, n, c, k]`.
pub fn vdepthwise_reference<T: Real>(
    x: &VTensor<T>,
    f: &VFilterBank<T>,
    alg: &AlgebraTensor,
    g: &ConvGeometry,
) -> Result<VTensor<T>> {
    f.check(alg)?;
    let (fh, fw, c, k) = f.dims();
    check_image(x, alg, c)?;
    let d = alg.dim();
    let pi = alg.pi_as::<T>();
    let (n, h, w, oh, ow, pt, pl) = ref_geometry(x, fh, fw, g)?;
    let kc = k * c;
    let mut out = vec![T::zero(); n * oh * ow * d * kc];
    let mut prod = vec![T::zero(); d];
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let orow = (b * oh + i) * ow + j;
                for cc in 0..c {
                    for kk in 0..k {
                        let ch = kk + cc * k;
                        let mut acc = vec![T::zero(); d];
                        for m in 0..fh {
                            for nn in 0..fw {
                                let (y, xx) = (i * g.stride_h + m, j * g.stride_w + nn);
                                if y < pt || xx < pl || y - pt >= h || xx - pl >= w {
                                    continue;
                                }
                                let irow = (b * h + y - pt) * w + xx - pl;
                                multiply_into(&pi, d, &x.vector_at(irow, cc), &f.filter(m, nn, cc, kk), &mut prod);
                                acc.iter_mut().zip(&prod).for_each(|(a, &p)| *a = *a + p);
                            }
                        }
                        if let Some(bias) = &f.bias {
                            for (comp, a) in acc.iter_mut().enumerate() {
                                *a = *a + bias.data()[comp * kc + ch];
                            }
                        }
                        for (comp, a) in acc.into_iter().enumerate() {
                            out[orow * d * kc + comp * kc + ch] = a;
                        }
                    }
                }
            }
        }
    }
    let shape = if x.shape().len() == 4 { vec![n, oh, ow, d * kc] } else { vec![oh, ow, d * kc] };
    VTensor::new(Tensor::new(shape, out)?, d)
}
