//! Vector-valued dense, convolution and depthwise-convolution layers.
//!
//! Every layer has two routes: an emulation route that realizes the vector
//! weights as a real weight tensor (a sum of Kronecker products with algebra
//! slices) and runs a real-valued kernel, and a reference route that
//! evaluates the defining sums with the algebra product directly.
//!
//! Layout conventions:
//! - A [`VTensor`] keeps its `d` components channel-blocked:
//!   `[I_0 | I_1 | … | I_{d-1}]`, each block holding `C` channels.
//! - Dense layers multiply weight-left: `y_u = Σ_v W_uv × x_v + b_u`.
//! - Convolutions multiply image-left: `J_k = Σ_{m,n,c} I_c × F_{c,k}`.

mod dense;
mod depthwise;
mod vconv;
mod vtensor;

pub use dense::{realize_dense, vdense_forward, vdense_reference, VDenseWeights};
pub use depthwise::{
    depthwise_plan, vdepthwise_forward, vdepthwise_reference, vdepthwise_stages, DepthwisePlan,
    DepthwiseStages,
};
pub use vconv::{realize_conv_filters, vconv2d_forward, vconv2d_reference, VFilterBank};
pub use vtensor::VTensor;

use crate::algebra::AlgebraTensor;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// `out[.., P·r + i, Q·s + k] = Σ_j mats[j][P][Q] · comps[j, .., i, k]`,
/// i.e. `Σ_j mats[j] ⊗ comps[j]` over the last two axes with the algebra
/// matrix as the block index.
///
/// `comps` has shape `[d, lead…, r, s]`; each `mats[j]` is `p×q` (row-major).
pub fn kron_sum<T: Real>(comps: &Tensor<T>, mats: &[Vec<T>], p: usize, q: usize) -> Tensor<T> {
    let shape = comps.shape();
    let d = shape[0];
    debug_assert_eq!(mats.len(), d);
    let nd = shape.len();
    let (r, s) = (shape[nd - 2], shape[nd - 1]);
    let lead: usize = shape[1..nd - 2].iter().product();
    let block = lead * r * s;
    let x = comps.data();
    let mut out = Vec::with_capacity(lead * p * r * q * s);
    for l in 0..lead {
        for pp in 0..p {
            for i in 0..r {
                for qq in 0..q {
                    for k in 0..s {
                        let off = (l * r + i) * s + k;
                        let mut acc = mats[0][pp * q + qq] * x[off];
                        for (j, m) in mats.iter().enumerate().skip(1) {
                            acc = acc + m[pp * q + qq] * x[j * block + off];
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    let mut out_shape = shape[1..nd - 2].to_vec();
    out_shape.extend([p * r, q * s]);
    Tensor::from_parts(out_shape, out)
}

/// Adjoint of [`kron_sum`] with respect to `comps`.
pub fn kron_sum_backward<T: Real>(
    grad: &Tensor<T>,
    comps_shape: &[usize],
    mats: &[Vec<T>],
    p: usize,
    q: usize,
) -> Tensor<T> {
    let nd = comps_shape.len();
    let (r, s) = (comps_shape[nd - 2], comps_shape[nd - 1]);
    let lead: usize = comps_shape[1..nd - 2].iter().product();
    let block = lead * r * s;
    let g = grad.data();
    let mut out = vec![T::zero(); comps_shape.iter().product()];
    let (rows, cols) = (p * r, q * s);
    for l in 0..lead {
        for pp in 0..p {
            for i in 0..r {
                for qq in 0..q {
                    for k in 0..s {
                        let gv = g[(l * rows + pp * r + i) * cols + qq * s + k];
                        let off = (l * r + i) * s + k;
                        for (j, m) in mats.iter().enumerate() {
                            out[j * block + off] = out[j * block + off] + m[pp * q + qq] * gv;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(comps_shape.to_vec(), out)
}

/// Block matrices for weight-left products: `P_i:ᵀ`, entry `(B, A) = π_{iAB}`.
pub(crate) fn left_blocks<T: Real>(alg: &AlgebraTensor) -> Vec<Vec<T>> {
    let d = alg.dim();
    (0..d)
        .map(|i| {
            (0..d * d)
                .map(|e| T::of_f64(alg.pi(i, e % d, e / d)))
                .collect()
        })
        .collect()
}

/// Block matrices for image-left products in the conv layout
/// (input component `A` on rows, output component `B` on columns):
/// entry `(A, B) = π_{A j B}`.
pub(crate) fn right_blocks<T: Real>(alg: &AlgebraTensor) -> Vec<Vec<T>> {
    let d = alg.dim();
    (0..d)
        .map(|j| {
            (0..d * d)
                .map(|e| T::of_f64(alg.pi(e / d, j, e % d)))
                .collect()
        })
        .collect()
}

/// Glorot-uniform limit `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
