use rand::Rng;

use super::{glorot_limit, kron_sum, right_blocks, VTensor};
use crate::algebra::{multiply_into, AlgebraTensor};
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Real;
use crate::tensor::{conv2d, ConvGeometry, Tensor};

/// Bank of vector-valued filters `F = Σ_i F_i e_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct VFilterBank<T> {
    /// `[d, f_h, f_w, C, K]`: component `i` is the real bank `F_i`.
    pub components: Tensor<T>,
    /// `[d, K]` for convolutions, `[d, K·C]` for depthwise banks.
    pub bias: Option<Tensor<T>>,
}

impl<T: Real> VFilterBank<T> {
    pub fn new(components: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        if components.ndim() != 5 {
            return Err(shape_err!(
                "filter components must be [d, f_h, f_w, C, K], got {:?}",
                components.shape()
            ));
        }
        if let Some(b) = &bias {
            if b.ndim() != 2 || b.shape()[0] != components.shape()[0] {
                return Err(shape_err!("filter bias must be [d, channels], got {:?}", b.shape()));
            }
        }
        Ok(VFilterBank { components, bias })
    }

    pub fn zeros(d: usize, fh: usize, fw: usize, c: usize, k: usize) -> Self {
        VFilterBank {
            components: Tensor::zeros(&[d, fh, fw, c, k]),
            bias: None,
        }
    }

    /// Uniform init with the limit computed on the realized real bank.
    /// Depthwise banks use the per-channel fan (`f_h·f_w·d` in,
    /// `f_h·f_w·d·K` out).
    pub fn glorot(
        d: usize,
        fh: usize,
        fw: usize,
        c: usize,
        k: usize,
        depthwise: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let taps = fh * fw;
        let lim = if depthwise {
            glorot_limit(taps * d, taps * d * k)
        } else {
            glorot_limit(taps * d * c, taps * d * k)
        };
        VFilterBank {
            components: Tensor::from_fn(&[d, fh, fw, c, k], |_| T::of_f64(rng.gen_range(-lim..=lim))),
            bias: None,
        }
    }

    pub fn d(&self) -> usize {
        self.components.shape()[0]
    }

    /// `(f_h, f_w, C, K)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.components.shape();
        (s[1], s[2], s[3], s[4])
    }

    /// Vector filter `F[m, n, c, k]` as coordinates.
    pub fn filter(&self, m: usize, n: usize, c: usize, k: usize) -> Vec<T> {
        let (fh, fw, cc, kk) = self.dims();
        let block = fh * fw * cc * kk;
        let off = ((m * fw + n) * cc + c) * kk + k;
        (0..self.d())
            .map(|i| self.components.data()[i * block + off])
            .collect()
    }

    /// Trainable scalars held by the bank (`d·f_h·f_w·C·K` plus bias).
    pub fn num_scalars(&self) -> usize {
        self.components.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }

    /// Scalars of the realized real bank, `d²·f_h·f_w·C·K`.
    pub fn realized_scalars(&self) -> usize {
        self.components.len() * self.d()
    }

    pub(super) fn check(&self, alg: &AlgebraTensor) -> Result<()> {
        if self.d() != alg.dim() {
            return Err(invalid!(
                "{} filter components for a {}-dimensional algebra",
                self.d(),
                alg.dim()
            ));
        }
        Ok(())
    }
}

/// Realized real bank of shape `f_h×f_w×(dC)×(dK)`:
/// `F^R[m, n, A·C + c, B·K + k] = Σ_j π_{A j B} F_j[m, n, c, k]`, so that a
/// real convolution of the component-blocked image computes `I × F`.
pub fn realize_conv_filters<T: Real>(f: &VFilterBank<T>, alg: &AlgebraTensor) -> Result<Tensor<T>> {
    f.check(alg)?;
    let d = alg.dim();
    Ok(kron_sum(&f.components, &right_blocks::<T>(alg), d, d))
}

pub(super) fn add_channel_bias<T: Real>(t: &mut Tensor<T>, bias: &Tensor<T>) {
    let n = bias.len();
    debug_assert_eq!(t.channels(), n);
    for px in t.data_mut().chunks_exact_mut(n) {
        for (o, &b) in px.iter_mut().zip(bias.data()) {
            *o = *o + b;
        }
    }
}

pub(super) fn check_image<T: Real>(
    x: &VTensor<T>,
    alg: &AlgebraTensor,
    c: usize,
) -> Result<()> {
    if x.d() != alg.dim() {
        return Err(shape_err!("image has d = {}, algebra has d = {}", x.d(), alg.dim()));
    }
    if x.vchannels() != c {
        return Err(shape_err!(
            "image has {} vector channels, filters expect {c}",
            x.vchannels()
        ));
    }
    if !(3..=4).contains(&x.shape().len()) {
        return Err(shape_err!("image must be H×W×dC or N×H×W×dC"));
    }
    Ok(())
}

/// Emulated vector-valued convolution: one real `conv2d` with the realized bank.
pub fn vconv2d_forward<T: Real>(
    x: &VTensor<T>,
    f: &VFilterBank<T>,
    alg: &AlgebraTensor,
    g: &ConvGeometry,
) -> Result<VTensor<T>> {
    f.check(alg)?;
    let (_, _, c, _) = f.dims();
    check_image(x, alg, c)?;
    let realized = realize_conv_filters(f, alg)?;
    let mut y = conv2d(x.base(), &realized, g)?;
    if let Some(b) = &f.bias {
        add_channel_bias(&mut y, b);
    }
    VTensor::new(y, alg.dim())
}

/// Spatial bookkeeping shared by the reference loops: `(batch, h, w, oh, ow,
/// pad_t, pad_l)`.
pub(super) fn ref_geometry<T: Real>(
    x: &VTensor<T>,
    fh: usize,
    fw: usize,
    g: &ConvGeometry,
) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    let s = x.shape();
    let (n, h, w) = if s.len() == 4 { (s[0], s[1], s[2]) } else { (1, s[0], s[1]) };
    let (oh, pt) = g.axis(h, fh, g.stride_h)?;
    let (ow, pl) = g.axis(w, fw, g.stride_w)?;
    Ok((n, h, w, oh, ow, pt, pl))
}

/// Direct evaluation of `J[i,j,k] = Σ_{m,n,c} I[i·s_H+m, j·s_W+n, c] × F[m,n,c,k]`.
pub fn vconv2d_reference<T: Real>(
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
    let mut out = vec![T::zero(); n * oh * ow * d * k];
    let mut prod = vec![T::zero(); d];
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let orow = (b * oh + i) * ow + j;
                for kk in 0..k {
                    let mut acc = vec![T::zero(); d];
                    for m in 0..fh {
                        for nn in 0..fw {
                            let (y, xx) = (i * g.stride_h + m, j * g.stride_w + nn);
                            if y < pt || xx < pl || y - pt >= h || xx - pl >= w {
                                continue;
                            }
                            let irow = (b * h + y - pt) * w + xx - pl;
                            for cc in 0..c {
                                multiply_into(&pi, d, &x.vector_at(irow, cc), &f.filter(m, nn, cc, kk), &mut prod);
                                acc.iter_mut().zip(&prod).for_each(|(a, &p)| *a = *a + p);
                            }
                        }
                    }
                    if let Some(bias) = &f.bias {
                        for (comp, a) in acc.iter_mut().enumerate() {
                            *a = *a + bias.data()[comp * k + kk];
                        }
                    }
                    for (comp, a) in acc.into_iter().enumerate() {
                        out[orow * d * k + comp * k + kk] = a;
                    }
                }
            }
        }
    }
    let shape = if x.shape().len() == 4 { vec![n, oh, ow, d * k] } else { vec![oh, ow, d * k] };
    VTensor::new(Tensor::new(shape, out)?, d)
}
