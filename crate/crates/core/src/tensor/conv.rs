//! Direct (loop) 2-D convolution and real depthwise convolution, channel-last.
//!
//! Cross-correlation convention, no kernel flip. Inputs may be `H×W×C` or
//! batched `N×H×W×C`; outputs keep the input's rank. For each output
//! element the reduction runs over `(m, n, c)` in row-major order.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    /// Output size `ceil(input / stride)`; odd padding totals put the extra
    /// row/column at the bottom/right.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub stride_h: usize,
    pub stride_w: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn new(stride_h: usize, stride_w: usize, padding: Padding) -> Result<Self> {
        if stride_h == 0 || stride_w == 0 {
            return Err(invalid!("strides must be positive"));
        }
        Ok(ConvGeometry {
            stride_h,
            stride_w,
            padding,
        })
    }

    pub fn valid() -> Self {
        ConvGeometry {
            stride_h: 1,
            stride_w: 1,
            padding: Padding::Valid,
        }
    }

    pub fn same(stride: usize) -> Self {
        ConvGeometry {
            stride_h: stride,
            stride_w: stride,
            padding: Padding::Same,
        }
    }

    /// Output length and leading pad along one axis.
    pub fn axis(&self, input: usize, kernel: usize, stride: usize) -> Result<(usize, usize)> {
        match self.padding {
            Padding::Valid => {
                if kernel > input {
                    return Err(shape_err!("kernel {kernel} larger than input {input}"));
                }
                Ok(((input - kernel) / stride + 1, 0))
            }
            Padding::Same => {
                let out = input.div_ceil(stride);
                let total = ((out - 1) * stride + kernel).saturating_sub(input);
                if kernel > input + total {
                    return Err(shape_err!("kernel {kernel} larger than padded input"));
                }
                Ok((out, total / 2))
            }
        }
    }

    /// Spatial output size for an `h×w` input and `fh×fw` kernel.
    pub fn output_hw(&self, h: usize, w: usize, fh: usize, fw: usize) -> Result<(usize, usize)> {
        let (oh, _) = self.axis(h, fh, self.stride_h)?;
        let (ow, _) = self.axis(w, fw, self.stride_w)?;
        Ok((oh, ow))
    }
}

#[derive(Debug, Clone, Copy)]
struct Plan {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    fh: usize,
    fw: usize,
    k: usize,
    oh: usize,
    ow: usize,
    pad_t: usize,
    pad_l: usize,
    sh: usize,
    sw: usize,
    batched: bool,
}

impl Plan {
    fn new(input: &[usize], filter: &[usize], g: &ConvGeometry) -> Result<Plan> {
        let (batched, [n, h, w, c]) = match *input {
            [h, w, c] => (false, [1, h, w, c]),
            [n, h, w, c] => (true, [n, h, w, c]),
            _ => return Err(shape_err!("conv input must be H×W×C or N×H×W×C, got {input:?}")),
        };
        let [fh, fw, fc, k] = match *filter {
            [a, b, c, d] => [a, b, c, d],
            _ => return Err(shape_err!("filter bank must be fh×fw×C×K, got {filter:?}")),
        };
        if fc != c {
            return Err(shape_err!("filter channels {fc} vs input channels {c}"));
        }
        let (oh, pad_t) = g.axis(h, fh, g.stride_h)?;
        let (ow, pad_l) = g.axis(w, fw, g.stride_w)?;
        Ok(Plan {
            n,
            h,
            w,
            c,
            fh,
            fw,
            k,
            oh,
            ow,
            pad_t,
            pad_l,
            sh: g.stride_h,
            sw: g.stride_w,
            batched,
        })
    }

    fn out_shape(&self, channels: usize) -> Vec<usize> {
        if self.batched {
            vec![self.n, self.oh, self.ow, channels]
        } else {
            vec![self.oh, self.ow, channels]
        }
    }

    /// Input row/column for output position `o` and tap `t`, if inside.
    #[inline]
    fn src(o: usize, t: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        let p = (o * stride + t).checked_sub(pad)?;
        (p < len).then_some(p)
    }

    /// Visits every (output pixel, tap) pair with flat offsets:
    /// `f(out_pixel, in_pixel, m, n)`.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        for b in 0..self.n {
            for i in 0..self.oh {
                for j in 0..self.ow {
                    let op = (b * self.oh + i) * self.ow + j;
                    for m in 0..self.fh {
                        let Some(y) = Self::src(i, m, self.sh, self.pad_t, self.h) else {
                            continue;
                        };
                        for n in 0..self.fw {
                            let Some(x) = Self::src(j, n, self.sw, self.pad_l, self.w) else {
                                continue;
                            };
                            let ip = (b * self.h + y) * self.w + x;
                            f(op, ip, m, n);
                        }
                    }
                }
            }
        }
    }
}

/// `J[i,j,k] = Σ_{m,n,c} I[i·s_H+m−pad_top, j·s_W+n−pad_left, c]·F[m,n,c,k]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    filter: &Tensor<T>,
    g: &ConvGeometry,
) -> Result<Tensor<T>> {
    let p = Plan::new(input.shape(), filter.shape(), g)?;
    let (x, f) = (input.data(), filter.data());
    let (c, k) = (p.c, p.k);
    let mut out = vec![T::zero(); p.n * p.oh * p.ow * k];
    p.for_each_tap(|op, ip, m, n| {
        let acc = &mut out[op * k..(op + 1) * k];
        let xs = &x[ip * c..(ip + 1) * c];
        let fbase = (m * p.fw + n) * c * k;
        for (ci, &xv) in xs.iter().enumerate() {
            let frow = &f[fbase + ci * k..fbase + (ci + 1) * k];
            for (a, &fv) in acc.iter_mut().zip(frow) {
                *a = *a + xv * fv;
            }
        }
    });
    Ok(Tensor::from_parts(p.out_shape(k), out))
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_backward_input<T: Real>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    filter: &Tensor<T>,
    g: &ConvGeometry,
) -> Result<Tensor<T>> {
    let p = Plan::new(input_shape, filter.shape(), g)?;
    check_grad_shape(grad_out, &p.out_shape(p.k))?;
    let (gy, f) = (grad_out.data(), filter.data());
    let (c, k) = (p.c, p.k);
    let mut gx = vec![T::zero(); input_shape.iter().product()];
    p.for_each_tap(|op, ip, m, n| {
        let go = &gy[op * k..(op + 1) * k];
        let fbase = (m * p.fw + n) * c * k;
        for ci in 0..c {
            let frow = &f[fbase + ci * k..fbase + (ci + 1) * k];
            let s: T = go.iter().zip(frow).map(|(&a, &b)| a * b).sum();
            gx[ip * c + ci] = gx[ip * c + ci] + s;
        }
    });
    Ok(Tensor::from_parts(input_shape.to_vec(), gx))
}

/// Gradient of [`conv2d`] with respect to its filter bank.
pub fn conv2d_backward_filter<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    filter_shape: &[usize],
    g: &ConvGeometry,
) -> Result<Tensor<T>> {
    let p = Plan::new(input.shape(), filter_shape, g)?;
    check_grad_shape(grad_out, &p.out_shape(p.k))?;
    let (gy, x) = (grad_out.data(), input.data());
    let (c, k) = (p.c, p.k);
    let mut gf = vec![T::zero(); filter_shape.iter().product()];
    p.for_each_tap(|op, ip, m, n| {
        let go = &gy[op * k..(op + 1) * k];
        let fbase = (m * p.fw + n) * c * k;
        for ci in 0..c {
            let xv = x[ip * c + ci];
            let frow = &mut gf[fbase + ci * k..fbase + (ci + 1) * k];
            for (a, &gv) in frow.iter_mut().zip(go) {
                *a = *a + xv * gv;
            }
        }
    });
    Ok(Tensor::from_parts(filter_shape.to_vec(), gf))
}

/// Real depthwise convolution: output channel `k + c·K` is input channel `c`
/// convolved with filter `(c, k)`.
pub fn depthwise_conv2d<T: Real>(
    input: &Tensor<T>,
    filter: &Tensor<T>,
    g: &ConvGeometry,
) -> Result<Tensor<T>> {
    let p = Plan::new(input.shape(), filter.shape(), g)?;
    let (x, f) = (input.data(), filter.data());
    let (c, k) = (p.c, p.k);
    let ck = c * k;
    let mut out = vec![T::zero(); p.n * p.oh * p.ow * ck];
    p.for_each_tap(|op, ip, m, n| {
        let acc = &mut out[op * ck..(op + 1) * ck];
        let xs = &x[ip * c..(ip + 1) * c];
        let frow = &f[(m * p.fw + n) * ck..(m * p.fw + n + 1) * ck];
        for (ci, &xv) in xs.iter().enumerate() {
            for kk in 0..k {
                let o = ci * k + kk;
                acc[o] = acc[o] + xv * frow[o];
            }
        }
    });
    Ok(Tensor::from_parts(p.out_shape(ck), out))
}

pub fn depthwise_conv2d_backward_input<T: Real>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    filter: &Tensor<T>,
    g: &ConvGeometry,
) -> Result<Tensor<T>> {
    let p = Plan::new(input_shape, filter.shape(), g)?;
    check_grad_shape(grad_out, &p.out_shape(p.c * p.k))?;
    let (gy, f) = (grad_out.data(), filter.data());
    let (c, k) = (p.c, p.k);
    let ck = c * k;
    let mut gx = vec![T::zero(); input_shape.iter().product()];
    p.for_each_tap(|op, ip, m, n| {
        let go = &gy[op * ck..(op + 1) * ck];
        let frow = &f[(m * p.fw + n) * ck..(m * p.fw + n + 1) * ck];
        for ci in 0..c {
            let mut s = T::zero();
            for kk in 0..k {
                s = s + go[ci * k + kk] * frow[ci * k + kk];
            }
            gx[ip * c + ci] = gx[ip * c + ci] + s;
        }
    });
    Ok(Tensor::from_parts(input_shape.to_vec(), gx))
}

pub fn depthwise_conv2d_backward_filter<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    filter_shape: &[usize],
    g: &ConvGeometry,
) -> Result<Tensor<T>> {
    let p = Plan::new(input.shape(), filter_shape, g)?;
    check_grad_shape(grad_out, &p.out_shape(p.c * p.k))?;
    let (gy, x) = (grad_out.data(), input.data());
    let (c, k) = (p.c, p.k);
    let ck = c * k;
    let mut gf = vec![T::zero(); filter_shape.iter().product()];
    p.for_each_tap(|op, ip, m, n| {
        let go = &gy[op * ck..(op + 1) * ck];
        let frow = &mut gf[(m * p.fw + n) * ck..(m * p.fw + n + 1) * ck];
        for ci in 0..c {
            let xv = x[ip * c + ci];
            for kk in 0..k {
                let o = ci * k + kk;
                frow[o] = frow[o] + xv * go[o];
            }
        }
    });
    Ok(Tensor::from_parts(filter_shape.to_vec(), gf))
}

fn check_grad_shape<T: Real>(grad: &Tensor<T>, expected: &[usize]) -> Result<()> {
    if grad.shape() != expected {
        return Err(shape_err!(
            "upstream gradient {:?}, expected {expected:?}",
            grad.shape()
        ));
    }
    Ok(())
}
