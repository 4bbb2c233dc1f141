use rand::Rng;

use super::{glorot_limit, kron_sum, left_blocks, VTensor};
use crate::algebra::{multiply_into, AlgebraTensor};
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Real;
use crate::tensor::{matmul, split_channels, Tensor};

/// Vector-valued dense weights `W = Σ_i W_i e_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct VDenseWeights<T> {
    /// `[d, out, in]`: component `i` is the real matrix `W_i`.
    pub components: Tensor<T>,
    /// `[d, out]`, one vector per output unit.
    pub bias: Option<Tensor<T>>,
}

impl<T: Real> VDenseWeights<T> {
    pub fn new(components: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let [d, out, _] = match *components.shape() {
            [d, o, i] => [d, o, i],
            ref s => return Err(shape_err!("dense components must be [d, out, in], got {s:?}")),
        };
        if let Some(b) = &bias {
            if b.shape() != [d, out] {
                return Err(shape_err!("dense bias must be [{d}, {out}], got {:?}", b.shape()));
            }
        }
        Ok(VDenseWeights { components, bias })
    }

    pub fn zeros(d: usize, out: usize, inp: usize, with_bias: bool) -> Self {
        VDenseWeights {
            components: Tensor::zeros(&[d, out, inp]),
            bias: with_bias.then(|| Tensor::zeros(&[d, out])),
        }
    }

    /// Per-component uniform init on the realized fan-in/fan-out.
    pub fn glorot(d: usize, out: usize, inp: usize, with_bias: bool, rng: &mut impl Rng) -> Self {
        let lim = glorot_limit(d * inp, d * out);
        let mut w = Self::zeros(d, out, inp, with_bias);
        w.components = Tensor::from_fn(&[d, out, inp], |_| T::of_f64(rng.gen_range(-lim..=lim)));
        w
    }

    pub fn d(&self) -> usize {
        self.components.shape()[0]
    }

    pub fn out_units(&self) -> usize {
        self.components.shape()[1]
    }

    pub fn in_units(&self) -> usize {
        self.components.shape()[2]
    }

    /// Vector weight `W[u][v]` as coordinates.
    pub fn weight(&self, u: usize, v: usize) -> Vec<T> {
        let (o, i) = (self.out_units(), self.in_units());
        (0..self.d())
            .map(|c| self.components.data()[(c * o + u) * i + v])
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.components.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }

    fn check(&self, alg: &AlgebraTensor) -> Result<()> {
        if self.d() != alg.dim() {
            return Err(invalid!(
                "{} weight components for a {}-dimensional algebra",
                self.d(),
                alg.dim()
            ));
        }
        Ok(())
    }
}

/// Real matrix `Σ_i P_i:ᵀ ⊗ W_i` of shape `(d·out)×(d·in)`, acting on the
/// component-blocked coordinate vector of the input units.
pub fn realize_dense<T: Real>(w: &VDenseWeights<T>, alg: &AlgebraTensor) -> Result<Tensor<T>> {
    w.check(alg)?;
    let d = alg.dim();
    Ok(kron_sum(&w.components, &left_blocks::<T>(alg), d, d))
}

fn flat_rows<T: Real>(x: &VTensor<T>) -> Result<(usize, Tensor<T>)> {
    let (rows, dc) = split_channels(x.shape())?;
    Ok((rows, x.base().reshape(&[rows, dc])?))
}

/// Emulated dense layer; leading axes of `x` are treated as a batch.
pub fn vdense_forward<T: Real>(
    x: &VTensor<T>,
    w: &VDenseWeights<T>,
    alg: &AlgebraTensor,
) -> Result<VTensor<T>> {
    w.check(alg)?;
    if x.d() != alg.dim() || x.vchannels() != w.in_units() {
        return Err(shape_err!(
            "input has {} units of dim {}, layer expects {} units of dim {}",
            x.vchannels(),
            x.d(),
            w.in_units(),
            alg.dim()
        ));
    }
    let realized = realize_dense(w, alg)?;
    let (rows, flat) = flat_rows(x)?;
    let mut y = matmul(&flat, &realized.transpose()?)?;
    if let Some(b) = &w.bias {
        let n = b.len();
        for r in 0..rows {
            for (o, &bv) in y.data_mut()[r * n..(r + 1) * n].iter_mut().zip(b.data()) {
                *o = *o + bv;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = alg.dim() * w.out_units();
    VTensor::new(y.into_reshape(&shape)?, alg.dim())
}

/// Direct evaluation of `y_u = Σ_v W_uv × x_v + b_u`.
pub fn vdense_reference<T: Real>(
    x: &VTensor<T>,
    w: &VDenseWeights<T>,
    alg: &AlgebraTensor,
) -> Result<VTensor<T>> {
    w.check(alg)?;
    if x.d() != alg.dim() || x.vchannels() != w.in_units() {
        return Err(shape_err!("dense input does not match the layer"));
    }
    let d = alg.dim();
    let pi = alg.pi_as::<T>();
    let (rows, _) = split_channels(x.shape())?;
    let (o, i) = (w.out_units(), w.in_units());
    let mut out = vec![T::zero(); rows * d * o];
    let mut prod = vec![T::zero(); d];
    for r in 0..rows {
        for u in 0..o {
            let mut acc = vec![T::zero(); d];
            for v in 0..i {
                multiply_into(&pi, d, &w.weight(u, v), &x.vector_at(r, v), &mut prod);
                acc.iter_mut().zip(&prod).for_each(|(a, &p)| *a = *a + p);
            }
            if let Some(b) = &w.bias {
                for (c, a) in acc.iter_mut().enumerate() {
                    *a = *a + b.data()[c * o + u];
                }
            }
            for (c, a) in acc.into_iter().enumerate() {
                out[r * d * o + c * o + u] = a;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d * o;
    VTensor::new(Tensor::new(shape, out)?, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{kron, AlgVec, BuiltinAlgebra};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quat() -> AlgebraTensor {
        AlgebraTensor::builtin(BuiltinAlgebra::Quaternion)
    }

    fn random_input(rows: usize, d: usize, units: usize, rng: &mut ChaCha8Rng) -> VTensor<f64> {
        let t = Tensor::from_fn(&[rows, d * units], |_| rng.gen_range(-1.0..1.0));
        VTensor::new(t, d).unwrap()
    }

    #[test]
    fn real_reduction_is_w0() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = VDenseWeights::<f64>::glorot(1, 3, 2, false, &mut rng);
        let r = realize_dense(&w, &AlgebraTensor::builtin(BuiltinAlgebra::Real)).unwrap();
        assert_eq!(r, w.components.reshape(&[3, 2]).unwrap());
    }

    #[test]
    fn single_weight_realizes_left_mul_matrix() {
        let q = quat();
        let wv = vec![0.3, -1.1, 0.7, 2.0];
        let w = VDenseWeights::new(Tensor::new(vec![4, 1, 1], wv.clone()).unwrap(), None).unwrap();
        let r = realize_dense(&w, &q).unwrap();
        assert_eq!(r, q.left_mul_matrix(&AlgVec(wv.clone())).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xt = VTensor::new(Tensor::new(vec![1, 4], x.clone()).unwrap(), 4).unwrap();
            let y = vdense_forward(&xt, &w, &q).unwrap();
            let z = q.multiply(&AlgVec(wv.clone()), &AlgVec(x)).unwrap();
            for k in 0..4 {
                assert!((y.base().data()[k] - z.0[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn identity_components_realize_kron_of_slice_sum() {
        let q = quat();
        let n = 3;
        let comps = Tensor::from_fn(&[4, n, n], |i| if (i % (n * n)) / n == i % n { 1.0 } else { 0.0 });
        let w = VDenseWeights::new(comps, None).unwrap();
        let mut slice_sum = Tensor::<f64>::zeros(&[4, 4]);
        for i in 0..4 {
            slice_sum.add_assign(&q.slice_transpose(i).unwrap());
        }
        let expected = kron(&slice_sum, &Tensor::identity(n)).unwrap();
        assert_eq!(realize_dense(&w, &q).unwrap(), expected);
    }

    #[test]
    fn realize_matches_sum_of_krons() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let alg = AlgebraTensor::random(3, &mut rng);
        let w = VDenseWeights::<f64>::glorot(3, 2, 5, false, &mut rng);
        let mut expected = Tensor::zeros(&[6, 15]);
        for i in 0..3 {
            let wi = Tensor::new(vec![2, 5], w.components.data()[i * 10..(i + 1) * 10].to_vec()).unwrap();
            expected.add_assign(&kron(&alg.slice_transpose(i).unwrap(), &wi).unwrap());
        }
        assert!(realize_dense(&w, &alg).unwrap().rel_error(&expected) < 1e-15);
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let q = quat();
        let n = 3;
        let mut comps = Tensor::zeros(&[4, n, n]);
        for u in 0..n {
            comps.set(&[0, u, u], 1.0);
        }
        let w = VDenseWeights::new(comps, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_input(2, 4, n, &mut rng);
        assert_eq!(vdense_forward(&x, &w, &q).unwrap(), x);
    }

    #[test]
    fn one_unit_with_bias() {
        let q = quat();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut w = VDenseWeights::<f64>::glorot(4, 1, 1, true, &mut rng);
        w.bias = Some(Tensor::new(vec![4, 1], vec![0.5, -0.5, 1.0, 2.0]).unwrap());
        let x = random_input(1, 4, 1, &mut rng);
        let y = vdense_forward(&x, &w, &q).unwrap();
        let z = q
            .multiply(&AlgVec(w.weight(0, 0)), &AlgVec(x.vector_at(0, 0)))
            .unwrap();
        let b = [0.5, -0.5, 1.0, 2.0];
        for (k, bk) in b.iter().enumerate() {
            assert!((y.base().data()[k] - (z.0[k] + bk)).abs() < 1e-14);
        }
    }

    #[test]
    fn random_quaternion_layer_matches_reference() {
        let q = quat();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let w = VDenseWeights::<f64>::glorot(4, 3, 2, true, &mut rng);
            let mut w = w;
            w.bias = Some(Tensor::from_fn(&[4, 3], |_| rng.gen_range(-1.0..1.0)));
            let x = random_input(2, 4, 2, &mut rng);
            let a = vdense_forward(&x, &w, &q).unwrap();
            let b = vdense_reference(&x, &w, &q).unwrap();
            assert!(a.base().rel_error(b.base()) < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_errors() {
        let q = quat();
        let w = VDenseWeights::<f64>::zeros(3, 2, 2, false);
        let x = VTensor::new(Tensor::zeros(&[1, 8]), 4).unwrap();
        assert!(vdense_forward(&x, &w, &q).is_err());
        let w = VDenseWeights::<f64>::zeros(4, 2, 3, false);
        assert!(vdense_forward(&x, &w, &q).is_err());
    }
}
