use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Central differences `(f(θ + εe_i) − f(θ − εe_i)) / 2ε` for every
/// coordinate of `theta`.
pub fn finite_diff_grad(
    mut f: impl FnMut(&Tensor<f64>) -> f64,
    theta: &Tensor<f64>,
    eps: f64,
) -> Result<Tensor<f64>> {
    finite_diff_coords(&mut f, theta, eps, &(0..theta.len()).collect::<Vec<_>>()).map(|g| {
        Tensor::new(theta.shape().to_vec(), g).expect("one entry per coordinate")
    })
}

/// Central differences for a subset of flat coordinates.
pub fn finite_diff_coords(
    f: &mut impl FnMut(&Tensor<f64>) -> f64,
    theta: &Tensor<f64>,
    eps: f64,
    coords: &[usize],
) -> Result<Vec<f64>> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(invalid!("finite-difference step must be positive, got {eps}"));
    }
    let mut probe = theta.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        out.push((fp - fm) / (2.0 * eps));
    }
    Ok(out)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_difference(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(|t| t.data()[0].powi(2), &Tensor::scalar(3.0), 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let theta = Tensor::from_fn(&[2, 3], |i| i as f64);
        let g = finite_diff_grad(|_| 4.2, &theta, 1e-4).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_step_and_nan() {
        let t = Tensor::scalar(1.0);
        assert!(finite_diff_grad(|_| 0.0, &t, 0.0).is_err());
        assert!(matches!(
            finite_diff_grad(|_| f64::NAN, &t, 1e-3),
            Err(Error::NonFinite(_))
        ));
    }
}
