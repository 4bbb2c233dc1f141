use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::layers::VTensor;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// How a 3-channel colour image becomes vector channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorEmbedding {
    /// `d = 4`: one vector `(0, c₁, c₂, c₃)`; `d = 1`: three real channels.
    #[default]
    ZeroScalar,
    /// Like `ZeroScalar` but component 0 holds the channel mean.
    GrayScalar,
}

/// Embeds `H×W×3` or `N×H×W×3` colour data for an algebra of dimension `d`.
/// Components beyond 3 (for `d > 4`) are zero.
pub fn embed_color<T: Real>(img: &Tensor<T>, d: usize, mode: ColorEmbedding) -> Result<VTensor<T>> {
    if img.channels() != 3 || !(3..=4).contains(&img.ndim()) {
        return Err(shape_err!("colour image must be H×W×3 or N×H×W×3, got {:?}", img.shape()));
    }
    if d == 1 {
        return VTensor::new(img.clone(), 1);
    }
    if d < 4 {
        return Err(invalid!("colour embedding needs d = 1 or d ≥ 4, got {d}"));
    }
    let mut shape = img.shape().to_vec();
    *shape.last_mut().unwrap() = d;
    let third = T::one() / T::of_f64(3.0);
    let mut out = Vec::with_capacity(img.len() / 3 * d);
    for px in img.data().chunks_exact(3) {
        out.push(match mode {
            ColorEmbedding::ZeroScalar => T::zero(),
            ColorEmbedding::GrayScalar => (px[0] + px[1] + px[2]) * third,
        });
        out.extend_from_slice(px);
        out.extend(std::iter::repeat_n(T::zero(), d - 4));
    }
    VTensor::new(Tensor::new(shape, out)?, d)
}
