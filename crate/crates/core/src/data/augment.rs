use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Angles are drawn from `[-max_rotation, max_rotation]` (radians).
    pub max_rotation: f64,
    /// Shifts are drawn from `±frac` of each spatial size, rounded to pixels.
    pub max_translate_frac: f64,
    pub flip: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_rotation: 0.3 * PI,
            max_translate_frac: 0.10,
            flip: true,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_rotation >= 0.0 && self.max_rotation.is_finite()) {
            return Err(invalid!("max_rotation must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.max_translate_frac) {
            return Err(invalid!("max_translate_frac must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flip {
    Horizontal,
    Vertical,
}

/// One concrete draw of the random transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub angle: f64,
    pub shift: (i64, i64),
    pub flip: Option<Flip>,
}

impl Augmentation {
    pub fn sample(cfg: &AugmentConfig, h: usize, w: usize, rng: &mut impl Rng) -> Self {
        let angle = if cfg.max_rotation > 0.0 {
            rng.gen_range(-cfg.max_rotation..=cfg.max_rotation)
        } else {
            0.0
        };
        let mut shift_for = |n: usize| {
            let m = (cfg.max_translate_frac * n as f64).round() as i64;
            if m > 0 {
                rng.gen_range(-m..=m)
            } else {
                0
            }
        };
        let shift = (shift_for(h), shift_for(w));
        let flip = (cfg.flip && rng.gen_bool(0.5)).then(|| {
            if rng.gen_bool(0.5) {
                Flip::Horizontal
            } else {
                Flip::Vertical
            }
        });
        Augmentation { angle, shift, flip }
    }

    /// Rotation, then translation, then flip.
    pub fn apply<T: Real>(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        let mut out = rotate(img, self.angle)?;
        if self.shift != (0, 0) {
            out = translate(&out, self.shift.0, self.shift.1)?;
        }
        match self.flip {
            Some(Flip::Horizontal) => flip_horizontal(&out),
            Some(Flip::Vertical) => flip_vertical(&out),
            None => Ok(out),
        }
    }
}

fn hwc<T: Real>(img: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(shape_err!("expected an H×W×C image, got {s:?}")),
    }
}

/// Rotation about the image centre, counter-clockwise as displayed (row 0 at
/// the top); bilinear resampling with zero fill.
pub fn rotate<T: Real>(img: &Tensor<T>, angle: f64) -> Result<Tensor<T>> {
    let (h, w, c) = hwc(img)?;
    if angle == 0.0 {
        return Ok(img.clone());
    }
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, co) = angle.sin_cos();
    let src = img.data();
    let mut out = vec![T::zero(); img.len()];
    let at = |y: i64, x: i64, ch: usize| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            src[(y as usize * w + x as usize) * c + ch].as_f64()
        }
    };
    for y in 0..h {
        for x in 0..w {
            // Inverse map: output pixel ← source position.
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sy = co * dy + s * dx + cy;
            let sx = -s * dy + co * dx + cx;
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as i64, x0 as i64);
            for ch in 0..c {
                let v = at(y0, x0, ch) * (1.0 - fy) * (1.0 - fx)
                    + at(y0, x0 + 1, ch) * (1.0 - fy) * fx
                    + at(y0 + 1, x0, ch) * fy * (1.0 - fx)
                    + at(y0 + 1, x0 + 1, ch) * fy * fx;
                out[(y * w + x) * c + ch] = T::of_f64(v);
            }
        }
    }
    Tensor::new(img.shape().to_vec(), out)
}

/// `out[y + dy, x + dx] = img[y, x]`, zero fill.
pub fn translate<T: Real>(img: &Tensor<T>, dy: i64, dx: i64) -> Result<Tensor<T>> {
    let (h, w, c) = hwc(img)?;
    let mut out = vec![T::zero(); img.len()];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (sy, sx) = (y - dy, x - dx);
            if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                continue;
            }
            let (o, i) = (((y as usize) * w + x as usize) * c, ((sy as usize) * w + sx as usize) * c);
            out[o..o + c].copy_from_slice(&img.data()[i..i + c]);
        }
    }
    Tensor::new(img.shape().to_vec(), out)
}

/// Mirrors columns.
pub fn flip_horizontal<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, w, c) = hwc(img)?;
    Ok(Tensor::from_fn(img.shape(), |e| {
        let (p, ch) = (e / c, e % c);
        let (y, x) = (p / w, p % w);
        img.data()[(y * w + (w - 1 - x)) * c + ch]
    }))
}

/// Mirrors rows.
pub fn flip_vertical<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = hwc(img)?;
    Ok(Tensor::from_fn(img.shape(), |e| {
        let (p, ch) = (e / c, e % c);
        let (y, x) = (p / w, p % w);
        img.data()[((h - 1 - y) * w + x) * c + ch]
    }))
}
