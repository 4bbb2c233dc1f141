use crate::error::{shape_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Hexcone RGB → HSV with every component in `[0, 1]`; achromatic pixels get
/// `H = 0`, black gets `S = 0`.
pub fn rgb_to_hsv_pixel(r: f64, g: f64, b: f64) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    [h / 6.0, s, max]
}

pub fn hsv_to_rgb_pixel(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector as u8 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn map_pixels<T: Real>(img: &Tensor<T>, f: fn(f64, f64, f64) -> [f64; 3]) -> Result<Tensor<T>> {
    if img.channels() != 3 {
        return Err(shape_err!("expected 3 colour channels, got shape {:?}", img.shape()));
    }
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let [a, b, c] = f(px[0].as_f64(), px[1].as_f64(), px[2].as_f64());
        px[0] = T::of_f64(a);
        px[1] = T::of_f64(b);
        px[2] = T::of_f64(c);
    }
    Ok(out)
}

pub fn rgb_to_hsv<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    map_pixels(img, rgb_to_hsv_pixel)
}

pub fn hsv_to_rgb<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    map_pixels(img, hsv_to_rgb_pixel)
}
