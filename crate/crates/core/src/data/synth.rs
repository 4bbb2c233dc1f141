use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

/// Two texture classes with matched brightness statistics: class 0 is
/// box-blurred (spatially smooth) Gaussian noise, class 1 is white Gaussian
/// noise. Each sample gets a random colour tint, so colour alone carries no
/// label information. Labels alternate 0, 1, 0, …
pub fn synthetic_textures(samples: usize, size: usize, seed: u64) -> Vec<(Tensor<f64>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|i| {
            let label = i % 2;
            (texture(label, size, &mut rng), label)
        })
        .collect()
}

const BLUR: usize = 7;

fn texture(label: usize, size: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let noise: Vec<f64> = (0..size * size).map(|_| rng.sample(StandardNormal)).collect();
    let field = if label == 0 {
        // Wrap-around box blur, rescaled back to unit variance.
        let r = BLUR as i64 / 2;
        let n = size as i64;
        let gain = BLUR as f64;
        let mut out = vec![0.0; size * size];
        for y in 0..n {
            for x in 0..n {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        acc += noise[((y + dy).rem_euclid(n) * n + (x + dx).rem_euclid(n)) as usize];
                    }
                }
                out[(y * n + x) as usize] = acc / gain;
            }
        }
        out
    } else {
        noise
    };
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.6..1.0));
    Tensor::from_fn(&[size, size, 3], |e| {
        let v = (0.5 + 0.15 * field[e / 3]).clamp(0.0, 1.0);
        v * tint[e % 3]
    })
}
