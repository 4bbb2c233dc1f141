//! Randomized path-equivalence audit: every vector layer's emulation route
//! against its direct reference sums.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algebra::{AlgebraTensor, BuiltinAlgebra};
use crate::error::Result;
use crate::layers::{
    vconv2d_forward, vconv2d_reference, vdense_forward, vdense_reference, vdepthwise_forward,
    vdepthwise_reference, VDenseWeights, VFilterBank, VTensor,
};
use crate::scalar::Real;
use crate::tensor::{ConvGeometry, Padding, Tensor};

/// Relative-error threshold for a precision: `1e-10` double, `1e-5` single.
pub fn threshold<T: Real>() -> f64 {
    if T::DTYPE == 1 {
        1e-10
    } else {
        1e-5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Conv,
    Depthwise,
}

impl LayerKind {
    pub const ALL: [LayerKind; 3] = [LayerKind::Dense, LayerKind::Conv, LayerKind::Depthwise];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv => "conv",
            LayerKind::Depthwise => "depthwise",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Where each case's algebra comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum AlgebraPool {
    Fixed(AlgebraTensor),
    /// `d` uniform in 1..=4; built-ins where available, otherwise (and with
    /// equal odds at `d = 4`) a random structure tensor.
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditConfig {
    pub pool: AlgebraPool,
    pub trials: usize,
    pub seed: u64,
    /// Upper bound on H and W.
    pub max_dims: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub kind: LayerKind,
    pub case_seed: u64,
    pub case: String,
    pub rel_error: Option<f64>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindReport {
    pub kind: LayerKind,
    pub cases: usize,
    pub max_rel_error: f64,
    pub worst_case_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub precision: &'static str,
    pub threshold: f64,
    pub kinds: Vec<KindReport>,
    pub failures: Vec<Failure>,
    pub pass: bool,
}

/// Seed of trial `t` for layer kind `k`, so any case can be replayed alone.
pub fn case_seed(seed: u64, kind: LayerKind, trial: usize) -> u64 {
    let k = LayerKind::ALL.iter().position(|&x| x == kind).unwrap() as u64;
    // SplitMix64 finalizer over (seed, kind, trial).
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(trial as u64 * 3 + k + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn pick_algebra(pool: &AlgebraPool, rng: &mut ChaCha8Rng) -> AlgebraTensor {
    match pool {
        AlgebraPool::Fixed(a) => a.clone(),
        AlgebraPool::Mixed => match rng.gen_range(1..=4) {
            1 => AlgebraTensor::builtin(BuiltinAlgebra::Real),
            4 => match rng.gen_range(0..5) {
                0 => AlgebraTensor::builtin(BuiltinAlgebra::Quaternion),
                1 => AlgebraTensor::builtin(BuiltinAlgebra::Coquaternion),
                2 => AlgebraTensor::builtin(BuiltinAlgebra::Tessarine),
                3 => AlgebraTensor::builtin(BuiltinAlgebra::HyperbolicQuaternion),
                _ => AlgebraTensor::random(4, rng),
            },
            d => AlgebraTensor::random(d, rng),
        },
    }
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Emulated output (in `T`, widened) and the f64 reference on the same
/// `T`-rounded inputs.
struct Outcome {
    emulated: Tensor<f64>,
    reference: Tensor<f64>,
    case: String,
}

fn run_case<T: Real>(kind: LayerKind, seed: u64, pool: &AlgebraPool, max_dims: usize) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alg = pick_algebra(pool, &mut rng);
    let d = alg.dim();
    let alg_name = alg.name().unwrap_or("random").to_string();
    let round = |t: Tensor<f64>| -> Tensor<T> { t.cast() };
    let widen = |v: VTensor<T>| -> Tensor<f64> { v.into_base().cast() };
    let with_bias = rng.gen_bool(0.5);
    match kind {
        LayerKind::Dense => {
            let (rows, inp, out) = (rng.gen_range(1..=4), rng.gen_range(1..=3), rng.gen_range(1..=3));
            let x = round(uniform(&[rows, d * inp], &mut rng));
            let w = round(uniform(&[d, out, inp], &mut rng));
            let b = with_bias.then(|| round(uniform(&[d, out], &mut rng)));
            let emu = vdense_forward(&VTensor::new(x.clone(), d)?, &VDenseWeights::new(w.clone(), b.clone())?, &alg)?;
            let reference = vdense_reference(
                &VTensor::new(x.cast::<f64>(), d)?,
                &VDenseWeights::new(w.cast(), b.map(|b| b.cast()))?,
                &alg,
            )?;
            Ok(Outcome {
                emulated: widen(emu),
                reference: reference.into_base(),
                case: format!("{alg_name} d={d} rows={rows} in={inp} out={out} bias={with_bias}"),
            })
        }
        LayerKind::Conv | LayerKind::Depthwise => {
            let n = rng.gen_range(1..=2);
            let (h, w) = (rng.gen_range(1..=max_dims), rng.gen_range(1..=max_dims));
            let (c, k) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let padding = if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
            let (mut fh, mut fw) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            if padding == Padding::Valid {
                fh = fh.min(h);
                fw = fw.min(w);
            }
            let (sh, sw) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
            let g = ConvGeometry::new(sh, sw, padding)?;
            let x = round(uniform(&[n, h, w, d * c], &mut rng));
            let comps = round(uniform(&[d, fh, fw, c, k], &mut rng));
            let bias_len = if kind == LayerKind::Depthwise { k * c } else { k };
            let b = with_bias.then(|| round(uniform(&[d, bias_len], &mut rng)));
            let xe = VTensor::new(x.clone(), d)?;
            let fe = VFilterBank::new(comps.clone(), b.clone())?;
            let xr = VTensor::new(x.cast::<f64>(), d)?;
            let fr = VFilterBank::new(comps.cast(), b.map(|b| b.cast()))?;
            let (emu, reference) = if kind == LayerKind::Depthwise {
                (vdepthwise_forward(&xe, &fe, &alg, &g)?, vdepthwise_reference(&xr, &fr, &alg, &g)?)
            } else {
                (vconv2d_forward(&xe, &fe, &alg, &g)?, vconv2d_reference(&xr, &fr, &alg, &g)?)
            };
            Ok(Outcome {
                emulated: widen(emu),
                reference: reference.into_base(),
                case: format!(
                    "{alg_name} d={d} N={n} H={h} W={w} C={c} K={k} f={fh}x{fw} s={sh}x{sw} {padding:?} bias={with_bias}"
                ),
            })
        }
    }
}

/// Relative error of a single case, for replaying reported failures.
pub fn replay_case<T: Real>(kind: LayerKind, case_seed: u64, pool: &AlgebraPool, max_dims: usize) -> Result<(f64, String)> {
    let o = run_case::<T>(kind, case_seed, pool, max_dims.max(1))?;
    Ok((o.emulated.rel_error(&o.reference), o.case))
}

pub fn run_audit<T: Real>(cfg: &AuditConfig) -> AuditReport {
    let limit = threshold::<T>();
    let mut kinds = Vec::new();
    let mut failures = Vec::new();
    for kind in LayerKind::ALL {
        let mut report = KindReport {
            kind,
            cases: 0,
            max_rel_error: 0.0,
            worst_case_seed: case_seed(cfg.seed, kind, 0),
        };
        for t in 0..cfg.trials {
            let s = case_seed(cfg.seed, kind, t);
            report.cases += 1;
            match run_case::<T>(kind, s, &cfg.pool, cfg.max_dims.max(1)) {
                Ok(o) => {
                    let e = o.emulated.rel_error(&o.reference);
                    if e > report.max_rel_error || e.is_nan() {
                        report.max_rel_error = e;
                        report.worst_case_seed = s;
                    }
                    if e.is_nan() || e > limit {
                        failures.push(Failure {
                            kind,
                            case_seed: s,
                            case: o.case,
                            rel_error: Some(e),
                            message: None,
                        });
                    }
                }
                Err(err) => failures.push(Failure {
                    kind,
                    case_seed: s,
                    case: String::new(),
                    rel_error: None,
                    message: Some(err.to_string()),
                }),
            }
        }
        kinds.push(report);
    }
    AuditReport {
        precision: T::NAME,
        threshold: limit,
        pass: failures.is_empty() && cfg.trials > 0,
        kinds,
        failures,
    }
}
