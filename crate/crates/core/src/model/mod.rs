//! V-EfficientNetV2: the B0 stage table scaled by the vectorization factor λ,
//! assembled from vector-valued blocks, with a real-valued classifier head.

mod config;
mod embed;
mod io;
mod stages;

pub use config::{VNetConfig, DEFAULT_CHANNEL_DIVISOR};
pub use embed::{embed_color, ColorEmbedding};
pub use io::{load_weights, save_weights, WEIGHTS_MANIFEST};
pub use stages::{
    check_lambda, effnetv2_b0_stages, round_filters, scale_channels, BlockKind, StageSpec,
    B0_HEAD_CHANNELS, B0_STEM_CHANNELS,
};

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algebra::AlgebraTensor;
use crate::autodiff::{ParamStore, Var};
use crate::blocks::{
    pooled_features, BatchNorm, Block, BnUpdate, Forward, FusedMBConv, FusedMBConvSpec, MBConv,
    MBConvSpec, Mode, VConv, VDense,
};
use crate::error::{shape_err, Result};
use crate::layers::{vdense_forward, VDenseWeights, VTensor};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum StageBlock<T> {
    Fused(FusedMBConv<T>),
    MB(MBConv<T>),
}

impl<T: Real> Block<T> for StageBlock<T> {
    fn forward(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        match self {
            StageBlock::Fused(b) => b.forward(f, x),
            StageBlock::MB(b) => b.forward(f, x),
        }
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        match self {
            StageBlock::Fused(b) => b.batch_norms_mut(),
            StageBlock::MB(b) => b.batch_norms_mut(),
        }
    }
}

impl<T: Real> StageBlock<T> {
    fn convs(&self) -> Vec<&VConv> {
        match self {
            StageBlock::Fused(b) => {
                let mut v = vec![&b.fused];
                v.extend(b.project.as_ref().map(|(c, _)| c));
                v
            }
            StageBlock::MB(b) => vec![&b.expand, &b.depthwise, &b.project],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: VNetConfig,
    pub alg: AlgebraTensor,
    pub params: ParamStore<T>,
    pub stem: VConv,
    pub stem_bn: BatchNorm<T>,
    pub blocks: Vec<StageBlock<T>>,
    pub head: VConv,
    pub head_bn: BatchNorm<T>,
    pub classifier: VDense,
}

/// Vector channels for a real-reference width under the config's λ and divisor.
pub fn stage_width(config: &VNetConfig, real_channels: usize, d: usize) -> Result<usize> {
    Ok(round_filters(scale_channels(real_channels, config.lambda, d)?, config.divisor()))
}

/// Deterministic build: all weights come from `config.seed`.
pub fn build_model<T: Real>(config: &VNetConfig) -> Result<Model<T>> {
    config.validate()?;
    let alg = config.algebra()?;
    let d = alg.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamStore::new();

    let stem_w = stage_width(config, B0_STEM_CHANNELS, d)?;
    let stem = VConv::init(&mut params, "stem", d, 3, 2, (config.input[2], stem_w), false, false, &mut rng)?;
    let stem_bn = BatchNorm::init(&mut params, "stem_bn", d * stem_w);

    let mut blocks = Vec::new();
    let mut cin = stem_w;
    for (s, stage) in config.stage_table().iter().enumerate() {
        stage.validate()?;
        let cout = stage_width(config, stage.out_channels_real, d)?;
        for r in 0..stage.repeats {
            let stride = if r == 0 { stage.stride } else { 1 };
            let name = format!("stage{}.block{}", s + 1, r);
            let block = match stage.kind {
                BlockKind::FusedMbconv => {
                    let spec = FusedMBConvSpec::new(cin, cout, stage.expand_ratio, stage.kernel, stride)?;
                    StageBlock::Fused(FusedMBConv::init(&mut params, &name, d, spec, &mut rng)?)
                }
                BlockKind::Mbconv => {
                    let spec = MBConvSpec::new(cin, cout, stage.expand_ratio, stage.kernel, stride, stage.se_ratio)?;
                    StageBlock::MB(MBConv::init(&mut params, &name, d, spec, &mut rng)?)
                }
            };
            blocks.push(block);
            cin = cout;
        }
    }

    let head_w = stage_width(config, config.head(), d)?;
    let head = VConv::init(&mut params, "head", d, 1, 1, (cin, head_w), false, false, &mut rng)?;
    let head_bn = BatchNorm::init(&mut params, "head_bn", d * head_w);
    let classifier = VDense::init(&mut params, "classifier", d, head_w, config.num_classes, true, &mut rng);
    let mut model = Model {
        config: config.clone(),
        alg,
        params,
        stem,
        stem_bn,
        blocks,
        head,
        head_bn,
        classifier,
    };
    if let Some(m) = config.bn_momentum {
        model.batch_norms_mut().into_iter().for_each(|bn| bn.momentum = m);
    }
    Ok(model)
}

/// One row of [`count_params`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerCount {
    pub layer: String,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub layers: Vec<LayerCount>,
    pub total: usize,
}

/// Trainable scalar count of a convolution: the vector bank (`d` per vector
/// weight) and the realized real bank it expands to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConvCount {
    pub layer: String,
    pub depthwise: bool,
    pub vector_scalars: usize,
    pub realized_scalars: usize,
}

impl<T: Real> Model<T> {
    pub fn d(&self) -> usize {
        self.alg.dim()
    }

    pub fn input_channels(&self) -> usize {
        self.d() * self.config.input[2]
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm<T>> {
        let mut v = vec![&self.stem_bn];
        for b in &self.blocks {
            match b {
                StageBlock::Fused(f) => {
                    v.push(&f.bn_fused);
                    v.extend(f.project.as_ref().map(|(_, bn)| bn));
                }
                StageBlock::MB(m) => v.extend([&m.bn_expand, &m.bn_depthwise, &m.bn_project]),
            }
        }
        v.push(&self.head_bn);
        v
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        let mut v = vec![&mut self.stem_bn];
        for b in &mut self.blocks {
            v.extend(b.batch_norms_mut());
        }
        v.push(&mut self.head_bn);
        v
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        for bn in self.batch_norms_mut() {
            if let Some(u) = updates.iter().find(|u| u.gamma == bn.gamma) {
                bn.update(u);
            }
        }
    }

    pub fn convs(&self) -> Vec<&VConv> {
        let mut v = vec![&self.stem];
        for b in &self.blocks {
            v.extend(b.convs());
        }
        v.push(&self.head);
        v
    }

    /// Trunk through the head BN/activation: `N×H×W×dC_in → N×h×w×dC_head`.
    pub fn features(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let c = f.value(x).channels();
        if c != self.input_channels() {
            return Err(shape_err!("model expects {} input channels, got {c}", self.input_channels()));
        }
        let h = self.stem.forward(f, x)?;
        let h = self.stem_bn.forward(f, h)?;
        let mut h = f.activate(h);
        for b in &self.blocks {
            h = b.forward(f, h)?;
        }
        let h = self.head.forward(f, h)?;
        let h = self.head_bn.forward(f, h)?;
        Ok(f.activate(h))
    }

    /// Real logits `N×num_classes`.
    pub fn logits(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let h = self.features(f, x)?;
        let pooled = pooled_features(f, h)?;
        let v = self.classifier.forward(f, pooled)?;
        let first: Vec<usize> = (0..self.config.num_classes).collect();
        f.tape.gather_channels(v, Arc::new(first))
    }

    pub fn forward_mode<'a>(&'a self, mode: Mode) -> Forward<'a, T> {
        Forward::new(&self.params, &self.alg, mode, self.config.activation)
    }
}

pub fn count_params<T: Real>(model: &Model<T>) -> ParamReport {
    let mut layers: Vec<LayerCount> = Vec::new();
    for (_, p) in model.params.iter() {
        let layer = p.name.rsplit_once('.').map_or(p.name.as_str(), |(l, _)| l).to_string();
        match layers.last_mut() {
            Some(last) if last.layer == layer => last.params += p.value.len(),
            _ => layers.push(LayerCount {
                layer,
                params: p.value.len(),
            }),
        }
    }
    let total = layers.iter().map(|l| l.params).sum();
    ParamReport { layers, total }
}

pub fn conv_counts<T: Real>(model: &Model<T>) -> Vec<ConvCount> {
    let d = model.d();
    model
        .convs()
        .into_iter()
        .map(|c| {
            let (fh, fw, cin, k) = c.dims;
            ConvCount {
                layer: model.params.name(c.weights).trim_end_matches(".w").to_string(),
                depthwise: c.depthwise,
                vector_scalars: d * fh * fw * cin * k,
                realized_scalars: fh * fw * (d * cin) * (d * k),
            }
        })
        .collect()
}

/// Logits for a batch outside of training; updates running statistics in
/// training mode.
pub fn model_forward<T: Real>(model: &mut Model<T>, batch: &VTensor<T>, mode: Mode) -> Result<Tensor<T>> {
    let (logits, updates) = {
        let mut f = model.forward_mode(mode);
        let x = f.tape.constant(batch.base().clone());
        let y = model.logits(&mut f, x)?;
        (f.value(y).clone(), std::mem::take(&mut f.bn_updates))
    };
    model.apply_bn_updates(&updates);
    Ok(logits)
}

/// Vector dense layer to `num_classes` units, keeping component 0 of each.
pub fn classifier_head<T: Real>(
    features: &VTensor<T>,
    w: &VDenseWeights<T>,
    alg: &AlgebraTensor,
) -> Result<Tensor<T>> {
    let rows = features.shape()[..features.shape().len() - 1].iter().product::<usize>();
    let flat = VTensor::new(features.base().reshape(&[rows, features.base().channels()])?, features.d())?;
    let y = vdense_forward(&flat, w, alg)?;
    let k = w.out_units();
    let mut out = Vec::with_capacity(rows * k);
    for r in 0..rows {
        out.extend_from_slice(&y.base().data()[r * y.base().channels()..][..k]);
    }
    Tensor::new(vec![rows, k], out)
}
