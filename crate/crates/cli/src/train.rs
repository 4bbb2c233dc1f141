use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use vnet_core::autodiff::softmax_rows;
use vnet_core::data::Dataset;
use vnet_core::model::{build_model, load_weights, save_weights, Model, VNetConfig, WEIGHTS_MANIFEST};
use vnet_core::tensor::read_vten;
use vnet_core::train::{predict, save_optimizer, EpochLog, Trainer, TrainConfig, LOG_HEADER};
use vnet_core::{AlgebraTensor, BuiltinAlgebra, Precision, Real, Tensor};

use crate::error::{bad_input, failure, CliError, CliResult};
use crate::{json_out, Globals};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model config JSON.
    #[arg(long)]
    pub config: PathBuf,

    /// Dataset sidecar (`dataset.json`) or the directory holding it.
    #[arg(long)]
    pub manifest: PathBuf,

    #[arg(long, default_value_t = 30)]
    pub epochs: usize,

    #[arg(long, default_value_t = 16)]
    pub batch: usize,

    /// Directory for the final weights and optimizer state.
    #[arg(long)]
    pub out: PathBuf,

    /// Also write the per-epoch CSV log here.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

/// Config as stored with the weights: algebra files are inlined so the
/// weights directory is self-contained.
fn portable_config(mut cfg: VNetConfig, alg: &AlgebraTensor) -> VNetConfig {
    let builtin = cfg.algebra.as_str().is_some_and(|s| BuiltinAlgebra::from_name(s).is_some());
    if !builtin {
        cfg.algebra = alg.to_json_value();
    }
    cfg
}

pub fn train(args: &TrainArgs, g: &Globals) -> CliResult {
    let mut cfg = VNetConfig::read(&args.config).map_err(|e| bad_input(format!("{}: {e}", args.config.display())))?;
    if g.seed_given {
        cfg.seed = g.seed;
    }
    let alg = cfg.algebra()?;
    let cfg = portable_config(cfg, &alg);
    let ds = Dataset::open(&args.manifest)?;
    let s = &ds.sidecar;
    let want = [cfg.input[0], cfg.input[1], cfg.input[2] * alg.dim()];
    if s.input_shape != want {
        return Err(bad_input(format!(
            "dataset samples are {:?} but the model expects {:?} ({} vector channels of dimension {})",
            s.input_shape,
            want,
            cfg.input[2],
            alg.dim()
        )));
    }
    if s.num_classes != cfg.num_classes {
        return Err(bad_input(format!(
            "dataset has {} classes, config has {}",
            s.num_classes, cfg.num_classes
        )));
    }
    if args.batch == 0 {
        return Err(bad_input("--batch must be positive"));
    }
    let tc = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        seed: g.seed,
        augment: s.augment,
        ..TrainConfig::default()
    };
    match g.precision_or(Precision::F64) {
        Precision::F32 => train_t::<f32>(args, g, &cfg, &ds, tc),
        Precision::F64 => train_t::<f64>(args, g, &cfg, &ds, tc),
    }
}

fn train_t<T: Real>(args: &TrainArgs, g: &Globals, cfg: &VNetConfig, ds: &Dataset, tc: TrainConfig) -> CliResult {
    let train = ds.load::<T>(&ds.train)?;
    let test = ds.load::<T>(&ds.test)?;
    let mut model: Model<T> = build_model(cfg)?;
    let mut trainer = Trainer::new(tc, &model)?;

    let mut log_file = match &args.log {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(|e| failure(&p.display().to_string(), e))?);
            writeln!(w, "{LOG_HEADER}").map_err(|e| failure("writing log", e))?;
            Some(w)
        }
        None => None,
    };
    if !g.json {
        println!("{LOG_HEADER}");
    }
    let mut log: Vec<EpochLog> = Vec::with_capacity(tc.epochs);
    let mut diverged = None;
    for _ in 0..tc.epochs {
        match trainer.run_epoch(&mut model, &train, &test) {
            Ok(entry) => {
                if let Some(w) = log_file.as_mut() {
                    writeln!(w, "{}", entry.csv_line()).map_err(|e| failure("writing log", e))?;
                    w.flush().map_err(|e| failure("writing log", e))?;
                }
                if !g.json {
                    println!("{}", entry.csv_line());
                }
                log.push(entry);
            }
            Err(e @ vnet_core::Error::NonFinite(_)) => {
                diverged = Some(e);
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(e) = diverged {
        return Err(CliError::Failure(e.to_string()));
    }
    let out = args.out.display().to_string();
    save_weights(&model, &args.out).map_err(|e| failure(&out, e))?;
    save_optimizer(&trainer.optimizer, &args.out).map_err(|e| failure(&out, e))?;
    if g.json {
        json_out(&log)?;
    } else {
        println!("weights written to {}", args.out.display());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Weights directory written by `train`.
    #[arg(long)]
    pub weights: PathBuf,

    /// One prepared sample (H×W×C) or a batch (N×H×W×C), VTEN.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Serialize)]
struct Prediction {
    logits: Vec<f64>,
    class: usize,
    softmax: Vec<f64>,
}

fn weights_precision(dir: &std::path::Path) -> CliResult<Precision> {
    let text = std::fs::read_to_string(dir.join(WEIGHTS_MANIFEST))
        .map_err(|e| bad_input(format!("{}: {e}", dir.join(WEIGHTS_MANIFEST).display())))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad_input(format!("weights manifest: {e}")))?;
    Ok(match v.get("precision").and_then(|p| p.as_str()) {
        Some("f32") => Precision::F32,
        _ => Precision::F64,
    })
}

pub fn infer(args: &InferArgs, g: &Globals) -> CliResult {
    let p = match g.precision {
        Some(p) => p,
        None => weights_precision(&args.weights)?,
    };
    let preds = match p {
        Precision::F32 => infer_t::<f32>(args)?,
        Precision::F64 => infer_t::<f64>(args)?,
    };
    if preds.len() == 1 {
        json_out(&preds[0])
    } else {
        json_out(&serde_json::json!({ "predictions": preds }))
    }
}

fn infer_t<T: Real>(args: &InferArgs) -> CliResult<Vec<Prediction>> {
    let model: Model<T> = load_weights(&args.weights)?;
    let x: Tensor<T> = read_vten(&args.input)?;
    let want = [model.config.input[0], model.config.input[1], model.input_channels()];
    let samples: Vec<Tensor<T>> = match x.ndim() {
        3 => vec![x],
        4 => {
            let per = x.len() / x.shape()[0].max(1);
            x.data()
                .chunks(per.max(1))
                .map(|c| Tensor::new(x.shape()[1..].to_vec(), c.to_vec()))
                .collect::<vnet_core::Result<_>>()?
        }
        _ => return Err(bad_input(format!("input must be H×W×C or N×H×W×C, got {:?}", x.shape()))),
    };
    if samples.is_empty() {
        return Err(bad_input("input batch is empty"));
    }
    if samples[0].shape() != want {
        return Err(bad_input(format!(
            "input samples are {:?}, the model expects {want:?}",
            samples[0].shape()
        )));
    }
    let refs: Vec<&Tensor<T>> = samples.iter().collect();
    let logits = predict(&model, &refs, 16)?;
    let probs = softmax_rows(&logits)?;
    let k = model.config.num_classes;
    Ok((0..samples.len())
        .map(|i| {
            let l: Vec<f64> = logits.data()[i * k..(i + 1) * k].iter().map(|v| v.as_f64()).collect();
            let class = l
                .iter()
                .enumerate()
                .fold(0, |best, (j, &v)| if v > l[best] { j } else { best });
            Prediction {
                softmax: probs.data()[i * k..(i + 1) * k].iter().map(|v| v.as_f64()).collect(),
                logits: l,
                class,
            }
        })
        .collect())
}
