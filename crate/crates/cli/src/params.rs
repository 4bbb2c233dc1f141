use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use vnet_core::model::{build_model, count_params, LayerCount, Model, VNetConfig};
use vnet_core::{Precision, Real};

use crate::error::{bad_input, CliResult};
use crate::{json_out, Globals};

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Model config JSON; without it a B0 is built from the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long, default_value = "real", conflicts_with = "config")]
    pub algebra: String,

    /// Architecture vectorization factor λ in [1/d, 1].
    #[arg(long, default_value_t = 1.0, conflicts_with = "config")]
    pub lambda: f64,

    #[arg(long, default_value_t = 2, conflicts_with = "config")]
    pub classes: usize,

    /// Only the summary lines, no per-layer table.
    #[arg(long)]
    pub total_only: bool,
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a VNetConfig,
    layers: &'a [LayerCount],
    total: usize,
    /// Real B0 with the same number of classes.
    reference_total: usize,
    /// `1 − total / reference_total`.
    reduction: f64,
}

fn count<T: Real>(cfg: &VNetConfig) -> CliResult<(Vec<LayerCount>, usize)> {
    let model: Model<T> = build_model(cfg)?;
    let r = count_params(&model);
    Ok((r.layers, r.total))
}

fn counts(cfg: &VNetConfig, p: Precision) -> CliResult<(Vec<LayerCount>, usize)> {
    match p {
        Precision::F32 => count::<f32>(cfg),
        Precision::F64 => count::<f64>(cfg),
    }
}

pub fn run(args: &ParamsArgs, g: &Globals) -> CliResult {
    let cfg = match &args.config {
        Some(path) => VNetConfig::read(path).map_err(|e| bad_input(format!("{}: {e}", path.display())))?,
        None => VNetConfig::b0(&args.algebra, args.lambda, args.classes, 224)?,
    };
    // Counts do not depend on precision; f32 halves the memory of a full B0.
    let p = g.precision_or(Precision::F32);
    let (layers, total) = counts(&cfg, p)?;
    let reference = VNetConfig::b0("real", 1.0, cfg.num_classes, 224)?;
    let reference_total = counts(&reference, p)?.1;
    let reduction = 1.0 - total as f64 / reference_total as f64;

    if g.json {
        return json_out(&Report {
            config: &cfg,
            layers: &layers,
            total,
            reference_total,
            reduction,
        });
    }
    if !args.total_only {
        let w = layers.iter().map(|l| l.layer.len()).max().unwrap_or(5).max(5);
        println!("{:<w$}  {:>10}", "layer", "params");
        for l in &layers {
            println!("{:<w$}  {:>10}", l.layer, l.params);
        }
        println!();
    }
    println!("total: {total} ({:.2}M)", total as f64 / 1e6);
    println!("real B0 reference: {reference_total} ({:.2}M)", reference_total as f64 / 1e6);
    println!("reduction vs real B0: {:.1}%", 100.0 * reduction);
    Ok(())
}
