use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vnet_core::data::{
    prepare_dataset, synthetic_textures, write_image_folder, AugmentConfig, Augmentation, Encoding, Flip,
    PrepareOptions,
};
use vnet_core::model::ColorEmbedding;
use vnet_core::tensor::{read_vten, write_vten};
use vnet_core::Tensor;

use crate::error::{bad_input, failure, CliResult};
use crate::{json_out, Globals};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EncodingArg {
    Rgb,
    Hsv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EmbedArg {
    /// Keep three real colour channels.
    None,
    /// `(0, c1, c2, c3)`.
    Zero,
    /// `(mean, c1, c2, c3)`.
    Gray,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Folder of `<class>/*.vten` H×W×3 images with values in [0, 1].
    #[arg(long)]
    pub input_dir: PathBuf,

    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, value_enum, default_value = "rgb")]
    pub encoding: EncodingArg,

    /// How colour becomes vector channels.
    #[arg(long, value_enum, default_value = "zero")]
    pub embed: EmbedArg,

    /// Vector dimension of the embedding (1 or at least 4).
    #[arg(long, default_value_t = 4)]
    pub vector_dim: usize,

    /// Record the default training augmentation (rotation, translation, flip).
    #[arg(long)]
    pub augment: bool,

    /// Fraction of samples in the training split.
    #[arg(long, default_value_t = 0.5)]
    pub split: f64,
}

pub fn prepare(args: &PrepareArgs, g: &Globals) -> CliResult {
    if !args.input_dir.is_dir() {
        return Err(bad_input(format!("{} is not a directory", args.input_dir.display())));
    }
    let embed = match args.embed {
        EmbedArg::None => None,
        EmbedArg::Zero => Some((args.vector_dim, ColorEmbedding::ZeroScalar)),
        EmbedArg::Gray => Some((args.vector_dim, ColorEmbedding::GrayScalar)),
    };
    let opts = PrepareOptions {
        encoding: match args.encoding {
            EncodingArg::Rgb => Encoding::Rgb,
            EncodingArg::Hsv => Encoding::Hsv,
        },
        embed,
        augment: args.augment.then(|| AugmentConfig {
            seed: g.seed,
            ..AugmentConfig::default()
        }),
        split: args.split,
        seed: g.seed,
    };
    let ds = prepare_dataset(&args.input_dir, &args.out, &opts)?;
    if g.json {
        return json_out(&ds.sidecar);
    }
    let s = &ds.sidecar;
    println!(
        "prepared {} samples ({} train, {} test), {} classes: {}",
        ds.train.len() + ds.test.len(),
        ds.train.len(),
        ds.test.len(),
        s.num_classes,
        s.classes.join(", ")
    );
    println!("sample shape {:?}, vector dim {}, encoding {:?}", s.input_shape, s.vector_dim, s.encoding);
    println!("manifest: {}", args.out.join(vnet_core::data::SIDECAR).display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// H×W×C image (VTEN).
    #[arg(long)]
    pub input: PathBuf,

    /// Where to write the augmented image.
    #[arg(long)]
    pub out: PathBuf,

    /// Largest rotation magnitude in radians (default 0.3π).
    #[arg(long)]
    pub max_rotation: Option<f64>,

    /// Largest translation as a fraction of each side.
    #[arg(long, default_value_t = 0.1)]
    pub max_translate: f64,

    #[arg(long)]
    pub no_flip: bool,
}

#[derive(Serialize)]
struct AugmentReport {
    angle: f64,
    shift: (i64, i64),
    flip: Option<&'static str>,
    shape: Vec<usize>,
}

pub fn augment(args: &AugmentArgs, g: &Globals) -> CliResult {
    let img: Tensor<f64> = read_vten(&args.input)?;
    if img.ndim() != 3 {
        return Err(bad_input(format!("expected an H×W×C image, got shape {:?}", img.shape())));
    }
    let defaults = AugmentConfig::default();
    let cfg = AugmentConfig {
        max_rotation: args.max_rotation.unwrap_or(defaults.max_rotation),
        max_translate_frac: args.max_translate,
        flip: !args.no_flip,
        seed: g.seed,
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let aug = Augmentation::sample(&cfg, img.shape()[0], img.shape()[1], &mut rng);
    let out = aug.apply(&img)?;
    write_vten(&args.out, &out).map_err(|e| failure(&args.out.display().to_string(), e))?;
    let report = AugmentReport {
        angle: aug.angle,
        shift: aug.shift,
        flip: aug.flip.map(|f| match f {
            Flip::Horizontal => "horizontal",
            Flip::Vertical => "vertical",
        }),
        shape: out.shape().to_vec(),
    };
    if g.json {
        return json_out(&report);
    }
    println!(
        "rotation {:.6} rad, shift (dy {}, dx {}), flip {}",
        report.angle,
        report.shift.0,
        report.shift.1,
        report.flip.unwrap_or("none")
    );
    println!("wrote {} {:?}", args.out.display(), report.shape);
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output image folder (`class0/`, `class1/`).
    #[arg(long)]
    pub out: PathBuf,

    /// Total number of images; labels alternate.
    #[arg(long, default_value_t = 128)]
    pub samples: usize,

    /// Side length in pixels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
}

pub fn synth(args: &SynthArgs, g: &Globals) -> CliResult {
    if args.samples == 0 || args.size == 0 {
        return Err(bad_input("--samples and --size must be positive"));
    }
    let data = synthetic_textures(args.samples, args.size, g.seed);
    write_image_folder(&args.out, &data).map_err(|e| failure(&args.out.display().to_string(), e))?;
    if g.json {
        return json_out(&serde_json::json!({
            "out": args.out,
            "samples": data.len(),
            "size": args.size,
        }));
    }
    {
        println!("wrote {} images of {}×{} to {}", data.len(), args.size, args.size, args.out.display());
    }
    Ok(())
}
