//! `rootsr`: generate datasets, train the super-resolution and segmentation
//! models, upscale images, evaluate checkpoints side by side, and verify
//! gradients.
//!
//! Every parameter can come from a flag or from a `--config` file of
//! `key = value` lines (keys mirror the long flag names); flags win over the
//! file, the file wins over defaults. Commands that produce a run directory
//! echo the merged configuration to `config.echo` inside it, and that file
//! replayed through `--config` reproduces the run.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rootsr::eval::{
    evaluate_models, format_eval_table, fsrcnn_sr, generator_sr, write_eval_tsv, SrFn,
};
use rootsr::image::{
    bicubic_resize, load_image, load_manifest, make_synthetic_dataset, make_texture_dataset,
    save_image, GrayImage,
};
use rootsr::models::{load_checkpoint, FsrcnnModel, GeneratorModel, SegmenterModel};
use rootsr::tensor::gradcheck::DEFAULT_EPS;
use rootsr::tensor::AdamConfig;
use rootsr::train::{train, train_segmenter, SegTrainConfig, TrainConfig, TrainMode};
use rootsr::verify::{run_gradcheck, GRADCHECK_TOL};
use rootsr::{Error, Result};

use config::{Echo, FileConfig};

#[derive(Parser)]
#[command(name = "rootsr", version, about = "Super-resolution toolkit for root imagery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of root images (or textures) with masks
    /// and a manifest.
    MakeSynthetic(MakeSyntheticArgs),
    /// Train a super-resolution model; writes checkpoints and report.tsv.
    Train(TrainArgs),
    /// Upscale image files through a checkpoint or plain bicubic.
    Superresolve(SuperresolveArgs),
    /// Compare checkpoints against bicubic and the originals on a test set.
    Evaluate(EvaluateArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train the segmenter on images with ground-truth masks.
    Segtrain(SegtrainArgs),
}

#[derive(Args)]
struct MakeSyntheticArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of images [default: 50].
    #[arg(long)]
    n: Option<usize>,
    /// Image width and height in pixels, at least 64 [default: 128].
    #[arg(long)]
    size: Option<usize>,
    /// Generator seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// What to draw: `roots` (with masks) or `textures` [default: roots].
    #[arg(long)]
    kind: Option<String>,
    /// Output directory [default: synthetic].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training regime: fsrcnn, srgan or muldis [default: fsrcnn].
    #[arg(long)]
    mode: Option<String>,
    /// Dataset manifest [default: manifest.tsv].
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Number of epochs [default: 100].
    #[arg(long)]
    epochs: Option<usize>,
    /// Patches per optimizer step [default: 100].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Fresh random patches drawn from each image every epoch [default: 4].
    #[arg(long)]
    patches_per_image: Option<usize>,
    /// Images held out for validation [default: 100 when the manifest has
    /// more, otherwise a fifth of it].
    #[arg(long)]
    val_count: Option<usize>,
    /// Run seed; fixes init, patch sampling and batch order [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    learning_rate: Option<f32>,
    /// Weight of the pixel reconstruction term in the generator loss
    /// [default: 1].
    #[arg(long)]
    content_weight: Option<f64>,
    /// Use the saturating `log(1 - D(G(y)))` generator objective
    /// [default: false].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    saturating_adversarial: Option<bool>,
    /// Checkpoint to fine-tune from instead of a fresh initialization.
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
    /// Run directory [default: run].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SuperresolveArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model checkpoint (fsrcnn or generator).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Skip the model and use an interpolation baseline: `bicubic`.
    #[arg(long)]
    baseline: Option<String>,
    /// Upscaling factor for bicubic and generator inputs [default: 4].
    #[arg(long)]
    factor: Option<usize>,
    /// Input image(s), treated as already low-resolution.
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Output directory for the upscaled PGMs [default: sr-out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Test dataset manifest [default: manifest.tsv].
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Model checkpoints to compare; repeatable.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Segmenter checkpoint used to compute IoU.
    #[arg(long)]
    segmenter: Option<PathBuf>,
    /// Add IoU columns; needs --segmenter [default: on when --segmenter is
    /// given].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    iou: Option<bool>,
    /// Directory for eval.tsv and the config echo [default: eval].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Check only these ops; repeatable [default: all].
    #[arg(long)]
    op: Vec<String>,
    /// Random instances per op [default: 20].
    #[arg(long)]
    seeds: Option<usize>,
    /// Finite-difference step [default: 0.001].
    #[arg(long)]
    eps: Option<f64>,
    /// Maximum accepted normalized gap [default: 0.001].
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct SegtrainArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest; every entry needs a mask [default: manifest.tsv].
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Number of epochs [default: 30].
    #[arg(long)]
    epochs: Option<usize>,
    /// Patches per optimizer step [default: 8].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Fresh random patches drawn from each image every epoch [default: 4].
    #[arg(long)]
    patches_per_image: Option<usize>,
    /// Images held out for validation [default: 100 when the manifest has
    /// more, otherwise a fifth of it].
    #[arg(long)]
    val_count: Option<usize>,
    /// Run seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    learning_rate: Option<f32>,
    /// Run directory [default: segrun].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::MakeSynthetic(args) => cmd_make_synthetic(args),
        Command::Train(args) => cmd_train(args),
        Command::Superresolve(args) => cmd_superresolve(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Segtrain(args) => cmd_segtrain(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn cmd_make_synthetic(args: MakeSyntheticArgs) -> Result<ExitCode> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let n = args.n.or(file.take("n")?).unwrap_or(50);
    let size = args.size.or(file.take("size")?).unwrap_or(128);
    let seed = args.seed.or(file.take("seed")?).unwrap_or(0);
    let kind = args
        .kind
        .or(file.take("kind")?)
        .unwrap_or_else(|| "roots".into());
    let out = args
        .out
        .or(file.take("out")?)
        .unwrap_or_else(|| PathBuf::from("synthetic"));
    file.finish()?;

    let manifest = match kind.as_str() {
        "roots" => make_synthetic_dataset(n, size, size, seed, &out)?,
        "textures" => make_texture_dataset(n, size, size, seed, &out)?,
        other => {
            return Err(Error::Config(format!(
                "unknown kind {other:?} (expected roots or textures)"
            )))
        }
    };

    let mut echo = Echo::default();
    echo.push("n", n);
    echo.push("size", size);
    echo.push("seed", seed);
    echo.push("kind", &kind);
    echo.push("out", out.display());
    echo.write(&out)?;

    println!("{} images -> {}", manifest.len(), out.join("manifest.tsv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let mode = TrainMode::parse(
        &args
            .mode
            .or(file.take("mode")?)
            .unwrap_or_else(|| "fsrcnn".into()),
    )?;
    let manifest_path = args
        .manifest
        .or(file.take("manifest")?)
        .unwrap_or_else(|| PathBuf::from("manifest.tsv"));
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        mode,
        epochs: args.epochs.or(file.take("epochs")?).unwrap_or(defaults.epochs),
        batch_size: args
            .batch_size
            .or(file.take("batch-size")?)
            .unwrap_or(defaults.batch_size),
        patches_per_image: args
            .patches_per_image
            .or(file.take("patches-per-image")?)
            .unwrap_or(defaults.patches_per_image),
        val_count: args.val_count.or(file.take("val-count")?),
        seed: args.seed.or(file.take("seed")?).unwrap_or(defaults.seed),
        adam: AdamConfig {
            learning_rate: args
                .learning_rate
                .or(file.take("learning-rate")?)
                .unwrap_or(defaults.adam.learning_rate),
            ..AdamConfig::default()
        },
        content_weight: args
            .content_weight
            .or(file.take("content-weight")?)
            .unwrap_or(defaults.content_weight),
        saturating_adversarial: args
            .saturating_adversarial
            .or(file.take("saturating-adversarial")?)
            .unwrap_or(defaults.saturating_adversarial),
        init_checkpoint: args.init_checkpoint.or(file.take("init-checkpoint")?),
    };
    let out = args
        .out
        .or(file.take("out")?)
        .unwrap_or_else(|| PathBuf::from("run"));
    file.finish()?;
    config.validate()?;

    let mut echo = Echo::default();
    echo.push("mode", config.mode.as_str());
    echo.push("manifest", manifest_path.display());
    echo.push("epochs", config.epochs);
    echo.push("batch-size", config.batch_size);
    echo.push("patches-per-image", config.patches_per_image);
    echo.push_opt("val-count", config.val_count);
    echo.push("seed", config.seed);
    echo.push("learning-rate", config.adam.learning_rate);
    echo.push("content-weight", config.content_weight);
    echo.push("saturating-adversarial", config.saturating_adversarial);
    echo.push_opt(
        "init-checkpoint",
        config.init_checkpoint.as_ref().map(|p| p.display()),
    );
    echo.push("out", out.display());
    echo.write(&out)?;

    let manifest = load_manifest(&manifest_path)?;
    let report = train(&manifest, &config, &out)?;
    println!(
        "best epoch {} (validation SNR {:.3} dB) -> {}",
        report.best_epoch,
        report.best_val_snr(),
        report.best_checkpoint.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Upscales one image according to the checkpoint architecture.
fn superresolve_one(
    input: &GrayImage,
    model: &SrModel,
    factor: usize,
) -> Result<GrayImage> {
    match model {
        SrModel::Bicubic => bicubic_resize(input, input.width() * factor, input.height() * factor),
        SrModel::Fsrcnn(m) => GrayImage::from_tensor_plane(&m.forward(&input.to_tensor())?, 0),
        SrModel::Generator(g) => {
            let up = bicubic_resize(input, input.width() * factor, input.height() * factor)?;
            GrayImage::from_tensor_plane(&g.infer(&up.to_tensor())?, 0)
        }
    }
}

enum SrModel {
    Bicubic,
    Fsrcnn(FsrcnnModel),
    Generator(GeneratorModel),
}

fn cmd_superresolve(args: SuperresolveArgs) -> Result<ExitCode> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let checkpoint: Option<PathBuf> = if args.checkpoint.is_some() {
        args.checkpoint
    } else {
        file.take("checkpoint")?
    };
    let baseline: Option<String> = if args.baseline.is_some() {
        args.baseline
    } else {
        file.take("baseline")?
    };
    let factor = args.factor.or(file.take("factor")?).unwrap_or(4);
    let inputs: Vec<PathBuf> = if args.input.is_empty() {
        file.take_list("input")?.unwrap_or_default()
    } else {
        args.input
    };
    let out = args
        .out
        .or(file.take("out")?)
        .unwrap_or_else(|| PathBuf::from("sr-out"));
    file.finish()?;

    if factor == 0 {
        return Err(Error::InvalidParam("factor must be positive".into()));
    }
    if inputs.is_empty() {
        return Err(Error::Config("no --input images given".into()));
    }
    let model = match (&checkpoint, &baseline) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "--checkpoint and --baseline are mutually exclusive".into(),
            ))
        }
        (None, None) => {
            return Err(Error::Config(
                "pass --checkpoint <file> or --baseline bicubic".into(),
            ))
        }
        (None, Some(name)) if name == "bicubic" => SrModel::Bicubic,
        (None, Some(other)) => {
            return Err(Error::Config(format!(
                "unknown baseline {other:?} (expected bicubic)"
            )))
        }
        (Some(path), None) => {
            let ckpt = load_checkpoint(path)?;
            match ckpt.arch.as_str() {
                FsrcnnModel::ARCH => SrModel::Fsrcnn(FsrcnnModel::from_checkpoint(&ckpt, path)?),
                GeneratorModel::ARCH => {
                    SrModel::Generator(GeneratorModel::from_checkpoint(&ckpt, path)?)
                }
                other => {
                    return Err(Error::CheckpointArch {
                        path: path.clone(),
                        found: other.to_string(),
                        expected: "fsrcnn or generator".into(),
                    })
                }
            }
        }
    };

    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    for input_path in &inputs {
        let img = load_image(input_path)?;
        let sr = superresolve_one(&img, &model, factor)?;
        let stem = input_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        let out_path = out.join(format!("{stem}.sr.pgm"));
        save_image(&sr, &out_path)?;
        println!(
            "{} {}x{} -> {} {}x{}",
            input_path.display(),
            img.width(),
            img.height(),
            out_path.display(),
            sr.width(),
            sr.height()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let manifest_path = args
        .manifest
        .or(file.take("manifest")?)
        .unwrap_or_else(|| PathBuf::from("manifest.tsv"));
    let checkpoints: Vec<PathBuf> = if args.checkpoint.is_empty() {
        file.take_list("checkpoint")?.unwrap_or_default()
    } else {
        args.checkpoint
    };
    let segmenter_path: Option<PathBuf> = if args.segmenter.is_some() {
        args.segmenter
    } else {
        file.take("segmenter")?
    };
    let iou = args
        .iou
        .or(file.take("iou")?)
        .unwrap_or(segmenter_path.is_some());
    let out = args
        .out
        .or(file.take("out")?)
        .unwrap_or_else(|| PathBuf::from("eval"));
    file.finish()?;

    if iou && segmenter_path.is_none() {
        return Err(Error::Config(
            "--iou needs a --segmenter checkpoint to produce masks".into(),
        ));
    }

    let segmenter = match (&iou, &segmenter_path) {
        (true, Some(path)) => Some(SegmenterModel::from_checkpoint(
            &load_checkpoint(path)?,
            path,
        )?),
        _ => None,
    };

    enum Loaded {
        F(FsrcnnModel),
        G(GeneratorModel),
    }
    let mut loaded: Vec<(String, Loaded)> = Vec::new();
    for path in &checkpoints {
        let ckpt = load_checkpoint(path)?;
        let name = path
            .to_string_lossy()
            .trim_end_matches(".ckpt")
            .to_string();
        let model = match ckpt.arch.as_str() {
            FsrcnnModel::ARCH => Loaded::F(FsrcnnModel::from_checkpoint(&ckpt, path)?),
            GeneratorModel::ARCH => Loaded::G(GeneratorModel::from_checkpoint(&ckpt, path)?),
            other => {
                return Err(Error::CheckpointArch {
                    path: path.clone(),
                    found: other.to_string(),
                    expected: "fsrcnn or generator".into(),
                })
            }
        };
        loaded.push((name, model));
    }
    let models: Vec<(String, SrFn)> = loaded
        .iter()
        .map(|(name, m)| {
            let f: SrFn = match m {
                Loaded::F(m) => fsrcnn_sr(m),
                Loaded::G(g) => generator_sr(g),
            };
            (name.clone(), f)
        })
        .collect();

    let mut echo = Echo::default();
    echo.push("manifest", manifest_path.display());
    echo.push_list(
        "checkpoint",
        &checkpoints.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    );
    echo.push_opt("segmenter", segmenter_path.as_ref().map(|p| p.display()));
    echo.push("iou", iou);
    echo.push("out", out.display());
    echo.write(&out)?;

    let manifest = load_manifest(&manifest_path)?;
    let records = evaluate_models(&models, &manifest, segmenter.as_ref())?;
    write_eval_tsv(&records, &out.join("eval.tsv"))?;

    print!("{}", format_eval_table(&records));
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let ops: Vec<String> = if args.op.is_empty() {
        file.take_list("op")?.unwrap_or_default()
    } else {
        args.op
    };
    let seeds = args.seeds.or(file.take("seeds")?).unwrap_or(20);
    let eps = args.eps.or(file.take("eps")?).unwrap_or(DEFAULT_EPS);
    let tol = args.tol.or(file.take("tol")?).unwrap_or(GRADCHECK_TOL);
    file.finish()?;

    let checks = run_gradcheck(&ops, seeds, eps)?;
    let mut failed = false;
    for check in &checks {
        let ok = check.max_gap < tol;
        let verdict = if ok { "ok" } else { "FAIL" };
        println!("{:<16} max gap {:>12.3e}  {verdict}", check.op, check.max_gap);
        failed |= !ok;
    }
    if failed {
        eprintln!("gradient check failed: some gaps at or above {tol:e}");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_segtrain(args: SegtrainArgs) -> Result<ExitCode> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let manifest_path = args
        .manifest
        .or(file.take("manifest")?)
        .unwrap_or_else(|| PathBuf::from("manifest.tsv"));
    let defaults = SegTrainConfig::default();
    let config = SegTrainConfig {
        epochs: args.epochs.or(file.take("epochs")?).unwrap_or(defaults.epochs),
        batch_size: args
            .batch_size
            .or(file.take("batch-size")?)
            .unwrap_or(defaults.batch_size),
        patches_per_image: args
            .patches_per_image
            .or(file.take("patches-per-image")?)
            .unwrap_or(defaults.patches_per_image),
        val_count: args.val_count.or(file.take("val-count")?),
        seed: args.seed.or(file.take("seed")?).unwrap_or(defaults.seed),
        adam: AdamConfig {
            learning_rate: args
                .learning_rate
                .or(file.take("learning-rate")?)
                .unwrap_or(defaults.adam.learning_rate),
            ..AdamConfig::default()
        },
    };
    let out = args
        .out
        .or(file.take("out")?)
        .unwrap_or_else(|| PathBuf::from("segrun"));
    file.finish()?;
    config.validate()?;

    let mut echo = Echo::default();
    echo.push("manifest", manifest_path.display());
    echo.push("epochs", config.epochs);
    echo.push("batch-size", config.batch_size);
    echo.push("patches-per-image", config.patches_per_image);
    echo.push_opt("val-count", config.val_count);
    echo.push("seed", config.seed);
    echo.push("learning-rate", config.adam.learning_rate);
    echo.push("out", out.display());
    echo.write(&out)?;

    let manifest = load_manifest(&manifest_path)?;
    let report = train_segmenter(&manifest, &config, &out)?;
    println!(
        "best epoch {} (validation IoU {:.4}) -> {}",
        report.best_epoch,
        report.records[report.best_epoch].val_iou,
        report.best_checkpoint.display()
    );
    Ok(ExitCode::SUCCESS)
}
