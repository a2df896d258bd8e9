use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use ulite::atomic::write_atomic;
use ulite::ablation::{ablation_csv, run_ablation};
use ulite::arch::{count_config, count_params, module_footprint, pair_footprint, DwVariant, ModelConfig, ULite};
use ulite::data::{
    assign_splits, list_pngs, load_image, save_mask_png, synth_dataset, write_dataset, DatasetManifest, SamplePair,
    Split, SplitRatios, SynthConfig, IMAGE_SIZE,
};
use ulite::metrics::{binarize, evaluate, EvalOptions, Smoothing, DEFAULT_THRESHOLD};
use ulite::train::{load_checkpoint, AugmentConfig, TrainConfig, Trainer};
use ulite::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "ulite", version, about = "Lightweight axial depthwise-convolution segmentation network")]
struct Cli {
    /// Overrides the model seed and seeds data order and augmentation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for tensor kernels (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint plus a CSV log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Write one predicted mask PNG per input image.
    Predict(PredictArgs),
    /// Print the per-layer parameter table.
    Params(ParamsArgs),
    /// Train and score the 12-variant ablation grid.
    Ablate(AblateArgs),
    /// Print the input-gradient footprint of one module.
    Footprint(FootprintArgs),
    /// Write a synthetic dataset in the images/ + masks/ layout.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
#[command(group(ArgGroup::new("source").required(true).args(["data_dir", "synthetic"])))]
struct DataArgs {
    /// Dataset root with images/ and masks/ (or manifest.csv).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Generate this many synthetic samples instead.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Side length samples are resized to.
    #[arg(long, default_value_t = IMAGE_SIZE)]
    size: usize,
    /// Fraction held out for validation when the data carries no splits.
    #[arg(long, default_value_t = 0.1)]
    val_split: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Checkpoint path; the best-validation model goes to `<stem>.best.<ext>`.
    #[arg(long, default_value = "ulite.ckpt")]
    out: PathBuf,
    /// Training log; defaults to `<out>` with a `.csv` extension.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    /// Disable rotation and flips.
    #[arg(long)]
    no_augment: bool,
    /// Write 0 in the seconds column so logs are reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data_dir: PathBuf,
    /// CSV report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    #[arg(long, default_value_t = IMAGE_SIZE)]
    size: usize,
    #[arg(long, default_value_t = 0.1)]
    val_split: f64,
    /// Score pooled counts instead of the per-sample mean.
    #[arg(long)]
    global: bool,
    /// Smoothing in the denominator only.
    #[arg(long)]
    strict: bool,
    /// Also write predicted masks into this directory.
    #[arg(long)]
    masks: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory of PNG images (or a dataset root with images/).
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = IMAGE_SIZE)]
    size: usize,
}

#[derive(Args, Debug)]
struct ModelOverrides {
    #[arg(long, value_parser = parse_variant)]
    dw_variant: Option<DwVariant>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    addc: Option<bool>,
}

fn parse_variant(s: &str) -> std::result::Result<DwVariant, String> {
    s.parse()
}

#[derive(Args, Debug)]
struct ParamsArgs {
    #[command(flatten)]
    model: ModelOverrides,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 2)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Only `default` (operator x n in {3,5,7} x ADDC) is defined.
    #[arg(long, default_value = "default")]
    grid: String,
    /// CSV path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FootprintArgs {
    #[command(flatten)]
    model: ModelOverrides,
    /// Show one dilated `1 x k` + `k x 1` bottleneck pair with this dilation.
    #[arg(long)]
    dilation: Option<usize>,
    /// Kernel length of the dilated pair.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    channels: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = IMAGE_SIZE)]
    size: usize,
}

struct Context {
    config: ModelConfig,
    seed: u64,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let mut config = match &cli.config {
            Some(p) => ModelConfig::load(p)?,
            None => ModelConfig::default(),
        };
        if let Some(s) = cli.seed {
            config.seed = s;
        }
        Ok(Self {
            seed: config.seed,
            config,
        })
    }

    fn with(&self, o: &ModelOverrides) -> Result<ModelConfig> {
        let mut cfg = self.config.clone();
        if let Some(v) = o.dw_variant {
            cfg.dw_variant = v;
        }
        if let Some(n) = o.n {
            cfg.n = n;
        }
        if let Some(a) = o.addc {
            cfg.addc = a;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn ratios(val: f64) -> Result<SplitRatios> {
    SplitRatios::new(1.0 - val, val, 0.0)
}

/// Train and validation samples. Manifest splits are used when every entry
/// has one; otherwise a seeded split holds out `val_split`.
fn load_train_val(d: &DataArgs, seed: u64) -> Result<(Vec<SamplePair>, Vec<SamplePair>)> {
    let (samples, splits) = match (&d.data_dir, d.synthetic) {
        (Some(dir), _) => {
            let m = DatasetManifest::scan(dir)?;
            let samples = m.load(None, d.size)?;
            let splits = if m.entries.iter().all(|e| e.split.is_some()) {
                m.entries.iter().map(|e| e.split.unwrap()).collect()
            } else {
                assign_splits(samples.len(), ratios(d.val_split)?, seed)?
            };
            (samples, splits)
        }
        (None, Some(count)) => {
            let samples = synth_dataset(count, seed, &SynthConfig::with_size(d.size))?;
            let splits = assign_splits(samples.len(), ratios(d.val_split)?, seed)?;
            (samples, splits)
        }
        (None, None) => unreachable!("clap requires a data source"),
    };
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (s, split) in samples.into_iter().zip(splits) {
        match split {
            Split::Train => train.push(s),
            Split::Val => val.push(s),
            Split::Test => {}
        }
    }
    if train.is_empty() {
        return Err(Error::InvalidInput("no training samples after splitting".into()));
    }
    Ok((train, val))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_train(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let (train, val) = load_train_val(&a.data, ctx.seed)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        seed: ctx.seed,
        checkpoint: Some(a.out.clone()),
        log: Some(a.log.clone().unwrap_or_else(|| a.out.with_extension("csv"))),
        eval_every: a.eval_every,
        augment: if a.no_augment {
            AugmentConfig::none()
        } else {
            AugmentConfig::default()
        },
        no_timing: a.no_timing,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(ULite::new(&ctx.config)?, cfg)?;
    eprintln!("training on {} samples, validating on {}", train.len(), val.len());
    let summary = trainer.fit(&train, &val)?;
    let last = summary.epochs.last().expect("at least one epoch");
    eprintln!(
        "epoch {}: loss {:.4}; best dice {:.4} at epoch {}",
        last.epoch, last.loss, summary.best_dice, summary.best_epoch
    );
    Ok(())
}

fn cmd_eval(ctx: &Context, a: &EvalArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.ckpt, &ctx.config)?;
    let m = DatasetManifest::scan(&a.data_dir)?;
    let m = if m.entries.iter().all(|e| e.split.is_some()) {
        m
    } else {
        ulite::data::make_splits(&m, ratios(a.val_split)?, ctx.seed)?
    };
    let split = match a.split {
        SplitArg::All => None,
        SplitArg::Train => Some(Split::Train),
        SplitArg::Val => Some(Split::Val),
        SplitArg::Test => Some(Split::Test),
    };
    let samples = m.load(split, a.size)?;
    let opts = EvalOptions {
        smoothing: if a.strict {
            Smoothing::Strict
        } else {
            Smoothing::Symmetric
        },
        ..EvalOptions::default()
    };
    let report = evaluate(&model, &samples, &opts)?;
    if let Some(dir) = &a.masks {
        for s in &samples {
            let mask = binarize(&model.infer(&s.image)?, opts.threshold);
            save_mask_png(dir.join(format!("{}.png", s.id)), &mask)?;
        }
    }
    write_or_print(a.out.as_deref(), &report.to_csv(a.global)?)?;
    let (d, i) = report.summary(a.global);
    eprintln!("{} samples: dice {d:.4} iou {i:.4}", samples.len());
    Ok(())
}

fn cmd_predict(ctx: &Context, a: &PredictArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.ckpt, &ctx.config)?;
    let nested = a.data_dir.join("images");
    let dir = if nested.is_dir() { nested } else { a.data_dir.clone() };
    let inputs = list_pngs(&dir)?;
    if inputs.is_empty() {
        return Err(Error::InvalidInput(format!("no PNG images in {}", dir.display())));
    }
    for (stem, path) in &inputs {
        let image = load_image(path, a.size)?;
        let mask = binarize(&model.infer(&image)?, DEFAULT_THRESHOLD);
        save_mask_png(a.out.join(format!("{stem}.png")), &mask)?;
    }
    eprintln!("wrote {} masks to {}", inputs.len(), a.out.display());
    Ok(())
}

fn cmd_params(ctx: &Context, a: &ParamsArgs) -> Result<()> {
    let cfg = ctx.with(&a.model)?;
    let report = count_config(&cfg);
    let built = count_params(&ULite::<f32>::new(&cfg)?);
    if built != report {
        return Err(Error::InvalidInput("closed-form count disagrees with the built model".into()));
    }
    print!("{report}");
    Ok(())
}

fn cmd_ablate(ctx: &Context, a: &AblateArgs) -> Result<()> {
    if a.grid != "default" {
        return Err(Error::InvalidInput(format!("unknown grid `{}` (only `default`)", a.grid)));
    }
    let (train, val) = load_train_val(&a.data, ctx.seed)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        seed: ctx.seed,
        ..TrainConfig::default()
    };
    let rows = run_ablation(&ctx.config, &train, &val, &cfg)?;
    write_or_print(a.out.as_deref(), &ablation_csv(&rows))
}

fn cmd_footprint(ctx: &Context, a: &FootprintArgs) -> Result<()> {
    let fp = match a.dilation {
        Some(d) => {
            println!("dilated pair k={} d={d}", a.k);
            pair_footprint(a.k, d, ctx.seed)?
        }
        None => {
            let cfg = ctx.with(&a.model)?;
            println!("{} module n={}", cfg.dw_variant, cfg.n);
            module_footprint(cfg.dw_variant, cfg.n, a.channels, ctx.seed)?
        }
    };
    print!("{fp}");
    println!("{} cells", fp.count());
    Ok(())
}

fn cmd_synth(ctx: &Context, a: &SynthArgs) -> Result<()> {
    let samples = synth_dataset(a.count, ctx.seed, &SynthConfig::with_size(a.size))?;
    write_dataset(&a.out, &samples)?;
    eprintln!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Predict(a) => cmd_predict(&ctx, a),
        Command::Params(a) => cmd_params(&ctx, a),
        Command::Ablate(a) => cmd_ablate(&ctx, a),
        Command::Footprint(a) => cmd_footprint(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
