use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::bail;
use clap::{Args, Parser, Subcommand, ValueEnum};
use gendaug::config::{artifact_root, RunConfig};
use gendaug::experiment::augment_from_config;
use gendaug::fsutil::{write_atomic, write_json};
use gendaug::models::{run_finetune, run_pretrain, Stages};
use gendaug::report::{report_dir, PerClassAccuracy};
use gendaug::store::{load_dataset, save_dataset};
use gendaug::sweep::sweep_from_config;
use gendaug::world::{at_shape, load_split, load_world, make_data};
use gendaug_core::cas::{cas_with_model, evaluate, train_classifier};
use gendaug_core::datasets::{mix_datasets, pixel_to_u8, ItemShape, LabeledDataset};
use gendaug_core::harness::generate_dataset;
use gendaug_core::metrics::{fid, inception_score, per_class_accuracy, FeatureExtractor, MetricRecord, DEFAULT_IS_SPLITS};
use gendaug_core::numerics::SeededRng;

#[derive(Parser)]
#[command(name = "gendaug", version, about = "Fine-tune class-conditional diffusion models, tune their samplers and measure generated data as classifier training data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run description (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory of the command; defaults to a fixed subdirectory of
    /// the artifact root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Artifact root; falls back to `out` in the configuration, then
    /// `GENDAUG_DATA_DIR`, then `./runs`.
    #[arg(long, global = true)]
    root: Option<PathBuf>,
    /// Worker threads for sweeps and experiments.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Continue an interrupted sweep or experiment.
    #[arg(long, global = true)]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

impl SplitArg {
    fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the configured world into dataset directories.
    MakeData,
    /// Train every configured stage on the pretraining corpus.
    Pretrain {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Fine-tune on the target classes with FID-based checkpoint selection.
    Finetune {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Generator directory to start from.
        #[arg(long, conflicts_with = "scratch")]
        init: Option<PathBuf>,
        /// Start from a fresh initialization instead.
        #[arg(long)]
        scratch: bool,
    },
    /// Write a grid of samples (one row per class) as a PPM image.
    Sample {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        per_class: usize,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Generate a class-balanced dataset.
    Generate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// FID of a dataset against a real split.
    EvalFid {
        samples: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Val)]
        against: SplitArg,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Reference network directory; trained and cached if absent.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Inception-score analog of a dataset under the reference network.
    EvalIs {
        samples: PathBuf,
        #[arg(long, default_value_t = DEFAULT_IS_SPLITS)]
        splits: usize,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Classification accuracy score of a generated dataset.
    EvalCas {
        samples: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also train on real data and write per-class accuracies of both.
        #[arg(long)]
        baseline: bool,
    },
    /// Evaluate every cell of the configured sampling-parameter grid.
    Sweep {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Real training data plus m× generated items per class.
    Mix {
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long)]
        multiplier: f64,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Accuracy versus generated-data multiplier over several seeds.
    AugmentExp {
        /// Generated pool to draw from.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Tables and SVG plots from a sweep or experiment directory.
    Report { input: PathBuf },
}

struct Ctx {
    config: RunConfig,
    root: PathBuf,
    out: Option<PathBuf>,
    jobs: usize,
    resume: bool,
}

impl Ctx {
    fn out(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| self.root.join(default))
    }

    fn path(&self, flag: &Option<PathBuf>, default: &str) -> PathBuf {
        flag.clone().unwrap_or_else(|| self.root.join(default))
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        config.seed = seed;
    }
    let root = artifact_root(cli.common.root.as_deref(), &config);
    let jobs = cli
        .common
        .jobs
        .or(config.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let ctx = Ctx { config, root, out: cli.common.out.clone(), jobs, resume: cli.common.resume };
    run(&ctx, &cli.command)
}

fn run(ctx: &Ctx, command: &Command) -> anyhow::Result<()> {
    let cfg = &ctx.config;
    match command {
        Command::MakeData => {
            let world = cfg.section(&cfg.world, "world")?;
            let out = ctx.out("data");
            let info = make_data(&out, world, cfg.seed)?;
            println!("wrote {} target classes to {}", info.class_names.len(), out.display());
        }
        Command::Pretrain { data } => {
            for dir in run_pretrain(cfg, &ctx.path(data, "data"), &ctx.out("pretrained"))? {
                println!("wrote {}", dir.display());
            }
        }
        Command::Finetune { data, init, scratch } => {
            let init = if *scratch { None } else { Some(ctx.path(init, "pretrained")) };
            let out = ctx.out(if *scratch { "scratch" } else { "finetuned" });
            for sel in run_finetune(cfg, &ctx.path(data, "data"), init.as_deref(), &out)? {
                println!("selected step {} (FID {:.4})", sel.best_step, sel.best_fid);
            }
        }
        Command::Sample { model, per_class, data } => {
            let stages = Stages::load(&ctx.path(model, "finetuned"))?;
            let world = load_world(&ctx.path(data, "data"))?;
            let ds = generate_dataset(&stages.generator(cfg), &world.class_map, &world.class_names, *per_class, &mut sample_rng(cfg.seed))?;
            let out = ctx.out("samples.ppm");
            write_atomic(&out, &ppm_grid(&ds, *per_class)?)?;
            println!("wrote {}", out.display());
        }
        Command::Generate { model, per_class, data } => {
            let stages = Stages::load(&ctx.path(model, "finetuned"))?;
            let world = load_world(&ctx.path(data, "data"))?;
            let ds = generate_dataset(&stages.generator(cfg), &world.class_map, &world.class_names, *per_class, &mut sample_rng(cfg.seed))?;
            let out = ctx.out("generated");
            let manifest = save_dataset(&out, &ds)?;
            println!("wrote {} items to {} ({})", manifest.count, out.display(), manifest.content_hash());
        }
        Command::EvalFid { samples, against, data, reference } => {
            let ds = load_dataset(samples)?;
            let real = at_shape(&load_split(&ctx.path(data, "data"), against.name())?, ds.shape())?;
            let ext = reference_for(ctx, data, reference, ds.shape())?;
            let value = fid(&ext.stats(ds.data())?, &ext.stats(real.data())?)?;
            emit(ctx, MetricRecord {
                metric: "fid".into(),
                value,
                std: None,
                sample_count: ds.len(),
                config_hash: ds.meta().generator_hash.clone(),
                reference_split: against.name().into(),
            })?;
        }
        Command::EvalIs { samples, splits, data, reference } => {
            let ds = load_dataset(samples)?;
            let ext = reference_for(ctx, data, reference, ds.shape())?;
            let (value, std) = inception_score(&ext.probabilities(ds.data())?, ds.class_count(), *splits)?;
            emit(ctx, MetricRecord {
                metric: "is".into(),
                value,
                std: Some(std),
                sample_count: ds.len(),
                config_hash: ds.meta().generator_hash.clone(),
                reference_split: "heldout".into(),
            })?;
        }
        Command::EvalCas { samples, data, baseline } => eval_cas(ctx, samples, &ctx.path(data, "data"), *baseline)?,
        Command::Sweep { model, data } => {
            let out = ctx.out("sweep");
            let result = sweep_from_config(cfg, &ctx.path(model, "finetuned"), &ctx.path(data, "data"), &out, ctx.jobs, ctx.resume)?;
            println!("{} cells written to {}", result.rows.len(), out.display());
        }
        Command::Mix { generated, multiplier, data } => {
            let real = load_split(&ctx.path(data, "data"), "train")?;
            let generated = load_dataset(&ctx.path(generated, "generated"))?;
            let mixed = mix_datasets(&real, &generated, *multiplier, &mut SeededRng::new(cfg.seed, 0).substream(300))?;
            let out = ctx.out(&format!("mixed_m{multiplier}"));
            let manifest = save_dataset(&out, &mixed)?;
            println!("wrote {} items to {}", manifest.count, out.display());
        }
        Command::AugmentExp { pool, data } => {
            let out = ctx.out("augment");
            let result = augment_from_config(cfg, &ctx.path(data, "data"), &ctx.path(pool, "generated"), &out, ctx.jobs, ctx.resume)?;
            for s in &result.summary {
                println!("m = {}: top-1 {:.4} ± {:.4} ({:+.4} vs baseline)", s.multiplier, s.top1_mean, s.top1_std, s.delta_vs_baseline);
            }
        }
        Command::Report { input } => {
            let out = ctx.out.clone().unwrap_or_else(|| input.join("report"));
            for path in report_dir(input, &out)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn sample_rng(seed: u64) -> SeededRng {
    SeededRng::new(seed, 0).substream(400)
}

/// The reference network stored next to the fine-tuned models for `shape`,
/// trained on first use.
fn reference_for(ctx: &Ctx, data: &Option<PathBuf>, flag: &Option<PathBuf>, shape: ItemShape) -> anyhow::Result<FeatureExtractor> {
    let data = ctx.path(data, "data");
    let dir = match flag {
        Some(d) => d.clone(),
        None => {
            let stage = if let Some(sr) = &ctx.config.sr { if sr.output_shape() == shape { "sr" } else { "base" } } else { "base" };
            ctx.root.join("finetuned").join(format!("reference_{stage}"))
        }
    };
    if dir.join("model.json").exists() || dir.join("identity.json").exists() {
        return Ok(gendaug::world::load_reference(&dir)?);
    }
    Ok(gendaug::world::train_reference(&data, ctx.config.reference.as_ref(), shape, ctx.config.seed, &dir)?)
}

fn emit(ctx: &Ctx, record: MetricRecord) -> anyhow::Result<()> {
    if let Some(out) = &ctx.out {
        write_json(out, &record)?;
    }
    println!("{}", serde_json::to_string(&record)?);
    Ok(())
}

fn eval_cas(ctx: &Ctx, samples: &Path, data: &Path, baseline: bool) -> anyhow::Result<()> {
    let classifier = ctx.config.classifier_or_default();
    let generated = load_dataset(samples)?;
    let val = at_shape(&load_split(data, "val")?, generated.shape())?;
    let rng = SeededRng::new(ctx.config.seed, 0).substream(500);
    let (record, model) = cas_with_model(&generated, &val, classifier.arch, &classifier.recipe, None, &mut rng.substream(0))?;
    println!("CAS top-1 {:.4} top-5 {:.4} ({} training items)", record.top1, record.top5, record.train_size);
    let out = ctx.out("cas");
    write_json(&out.join("cas.json"), &record)?;
    if baseline {
        let train = at_shape(&load_split(data, "train")?, generated.shape())?;
        let (real_model, _) = train_classifier(&train, None, classifier.arch, &classifier.recipe, &mut rng.substream(1))?;
        let acc = evaluate(&real_model, &val, &[1, 5.min(val.class_count())])?;
        println!("real-data baseline top-1 {:.4} top-5 {:.4}", acc[0], acc[1]);
        let labels = val.labels_usize();
        let names = load_world(data).map(|w| w.class_names).unwrap_or_default();
        let per_class = PerClassAccuracy {
            class_names: names,
            real: per_class_accuracy(&real_model.predict(val.data())?, &labels, val.class_count()),
            generated: per_class_accuracy(&model.predict(val.data())?, &labels, val.class_count()),
        };
        write_json(&out.join("per_class.json"), &per_class)?;
    }
    Ok(())
}

/// Binary PPM with one row of `per_class` tiles per class.
fn ppm_grid(ds: &LabeledDataset, per_class: usize) -> anyhow::Result<Vec<u8>> {
    let Some(side) = ds.shape().square_side() else { bail!("samples are not images") };
    let ch = ds.shape().channels();
    let classes = ds.class_count();
    let (w, h) = (side * per_class, side * classes);
    let mut pixels = vec![0u8; w * h * 3];
    for i in 0..ds.len() {
        let (row, col) = (ds.label(i), i / classes);
        let item = ds.item(i);
        for y in 0..side {
            for x in 0..side {
                let dst = ((row * side + y) * w + col * side + x) * 3;
                for c in 0..3 {
                    pixels[dst + c] = pixel_to_u8(item[(y * side + x) * ch + c.min(ch - 1)]);
                }
            }
        }
    }
    let mut out = Vec::new();
    write!(out, "P6\n{w} {h}\n255\n")?;
    out.extend_from_slice(&pixels);
    Ok(out)
}
