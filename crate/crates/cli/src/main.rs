use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vti_core::config::Config;
use vti_core::data::{read_manifest, write_manifest, Dataset, Split, MANIFEST_NAME};
use vti_core::generate::{export_attention_maps, generate_all, manifest_entry, GenerationConfig, SamplingOptions};
use vti_core::metrics::{evaluate, pair_manifests, LabelerRules};
use vti_core::model::VtiModel;
use vti_core::train::{history_csv, Checkpoint, TrainState, Trainer};
use vti_core::CoreError;

#[derive(Parser)]
#[command(name = "vti", version, about = "Variational topic inference report generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic image/report dataset
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        style_count: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fit a model and write its checkpoint and history
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint with its stored configuration
        #[arg(long, conflicts_with_all = ["config", "set"])]
        resume: Option<PathBuf>,
        /// Stop after this many epochs in this invocation
        #[arg(long)]
        epoch_limit: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Sample reports for one split
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        variants: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        topk: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Assemble the most probable sentences across variants
        #[arg(long)]
        best: bool,
        /// Export attention maps for this many reports
        #[arg(long, default_value_t = 10)]
        attention_limit: usize,
    },
    /// Score generated reports against references
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(args: &ConfigArgs) -> Result<Config> {
    let mut c = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    c.apply_overrides(&args.set)?;
    Ok(c)
}

fn print_config(c: &Config) {
    println!("# resolved config");
    print!("{}", c.render());
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    Ok(())
}

fn synth(out: &Path, n: Option<usize>, seed: Option<u64>, style_count: Option<usize>, args: &ConfigArgs) -> Result<()> {
    let mut c = resolve(args)?;
    c.n = n.unwrap_or(c.n);
    c.seed = seed.unwrap_or(c.seed);
    c.style_count = style_count.unwrap_or(c.style_count);
    c.validate()?;
    print_config(&c);
    let ds = Dataset::synthesize(out, c.n, c.seed, c.style_count, c.min_freq)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{}: {} records", split.as_str(), ds.indices(split).len());
    }
    println!("vocabulary: {} tokens", ds.vocab.len());
    Ok(())
}

fn train(data: &Path, out: &Path, resume: Option<&Path>, epoch_limit: Option<usize>, args: &ConfigArgs) -> Result<()> {
    let (config, state) = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            (ck.config, Some((ck.vocab, ck.state)))
        }
        None => (resolve(args)?, None),
    };
    config.validate()?;
    print_config(&config);
    let ds = Dataset::load(data, config.image_size)?;
    let vocab = ds.vocab.len();
    let state = match state {
        Some((v, _)) if v != vocab => {
            bail!(CoreError::Mismatch(format!(
                "checkpoint vocabulary {v}, dataset vocabulary {vocab}"
            )))
        }
        Some((_, s)) => s,
        None => TrainState::new(VtiModel::new(&config.model_config(vocab)?, config.train_seed)?),
    };
    let train = ds.encoded(Split::Train, config.n_max, config.max_tokens);
    let val = ds.encoded(Split::Val, config.n_max, config.max_tokens);
    println!(
        "train {} val {} vocabulary {vocab} parameters {}",
        train.len(),
        val.len(),
        state.model.params.num_scalars()
    );
    let mut trainer = Trainer::new(config.train_config()?, state, train.len())?;
    let stop = trainer.run_observed(&train, &val, epoch_limit, |e| {
        println!(
            "epoch {:>3} step {:>6} beta {:.3} train {:.4} val {:.4} kl {:.4} acc {:.4}",
            e.epoch, e.step, e.beta, e.train_loss, e.val_loss, e.val_kl, e.val_accuracy
        );
    })?;
    println!("stopped: {stop:?}; best validation loss {:.6}", trainer.state.best_val);
    let ck = Checkpoint {
        config,
        vocab,
        state: trainer.state,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    ck.save(out)?;
    let hist = out.with_extension("history.csv");
    std::fs::write(&hist, history_csv(&ck.state.history)).map_err(|e| CoreError::io(&hist, e))?;
    println!("wrote {} and {}", out.display(), hist.display());
    Ok(())
}

struct GenerateArgs<'a> {
    ckpt: &'a Path,
    data: &'a Path,
    split: &'a str,
    out: &'a Path,
    variants: Option<usize>,
    temperature: Option<f64>,
    topk: Option<usize>,
    seed: Option<u64>,
    best: bool,
    attention_limit: usize,
}

fn generate(a: GenerateArgs<'_>) -> Result<()> {
    let ck = Checkpoint::load(a.ckpt)?;
    let mut c = ck.config;
    c.variants = a.variants.unwrap_or(c.variants);
    c.temperature = a.temperature.unwrap_or(c.temperature);
    c.top_k = a.topk.unwrap_or(c.top_k);
    c.generation_seed = a.seed.unwrap_or(c.generation_seed);
    c.validate()?;
    print_config(&c);
    let split = Split::parse(a.split)?;
    let ds = Dataset::load(a.data, c.image_size)?;
    if ds.vocab.len() != ck.vocab {
        bail!(CoreError::Mismatch(format!(
            "checkpoint vocabulary {}, dataset vocabulary {}",
            ck.vocab,
            ds.vocab.len()
        )));
    }
    let model = ck.state.best_model();
    let idx = ds.indices(split);
    if idx.is_empty() {
        bail!(CoreError::Contract(format!("split {} is empty", split.as_str())));
    }
    let pixels: Vec<Vec<f32>> = idx.iter().map(|&i| ds.records[i].image.to_unit()).collect();
    let images: Vec<&[f32]> = pixels.iter().map(Vec::as_slice).collect();
    let gen_cfg = GenerationConfig {
        sampler: c.sampler.clone(),
        sampling: SamplingOptions {
            temperature: c.temperature,
            top_k: c.top_k,
        },
        variants: c.variants,
        rescoring_samples: c.rescoring_samples,
        seed: c.generation_seed,
    };
    let reports = generate_all(&model, &images, &gen_cfg, c.batch_size)?;

    create_dir(a.out)?;
    let rules = LabelerRules::default();
    let mut chosen = Vec::with_capacity(reports.len());
    let mut variants = Vec::new();
    for (r, &i) in reports.iter().zip(&idx) {
        let name = &ds.images[i];
        let pick = if a.best { &r.best } else { &r.variants[0] };
        chosen.push(manifest_entry(name, pick, &ds.vocab, &rules, 0, split));
        for (v, variant) in r.variants.iter().enumerate() {
            variants.push(manifest_entry(name, variant, &ds.vocab, &rules, v, split));
        }
    }
    write_manifest(&a.out.join(MANIFEST_NAME), &chosen)?;
    write_manifest(&a.out.join("variants.jsonl"), &variants)?;
    for (r, &i) in reports.iter().zip(&idx).take(a.attention_limit) {
        let stem = ds.images[i].trim_end_matches(".pgm");
        let pick = if a.best { &r.best } else { &r.variants[0] };
        export_attention_maps(pick, &a.out.join("attention").join(stem), c.image_size)?;
    }
    println!("wrote {} reports to {}", chosen.len(), a.out.display());
    Ok(())
}

fn evaluate_cmd(generated: &Path, reference: &Path, out: &Path) -> Result<()> {
    print_config(&Config::default());
    let strip = |v: Vec<(usize, _)>| v.into_iter().map(|(_, e)| e).collect::<Vec<_>>();
    let gen = strip(read_manifest(generated)?);
    let refs = strip(read_manifest(reference)?);
    let input = pair_manifests(&gen, &refs).with_context(|| format!("pairing {}", generated.display()))?;
    let report = evaluate(&input)?;
    create_dir(out)?;
    report.write(out)?;
    for (name, value) in report.rows() {
        println!("{name} {value:.4}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            n,
            seed,
            style_count,
            config,
        } => synth(&out, n, seed, style_count, &config),
        Command::Train {
            data,
            out,
            resume,
            epoch_limit,
            config,
        } => train(&data, &out, resume.as_deref(), epoch_limit, &config),
        Command::Generate {
            ckpt,
            data,
            split,
            out,
            variants,
            temperature,
            topk,
            seed,
            best,
            attention_limit,
        } => generate(GenerateArgs {
            ckpt: &ckpt,
            data: &data,
            split: &split,
            out: &out,
            variants,
            temperature,
            topk,
            seed,
            best,
            attention_limit,
        }),
        Command::Evaluate {
            generated,
            reference,
            out,
        } => evaluate_cmd(&generated, &reference, &out),
    }
}

/// 2 for I/O failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
