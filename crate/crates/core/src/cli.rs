//! Command line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::annotation::io::{emit_annotations, load_annotations, read_detections, MiningConfig};
use crate::annotation::{compute_statistics, CollisionPolicy, MiningReport, ScoreThreshold};
use crate::dataset::{read_features, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, export_embeddings};
use crate::gradcheck::{run_suite, SuiteBounds};
use crate::model::MasrParams;
use crate::synth::{generate, SynthSpec};
use crate::trainer::{write_loss_history, TrainConfig, TrainState, Trainer};

/// Mining configuration written next to mined annotations.
pub const MINING_CONFIG_FILE: &str = "mining.toml";
pub const MINING_REPORT_FILE: &str = "report.txt";
pub const CATEGORY_TABLE_FILE: &str = "categories.tsv";
pub const ATTRIBUTE_TABLE_FILE: &str = "attributes.tsv";
pub const PARAMS_FILE: &str = "params.bin";
pub const STATE_FILE: &str = "state.bin";
pub const LOSS_HISTORY_FILE: &str = "loss_history.tsv";
pub const EVAL_TSV_FILE: &str = "eval.tsv";
pub const EVAL_TABLE_FILE: &str = "eval.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";

#[derive(Debug, Parser)]
#[command(
    name = "masr",
    version,
    about = "Scene-attribute mining and recognition"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge detector outputs and filter them into attribute annotations.
    Mine(MineArgs),
    /// Summarize a mined annotation directory.
    Stats(StatsArgs),
    /// Generate a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Train the recognition heads.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a feature file.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on random models.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct MineArgs {
    /// Detections as JSON lines.
    #[arg(long)]
    pub detections: PathBuf,
    /// Mining configuration (TOML) declaring the detector sources.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub beta: Option<usize>,
    #[arg(long)]
    pub collision_policy: Option<CollisionPolicy>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Directory written by `mine`.
    #[arg(long)]
    pub annotations: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus specification (TOML); built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory written by `mine`.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Feature file (`image_id`, `category`, values).
    #[arg(long)]
    pub features: PathBuf,
    /// Target threshold; defaults to the one the annotations were mined with.
    #[arg(long)]
    pub xi: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cascade_depth: Option<usize>,
    /// Resume from a training-state checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Stop after this many completed epochs instead of the configured total.
    #[arg(long)]
    pub stop_at: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Parameter or training-state checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub configs: usize,
    #[arg(long, default_value_t = 3)]
    pub cascade_depth: usize,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn mine(args: &MineArgs) -> Result<String> {
    let mut config = MiningConfig::load(&args.config)?;
    if let Some(xi) = args.xi {
        config.xi = xi;
    }
    if let Some(beta) = args.beta {
        config.beta = beta;
    }
    if let Some(policy) = args.collision_policy {
        config.collision_policy = policy;
    }
    config.validate()?;
    let records = read_detections(&args.detections)?;
    let (vocab, outcome) = config.run(&records)?;
    let report = MiningReport::new(&outcome.stages, vocab.len())?;

    create_dir(&args.out)?;
    emit_annotations(&args.out, outcome.released(), &vocab)?;
    write_file(&args.out.join(MINING_CONFIG_FILE), config.to_toml_string())?;
    let rendered = report.render(&vocab);
    write_file(&args.out.join(MINING_REPORT_FILE), &rendered)?;
    write_file(
        &args.out.join(CATEGORY_TABLE_FILE),
        report.category_table_tsv(),
    )?;
    write_file(
        &args.out.join(ATTRIBUTE_TABLE_FILE),
        report.attribute_table_tsv(&vocab),
    )?;
    Ok(rendered)
}

pub fn stats(args: &StatsArgs) -> Result<String> {
    let (corpus, vocab) = load_annotations(&args.annotations)?;
    let stats = compute_statistics(&corpus, vocab.len())?;
    let mut out = format!(
        "images: {}\nattributes: {}\nmean attributes per image: {:.3}\n\nattributes per image\n",
        stats.n_images,
        vocab.len(),
        stats.mean_attributes_per_image
    );
    for (count, images) in &stats.histogram {
        out.push_str(&format!("  {count:>3}: {images}\n"));
    }
    out.push_str("\nattribute\tcount\tmin\tmean\tmax\n");
    for (j, summary) in stats.per_attribute.iter().enumerate() {
        match summary {
            Some(s) => out.push_str(&format!(
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\n",
                vocab.label(j),
                s.count,
                s.min,
                s.mean,
                s.max
            )),
            None => out.push_str(&format!("{}\t0\t-\t-\t-\n", vocab.label(j))),
        }
    }
    Ok(out)
}

pub fn synth(args: &SynthArgs) -> Result<String> {
    let spec = match &args.config {
        Some(path) => SynthSpec::load(path)?,
        None => SynthSpec::default(),
    };
    let corpus = generate(&spec, args.seed)?;
    corpus.write(&args.out)?;
    Ok(format!(
        "wrote {} train and {} test images ({} categories, {} attributes) to {}\n",
        corpus.train.len(),
        corpus.test.len(),
        spec.categories,
        spec.attributes,
        args.out.display()
    ))
}

fn load_dataset(args: &DataArgs) -> Result<Dataset> {
    let (corpus, vocab) = load_annotations(&args.annotations)?;
    let xi = match args.xi {
        Some(xi) => ScoreThreshold::new(xi)?,
        None => {
            let path = args.annotations.join(MINING_CONFIG_FILE);
            if path.exists() {
                MiningConfig::load(&path)?.threshold()?
            } else {
                ScoreThreshold::DEFAULT
            }
        }
    };
    let features = read_features(&args.features)?;
    if features.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Dataset::assemble(&features, &corpus, &vocab, xi)
}

pub fn train(args: &TrainArgs) -> Result<String> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(depth) = args.cascade_depth {
        config.cascade_depth = depth;
    }
    config.validate()?;
    let data = load_dataset(&args.data)?;
    let trainer = Trainer::new(config.clone(), &data)?;
    let state = match &args.checkpoint {
        Some(path) => {
            let state = TrainState::load(path)?;
            if state.rng_seed != config.seed {
                return Err(Error::Checkpoint(format!(
                    "checkpoint was trained with seed {}, config says {}",
                    state.rng_seed, config.seed
                )));
            }
            state
        }
        None => trainer.init_state()?,
    };
    let stop = args.stop_at.unwrap_or(config.epochs_total);
    let state = trainer.run_until(state, stop)?;

    create_dir(&args.out)?;
    state.params.save(&args.out.join(PARAMS_FILE))?;
    state.save(&args.out.join(STATE_FILE))?;
    let mut history = Vec::new();
    write_loss_history(&mut history, &state.history)
        .map_err(|e| Error::io(LOSS_HISTORY_FILE, e))?;
    write_file(&args.out.join(LOSS_HISTORY_FILE), &history)?;
    let last = state.history.last();
    Ok(format!(
        "trained {} epochs on {} samples; final L_cls {} L_att {}\n",
        state.epoch,
        data.len(),
        last.map_or(f64::NAN, |h| h.classification),
        last.map_or(f64::NAN, |h| h.attribute)
    ))
}

/// Reads either a parameter checkpoint or the parameters inside a
/// training-state checkpoint.
pub fn load_any_params(path: &Path) -> Result<MasrParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"MASRSTA\0") {
        TrainState::load(path).map(|s| s.params)
    } else {
        MasrParams::load(path)
    }
}

pub fn eval(args: &EvalArgs) -> Result<String> {
    let params = load_any_params(&args.checkpoint)?;
    let data = load_dataset(&args.data)?;
    let report = evaluate(&params, &data)?;
    create_dir(&args.out)?;
    write_file(&args.out.join(EVAL_TSV_FILE), report.to_tsv())?;
    let table = report.render();
    write_file(&args.out.join(EVAL_TABLE_FILE), &table)?;
    export_embeddings(&args.out.join(EMBEDDINGS_FILE), &data, &params)?;
    Ok(table)
}

/// Runs the suite; the error carries the failure count.
pub fn gradcheck(args: &GradcheckArgs) -> Result<String> {
    if args.cascade_depth == 0 {
        return Err(Error::Config("cascade depth must be at least 1".into()));
    }
    let bounds = SuiteBounds {
        max_depth: args.cascade_depth,
        ..SuiteBounds::default()
    };
    let report = run_suite(args.seed, args.configs, bounds)?;
    let rendered = report.render();
    if report.passed() {
        Ok(rendered)
    } else {
        Err(Error::Contract(format!(
            "{} of {} gradient checks failed\n{rendered}",
            report.failures(),
            report.results.len()
        )))
    }
}

/// Executes one parsed command and returns what it prints.
pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Mine(a) => mine(a),
        Command::Stats(a) => stats(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}
