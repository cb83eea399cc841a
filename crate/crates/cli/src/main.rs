//! `seqrules`: distills a sequence scorer into weighted boolean rules.
//!
//! Settings come from an optional TOML file (`--config`) and are then
//! overridden by command line flags.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use seqrules::dataset::Schema;
use seqrules::nln::NoiseMode;
use seqrules::operators::format_chain;
use seqrules::pipeline::{
    binarize_stage, evaluate_stage, extract_stage, gen_stats, run_all, stage_seed, train_stage,
    Part, RunConfig, Splits, CHECKPOINT, EVALUATION, RULES, SEED_SYNTHETIC, SPLITS,
};
use seqrules::synthetic::{make_synthetic, write_fixture, Fixture};

#[derive(Parser, Debug)]
#[command(
    name = "seqrules",
    version,
    about = "Rule distillation for event-sequence scorers"
)]
struct Cli {
    /// TOML run configuration; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// global seed, fanned out to one seed per stage
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// worker threads (stages are sequential; kept for determinism)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// work directory for artifacts
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// events CSV: user_id, then one column per schema entry
    #[arg(long)]
    events: Option<PathBuf>,
    /// schema TOML
    #[arg(long)]
    schema: Option<PathBuf>,
    /// teacher scores CSV: user_id,score
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct SearchArgs {
    /// maximum chain length
    #[arg(long)]
    depth: Option<usize>,
    /// number of statistics K
    #[arg(long)]
    num_stats: Option<usize>,
    /// tree simulations per committed operator
    #[arg(long)]
    simulations: Option<usize>,
    /// fraction of users on the training side of the split
    #[arg(long)]
    train_frac: Option<f64>,
    /// training-side users held out for validation
    #[arg(long)]
    valid_count: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// number of rules (even)
    #[arg(long)]
    rules: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// rows per mini-batch
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_start: Option<f64>,
    #[arg(long)]
    lr_end: Option<f64>,
    #[arg(long)]
    tau_start: Option<f64>,
    #[arg(long)]
    tau_end: Option<f64>,
    /// Gumbel noise per instance or shared by a mini-batch
    #[arg(long, value_parser = parse_noise)]
    noise: Option<NoiseMode>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Search statistics on the training users
    GenStats {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        search: SearchArgs,
        /// users per reward batch
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Threshold the statistics into literals
    Binarize {
        /// schema TOML
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Train the logical network on the literals
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Read the rules off a checkpoint
    Extract {
        /// defaults to checkpoint.json in the work directory
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fidelity and AUC of a rules file
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// defaults to rules.txt in the work directory
        #[arg(long)]
        rules: Option<PathBuf>,
        /// train, valid, test or all; repeatable
        #[arg(long = "part")]
        parts: Vec<String>,
        /// teacher scores above this are positive labels (default: median)
        #[arg(long)]
        label_threshold: Option<f64>,
        /// report path, defaults to evaluation.txt in the work directory
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Every stage in order
    RunAll {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// users per reward batch of the search
        #[arg(long)]
        search_batch_size: Option<usize>,
        #[arg(long)]
        label_threshold: Option<f64>,
    },
    /// Write a synthetic dataset with a known teacher
    MakeSynthetic {
        /// single-signal, two-signal or rule-teacher
        #[arg(long)]
        fixture: String,
        /// number of users
        #[arg(long, default_value_t = 2000)]
        n: usize,
    },
}

fn parse_noise(s: &str) -> Result<NoiseMode, String> {
    match s {
        "per-instance" => Ok(NoiseMode::PerInstance),
        "per-batch" => Ok(NoiseMode::PerBatch),
        _ => Err(format!("expected per-instance or per-batch, got `{s}`")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl DataArgs {
    fn apply(self, cfg: &mut RunConfig) {
        cfg.events = self.events.or(cfg.events.take());
        cfg.schema = self.schema.or(cfg.schema.take());
        cfg.scores = self.scores.or(cfg.scores.take());
    }
}

impl SearchArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.depth, self.depth);
        set(&mut cfg.num_stats, self.num_stats);
        set(&mut cfg.simulations, self.simulations);
        set(&mut cfg.train_frac, self.train_frac);
        set(&mut cfg.valid_count, self.valid_count);
    }
}

impl TrainArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.layers, self.layers);
        set(&mut cfg.hidden, self.hidden);
        set(&mut cfg.rules, self.rules);
        set(&mut cfg.epochs, self.epochs);
        set(&mut cfg.batch_size, self.batch_size);
        set(&mut cfg.lr_start, self.lr_start);
        set(&mut cfg.lr_end, self.lr_end);
        set(&mut cfg.tau_start, self.tau_start);
        set(&mut cfg.tau_end, self.tau_end);
        set(&mut cfg.noise, self.noise);
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.threads, cli.threads);
    set(&mut cfg.workdir, cli.out.clone());
    Ok(cfg)
}

fn load_schema(cfg: &RunConfig) -> Result<Schema> {
    let path = cfg
        .schema
        .as_ref()
        .context("no schema file configured (--schema)")?;
    Ok(Schema::load(path)?)
}

fn parse_parts(names: &[String]) -> Result<Vec<Part>> {
    names
        .iter()
        .filter(|n| n.as_str() != "all")
        .map(|n| Part::parse(n).with_context(|| format!("unknown part `{n}`")))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(&cli)?;
    let dir = cfg.workdir.clone();
    match cli.command {
        Command::GenStats {
            data,
            search,
            batch_size,
        } => {
            data.apply(&mut cfg);
            search.apply(&mut cfg);
            set(&mut cfg.search_batch_size, batch_size);
            cfg.validate()?;
            let dataset = cfg.load_dataset()?;
            let stats = gen_stats(&cfg, &dataset, &dir)?;
            for (chain, reward) in &stats.statistics {
                println!("{reward:.6}  {}", format_chain(chain, dataset.schema()));
            }
        }
        Command::Binarize { schema } => {
            cfg.schema = schema.or(cfg.schema.take());
            let th = binarize_stage(&load_schema(&cfg)?, &dir)?;
            println!("{} literals", th.literals.len());
        }
        Command::Train { data, train } => {
            data.apply(&mut cfg);
            train.apply(&mut cfg);
            cfg.validate()?;
            let dataset = cfg.load_dataset()?;
            let ckpt = train_stage(&cfg, &dataset, &dir)?;
            if let Some(last) = ckpt.objectives.last() {
                println!("final objective {last:.6}");
            }
        }
        Command::Extract { checkpoint } => {
            let path = checkpoint.unwrap_or_else(|| dir.join(CHECKPOINT));
            let rules = extract_stage(&path, &dir)?;
            println!(
                "{} rules written to {}",
                rules.rules.len(),
                dir.join(RULES).display()
            );
        }
        Command::Evaluate {
            data,
            rules,
            parts: names,
            label_threshold,
            report,
        } => {
            data.apply(&mut cfg);
            set(&mut cfg.label_threshold, label_threshold.map(Some));
            let dataset = cfg.load_dataset()?;
            let splits_path = dir.join(SPLITS);
            let splits = if splits_path.exists() {
                Some(Splits::read(&splits_path)?)
            } else {
                None
            };
            let parts = if names.is_empty() && splits.is_some() {
                vec![Part::Train, Part::Valid, Part::Test]
            } else {
                parse_parts(&names)?
            };
            let rules = rules.unwrap_or_else(|| dir.join(RULES));
            let report = report.unwrap_or_else(|| dir.join(EVALUATION));
            let eval = evaluate_stage(
                &rules,
                &dataset,
                splits.as_ref(),
                &parts,
                cfg.label_threshold,
                &report,
            )?;
            print!("{}", eval.to_text());
        }
        Command::RunAll {
            data,
            search,
            train,
            search_batch_size,
            label_threshold,
        } => {
            data.apply(&mut cfg);
            search.apply(&mut cfg);
            train.apply(&mut cfg);
            set(&mut cfg.search_batch_size, search_batch_size);
            set(&mut cfg.label_threshold, label_threshold.map(Some));
            let artifacts = run_all(&cfg)?;
            print!("{}", artifacts.result.to_text());
        }
        Command::MakeSynthetic { fixture, n } => {
            let fixture: Fixture = fixture.parse()?;
            if n < 2 {
                bail!("a fixture needs at least 2 users");
            }
            let (dataset, manifest) =
                make_synthetic(fixture, n, stage_seed(cfg.seed, SEED_SYNTHETIC))?;
            write_fixture(&dir, &dataset, &manifest)?;
            println!("{n} users written to {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
