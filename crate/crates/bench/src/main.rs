use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hud_bench::checkpoint::Checkpoint;
use hud_bench::config::RunConfig;
use hud_bench::dump::dump_embeddings;
use hud_bench::eval::{eval_noise_seed, evaluate_recall};
use hud_bench::experiments::{sweep, SweepParam};
use hud_bench::metrics::{self, MetricsRecord};
use hud_bench::synthbench::{generate_dataset, pronoun_ratio, read_corpus, DEFAULT_PRONOUNS};
use hud_bench::train::{measure, train_on, RunData, TrainOutcome};
use hud_core::gradcheck::{grad_check, Coordinates};
use hud_core::model::{batch_loss, Ablation, Triplet};
use hud_core::rng::RngStream;

#[derive(Parser)]
#[command(
    name = "hud",
    version,
    about = "Train and evaluate hierarchical uncertainty retrieval on synthetic data"
)]
struct Cli {
    /// Flat TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, writing metrics.jsonl, summary.csv and checkpoint.bin.
    Train {
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the held-out set and print its metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train ablation derivative N (1 through 9).
    Ablate {
        #[arg(long)]
        derivative: u8,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train once per value of `samples` (U) or `kappa`; writes a CSV table.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
    },
    /// Percentage of corpus lines containing a pronoun.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',')]
        pronouns: Option<Vec<String>>,
    },
    /// Compare tape gradients of the objective with finite differences.
    Gradcheck {
        /// Check every coordinate instead of a sample.
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Write labeled embedding rows for held-out triplets.
    DumpEmbeddings {
        /// Parameters to use; a fresh initialization if omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value = "embeddings.tsv")]
        out: PathBuf,
    },
    /// Export the generated training and evaluation sets as JSON Lines.
    GenData {
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Trains `cfg`, streaming records to `out/metrics.jsonl`, then writes the
/// summary and checkpoint.
fn train_to(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml_string())?;
    let data = RunData::generate(cfg)?;
    let mut jsonl = create(&out.join("metrics.jsonl"))?;
    let outcome = train_on(cfg, &data, |r| {
        metrics::write_jsonl(&mut jsonl, std::slice::from_ref(r))?;
        jsonl.flush()?;
        eprintln!(
            "step {:>5}  loss {:.4}  R@1 {:.3}  R@5 {:.3}  R@10 {:.3}",
            r.step, r.loss, r.recall_at_1, r.recall_at_5, r.recall_at_10
        );
        Ok(())
    })?;
    metrics::write_csv(create(&out.join("summary.csv"))?, None, &outcome.records)?;
    Checkpoint::from_state(cfg, &outcome.state).save(&out.join("checkpoint.bin"))?;
    Ok(outcome)
}

fn print_record(r: &MetricsRecord) -> Result<()> {
    println!("{}", serde_json::to_string(r)?);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Train { out } => {
            let outcome = train_to(&cfg, out)?;
            print_record(outcome.final_record())?;
        }
        Command::Eval { checkpoint } => {
            let ck = Checkpoint::load(checkpoint)?;
            if ck.config_hash != cfg.hash() {
                eprintln!(
                    "note: checkpoint was written under config {} (current {})",
                    ck.config_hash,
                    cfg.hash()
                );
            }
            let store = ck.store_for(&cfg)?;
            let data = RunData::generate(&cfg)?;
            print_record(&measure(&store, &cfg, &data, store.step, None, None)?)?;
        }
        Command::Ablate { derivative, out } => {
            let name = Ablation::name(*derivative).with_context(|| format!("no derivative {derivative}"))?;
            let derived = cfg.clone().with_derivative(*derivative)?;
            let out = out
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("runs/ablate-{derivative}")));
            eprintln!("derivative {derivative}: {name}");
            let outcome = train_to(&derived, &out)?;
            print_record(outcome.final_record())?;
        }
        Command::Sweep { param, values, out } => {
            let outcomes = sweep(&cfg, *param, values)?;
            fs::create_dir_all(out)?;
            let finals: Vec<MetricsRecord> = outcomes.iter().map(|o| o.final_record().clone()).collect();
            let labels: Vec<String> = values.iter().map(|v| v.to_string()).collect();
            let path = out.join(format!("sweep-{}.csv", param.name()));
            metrics::write_csv(create(&path)?, Some((param.name(), &labels)), &finals)?;
            metrics::write_csv(io::stdout().lock(), Some((param.name(), &labels)), &finals)?;
        }
        Command::Stats { corpus, pronouns } => {
            let file = File::open(corpus).with_context(|| format!("opening {}", corpus.display()))?;
            let texts = read_corpus(BufReader::new(file))?;
            let ratio = match pronouns {
                Some(p) => pronoun_ratio(&texts, p)?,
                None => pronoun_ratio(&texts, &DEFAULT_PRONOUNS)?,
            };
            println!("{ratio:.2}");
        }
        Command::Gradcheck {
            all,
            batch,
            eps,
            tolerance,
        } => {
            let model = cfg.model();
            let store = model.init_params(cfg.seed)?;
            let synth = cfg.synth();
            let data = generate_dataset(cfg.seed, *batch, 0, &synth)?;
            let triplets: Vec<Triplet> = data.triplets.iter().map(|t| t.triplet.clone()).collect();
            let coords = if *all {
                Coordinates::All
            } else {
                Coordinates::Sample {
                    per_param: 8,
                    seed: cfg.seed,
                }
            };
            let report = grad_check(&store, *eps, coords, |g| {
                Ok(batch_loss(g, &model, &triplets, &mut RngStream::new(cfg.seed))?.loss)
            })?;
            for p in &report.params {
                println!(
                    "{:<32} {:>6} coords  max rel err {:.3e}",
                    p.name, p.checked, p.max_rel_error
                );
            }
            println!(
                "{} coordinates, max relative error {:.3e} (tolerance {tolerance:e})",
                report.checked(),
                report.max_rel_error
            );
            if !report.passes(*tolerance) {
                bail!("gradient check failed at {:?}", report.worst);
            }
        }
        Command::DumpEmbeddings { checkpoint, count, out } => {
            let store = match checkpoint {
                Some(p) => Checkpoint::load(p)?.store_for(&cfg)?,
                None => cfg.model().init_params(cfg.seed)?,
            };
            let data = RunData::generate(&cfg)?;
            let queries: Vec<&Triplet> = data.queries().into_iter().take(*count).collect();
            dump_embeddings(&store, &cfg.model(), &queries, eval_noise_seed(cfg.seed), create(out)?)?;
            eprintln!("wrote {} triplets to {}", queries.len(), out.display());
        }
        Command::GenData { out } => {
            let data = RunData::generate(&cfg)?;
            fs::create_dir_all(out)?;
            data.train.write_jsonl(create(&out.join("train.jsonl"))?)?;
            data.eval.write_jsonl(create(&out.join("eval.jsonl"))?)?;
            let recall = evaluate_recall(
                &cfg.model().init_params(cfg.seed)?,
                &cfg.model(),
                &data.queries(),
                &data.database(),
                eval_noise_seed(cfg.seed),
            )?;
            eprintln!(
                "wrote {} training and {} evaluation triplets, {} distractors; untrained R@1 {:.3}",
                data.train.triplets.len(),
                data.eval.triplets.len(),
                data.eval.distractors.len(),
                recall[0]
            );
        }
    }
    Ok(())
}
