use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use quizforge::agents::{self, Algorithm};
use quizforge::approx;
use quizforge::config::Config;
use quizforge::datagen::{self, Dataset};
use quizforge::env::{Environment, Universe};
use quizforge::harness::{self, CellKey, TargetRef};
use quizforge::oracle;

#[derive(Parser)]
#[command(name = "quizforge", version, about = "Compose quizzes from an MCQ pool with RL agents")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.episodes=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Base seed; overrides the file and QUIZFORGE_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Same as `--set target.name=...`.
    #[arg(long, global = true)]
    target: Option<String>,
    /// Same as `--set target.alpha=...`.
    #[arg(long, global = true)]
    alpha: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic MCQ pool and write it as CSV.
    GenSynthetic {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load a CSV pool and print a summary.
    LoadData {
        #[arg(long)]
        path: Option<PathBuf>,
    },
    /// Build a quiz universe from the configured dataset.
    BuildEnv {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one agent and write its checkpoint and training log.
    Train {
        /// Same as `--set train.algorithm=...`.
        #[arg(long, alias = "algo")]
        algorithm: Option<Algorithm>,
        /// Read the universe from this JSONL file instead of building it.
        #[arg(long)]
        universe: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run greedy inference with a trained checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        universe: Option<PathBuf>,
        #[arg(long)]
        start: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Scan the universe for the best-matching quiz.
    Oracle {
        #[arg(long)]
        universe: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against another target without retraining.
    Transfer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        universe: Option<PathBuf>,
        /// Target to evaluate against (uniform, bias, bias_prime).
        #[arg(long)]
        to: String,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Run the configured experiment plan and write a report directory.
    RunPlan {
        /// Plan config; same as the global `--config`.
        plan: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Summarize a rows.jsonl file as CSV on stdout.
    Report {
        rows: PathBuf,
    },
}

fn parse_sets(sets: &[String]) -> Result<Vec<(String, String)>> {
    sets.iter()
        .map(|s| match s.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
            _ => bail!("--set expects KEY=VALUE, got {s:?}"),
        })
        .collect()
}

fn load_config(g: &Global) -> Result<Config> {
    let mut overrides = parse_sets(&g.sets)?;
    if let Some(seed) = g.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(t) = &g.target {
        overrides.push(("target.name".into(), format!("{t:?}")));
    }
    if let Some(a) = g.alpha {
        overrides.push(("target.alpha".into(), format!("{a:?}")));
    }
    Ok(Config::load(g.config.as_deref(), &overrides)?)
}

fn dataset(cfg: &Config) -> Result<Dataset> {
    let dref = cfg.dataset_ref(&cfg.dataset);
    dref.load()
        .with_context(|| format!("loading dataset {:?}", dref.name()))
}

fn universe(cfg: &Config, path: Option<&Path>) -> Result<Arc<Universe>> {
    let u = match path {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening universe {}", p.display()))?;
            Universe::read_jsonl(BufReader::new(f))
                .with_context(|| format!("reading universe {}", p.display()))?
        }
        None => Universe::build(&dataset(cfg)?, cfg.universe.k, cfg.universe.size, cfg.universe_seed())?,
    };
    Ok(Arc::new(u))
}

fn environment(cfg: &Config, u: Arc<Universe>, target: &TargetRef) -> Result<Environment> {
    let spec = target.spec(u.n_topics(), u.n_levels(), cfg.target.alpha, cfg.episode.beta)?;
    Ok(Environment::new(u, spec, cfg.episode)?)
}

fn load_model(path: &Path) -> Result<quizforge::approx::ParamSet> {
    if !path.exists() {
        bail!(
            "checkpoint {} does not exist; train a model first with `quizforge train`",
            path.display()
        );
    }
    approx::load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(mut cli: Cli) -> Result<()> {
    if let Command::RunPlan { plan: Some(p), .. } = &cli.command {
        if cli.global.config.is_some() {
            bail!("give the plan either positionally or with --config, not both");
        }
        cli.global.config = Some(p.clone());
    }
    let mut cfg = load_config(&cli.global)?;
    match cli.command {
        Command::GenSynthetic { out } => {
            let mut section = cfg.dataset.clone();
            section.source = quizforge::config::DataSource::Synthetic;
            let ds = cfg.dataset_ref(&section).load()?;
            let path = out.unwrap_or_else(|| cfg.dataset.path.clone());
            datagen::save_dataset(&ds, &path)?;
            eprintln!("wrote {} MCQs to {}", ds.len(), path.display());
        }
        Command::LoadData { path } => {
            let path = path.unwrap_or_else(|| cfg.dataset.path.clone());
            let ds = datagen::load_dataset(&path).with_context(|| format!("loading {}", path.display()))?;
            print_json(&serde_json::json!({
                "mcqs": ds.len(),
                "topics": ds.topic_labels,
                "levels": ds.level_labels,
                "topic_counts": ds.topic_counts(),
                "level_counts": ds.level_counts(),
            }))?;
        }
        Command::BuildEnv { out } => {
            let u = universe(&cfg, None)?;
            let path = out.unwrap_or_else(|| cfg.universe.path.clone());
            let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
            u.write_jsonl(&mut w)?;
            w.flush()?;
            eprintln!("wrote {} quizzes to {}", u.len(), path.display());
        }
        Command::Train {
            algorithm,
            universe: upath,
            out_dir,
        } => {
            if let Some(a) = algorithm {
                cfg.train.algorithm = a;
            }
            let algorithm = cfg.train.algorithm;
            let out_dir = out_dir.unwrap_or_else(|| cfg.output.dir.clone());
            let env = environment(&cfg, universe(&cfg, upath.as_deref())?, &cfg.target_ref()?)?;
            let train = quizforge::agents::TrainConfig {
                max_steps: cfg.episode.max_steps,
                ..cfg.train.params.clone()
            };
            let trained = agents::train_agent(algorithm, &env, &train)?;
            fs::create_dir_all(&out_dir)?;
            approx::save_checkpoint(&trained.params, &out_dir.join("model.qzp"))?;
            let mut w = BufWriter::new(File::create(out_dir.join("trainlog.jsonl"))?);
            trained.log.write_jsonl(&mut w)?;
            w.flush()?;
            fs::write(out_dir.join("config.json"), serde_json::to_string_pretty(&cfg.to_json())?)?;
            let last = trained.log.episodes.last();
            eprintln!(
                "trained {algorithm} for {} episodes; last terminal match {:.3}; wrote {}",
                trained.log.episodes.len(),
                last.map_or(0.0, |e| e.terminal_match),
                out_dir.display()
            );
        }
        Command::Infer {
            checkpoint,
            universe: upath,
            start,
            runs,
        } => {
            let params = load_model(&checkpoint.unwrap_or_else(|| cfg.infer.checkpoint.clone()))?;
            let env = environment(&cfg, universe(&cfg, upath.as_deref())?, &cfg.target_ref()?)?;
            match start.or(cfg.infer.start) {
                Some(s) => {
                    if s >= env.len() {
                        bail!("start {s} out of range for a universe of {}", env.len());
                    }
                    print_json(&agents::infer_quiz(&params, &env, s, cfg.seed)?)?;
                }
                None => {
                    let target = cfg.target_ref()?.name();
                    let key = CellKey::new(&cfg.dataset.name, &target, "infer", cfg.target.alpha);
                    let n = runs.unwrap_or(cfg.infer.runs);
                    for row in harness::evaluate(&params, &env, &key, n, cfg.seed)?.0 {
                        print_json(&row)?;
                    }
                }
            }
        }
        Command::Oracle { universe: upath } => {
            let env = environment(&cfg, universe(&cfg, upath.as_deref())?, &cfg.target_ref()?)?;
            let best = oracle::oracle_best(&env).context("empty universe")?;
            print_json(&serde_json::json!({
                "index": best.index,
                "score": best.score,
                "scan_count": best.scan_count,
                "mcq_ids": env.universe().quiz(best.index).mcq_ids,
                "elapsed_secs": best.elapsed_secs,
            }))?;
        }
        Command::Transfer {
            checkpoint,
            universe: upath,
            to,
            runs,
        } => {
            let params = load_model(&checkpoint.unwrap_or_else(|| cfg.infer.checkpoint.clone()))?;
            let target: TargetRef = match to.parse() {
                Ok(TargetRef::BiasPrime { .. }) => TargetRef::BiasPrime {
                    seed: cfg.target.permutation_seed,
                },
                Ok(t) => t,
                Err(m) => bail!(m),
            };
            let env = environment(&cfg, universe(&cfg, upath.as_deref())?, &target)?;
            let key = CellKey::new(&cfg.dataset.name, &target.name(), "transfer", cfg.target.alpha);
            let n = runs.unwrap_or(cfg.infer.runs);
            for row in harness::transfer_run(&params, &env, &key, n, cfg.seed)? {
                print_json(&row)?;
            }
        }
        Command::RunPlan { out_dir, .. } => {
            let dir = out_dir.unwrap_or_else(|| cfg.output.dir.clone());
            let plan = cfg.plan()?;
            let out = harness::run_plan(&plan)?;
            for f in &out.failures {
                eprintln!("cell {} failed: {}", f.cell.label(), f.error);
            }
            let files = harness::emit_report(
                &dir,
                &out.rows,
                &out.curves,
                &out.trajectories,
                &out.failures,
                &cfg.to_json(),
            )?;
            let models = dir.join("models");
            fs::create_dir_all(&models)?;
            for (key, params) in &out.models {
                let name = format!("{}_{}_{}_{}.qzp", key.dataset, key.target, key.algorithm, key.alpha);
                approx::save_checkpoint(params, &models.join(name.replace(['/', '\\'], "-")))?;
            }
            eprintln!(
                "{} rows, {} failed cells; report at {}",
                out.rows.len(),
                out.failures.len(),
                files.report.display()
            );
        }
        Command::Report { rows } => {
            let f = File::open(&rows).with_context(|| format!("opening {}", rows.display()))?;
            let (_, rows) = harness::read_rows_jsonl(BufReader::new(f))?;
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            for s in harness::aggregate(&rows) {
                w.serialize(s)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
