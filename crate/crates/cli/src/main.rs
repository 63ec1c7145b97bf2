use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sensorimotor::harness::{
    benchmark_suite, compute_metrics, load_state, run_experiment, save_state, write_outputs, ExperimentConfig,
    ExperimentState, Mode,
};
use sensorimotor::learning_module::ModelMemory;

#[derive(Parser)]
#[command(name = "sensorimotor", version, about = "Sensorimotor object recognition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn models and save them with the episode logs.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run inference with stored models; prints metrics as JSON.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// `state.json` written by `train`.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write episodes.csv and steps.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print one model's node table as CSV.
    ShowModel {
        /// A per-LM model store or a `state.json`.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        object: String,
        /// Which learning module, when reading a state file.
        #[arg(long, default_value_t = 0)]
        lm: usize,
    },
    /// Train and evaluate one of the built-in suites.
    Benchmark {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn train(config: &Path, seed: u64, out: &Path) -> Result<()> {
    let mut config = ExperimentConfig::load(config)?;
    config.seed = seed;
    config.mode = Mode::Train;
    let mut state = ExperimentState::new(config)?;
    let results = run_experiment(&mut state)?;
    write_outputs(&results, out)?;
    let path = save_state(&state, out)?;
    let metrics = compute_metrics(&results);
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    eprintln!("saved {}", path.display());
    Ok(())
}

fn eval(config: &Path, models: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let mut config = ExperimentConfig::load(config)?;
    config.mode = Mode::Eval;
    if let Some(s) = seed {
        config.seed = s;
    }
    let stored = load_state(models).with_context(|| format!("loading {}", models.display()))?;
    let mut state = stored.with_config(config)?;
    let results = run_experiment(&mut state)?;
    if let Some(out) = out {
        write_outputs(&results, out)?;
    }
    println!("{}", serde_json::to_string_pretty(&compute_metrics(&results))?);
    Ok(())
}

fn show_model(models: &Path, object: &str, lm: usize) -> Result<()> {
    let memory = match ModelMemory::load(models) {
        Ok((_, memory)) => memory,
        Err(_) => {
            let state = load_state(models).with_context(|| format!("reading {}", models.display()))?;
            let Some(lm) = state.lms.into_iter().nth(lm) else {
                bail!("state has no learning module {lm}");
            };
            lm.memory
        }
    };
    let Some(model) = memory.models.get(object) else {
        let known: Vec<&String> = memory.models.keys().collect();
        bail!("no model `{object}`; known: {known:?}");
    };
    let stdout = std::io::stdout();
    let mut w = csv::Writer::from_writer(stdout.lock());
    w.write_record([
        "node", "x", "y", "z", "nx", "ny", "nz", "d1x", "d1y", "d1z", "features", "neighbors",
    ])?;
    for (i, n) in model.nodes().iter().enumerate() {
        let f = &n.frame;
        let v = |x: f64| x.to_string();
        w.write_record([
            i.to_string(),
            v(n.location.x),
            v(n.location.y),
            v(n.location.z),
            v(f.normal.x),
            v(f.normal.y),
            v(f.normal.z),
            v(f.dir1.x),
            v(f.dir1.y),
            v(f.dir1.z),
            serde_json::to_string(&n.features)?,
            model.edges.iter().filter(|&&(a, b)| a == i || b == i).count().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn benchmark(suite: &str, seed: u64, out: Option<&Path>) -> Result<()> {
    let (mut train, mut eval) = benchmark_suite(suite)?;
    train.seed = seed;
    eval.seed = seed;
    let mut state = ExperimentState::new(train)?;
    let trained = run_experiment(&mut state)?;
    let mut evaluating = state.with_config(eval)?;
    let results = run_experiment(&mut evaluating)?;
    if let Some(out) = out {
        write_outputs(&trained, &out.join("train"))?;
        write_outputs(&results, &out.join("eval"))?;
        save_state(&state, &out.join("models"))?;
    }
    let metrics = compute_metrics(&results);
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config, seed, out } => train(config, *seed, out),
        Command::Eval {
            config,
            models,
            seed,
            out,
        } => eval(config, models, *seed, out.as_deref()),
        Command::ShowModel { models, object, lm } => show_model(models, object, *lm),
        Command::Benchmark { suite, seed, out } => benchmark(suite, *seed, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
