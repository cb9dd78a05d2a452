//! Command-line front end: dataset generation, training, evaluation,
//! benchmarking, the stopping-rule ablation and self-tests.

pub mod config;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{Error, Result};
use crate::graph_data::dataset::{read_meta, split_path};
use crate::graph_data::{make_dataset, read_jsonl, Algorithm, DatasetSpec, Sample, Split};
use crate::model::{Model, ModelCheckpoint};
use crate::train::{
    ablation_relative_tolerance, benchmark_inference, evaluate, train, EpochMetrics, Inference,
};
use crate::verify::{self, Check};

use config::{resolve, LoadedConfig, Overrides, Preset, Resolved};
use report::{envelope, write_json, write_lines};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_SELFTEST: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dear", version, about = "Fixed-point graph processors trained to execute classical algorithms")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration with optional sections dataset, model, solver, train, eval.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for data generation and training (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for batch-parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Scale preset.
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Algorithm (overrides dataset.algorithm).
    #[arg(long, global = true)]
    pub algorithm: Option<Algorithm>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/val/test JSONL splits.
    GenData,
    /// Train a model and write checkpoint, per-epoch metrics and a summary.
    Train,
    /// Evaluate a checkpoint on a split.
    Eval(CheckpointArg),
    /// Time inference of a checkpoint with the solver and with a fixed unroll.
    Bench(CheckpointArg),
    /// Compare absolute and relative solver stopping rules on a checkpoint.
    Ablate(CheckpointArg),
    /// Run the gradient, solver, implicit-gradient and oracle checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct CheckpointArg {
    /// Model checkpoint (overrides eval.checkpoint).
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let c = &cli.common;
    if let Some(w) = c.workers {
        if w == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        // a pool may already exist when running in-process more than once
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let loaded = match &c.config {
        Some(path) => LoadedConfig::load(path)?,
        None => LoadedConfig::empty(),
    };
    let mut overrides = Overrides {
        preset: c.preset,
        seed: c.seed,
        algorithm: c.algorithm,
    };
    if let Command::Eval(a) | Command::Bench(a) | Command::Ablate(a) = &cli.command {
        // a checkpoint knows its algorithm
        if overrides.algorithm.is_none() && loaded.file.dataset.algorithm.is_none() {
            if let Some(path) = a.checkpoint.as_ref().or(loaded.file.eval.checkpoint.as_ref()) {
                overrides.algorithm = Some(ModelCheckpoint::load(path)?.config.algorithm);
            }
        }
    }
    if let Command::Selftest = cli.command {
        return Ok(selftest(c.seed.unwrap_or(0)));
    }
    let resolved = resolve(&loaded.file, &overrides)?;
    let ctx = Context {
        raw: &loaded.raw,
        cfg: &resolved,
        out: &c.out,
    };
    match &cli.command {
        Command::GenData => gen_data(&ctx),
        Command::Train => train_cmd(&ctx),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Bench(a) => bench_cmd(&ctx, a),
        Command::Ablate(a) => ablate_cmd(&ctx, a),
        Command::Selftest => unreachable!("handled above"),
    }?;
    Ok(EXIT_OK)
}

struct Context<'a> {
    raw: &'a serde_json::Value,
    cfg: &'a Resolved,
    out: &'a Path,
}

impl Context<'_> {
    fn write_report(&self, file: &str, command: &str, results: &impl serde::Serialize) -> Result<PathBuf> {
        let path = self.out.join(file);
        write_json(&path, &envelope(command, self.raw, self.cfg, results)?)?;
        Ok(path)
    }

    /// Split from `dataset.dir` when given, otherwise generated from the spec.
    fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        match &self.cfg.dataset_dir {
            Some(dir) => {
                let path = split_path(dir, split);
                if !path.exists() {
                    return Err(Error::Data(format!(
                        "{} not found; run `dear gen-data` with the same configuration first",
                        path.display()
                    )));
                }
                let meta = read_meta(dir)?;
                if meta.algorithm != self.cfg.dataset.algorithm {
                    return Err(Error::Data(format!(
                        "{} holds {} data, configuration asks for {}",
                        dir.display(),
                        meta.algorithm,
                        self.cfg.dataset.algorithm
                    )));
                }
                read_jsonl(&path)
            }
            None => Ok(self.cfg.dataset.generate_split(split)),
        }
    }

    fn checkpoint(&self, arg: &CheckpointArg) -> Result<Model<f64>> {
        let path = arg
            .checkpoint
            .clone()
            .or_else(|| self.cfg.eval.checkpoint.clone())
            .ok_or_else(|| Error::Config("no checkpoint given (use --checkpoint or eval.checkpoint)".into()))?;
        let model = Model::from_checkpoint(&ModelCheckpoint::load(&path)?)?;
        if model.config.algorithm != self.cfg.dataset.algorithm {
            return Err(Error::Config(format!(
                "checkpoint is a {} model, data is {}",
                model.config.algorithm, self.cfg.dataset.algorithm
            )));
        }
        Ok(model)
    }

    fn inference(&self) -> Inference {
        if self.cfg.eval.unroll {
            Inference::Unroll(self.cfg.eval.unroll_steps)
        } else {
            Inference::Equilibrium(self.cfg.train.solver.clone())
        }
    }
}

fn gen_data(ctx: &Context) -> Result<()> {
    let dir = ctx.cfg.dataset_dir.clone().unwrap_or_else(|| ctx.out.to_path_buf());
    let spec: &DatasetSpec = &ctx.cfg.dataset;
    make_dataset(spec, &dir)?;
    for split in Split::ALL {
        println!(
            "{}: {} samples -> {}",
            split.name(),
            spec.counts.get(split),
            split_path(&dir, split).display()
        );
    }
    println!("algorithm {} seed {}", spec.algorithm, spec.seed);
    Ok(())
}

fn train_cmd(ctx: &Context) -> Result<()> {
    let cfg = ctx.cfg;
    let train_set = ctx.load_split(Split::Train)?;
    let val_set = ctx.load_split(Split::Val)?;
    let test_set = ctx.load_split(Split::Test)?;
    println!(
        "training {} ({:?}) on {} samples, d = {}, {} epochs",
        cfg.model.algorithm,
        cfg.train.mode,
        train_set.len(),
        cfg.model.latent_dim,
        cfg.train.epochs
    );
    let start = Instant::now();
    let outcome = train(&cfg.model, &cfg.train, &train_set, &val_set, |r: &EpochMetrics| {
        println!(
            "epoch {:3}  train {:.4}  val {:.4}  acc {:.4}  iters {:.1}  {:.1}s",
            r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.train_mean_iterations, r.seconds
        );
    })?;
    let train_seconds = start.elapsed().as_secs_f64();

    let ckpt_path = ctx.out.join("checkpoint.json");
    std::fs::create_dir_all(ctx.out).map_err(|e| Error::io(ctx.out, e))?;
    outcome.model.to_checkpoint().save(&ckpt_path)?;
    write_lines(
        &ctx.out.join("metrics.csv"),
        std::iter::once(EpochMetrics::CSV_HEADER.to_string()).chain(outcome.epochs.iter().map(|r| r.csv_row())),
    )?;
    let inference = Inference::for_mode(cfg.train.mode, &cfg.train.solver);
    let test = evaluate(&outcome.model, &test_set, &inference)?;
    let summary = json!({
        "best_epoch": outcome.best_epoch,
        "best_val_loss": outcome.best_val_loss,
        "train_seconds": train_seconds,
        "checkpoint": ckpt_path,
        "param_fingerprint": outcome.model.params.fingerprint(),
        "test": test.summary(),
        "epochs": outcome.epochs,
    });
    let path = ctx.write_report("summary.json", "train", &summary)?;
    println!(
        "best epoch {}; test accuracy {:.4} (chance {:.4}), mean iterations {:.2}",
        outcome.best_epoch, test.accuracy, test.chance_accuracy, test.mean_iterations
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn eval_cmd(ctx: &Context, arg: &CheckpointArg) -> Result<()> {
    let model = ctx.checkpoint(arg)?;
    let split = ctx.cfg.eval.split;
    let samples = ctx.load_split(split)?;
    let before = model.params.fingerprint();
    let metrics = evaluate(&model, &samples, &ctx.inference())?;
    let after = model.params.fingerprint();
    if ctx.cfg.eval.dump_predictions {
        let lines = samples.iter().zip(&metrics.samples).map(|(s, m)| {
            json!({"index": m.index, "predictions": m.predictions, "target": s.target.pointees()}).to_string()
        });
        write_lines(&ctx.out.join("predictions.jsonl"), lines)?;
    }
    let results = json!({
        "split": split,
        "param_fingerprint": before,
        "param_fingerprint_after": after,
        "metrics": metrics.summary(),
        "samples": metrics.samples,
    });
    let path = ctx.write_report("eval.json", "eval", &results)?;
    println!(
        "{} accuracy {:.4} (chance {:.4}), mean iterations {:.2}, {:.3e} s/sample",
        split.name(),
        metrics.accuracy,
        metrics.chance_accuracy,
        metrics.mean_iterations,
        metrics.seconds_per_sample
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn bench_cmd(ctx: &Context, arg: &CheckpointArg) -> Result<()> {
    let model = ctx.checkpoint(arg)?;
    let samples = ctx.load_split(ctx.cfg.eval.split)?;
    let e = &ctx.cfg.eval;
    // timings run on the calling thread only
    let equilibrium = benchmark_inference(
        &model,
        &samples,
        &Inference::Equilibrium(ctx.cfg.train.solver.clone()),
        e.repetitions,
        e.end_to_end,
    )?;
    let unrolled = benchmark_inference(&model, &samples, &Inference::Unroll(e.unroll_steps), e.repetitions, e.end_to_end)?;
    for (name, b) in [("equilibrium", &equilibrium), ("unroll", &unrolled)] {
        println!(
            "{name:12} {:.4e} ± {:.2e} s/sample, {:.2} iterations",
            b.mean_seconds_per_sample, b.std_seconds_per_sample, b.mean_iterations
        );
    }
    let path = ctx.write_report("bench.json", "bench", &json!({"equilibrium": equilibrium, "unroll": unrolled}))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn ablate_cmd(ctx: &Context, arg: &CheckpointArg) -> Result<()> {
    let model = ctx.checkpoint(arg)?;
    let samples = ctx.load_split(ctx.cfg.eval.split)?;
    let rep = ablation_relative_tolerance(&model, &samples, &ctx.cfg.absolute_solver(), &ctx.cfg.relative_solver())?;
    let header = "index,n,slots,absolute_correct,relative_correct,absolute_iterations,relative_iterations".to_string();
    let rows = rep.absolute.samples.iter().zip(&rep.relative.samples).map(|(a, r)| {
        format!(
            "{},{},{},{},{},{},{}",
            a.index, a.n, a.slots, a.correct, r.correct, a.iterations, r.iterations
        )
    });
    write_lines(&ctx.out.join("ablation.csv"), std::iter::once(header).chain(rows))?;
    let results = json!({
        "absolute": {"epsilon": ctx.cfg.eval.absolute_epsilon, "metrics": rep.absolute.summary()},
        "relative": {"epsilon": ctx.cfg.eval.relative_epsilon, "metrics": rep.relative.summary()},
        "accuracy_delta": rep.accuracy_delta,
        "iteration_delta": rep.iteration_delta,
        "relative_exceeds_absolute": rep.relative_exceeds_absolute,
    });
    let path = ctx.write_report("ablation.json", "ablate", &results)?;
    println!(
        "absolute: accuracy {:.4}, iterations {:.2}; relative: accuracy {:.4}, iterations {:.2}",
        rep.absolute.accuracy, rep.absolute.mean_iterations, rep.relative.accuracy, rep.relative.mean_iterations
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// Runs every check suite; returns [`EXIT_SELFTEST`] if any check fails.
pub fn selftest(seed: u64) -> i32 {
    let start = Instant::now();
    let mut checks: Vec<Check> = Vec::new();
    let mut errors = Vec::new();
    let mut collect = |name: &str, r: Result<Vec<Check>>| match r {
        Ok(c) => checks.extend(c),
        Err(e) => errors.push(format!("{name}: {e}")),
    };
    collect("tape", verify::tape_suite(seed));
    for alg in Algorithm::ALL {
        collect("gradient", verify::gradient_suite(alg, 16, 1e-4, seed));
    }
    collect("solver", verify::solver_suite(20, 8, seed));
    collect("implicit", verify::implicit_suite(10, 4, 8, 0.1, 100, 1e-2, seed));
    collect("equivariance", verify::equivariance_suite(100, 16, 1e-10, seed));
    checks.extend(verify::oracle_suite(1000, 8, seed));
    for c in &checks {
        println!("{c}");
    }
    for e in &errors {
        println!("ERROR {e}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count() + errors.len();
    println!(
        "{} checks, {} failed, {:.1}s",
        checks.len() + errors.len(),
        failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_SELFTEST
    }
}
