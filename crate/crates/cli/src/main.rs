mod config;

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;
use taskcomp::composition::{PrefixCompose, PromptTemplate};
use taskcomp::evalreport::emit_tables;
use taskcomp::protocol::{
    build_split, compatible, corpus_dir, read_records, record_path, run_hash, write_record, Dataset, Experiment,
    ExperimentConfig, Method, PipelineOrder, ScalingPlan, Strategy,
};
use taskcomp::taskgen::{verify_corpus, AtomicTask, TaskId};

use config::{parse_config, ConfigFile, MatrixEntry};

#[derive(Parser)]
#[command(name = "taskcomp", version, about = "Task composition experiments on a synthetic style-transfer corpus")]
struct Cli {
    /// Workspace root holding corpus/, checkpoints/, records/ and reports/.
    #[arg(long, global = true, env = "TASKCOMP_WORKSPACE", default_value = "workspace")]
    workspace: PathBuf,
    /// Key-value config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    template: Option<PromptTemplate>,
    #[arg(long, global = true)]
    pipeline_order: Option<PipelineOrder>,
    #[arg(long, global = true)]
    prefix_compose: Option<PrefixCompose>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the corpus for the configured spec.
    Gen,
    /// Train the prompt model for one strategy split (all atomics by default).
    Train {
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        target: Option<TaskId>,
    },
    /// Execute the config's experiment matrix, skipping completed runs.
    Run {
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Emit result tables from run records.
    Report {
        /// Records directory; defaults to <workspace>/records.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Output directory; defaults to <workspace>/reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every corpus example against the grammar oracle.
    VerifyOracle,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<ConfigFile> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_config(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => ConfigFile::default(),
    };
    if let Some(seeds) = &cli.seeds {
        cfg.seeds = seeds.clone();
    }
    let exp = &mut cfg.experiment;
    if let Some(t) = cli.template {
        exp.template = t;
    }
    if let Some(o) = cli.pipeline_order {
        exp.pipeline_order = o;
    }
    if let Some(c) = cli.prefix_compose {
        exp.prefix.compose = c;
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen => cmd_gen(cli),
        Command::Train { strategy, target } => cmd_train(cli, *strategy, *target),
        Command::Run { jobs } => cmd_run(cli, *jobs),
        Command::Report { records, out } => {
            let records = records.clone().unwrap_or_else(|| cli.workspace.join("records"));
            let out = out.clone().unwrap_or_else(|| cli.workspace.join("reports"));
            cmd_report(&records, &out)
        }
        Command::VerifyOracle => cmd_verify(cli),
    }
}

fn append_manifest(workspace: &Path, entry: serde_json::Value) -> Result<()> {
    fs::create_dir_all(workspace)?;
    let mut f = OpenOptions::new().create(true).append(true).open(workspace.join("manifest.jsonl"))?;
    writeln!(f, "{entry}")?;
    Ok(())
}

fn cmd_gen(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let spec = &cfg.experiment.corpus;
    let dir = corpus_dir(&cli.workspace, spec);
    let fresh = !dir.join("spec.json").exists();
    let data = Dataset::load_or_generate(spec, &dir)?;
    if fresh {
        append_manifest(
            &cli.workspace,
            json!({ "command": "gen", "corpus": dir, "tasks": data.corpus.len(), "tool_version": env!("CARGO_PKG_VERSION") }),
        )?;
        eprintln!("generated {} task files", data.corpus.len());
    } else {
        eprintln!("corpus up to date");
    }
    println!("{}", dir.display());
    Ok(())
}

fn cmd_train(cli: &Cli, strategy: Option<Strategy>, target: Option<TaskId>) -> Result<()> {
    let cfg = load_config(cli)?;
    let visible: BTreeSet<TaskId> = match (strategy, target) {
        (None, None) => AtomicTask::ALL.iter().map(|&t| TaskId::Atomic(t)).collect(),
        (Some(s), Some(t)) => build_split(s, t)?.visible,
        _ => bail!("--strategy and --target go together"),
    };
    let exp = Experiment::new(cfg.experiment, Some(cli.workspace.clone()))?;
    for seed in cfg.seeds {
        let (key, summary) = exp.train_prompt_model(&visible, seed)?;
        eprintln!(
            "seed {seed}: {} steps, best valid EM {:.4}",
            summary.steps,
            summary.best_valid_em.unwrap_or(f64::NAN)
        );
        if let Some(p) = exp.checkpoint_path(&key) {
            println!("{}", p.display());
        }
    }
    Ok(())
}

enum Job {
    Run { method: Method, strategy: Strategy, target: TaskId, order: PipelineOrder, seed: u64 },
    Scaling { method: Method, n: usize, seed: u64 },
}

fn cmd_run(cli: &Cli, jobs: usize) -> Result<()> {
    let cfg = load_config(cli)?;
    if cfg.matrix.is_empty() {
        bail!("config declares no `run` or `scaling` lines");
    }
    let base = &cfg.experiment;
    let records_dir = cli.workspace.join("records");
    let mut queue = Vec::new();
    let (mut skipped, mut incompatible) = (0, Vec::new());
    for &seed in &cfg.seeds {
        for entry in &cfg.matrix {
            match entry {
                MatrixEntry::Run(spec) => {
                    if !compatible(spec.method, spec.strategy) {
                        incompatible.push(format!("{} {}", spec.method, spec.strategy));
                        continue;
                    }
                    let order = spec.order.unwrap_or(base.pipeline_order);
                    let hashed = ExperimentConfig { pipeline_order: order, ..base.clone() };
                    for &target in &spec.targets {
                        let hash = run_hash(&hashed, spec.method, Some(spec.strategy), Some(target), None);
                        if record_path(&records_dir, &hash, seed).exists() {
                            skipped += 1;
                        } else {
                            queue.push(Job::Run { method: spec.method, strategy: spec.strategy, target, order, seed });
                        }
                    }
                }
                MatrixEntry::Scaling(method) => {
                    let plan = ScalingPlan::new(&base.scaling)?;
                    for n in plan.points() {
                        let hash = run_hash(base, *method, None, None, Some(n));
                        if record_path(&records_dir, &hash, seed).exists() {
                            skipped += 1;
                        } else {
                            queue.push(Job::Scaling { method: *method, n, seed });
                        }
                    }
                }
            }
        }
    }
    incompatible.sort();
    incompatible.dedup();
    for pair in &incompatible {
        eprintln!("skipped {pair}: IncompatibleMethodStrategy");
    }
    let total = queue.len();
    let exp = Experiment::new(cfg.experiment.clone(), Some(cli.workspace.clone()))?;
    let plan = ScalingPlan::new(&cfg.experiment.scaling)?;
    let queue = Mutex::new(queue.into_iter());
    let written = Mutex::new(Vec::new());
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1) {
            s.spawn(|| loop {
                let Some(job) = queue.lock().expect("queue").next() else { break };
                let result = match job {
                    Job::Run { method, strategy, target, order, seed } => {
                        exp.run_with_order(method, strategy, target, seed, order)
                    }
                    Job::Scaling { method, n, seed } => exp.run_scaling_point(method, &plan, n, seed),
                };
                match result.and_then(|r| write_record(&records_dir, &r).map(|p| (r, p))) {
                    Ok((record, path)) => {
                        let mut w = written.lock().expect("written");
                        let entry = json!({
                            "command": "run",
                            "config_hash": record.config_hash,
                            "seed": record.seed,
                            "record": path,
                            "tool_version": record.tool_version,
                        });
                        if let Err(e) = append_manifest(&cli.workspace, entry) {
                            failures.lock().expect("failures").push(format!("{e:#}"));
                        }
                        println!("{}", path.display());
                        w.push(path);
                    }
                    Err(e) => failures.lock().expect("failures").push(e.to_string()),
                }
            });
        }
    });
    let written = written.into_inner().expect("written");
    let failures = failures.into_inner().expect("failures");
    eprintln!(
        "{} new, {skipped} skipped (complete), {} incompatible, {} failed of {total} queued",
        written.len(),
        incompatible.len(),
        failures.len()
    );
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("failed: {f}");
        }
        bail!("{} runs failed", failures.len());
    }
    Ok(())
}

fn cmd_report(records: &Path, out: &Path) -> Result<()> {
    let recs = read_records(records)?;
    let paths = emit_tables(&recs, out)?;
    eprintln!("{} records", recs.len());
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_verify(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let spec = &cfg.experiment.corpus;
    let data = Dataset::load_or_generate(spec, &corpus_dir(&cli.workspace, spec))?;
    let report = verify_corpus(&data.corpus, &data.lexicon);
    println!("{}", serde_json::to_string_pretty(&json!({
        "examples_checked": report.examples_checked,
        "structures_checked": report.structures_checked,
        "failures": report.failures.len(),
        "passed": report.passed(),
    }))?);
    for f in report.failures.iter().take(20) {
        eprintln!("failure: {f}");
    }
    if !report.passed() {
        bail!("oracle verification failed");
    }
    Ok(())
}
