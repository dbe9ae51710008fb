//! Command-line front end. `cmfl <subcommand> [flags]`; flags override
//! values from `--config`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{Algorithm, ConfigFile, Mode, RunConfig};
use crate::error::{Error, Result};
use crate::fedops::Metric;
use crate::matching::{random_descent_instance, verify_descent_contraction};
use crate::orchestrator::{self, RunSummary};
use crate::report;

/// Exit code for configuration and usage errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for failures while running.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "cmfl", version, about = "Concept matching for federated continual learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its CSV and JSON.
    Run(RunArgs),
    /// Run concept matching and the single-model baseline on the same seed.
    Compare(RunArgs),
    /// Run the Cartesian product of the config's sweep axes.
    Sweep(RunArgs),
    /// Check step and gradient contraction of gradient descent on random
    /// SPD quadratics.
    VerifyTheorem(TheoremArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub clustering: Option<Algorithm>,
    #[arg(long)]
    pub distance: Option<Metric>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TheoremArgs {
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Largest problem dimension; each trial draws its size from 1..=max-dim.
    #[arg(long, default_value_t = 20)]
    pub max_dim: usize,
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e),
            other => Failure::Runtime(other),
        }
    }
}

struct Resolved {
    run: RunConfig,
    out_dir: PathBuf,
    sweep: crate::config::SweepAxes,
}

fn resolve(args: &RunArgs) -> std::result::Result<Resolved, Failure> {
    let file = match &args.config {
        Some(path) => ConfigFile::load(path).map_err(|e| match e {
            Error::Io(io) => Failure::Config(Error::config(
                "--config",
                format!("cannot read {}: {io}", path.display()),
            )),
            other => Failure::from(other),
        })?,
        None => ConfigFile::default(),
    };
    let mut run = file.run;
    if let Some(seed) = args.seed {
        run.seed = seed;
    }
    if let Some(mode) = args.mode {
        run.mode = mode;
    }
    if let Some(alg) = args.clustering {
        run.clustering.algorithm = alg;
    }
    if let Some(metric) = args.distance {
        run.distance = metric;
    }
    run.validate().map_err(Failure::from)?;
    let out_dir = args
        .out
        .clone()
        .or(file.out_dir)
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Resolved {
        run,
        out_dir,
        sweep: file.sweep,
    })
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Cm => "cm",
        Mode::Vanilla => "vanilla",
    }
}

fn describe(summary: &RunSummary) -> String {
    let mut line = format!(
        "{} seed {}: final weighted accuracy {:.4}",
        mode_name(summary.mode),
        summary.seed,
        summary.final_weighted_accuracy
    );
    if let (Some(ari), Some(cma)) = (summary.mean_ari, summary.concept_matching_accuracy) {
        line.push_str(&format!(", mean ARI {ari:.4}, concept matching accuracy {cma:.4}"));
    }
    line
}

fn cmd_run(args: &RunArgs) -> std::result::Result<(), Failure> {
    let r = resolve(args)?;
    let summary = orchestrator::run(r.run)?;
    let stem = format!("{}_seed{}", mode_name(summary.mode), summary.seed);
    let (csv, json) = report::write_run(&r.out_dir, &stem, &summary)?;
    println!("{}", describe(&summary));
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn cmd_compare(args: &RunArgs) -> std::result::Result<(), Failure> {
    let r = resolve(args)?;
    let mut cm_cfg = r.run.clone();
    cm_cfg.mode = Mode::Cm;
    let mut vanilla_cfg = r.run;
    vanilla_cfg.mode = Mode::Vanilla;
    let (cm, vanilla) = rayon::join(|| orchestrator::run(cm_cfg), || orchestrator::run(vanilla_cfg));
    let (cm, vanilla) = (cm?, vanilla?);
    let seed = cm.seed;
    report::write_run(&r.out_dir, &format!("cm_seed{seed}"), &cm)?;
    report::write_run(&r.out_dir, &format!("vanilla_seed{seed}"), &vanilla)?;
    let path = r.out_dir.join(format!("compare_seed{seed}.csv"));
    report::write_atomic(&path, report::compare_csv(&cm, &vanilla)?.as_bytes())?;
    println!("{}", describe(&cm));
    println!("{}", describe(&vanilla));
    println!(
        "gap {:+.2} points; wrote {}",
        100.0 * (cm.final_weighted_accuracy - vanilla.final_weighted_accuracy),
        path.display()
    );
    Ok(())
}

fn sweep_stem(cfg: &RunConfig) -> String {
    format!(
        "sweep_{}_n{}_scale{:+.2}_k{}_seed{}",
        mode_name(cfg.mode),
        cfg.n_clients,
        cfg.model.scale,
        cfg.n_concepts_configured,
        cfg.seed
    )
}

fn cmd_sweep(args: &RunArgs) -> std::result::Result<(), Failure> {
    let r = resolve(args)?;
    if r.sweep.is_empty() {
        return Err(Failure::Config(Error::config("sweep", "no sweep axes configured")));
    }
    let configs = r.sweep.expand(&r.run);
    for cfg in &configs {
        cfg.validate().map_err(Failure::from)?;
    }
    let summaries: Vec<RunSummary> = configs
        .into_par_iter()
        .map(orchestrator::run)
        .collect::<Result<_>>()?;
    for s in &summaries {
        report::write_run(&r.out_dir, &sweep_stem(&s.config), s)?;
        println!(
            "clients {:>3} scale {:+.2} k {}: {}",
            s.config.n_clients,
            s.config.model.scale,
            s.config.n_concepts_configured,
            describe(s)
        );
    }
    println!("wrote {} runs to {}", summaries.len(), r.out_dir.display());
    Ok(())
}

/// One row of the `verify-theorem` table.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremTrial {
    pub trial: usize,
    pub dim: usize,
    pub eta: f64,
    pub steps_contract: bool,
    pub grads_contract: bool,
}

pub fn theorem_trials(args: &TheoremArgs) -> Result<Vec<TheoremTrial>> {
    if args.max_dim == 0 || args.steps < 2 {
        return Err(Error::InvalidArgument("max-dim must be >= 1 and steps >= 2".into()));
    }
    (0..args.trials)
        .map(|trial| {
            let seed = crate::rng::derive_seed(args.seed, &[trial as u64]);
            let dim = 1 + (seed % args.max_dim as u64) as usize;
            let inst = random_descent_instance(dim, seed);
            let trace = verify_descent_contraction(&inst.quad, &inst.w0, inst.eta, args.steps)?;
            Ok(TheoremTrial {
                trial,
                dim,
                eta: inst.eta,
                steps_contract: trace.steps_contract,
                grads_contract: trace.grads_contract,
            })
        })
        .collect()
}

fn cmd_verify(args: &TheoremArgs) -> std::result::Result<(), Failure> {
    let trials = theorem_trials(args)?;
    println!("{:>5} {:>4} {:>10} {:>6} {:>6}", "trial", "dim", "eta", "steps", "grads");
    let mut passed = 0;
    for t in &trials {
        let ok = |b: bool| if b { "pass" } else { "FAIL" };
        println!(
            "{:>5} {:>4} {:>10.4e} {:>6} {:>6}",
            t.trial,
            t.dim,
            t.eta,
            ok(t.steps_contract),
            ok(t.grads_contract)
        );
        if t.steps_contract && t.grads_contract {
            passed += 1;
        }
    }
    println!("{passed}/{} pass", trials.len());
    if passed == trials.len() {
        Ok(())
    } else {
        Err(Failure::Runtime(Error::InvalidArgument(format!(
            "{} trials failed",
            trials.len() - passed
        ))))
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::VerifyTheorem(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Entry point for the binary: sets up logging from `RUST_LOG` (default
/// `error`) and runs with the process arguments.
pub fn main_from_env() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).try_init();
    run_with_args(std::env::args_os())
}
