//! `ope`: solve, abstract, simulate, estimate, generate, experiment, verify.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ope_core::abstraction::{refine_backward, refine_forward, two_step, Partition};
use ope_core::error::{OpeError, Result};
use ope_core::estimators::{
    drl_with, fqe, mis_with, sis_with, DrlOptions, EstimateResult, SisOptions, DEFAULT_SMOOTHING,
    FQE_MAX_ITERS, FQE_TOL,
};
use ope_core::experiment::{
    derive_seed, load_experiment_config, resolve_output_path, run_experiment, summary_path,
    verify_suite, write_results_csv, write_summary_csv,
};
use ope_core::generators::{
    lift_backward_irrelevant, lift_model_irrelevant, lift_policy, random_mdp, random_policy,
    three_group_toy,
};
use ope_core::io::{
    load_dataset, load_mdp, load_partition, load_policy, save_dataset, save_mdp, save_partition,
    save_policy, write_json, SolveFile,
};
use ope_core::sim::{sample_trajectories, InitMode};
use ope_core::solver::{policy_value, SolveCache};

#[derive(Parser)]
#[command(name = "ope", version, about = "Exact tabular off-policy evaluation with state abstractions")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the exact evaluation bundle for a target/behavior pair.
    Solve(SolveArgs),
    /// Refine a state partition and write it with its audit trail.
    Abstract(AbstractArgs),
    /// Sample an offline dataset under the behavior policy.
    Simulate(SimulateArgs),
    /// Run one estimator on a dataset.
    Estimate(EstimateArgs),
    /// Write a generated model family to files.
    Generate(GenerateArgs),
    /// Run a sweep from a config file and write result tables.
    Experiment(ExperimentArgs),
    /// Run the exact verification suite on random constructions.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    pi: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Forward,
    Backward,
    TwoStep,
}

#[derive(Args)]
struct AbstractArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    pi: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Partition output path.
    #[arg(long)]
    out: PathBuf,
    /// Audit output path.
    #[arg(long)]
    audit: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Rho0,
    Stationary,
}

impl From<Init> for InitMode {
    fn from(value: Init) -> Self {
        match value {
            Init::Rho0 => InitMode::Rho0,
            Init::Stationary => InitMode::Stationary,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    horizon: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "rho0")]
    init: Init,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Fqe,
    Sis,
    Mis,
    Drl,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    pi: PathBuf,
    /// Optional model for an oracle comparison (also supplies gamma).
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// "none" for the identity partition, or a partition file path.
    #[arg(long, default_value = "none")]
    partition: String,
    /// Required unless --mdp supplies it.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SMOOTHING)]
    smoothing: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Random,
    LiftForward,
    LiftBackward,
    Toy,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_prefix: String,
    #[arg(long, default_value_t = 6)]
    n_states: usize,
    #[arg(long, default_value_t = 2)]
    n_actions: usize,
    #[arg(long, default_value_t = 1.0)]
    concentration: f64,
    #[arg(long, default_value_t = 1.0)]
    reward_scale: f64,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    /// Noise copies per base state for the lift kinds.
    #[arg(long, default_value_t = 2)]
    n_noise: usize,
    /// Toy group sizes, comma separated.
    #[arg(long, default_value = "2,2,2", value_parser = parse_sizes)]
    sizes: (usize, usize, usize),
}

fn parse_sizes(text: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<usize> =
        text.split(',').map(|p| p.trim().parse().map_err(|e| format!("{e}"))).collect::<std::result::Result<_, _>>()?;
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated sizes, got {text:?}"));
    }
    Ok((parts[0], parts[1], parts[2]))
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Results path; defaults to the config's output field.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 20)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Serialize)]
struct EstimateOutput {
    #[serde(flatten)]
    result: EstimateResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_j: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_error: Option<f64>,
}

#[derive(Serialize)]
struct TwoStepAudit<'a> {
    forward: &'a ope_core::abstraction::RefinementAudit,
    backward: &'a ope_core::abstraction::RefinementAudit,
    intermediate_blocks: usize,
    final_blocks: usize,
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn run_solve(args: SolveArgs) -> Result<()> {
    let mdp = load_mdp(&args.mdp)?;
    let pi = load_policy(&args.pi)?;
    let b = load_policy(&args.b)?;
    let cache = SolveCache::compute(&mdp, &pi, &b)?;
    ensure_parent(&args.out)?;
    write_json(&args.out, &SolveFile::from_cache(&cache))?;
    println!("j_pi {:.12}", cache.j_pi);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_abstract(args: AbstractArgs) -> Result<()> {
    let mdp = load_mdp(&args.mdp)?;
    let pi = load_policy(&args.pi)?;
    let b = load_policy(&args.b)?;
    ensure_parent(&args.out)?;
    ensure_parent(&args.audit)?;
    let part = match args.mode {
        Mode::Forward => {
            let (part, audit) = refine_forward(&mdp, &pi, args.tol);
            write_json(&args.audit, &audit)?;
            part
        }
        Mode::Backward => {
            let (part, audit) = refine_backward(&mdp, &pi, &b, args.tol)?;
            write_json(&args.audit, &audit)?;
            part
        }
        Mode::TwoStep => {
            let result = two_step(&mdp, &pi, &b, args.tol)?;
            write_json(
                &args.audit,
                &TwoStepAudit {
                    forward: &result.forward_audit,
                    backward: &result.backward_audit,
                    intermediate_blocks: result.forward.n_blocks(),
                    final_blocks: result.composed.n_blocks(),
                },
            )?;
            result.composed
        }
    };
    save_partition(&args.out, &part)?;
    println!("{} states -> {} blocks", part.n_states(), part.n_blocks());
    println!("wrote {} and {}", args.out.display(), args.audit.display());
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let mdp = load_mdp(&args.mdp)?;
    let b = load_policy(&args.b)?;
    let data = sample_trajectories(&mdp, &b, args.n, args.horizon, args.seed, args.init.into())?;
    ensure_parent(&args.out)?;
    save_dataset(&args.out, &data)?;
    println!("wrote {} trajectories x {} steps to {}", args.n, args.horizon, args.out.display());
    Ok(())
}

fn run_estimate(args: EstimateArgs) -> Result<()> {
    let data = load_dataset(&args.data)?;
    let pi = load_policy(&args.pi)?;
    let mdp = args.mdp.as_ref().map(load_mdp).transpose()?;
    let gamma = match (args.gamma, &mdp) {
        (Some(g), _) => g,
        (None, Some(m)) => m.gamma,
        (None, None) => {
            return Err(OpeError::InvalidArgument(
                "--gamma is required when no --mdp is given".into(),
            ))
        }
    };
    let part = if args.partition == "none" {
        Partition::identity(pi.n_states())
    } else {
        load_partition(&args.partition)?
    };
    let result = match args.method {
        MethodArg::Fqe => fqe(&data, &pi, &part, gamma, FQE_MAX_ITERS, FQE_TOL)?,
        MethodArg::Sis => sis_with(
            &data,
            &pi,
            &part,
            gamma,
            &SisOptions { smoothing: args.smoothing, behavior: None },
        )?,
        MethodArg::Mis => mis_with(&data, &pi, &part, gamma, args.smoothing)?,
        MethodArg::Drl => drl_with(
            &data,
            &pi,
            &part,
            gamma,
            DrlOptions { smoothing: args.smoothing, fqe_max_iters: FQE_MAX_ITERS, fqe_tol: FQE_TOL },
        )?,
    };
    let oracle_j = mdp.as_ref().map(|m| policy_value(m, &pi)).transpose()?;
    let oracle_error = oracle_j.map(|j| result.estimate - j);
    println!("{} on {}: estimate {:.6}", result.method, result.abstraction, result.estimate);
    if let (Some(j), Some(err)) = (oracle_j, oracle_error) {
        println!("oracle j_pi {j:.6}, error {err:+.6}");
    }
    ensure_parent(&args.out)?;
    write_json(&args.out, &EstimateOutput { result, oracle_j, oracle_error })?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_generate(args: GenerateArgs) -> Result<()> {
    let prefix = &args.out_prefix;
    let path = |suffix: &str| PathBuf::from(format!("{prefix}.{suffix}.json"));
    ensure_parent(&path("mdp"))?;
    let mut written: Vec<PathBuf> = Vec::new();
    match args.kind {
        Kind::Random => {
            let mdp = random_mdp(
                args.n_states,
                args.n_actions,
                derive_seed(args.seed, &[0]),
                args.concentration,
                args.reward_scale,
                args.gamma,
            )?;
            let pi = random_policy(args.n_states, args.n_actions, derive_seed(args.seed, &[1]), args.concentration)?;
            let b = random_policy(args.n_states, args.n_actions, derive_seed(args.seed, &[2]), args.concentration)?;
            save_mdp(path("mdp"), &mdp)?;
            save_policy(path("pi"), &pi)?;
            save_policy(path("b"), &b)?;
            written.extend([path("mdp"), path("pi"), path("b")]);
        }
        Kind::LiftForward => {
            let base = random_mdp(
                args.n_states,
                args.n_actions,
                derive_seed(args.seed, &[0]),
                args.concentration,
                args.reward_scale,
                args.gamma,
            )?;
            let base_pi =
                random_policy(args.n_states, args.n_actions, derive_seed(args.seed, &[1]), args.concentration)?;
            let base_b =
                random_policy(args.n_states, args.n_actions, derive_seed(args.seed, &[2]), args.concentration)?;
            let (mdp, pi, part) = lift_model_irrelevant(&base, &base_pi, args.n_noise, derive_seed(args.seed, &[3]))?;
            save_mdp(path("mdp"), &mdp)?;
            save_policy(path("pi"), &pi)?;
            save_policy(path("b"), &lift_policy(&base_b, args.n_noise))?;
            save_partition(path("partition"), &part)?;
            written.extend([path("mdp"), path("pi"), path("b"), path("partition")]);
        }
        Kind::LiftBackward => {
            let base = random_mdp(
                args.n_states,
                args.n_actions,
                derive_seed(args.seed, &[0]),
                args.concentration,
                args.reward_scale,
                args.gamma,
            )?;
            let base_pi =
                random_policy(args.n_states, args.n_actions, derive_seed(args.seed, &[1]), args.concentration)?;
            let base_b =
                random_policy(args.n_states, args.n_actions, derive_seed(args.seed, &[2]), args.concentration)?;
            let (mdp, pi, b, part) =
                lift_backward_irrelevant(&base, &base_pi, &base_b, args.n_noise, derive_seed(args.seed, &[3]))?;
            save_mdp(path("mdp"), &mdp)?;
            save_policy(path("pi"), &pi)?;
            save_policy(path("b"), &b)?;
            save_partition(path("partition"), &part)?;
            written.extend([path("mdp"), path("pi"), path("b"), path("partition")]);
        }
        Kind::Toy => {
            let toy = three_group_toy(args.sizes, args.seed)?;
            save_mdp(path("mdp"), &toy.mdp)?;
            save_policy(path("pi"), &toy.pi)?;
            save_policy(path("b"), &toy.b)?;
            save_partition(path("forward"), &toy.forward)?;
            save_partition(path("backward"), &toy.backward)?;
            save_partition(path("two-step"), &toy.two_step)?;
            written.extend([
                path("mdp"),
                path("pi"),
                path("b"),
                path("forward"),
                path("backward"),
                path("two-step"),
            ]);
        }
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run_experiment_cmd(args: ExperimentArgs) -> Result<()> {
    let cfg = load_experiment_config(&args.config)?;
    let results_path = resolve_output_path(&args.out.clone().unwrap_or_else(|| cfg.output.clone()));
    let out = run_experiment(&cfg, args.jobs)?;
    ensure_parent(&results_path)?;
    let summary_out = summary_path(&results_path);
    write_results_csv(std::fs::File::create(&results_path)?, &out.rows)?;
    write_summary_csv(std::fs::File::create(&summary_out)?, &out.summary)?;
    let failures: usize = out.summary.iter().map(|s| s.failures).sum();
    println!(
        "wrote {} rows to {} and {} summaries to {} ({} failed cells)",
        out.rows.len(),
        results_path.display(),
        out.summary.len(),
        summary_out.display(),
        failures,
    );
    Ok(())
}

fn run_verify(args: VerifyArgs) -> Result<i32> {
    let report = verify_suite(args.seed, args.cases, args.tol)?;
    print!("{}", report.render());
    Ok(if report.passed { 0 } else { 1 })
}

fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Solve(a) => run_solve(a).map(|()| 0),
        Command::Abstract(a) => run_abstract(a).map(|()| 0),
        Command::Simulate(a) => run_simulate(a).map(|()| 0),
        Command::Estimate(a) => run_estimate(a).map(|()| 0),
        Command::Generate(a) => run_generate(a).map(|()| 0),
        Command::Experiment(a) => run_experiment_cmd(a).map(|()| 0),
        Command::Verify(a) => run_verify(a),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
