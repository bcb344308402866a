//! `mhe`: run simulations, estimators, horizon computations and bound
//! verification from JSON configs.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when a
//! checked inequality is violated.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mhe_core::config::{load, EstimateConfig, ExperimentConfig, HasOutput, HorizonConfig, SimulateConfig};
use mhe_core::harness::{
    self, sweep_horizon, verify_fie_bound, verify_mhe_all, with_jobs, Experiment, Verification,
};
use mhe_core::system::{random_trajectory, validate_certificate, SystemModel};
use mhe_core::{build_cost, run_fie, run_mhe, CostSpec, EstimationProblem, Horizon};

#[derive(Parser)]
#[command(name = "mhe", version, about = "Moving-horizon and full-information estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one seeded trajectory and write it as CSV.
    Simulate(Common),
    /// Run FIE or MHE on a simulated trajectory and write the estimate trace.
    Estimate(Common),
    /// Compute a sufficient horizon and print the report as JSON.
    Horizon(Common),
    /// Monte-Carlo check of the FIE and MHE error bounds.
    Verify(Common),
    /// MHE bound checks over a list of horizons.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output file (simulate, estimate, horizon) or directory (verify, sweep).
    /// Overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

enum Failure {
    Usage(String),
    Violation(String),
}

impl From<mhe_core::Error> for Failure {
    fn from(e: mhe_core::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(c) => cmd_simulate(&c),
        Command::Estimate(c) => cmd_estimate(&c),
        Command::Horizon(c) => cmd_horizon(&c),
        Command::Verify(c) => cmd_verify(&c),
        Command::Sweep(c) => cmd_sweep(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Violation(msg)) => {
            eprintln!("violation: {msg}");
            ExitCode::from(2)
        }
    }
}

fn jobs(c: &Common) -> usize {
    c.jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn output_path(c: &Common, cfg: &impl HasOutput) -> Option<PathBuf> {
    c.out.clone().or_else(|| cfg.output().map(Path::to_path_buf))
}

/// Writer for a file output, or stdout.
fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p)?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn out_dir(c: &Common, cfg: &ExperimentConfig) -> std::result::Result<PathBuf, Failure> {
    let dir = output_path(c, cfg)
        .ok_or_else(|| Failure::Usage("verify and sweep need an output directory (--out or config output)".into()))?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn cmd_simulate(c: &Common) -> Outcome {
    let mut cfg: SimulateConfig = load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let model = SystemModel::from_registry(&cfg.system, cfg.delta_w, cfg.delta_v)?;
    let mut rng = harness::stream_rng(cfg.seed, 0);
    let traj = random_trajectory(&model, &mut rng, cfg.x0.clone(), cfg.t_max, cfg.corner)?;
    traj.write_csv(sink(output_path(c, &cfg).as_deref())?)?;
    Ok(())
}

fn cmd_estimate(c: &Common) -> Outcome {
    let mut cfg: EstimateConfig = load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let model = SystemModel::from_registry(&cfg.system, cfg.delta_w, cfg.delta_v)?;
    let certificate = cfg.certificate.clone().unwrap_or_else(|| model.builtin().certificate());
    let cost = match &cfg.stage_cost {
        Some(rho) => CostSpec::new(rho.clone(), &certificate, cfg.cost_range, mhe_core::estimator::COST_CHECK_TAU)?,
        None => build_cost(&certificate, cfg.cost_range)?,
    };
    let mut rng = harness::stream_rng(cfg.seed, 0);
    let traj = random_trajectory(&model, &mut rng, cfg.x0.clone(), cfg.t_max, cfg.corner)?;
    let problem = EstimationProblem::new(model, certificate, cost, cfg.horizon, cfg.solver.clone())?;
    let trace = with_jobs(jobs(c), || match cfg.horizon {
        Horizon::Full => run_fie(&problem, &traj, &cfg.xbar0),
        Horizon::Fixed(_) => run_mhe(&problem, &traj, &cfg.xbar0),
    })??;
    trace.write_csv(sink(output_path(c, &cfg).as_deref())?)?;
    Ok(())
}

fn cmd_horizon(c: &Common) -> Outcome {
    let cfg: HorizonConfig = load(&c.config)?;
    let report = cfg.evaluate()?;
    let mut out = sink(output_path(c, &cfg).as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(mhe_core::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn experiment(c: &Common) -> std::result::Result<Experiment, Failure> {
    let mut cfg: ExperimentConfig = load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(Experiment::new(cfg)?)
}

fn write_checks(dir: &Path, name: &str, v: &Verification, cfg: &ExperimentConfig) -> Outcome {
    v.write_csv(BufWriter::new(File::create(dir.join(format!("{name}.csv")))?))?;
    let summary = v.summary(cfg);
    let text = serde_json::to_string_pretty(&summary).map_err(mhe_core::Error::from)?;
    fs::write(dir.join(format!("{name}_summary.json")), text + "\n")?;
    let cex = dir.join(format!("{name}_counterexample.json"));
    match &v.counterexample {
        Some(ce) => {
            let text = serde_json::to_string_pretty(ce).map_err(mhe_core::Error::from)?;
            fs::write(cex, text + "\n")?;
        }
        None if cex.exists() => fs::remove_file(cex)?,
        None => {}
    }
    Ok(())
}

fn report(name: &str, v: &Verification) -> Option<String> {
    let failures = v.failures();
    eprintln!("{name}: {} checks, {failures} violations", v.results.len());
    (failures > 0).then(|| format!("{name}: {failures} of {} checks violated", v.results.len()))
}

fn cmd_verify(c: &Common) -> Outcome {
    let exp = experiment(c)?;
    let dir = out_dir(c, &exp.config)?;
    let cfg = &exp.config;
    let (validation, fie, mhe) = with_jobs(jobs(c), || {
        let validation = validate_certificate(exp.model(), &exp.problem.certificate, cfg.runs, cfg.t_max, cfg.seed)?;
        let fie = verify_fie_bound(&exp)?;
        let mhe = verify_mhe_all(&exp)?;
        Ok::<_, mhe_core::Error>((validation, fie, mhe))
    })??;
    let text = serde_json::to_string_pretty(&validation).map_err(mhe_core::Error::from)?;
    fs::write(dir.join("certificate.json"), text + "\n")?;
    write_checks(&dir, "fie", &fie, cfg)?;
    write_checks(&dir, "mhe", &mhe, cfg)?;
    eprintln!(
        "certificate: {} pairs, {} violations",
        validation.pairs, validation.violations
    );
    let mut problems: Vec<String> = Vec::new();
    if !validation.passed() {
        problems.push(format!("certificate: {} of {} pairs violated", validation.violations, validation.pairs));
    }
    problems.extend(report("fie", &fie));
    problems.extend(report("mhe", &mhe));
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Violation(problems.join("; ")))
    }
}

fn cmd_sweep(c: &Common) -> Outcome {
    let exp = experiment(c)?;
    let dir = out_dir(c, &exp.config)?;
    let (rows, checks) = with_jobs(jobs(c), || sweep_horizon(&exp))??;
    harness::write_sweep_csv(&rows, BufWriter::new(File::create(dir.join("sweep.csv"))?))?;
    write_checks(&dir, "mhe", &checks, &exp.config)?;
    match report("sweep", &checks) {
        None => Ok(()),
        Some(msg) => Err(Failure::Violation(msg)),
    }
}
