//! `tumorctl`: batch front end over the library.
//!
//! Exit codes: 0 success, 2 user or config error, 3 scope error, 4 numerical
//! stability error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::cost::{estimate_j_with_paths, CostReport};
use crate::error::{Error, Result};
use crate::hjb::{hjb_solve, richardson_truncation, value_vs_rollout, HjbPolicy, ValueCheck, ValueGrid};
use crate::measures::{wasserstein_1d, wasserstein_lp_with_plan, EmpiricalMeasure, LP_MAX_SUPPORT};
use crate::pic::{mppi_feedback, mppi_plan, PlanDiagnostics};
use crate::policy::{parse_simple, Policy};
use crate::rng::SeedSpec;

#[derive(Debug, Parser)]
#[command(name = "tumorctl", version, about = "Tumor dosing control experiments")]
pub struct Cli {
    /// Worker threads (defaults to all cores); results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides io.out_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides seed.master_seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a config key, e.g. `--set model.sigma_g=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo paths of one policy: per-path CSVs and a cost summary.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// zero | constant:<v> | threshold:<x2*>,<lo>,<hi> | hjb:<header.json> | mppi
        #[arg(long)]
        policy: Option<String>,
    },
    /// Open-loop MPPI plan plus a receding-horizon feedback run.
    Control {
        #[command(flatten)]
        common: Common,
    },
    /// Solve the HJB oracle, export the value grid and check it by Monte Carlo.
    Hjb {
        #[command(flatten)]
        common: Common,
    },
    /// Paired-seed Monte Carlo comparison of several policies.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Policy to evaluate; repeat for several (default: zero and mppi).
        #[arg(long = "policy")]
        policies: Vec<String>,
    },
    /// Wasserstein distance between two measure CSV files.
    Wasserstein {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        rho: f64,
        /// Include the optimal coupling in the output.
        #[arg(long)]
        plan: bool,
        /// Also write the JSON to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Scope(_) => 3,
        Error::Stability(_) => 4,
        _ => 2,
    }
}

/// Parse arguments, run, print any error and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidInput("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { common, policy } => {
            let (cfg, out) = prepare(&common)?;
            cmd_simulate(&cfg, policy.as_deref(), &out)
        }
        Command::Control { common } => {
            let (cfg, out) = prepare(&common)?;
            cmd_control(&cfg, &out)
        }
        Command::Hjb { common } => {
            let (cfg, out) = prepare(&common)?;
            cmd_hjb(&cfg, &out)
        }
        Command::Evaluate { common, policies } => {
            let (cfg, out) = prepare(&common)?;
            cmd_evaluate(&cfg, &policies, &out)
        }
        Command::Wasserstein { a, b, rho, plan, out } => {
            let json = cmd_wasserstein(&a, &b, rho, plan)?;
            print!("{json}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("wasserstein.json"), json)?;
            }
            Ok(())
        }
    }
}

fn prepare(c: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p, &c.overrides)?,
        None => RunConfig::from_toml_str("", &c.overrides)?,
    };
    if let Some(s) = c.seed {
        cfg.seed.master_seed = s;
    }
    if let Some(o) = &c.out {
        cfg.io.out_dir = o.clone();
    }
    std::fs::create_dir_all(&cfg.io.out_dir)?;
    let out = cfg.io.out_dir.clone();
    Ok((cfg, out))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

/// Resolve a policy name, loading value grids for `hjb:<file>`.
pub fn resolve_policy(spec: &str, cfg: &RunConfig) -> Result<Policy> {
    if let Some(file) = spec.trim().strip_prefix("hjb:") {
        let vg = ValueGrid::load(Path::new(file.trim()))?;
        return Ok(Policy::Hjb(Arc::new(HjbPolicy::new(vg))));
    }
    parse_simple(spec, &cfg.pic)
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    run_label: &'a str,
    policy: String,
    coupling: String,
    report: CostReport,
}

pub fn cmd_simulate(cfg: &RunConfig, policy: Option<&str>, out: &Path) -> Result<()> {
    let spec = policy.unwrap_or(&cfg.experiment.policy);
    let pol = resolve_policy(spec, cfg)?;
    let coupling = cfg.coupling_kind();
    let (report, paths) = estimate_j_with_paths(
        &cfg.model,
        &pol,
        cfg.initial_state()?,
        &cfg.grid,
        &coupling,
        cfg.experiment.n_samples,
        cfg.seed.master_seed,
    )?;
    if cfg.experiment.csv_trajectories {
        for (i, tr) in paths.iter().enumerate() {
            tr.save_csv(&out.join(format!("trajectory_{i:05}.csv")))?;
        }
    }
    let summary = SimulateSummary { run_label: &cfg.io.run_label, policy: pol.to_string(), coupling: coupling.to_string(), report };
    write_json(&out.join("summary.json"), &summary)
}

#[derive(Serialize)]
struct ControlSummary<'a> {
    run_label: &'a str,
    theta: f64,
    plan: PlanDiagnostics,
    feedback_total_cost: f64,
    feedback_terminal: crate::model::TerminalClass,
}

pub fn cmd_control(cfg: &RunConfig, out: &Path) -> Result<()> {
    let st0 = cfg.initial_state()?;
    let coupling = cfg.coupling_kind();
    let theta = coupling.evaluate(std::iter::once(st0));
    let seed = SeedSpec::new(cfg.seed.master_seed, 0);
    let plan_grid = cfg.grid.truncated(cfg.grid.k_steps.min(cfg.pic.k_steps));
    let (plan, diag) = mppi_plan(&cfg.model, st0, &plan_grid, &cfg.pic, theta, seed.child(0))?;
    plan.save_csv(&plan_grid, &out.join("plan.csv"))?;
    let fb = mppi_feedback(&cfg.model, st0, &cfg.grid, &cfg.pic, &coupling, seed)?;
    fb.save_csv(&out.join("feedback.csv"))?;
    let summary = ControlSummary {
        run_label: &cfg.io.run_label,
        theta: theta.value,
        plan: diag,
        feedback_total_cost: fb.total_cost,
        feedback_terminal: fb.terminal,
    };
    write_json(&out.join("diagnostics.json"), &summary)
}

#[derive(Serialize)]
struct HjbSummary<'a> {
    run_label: &'a str,
    nx1: usize,
    nx2: usize,
    substeps: usize,
    check: ValueCheck,
    richardson_truncation: Option<f64>,
    bound_violations: usize,
}

pub fn cmd_hjb(cfg: &RunConfig, out: &Path) -> Result<()> {
    let coupling = cfg.coupling_kind();
    if !coupling.is_zero() {
        return Err(Error::Scope(format!(
            "oracle valid only for frozen mean field (coupling `zero`), got `{coupling}`"
        )));
    }
    let st0 = cfg.initial_state()?;
    let vg = hjb_solve(&cfg.model, &cfg.grid, &cfg.hjb)?;
    vg.save(out, "value_grid")?;
    let check = value_vs_rollout(&cfg.model, &vg, st0, cfg.experiment.n_samples, &coupling, cfg.seed.master_seed)?;
    let odd = (cfg.hjb.nx1 - 1).is_multiple_of(2) && (cfg.hjb.nx2 - 1).is_multiple_of(2) && cfg.hjb.nx1 >= 31 && cfg.hjb.nx2 >= 31;
    let trunc = if odd { Some(richardson_truncation(&cfg.model, &cfg.grid, &cfg.hjb, st0, Some(&vg))?) } else { None };
    let hi = cfg.model.failure_penalty_m + (cfg.model.u_max + cfg.model.stabilization_weight_e) * cfg.grid.horizon_t;
    let bound_violations = vg.values.iter().filter(|v| !(**v >= 0.0 && **v <= hi)).count();
    let summary = HjbSummary {
        run_label: &cfg.io.run_label,
        nx1: vg.nx1,
        nx2: vg.nx2,
        substeps: vg.substeps,
        check,
        richardson_truncation: trunc,
        bound_violations,
    };
    write_json(&out.join("hjb_report.json"), &summary)
}

#[derive(Serialize)]
struct PolicyEval {
    policy: String,
    report: CostReport,
    /// Mean of this policy's cost minus the first policy's, path by path.
    paired_difference: f64,
    paired_std_error: f64,
}

pub fn cmd_evaluate(cfg: &RunConfig, policies: &[String], out: &Path) -> Result<()> {
    let specs: Vec<String> = if policies.is_empty() { vec!["zero".into(), "mppi".into()] } else { policies.to_vec() };
    let coupling = cfg.coupling_kind();
    let st0 = cfg.initial_state()?;
    let mut baseline: Option<Vec<f64>> = None;
    let mut rows = Vec::new();
    for spec in &specs {
        let pol = resolve_policy(spec, cfg)?;
        let (report, paths) = estimate_j_with_paths(
            &cfg.model,
            &pol,
            st0,
            &cfg.grid,
            &coupling,
            cfg.experiment.n_samples,
            cfg.seed.master_seed,
        )?;
        let costs: Vec<f64> = paths.iter().map(|t| t.total_cost).collect();
        let base = baseline.get_or_insert_with(|| costs.clone());
        let diffs: Vec<f64> = costs.iter().zip(base.iter()).map(|(a, b)| a - b).collect();
        let (d, se) = crate::cost::mean_and_std_error(&diffs);
        rows.push(PolicyEval { policy: pol.to_string(), report, paired_difference: d, paired_std_error: se });
    }
    write_json(&out.join("evaluation.json"), &rows)
}

#[derive(Serialize)]
struct WassersteinOut {
    rho: f64,
    distance: f64,
    method: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan: Option<Vec<(usize, usize, f64)>>,
}

fn read_measure(path: &Path) -> Result<EmpiricalMeasure> {
    let f = std::fs::File::open(path).map_err(|e| Error::Parse(format!("cannot open {}: {e}", path.display())))?;
    EmpiricalMeasure::read_csv(std::io::BufReader::new(f)).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// JSON text with the distance (and on request the coupling).
pub fn cmd_wasserstein(a: &Path, b: &Path, rho: f64, with_plan: bool) -> Result<String> {
    let mu = read_measure(a)?;
    let nu = read_measure(b)?;
    let small = mu.len() <= LP_MAX_SUPPORT && nu.len() <= LP_MAX_SUPPORT;
    let result = if small || with_plan {
        let sol = wasserstein_lp_with_plan(rho, &mu, &nu)?;
        WassersteinOut { rho, distance: sol.distance, method: "lp", plan: with_plan.then_some(sol.plan.flows) }
    } else {
        WassersteinOut { rho, distance: wasserstein_1d(rho, &mu, &nu)?, method: "quantile", plan: None }
    };
    let mut s = serde_json::to_string_pretty(&result)?;
    s.push('\n');
    Ok(s)
}
