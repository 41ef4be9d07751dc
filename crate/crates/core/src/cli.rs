//! Command-line front end. Exit codes: 0 success, 1 a check failed, 2 usage, config
//! or I/O error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data_io::{read_data_csv, write_data_csv, write_sidecar, DataSidecar};
use crate::equilibria::{optimal_reachable_equilibrium, EquilibriumOptions};
use crate::error::{Error, Result};
use crate::hankel::{max_pe_order, persistence_of_excitation};
use crate::report::{self, LoadedLog, MetricsFile};
use crate::sim::{self, experiment_data, verify_guarantees, GuaranteeTolerances};

pub const OUT_DIR_ENV: &str = "DDTMPC_OUT_DIR";
pub const DATA_CSV: &str = "data.csv";
pub const DATA_SIDECAR: &str = "data.json";
pub const EQUILIBRIUM_JSON: &str = "equilibrium.json";
pub const PLOT_DIR: &str = "plot";

#[derive(Debug, Parser)]
#[command(
    name = "ddtmpc",
    version,
    about = "Data-driven tracking MPC from one measured trajectory"
)]
pub struct Cli {
    /// Print only errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the offline experiment and write the data CSV and its sidecar.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = OUT_DIR_ENV)]
        out: Option<PathBuf>,
        /// Overrides the data seed of the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Checks persistence of excitation of the inputs in a data CSV.
    CheckPe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        order: usize,
    },
    /// Solves the optimal reachable equilibrium for every scheduled target.
    Equilibrium {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = OUT_DIR_ENV)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Runs the closed loop and checks recursive feasibility, constraints and convergence.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = OUT_DIR_ENV)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Writes plot series from a full `log.json`.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Outcome {
    Pass,
    CheckFailed(String),
}

struct Printer {
    quiet: bool,
}

impl Printer {
    fn line(&self, s: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", s.as_ref());
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let out = Printer { quiet: cli.quiet };
    match dispatch(cli.command, &out) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command, out: &Printer) -> Result<Outcome> {
    match cmd {
        Command::GenerateData {
            config,
            out: dir,
            seed,
        } => generate_data(&config, dir, seed, out),
        Command::CheckPe { data, order } => check_pe(&data, order, out),
        Command::Equilibrium {
            config,
            out: dir,
            seed,
        } => equilibrium(&config, dir, seed, out),
        Command::Run {
            config,
            out: dir,
            seed,
        } => run(&config, dir, seed, out),
        Command::Report { log, out: dir } => report_cmd(&log, &dir, out),
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    Ok(cfg)
}

/// `--out` (or the environment variable), then the config, then `out/<name>`.
fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| Path::new("out").join(&cfg.name))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("serializable");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn generate_data(
    config: &Path,
    dir: Option<PathBuf>,
    seed: Option<u64>,
    out: &Printer,
) -> Result<Outcome> {
    let cfg = load(config, seed)?;
    let exp = cfg.experiment()?;
    let data = experiment_data(&exp)?;
    let dir = out_dir(dir, &cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_data_csv(&dir.join(DATA_CSV), &data)?;
    let generator = format!("uniform inputs on the configured box, plant {}", cfg.name);
    write_sidecar(
        &dir.join(DATA_SIDECAR),
        &DataSidecar::for_data(&data, Some(cfg.data.seed), generator),
    )?;
    out.line(format!(
        "wrote {} (N = {}, m = {}, p = {})",
        dir.join(DATA_CSV).display(),
        data.len(),
        data.m(),
        data.p()
    ));
    out.line(format!("max PE order: {}", max_pe_order(data.u())));
    Ok(Outcome::Pass)
}

fn check_pe(path: &Path, order: usize, out: &Printer) -> Result<Outcome> {
    let data = read_data_csv(path)?;
    let rep = persistence_of_excitation(data.u(), order)?;
    out.line(format!("order: {order}"));
    out.line(format!("rank: {} (required {})", rep.rank, rep.required));
    out.line(format!("singular-value margin: {:.3e}", rep.margin));
    if rep.structurally_impossible {
        out.line(format!(
            "structurally impossible: N = {} < (m+1)L-1 = {}",
            data.len(),
            (data.m() + 1) * order - 1
        ));
    }
    if rep.is_exciting() {
        out.line("PASS");
        Ok(Outcome::Pass)
    } else {
        out.line("FAIL");
        Ok(Outcome::CheckFailed(format!(
            "inputs are not persistently exciting of order {order} (rank {} < {})",
            rep.rank, rep.required
        )))
    }
}

#[derive(Serialize)]
struct EquilibriumRecord {
    start: usize,
    target_y: Vec<f64>,
    u_s: Vec<f64>,
    y_s: Vec<f64>,
    cost: f64,
    iterations: usize,
}

fn equilibrium(
    config: &Path,
    dir: Option<PathBuf>,
    seed: Option<u64>,
    out: &Printer,
) -> Result<Outcome> {
    let cfg = load(config, seed)?;
    let exp = cfg.experiment()?;
    let data = experiment_data(&exp)?;
    let mpc = &exp.mpc;
    let opts = EquilibriumOptions {
        ridge: 0.0,
        solver: mpc.solver.clone(),
    };
    let mut records = Vec::new();
    for e in &exp.schedule {
        let sol = optimal_reachable_equilibrium(
            &data,
            &e.target,
            &mpc.s,
            &mpc.t,
            &mpc.u_s_box,
            &mpc.y_s_box,
            mpc.order,
            &opts,
        )?;
        out.line(format!(
            "t >= {}: target y {} -> u_s {}, y_s {}, cost {:.6e}",
            e.start,
            fmt_vec(e.target.y.as_slice()),
            fmt_vec(sol.u_s.as_slice()),
            fmt_vec(sol.y_s.as_slice()),
            sol.cost
        ));
        records.push(EquilibriumRecord {
            start: e.start,
            target_y: e.target.y.iter().copied().collect(),
            u_s: sol.u_s.iter().copied().collect(),
            y_s: sol.y_s.iter().copied().collect(),
            cost: sol.cost,
            iterations: sol.iterations,
        });
    }
    let dir = out_dir(dir, &cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_json(&dir.join(EQUILIBRIUM_JSON), &records)?;
    Ok(Outcome::Pass)
}

fn run(config: &Path, dir: Option<PathBuf>, seed: Option<u64>, out: &Printer) -> Result<Outcome> {
    let cfg = load(config, seed)?;
    let experiments = cfg.experiments()?;
    let base = out_dir(dir, &cfg);
    let mut results = if experiments.len() == 1 {
        let (name, exp) = &experiments[0];
        std::iter::once((name.clone(), sim::run(exp))).collect()
    } else {
        sim::run_sweep(&experiments)
    };

    let mut failures = Vec::new();
    for (name, exp) in &experiments {
        let (log, metrics) = results
            .remove(name)
            .expect("every experiment has a result")?;
        let tol = GuaranteeTolerances {
            band: exp.settling_band,
            check_cost_decrease: exp.mpc.alpha_reg == 0.0 && exp.mpc.order <= 2,
            ..GuaranteeTolerances::default()
        };
        let guarantees = verify_guarantees(&log, &metrics, &tol);
        let dir = if experiments.len() == 1 {
            base.clone()
        } else {
            base.join(name)
        };
        let file = MetricsFile {
            name: name.clone(),
            metrics,
            guarantees,
        };
        report::write_run(&dir, &log, &file)?;
        report::write_plot_data(&dir.join(PLOT_DIR), &log)?;
        let MetricsFile {
            metrics,
            guarantees,
            ..
        } = file;

        for item in &guarantees.items {
            out.line(format!(
                "{name}: {} {}: {}",
                if item.passed { "PASS" } else { "FAIL" },
                item.name,
                item.detail
            ));
        }
        let settle = metrics
            .settling_time
            .map_or_else(|| "not settled".to_string(), |t| t.to_string());
        out.line(format!(
            "{name}: final error {:.3e}, settling time {settle}, decay rate {:.4}; output in {}",
            metrics.final_tracking_error,
            metrics.decay.rate,
            dir.display()
        ));
        if !guarantees.passed() {
            failures.push(name.clone());
        }
    }
    if failures.is_empty() {
        Ok(Outcome::Pass)
    } else {
        Ok(Outcome::CheckFailed(format!(
            "closed-loop checks failed for {}",
            failures.join(", ")
        )))
    }
}

fn report_cmd(log_path: &Path, dir: &Path, out: &Printer) -> Result<Outcome> {
    let hint =
        "re-run with sim.prediction_instants set in the config and pass the resulting log.json";
    let log = match report::read_log(log_path)? {
        LoadedLog::Full(log) => log,
        LoadedLog::StepsOnly(_) => {
            return Ok(Outcome::CheckFailed(format!(
                "{} holds per-step records only, without stored predictions; {hint}",
                log_path.display()
            )))
        }
    };
    if log.predictions.is_empty() {
        return Ok(Outcome::CheckFailed(format!(
            "{} has no stored predictions; {hint}",
            log_path.display()
        )));
    }
    let files = report::write_plot_data(dir, &log)?;
    let instants: Vec<String> = log.predictions.iter().map(|p| p.t.to_string()).collect();
    out.line(format!(
        "wrote {} series to {} (predictions at t = {})",
        files.len(),
        dir.display(),
        instants.join(", ")
    ));
    Ok(Outcome::Pass)
}
