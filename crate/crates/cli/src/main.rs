mod plots;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use uwnmpc::config::{self, ConfigFile};
use uwnmpc::gradcheck::{self, Fault};
use uwnmpc::mission::{self, MissionConfig};
use uwnmpc::{solver, Error, Execution, OcpSolution, Outcome, VehicleState};

/// Process exit status. Values are stable and documented in the README.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Ok = 0,
    Io = 1,
    Config = 2,
    Breach = 3,
    SolverFailure = 4,
    Timeout = 5,
    GradcheckFailed = 6,
}

struct Failure {
    status: Status,
    message: String,
}

impl Failure {
    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            status: Status::Io,
            message: format!("{}: {e}", path.display()),
        }
    }
}

#[derive(Parser)]
#[command(name = "uwnmpc", version, about = "Underwater vehicle NMPC: missions, single solves and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Mission config (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Seed recorded in every artifact and used by any randomized step.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop mission and write the log, summary and plot data.
    Simulate(Common),
    /// Solve a single OCP from the mission's initial state.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Waypoint index used as the target.
        #[arg(long, default_value_t = 0)]
        waypoint: usize,
        /// Start the solve at the target instead of the initial state.
        #[arg(long)]
        from_target: bool,
    },
    /// Compare analytic derivatives with central finite differences.
    Gradcheck {
        #[arg(long, short, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt a Jacobian entry to check that the suite notices.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Parse and validate a config without running anything.
    ValidateConfig {
        #[arg(long, short)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("UWNMPC_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(common) => simulate(&common),
        Command::Solve {
            common,
            waypoint,
            from_target,
        } => solve(&common, waypoint, from_target),
        Command::Gradcheck { out, seed, inject_fault } => run_gradcheck(&out, seed, inject_fault),
        Command::ValidateConfig { config } => load(&config, 0).map(|(_, _, hash)| {
            println!("ok {hash}");
            Status::Ok
        }),
    };
    match result {
        Ok(status) => ExitCode::from(status as u8),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.status as u8)
        }
    }
}

/// Loads and validates a config, anchoring errors to a line of the file.
fn load(path: &Path, seed: u64) -> Result<(ConfigFile, MissionConfig, String), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let anchored = |e: Error| {
        let message = match &e {
            Error::Parse { line, message, .. } => format!("{}:{line}: {message}", path.display()),
            Error::Config { path: key, .. } => match config::locate(&text, key) {
                Some(line) => format!("{}:{line}: {e}", path.display()),
                None => format!("{}: {e}", path.display()),
            },
            Error::Io { .. } => return Failure {
                status: Status::Io,
                message: e.to_string(),
            },
            _ => format!("{}: {e}", path.display()),
        };
        Failure {
            status: Status::Config,
            message,
        }
    };
    let file = ConfigFile::from_json(&text).map_err(anchored)?;
    let mission = file.into_mission(path.parent(), seed).map_err(anchored)?;
    let hash = file.hash();
    Ok((file, mission, hash))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Failure::io(&path, e))
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

fn simulate(common: &Common) -> Result<Status, Failure> {
    let (_, cfg, hash) = load(&common.config, common.seed)?;
    prepare_out(&common.out)?;
    let started = std::time::Instant::now();
    let log = mission::run(&cfg).map_err(|e| Failure {
        status: Status::Config,
        message: e.to_string(),
    })?;
    log::info!("mission finished in {:.2?}", started.elapsed());

    let meta = [("config_hash", hash.clone()), ("seed", common.seed.to_string())];
    write(&common.out, "mission.csv", &log.to_csv(&meta))?;
    let summary = log.summary(&cfg, &hash);
    write(&common.out, "summary.json", &to_json(&summary))?;
    for (name, body) in plots::render(&cfg, &log, &meta) {
        write(&common.out, name, &body)?;
    }

    println!(
        "{:?}: {} ticks, energy {:.3}, min clearance {:.4}",
        summary.outcome, summary.ticks, summary.energy, summary.min_clearance
    );
    Ok(match log.outcome {
        Outcome::Success => Status::Ok,
        Outcome::ConstraintBreach => Status::Breach,
        Outcome::SolverFailure => Status::SolverFailure,
        Outcome::Timeout => Status::Timeout,
    })
}

#[derive(Serialize)]
struct SolveDump<'a> {
    config_hash: &'a str,
    seed: u64,
    x0: VehicleState,
    target: VehicleState,
    solution: &'a OcpSolution,
}

fn solve(common: &Common, waypoint: usize, from_target: bool) -> Result<Status, Failure> {
    let (_, cfg, hash) = load(&common.config, common.seed)?;
    let target = *cfg.mission.waypoints.get(waypoint).ok_or_else(|| Failure {
        status: Status::Config,
        message: format!("waypoint {waypoint} does not exist"),
    })?;
    let x0 = if from_target { target } else { cfg.mission.initial_state };
    let prob = cfg.problem(x0, target);
    let sol = solver::solve(&prob, None, &cfg.solver).map_err(|e| Failure {
        status: Status::Config,
        message: e.to_string(),
    })?;
    log::info!("solve took {:.2?}", sol.solve_time);
    prepare_out(&common.out)?;
    let dump = SolveDump {
        config_hash: &hash,
        seed: common.seed,
        x0,
        target,
        solution: &sol,
    };
    write(&common.out, "solve.json", &to_json(&dump))?;
    println!(
        "cost {:.6}, violation {:.2e}, {} iterations, converged {}",
        sol.cost, sol.max_violation, sol.iterations, sol.converged
    );
    Ok(if sol.max_violation > cfg.solver.constraint_tol {
        Status::SolverFailure
    } else {
        Status::Ok
    })
}

fn run_gradcheck(out: &Path, seed: u64, inject_fault: bool) -> Result<Status, Failure> {
    let fault = inject_fault.then_some(Fault::QuadraticDragDerivative);
    let report = gradcheck::run_all(seed, fault, Execution::Parallel);
    prepare_out(out)?;
    write(out, "gradcheck.json", &to_json(&report))?;
    println!(
        "jacobian max rel error {:.3e}, gradient max rel error {:.3e}: {}",
        report.jacobian_max_rel_error,
        report.gradient_max_rel_error,
        if report.pass { "pass" } else { "FAIL" }
    );
    Ok(if report.pass { Status::Ok } else { Status::GradcheckFailed })
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}
