use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multiarm::metrics::SummaryTable;
use multiarm::runner::{run_scenario, Scenario, ScenarioConfig};
use multiarm::sweep::sweep_free_axis;
use multiarm::teleop::{self, TeleopConfig};
use multiarm::{Error, Result};

#[derive(Parser)]
#[command(name = "multiarm", version, about = "Multi-arm payload manipulation runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run description. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// UDP port for operator pose updates.
    #[arg(long)]
    pose_port: Option<u16>,
    /// TCP port for state subscribers.
    #[arg(long)]
    state_port: Option<u16>,
    /// Port for the `/ws` gateway.
    #[arg(long)]
    ws_port: Option<u16>,
    /// Stop after this many ticks.
    #[arg(long)]
    ticks: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario in batch, or live with --live.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<Scenario>,
        /// circle, square, or a .traj recording.
        #[arg(long)]
        trajectory: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Serve live teleoperation on this address instead of a batch run.
        #[arg(long, value_name = "BIND")]
        live: Option<String>,
    },
    /// Serve live teleoperation and record the payload path.
    Record {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Brute-force the manipulability landscape over the free-axis angle
    /// for every arm at the scene's start pose.
    SweepOracle {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        angle_steps: usize,
        /// Directory for one CSV per arm.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn load(path: Option<&Path>) -> Result<(ScenarioConfig, Option<PathBuf>)> {
    match path {
        Some(p) => {
            let base = p.parent().map(Path::to_path_buf);
            Ok((ScenarioConfig::load(p)?, base))
        }
        None => Ok((ScenarioConfig::default(), None)),
    }
}

/// Paths from the command line are relative to the working directory, paths
/// inside a config file to that file's directory.
fn from_cwd(p: PathBuf) -> PathBuf {
    match std::env::current_dir() {
        Ok(cwd) if p.is_relative() => cwd.join(p),
        _ => p,
    }
}

fn in_base(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

fn live(
    mut cfg: ScenarioConfig,
    base: Option<&Path>,
    common: &Common,
    bind: Option<String>,
    record: Option<PathBuf>,
) -> Result<()> {
    cfg.scenario = Scenario::C;
    let scene = cfg.build_scene(base)?;
    let settings = cfg.run_settings(&scene);
    let mut tc = TeleopConfig::from(&cfg.live);
    tc.record = tc.record.map(|p| in_base(base, &p));
    if let Some(b) = bind {
        tc.bind = b;
    }
    if let Some(p) = common.pose_port {
        tc.pose_port = p;
    }
    if let Some(p) = common.state_port {
        tc.state_port = p;
    }
    if let Some(p) = common.ws_port {
        tc.ws_port = Some(p);
    }
    if record.is_some() {
        tc.record = record;
    }
    tc.max_ticks = common.ticks.or(cfg.ticks);
    if let Some(dir) = &cfg.out_dir {
        let dir = in_base(base, dir);
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        tc.metrics_csv = Some(dir.join("metrics.csv"));
    }
    let handle = teleop::start(scene, settings, tc)?;
    eprintln!("pose updates: udp://{}", handle.pose_addr());
    eprintln!("state stream: tcp://{}", handle.state_addr());
    if let Some(ws) = handle.ws_addr() {
        eprintln!("gateway:      ws://{ws}/ws");
    }
    let report = handle.wait()?;
    eprintln!(
        "{} ticks, {} updates accepted, {} stale, {} malformed, {} busy, {} states dropped",
        report.ticks,
        report.ingest.accepted,
        report.ingest.stale,
        report.ingest.malformed,
        report.ingest.busy,
        report.dropped_states
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            common,
            scenario,
            trajectory,
            out_dir,
            live: bind,
        } => {
            let (mut cfg, base) = load(common.config.as_deref())?;
            if let Some(s) = scenario {
                cfg.scenario = s;
            }
            if let Some(t) = trajectory {
                cfg.trajectory = match t.as_str() {
                    "circle" | "square" | "live" => t,
                    _ => from_cwd(t.into()).to_string_lossy().into_owned(),
                };
            }
            if let Some(d) = out_dir {
                cfg.out_dir = Some(from_cwd(d));
            }
            if bind.is_some() || cfg.trajectory == "live" {
                return live(cfg, base.as_deref(), &common, bind, None);
            }
            if common.ticks.is_some() {
                cfg.ticks = common.ticks;
            }
            let report = run_scenario(&cfg, base.as_deref())?;
            let mut table = SummaryTable::new(format!("{} / {}", cfg.scene, cfg.trajectory));
            table.rows.push(report.summary.clone());
            println!("{}", table.to_markdown());
            println!(
                "tick {:.4} ms (max {:.4}), nudge {:.4} ms",
                report.timing.tick_ms.mean, report.timing.max_tick_ms, report.timing.nudge_ms.mean
            );
            Ok(())
        }
        Command::Record { common, out, bind } => {
            let (cfg, base) = load(common.config.as_deref())?;
            live(cfg, base.as_deref(), &common, bind, Some(from_cwd(out)))
        }
        Command::SweepOracle {
            config,
            angle_steps,
            out_dir,
        } => {
            if angle_steps < 2 {
                return Err(Error::Config("--angle-steps must be at least 2".into()));
            }
            let (cfg, base) = load(config.as_deref())?;
            let scene = cfg.build_scene(base.as_deref())?;
            let settings = cfg.run_settings(&scene);
            let targets = scene.handle_targets(&scene.payload_start);
            println!("arm,argmax_angle,argmax_manip,unique_interior_max,worst_pos_err_m");
            for (arm, target) in scene.arms.iter().zip(&targets) {
                let sweep = sweep_free_axis(
                    &arm.chain,
                    target,
                    &arm.initial_seed,
                    angle_steps,
                    settings.manip.max_deviation,
                    settings.weights,
                    &settings.newton,
                );
                let best = sweep.argmax();
                let unique = sweep
                    .unique_interior_maximum()
                    .map_or_else(|| "none".to_string(), |a| a.to_string());
                println!(
                    "{},{},{},{},{}",
                    arm.id,
                    best.angle,
                    best.manipulability,
                    unique,
                    sweep.worst_position_error()
                );
                if let Some(dir) = &out_dir.as_ref().map(|d| from_cwd(d.clone())) {
                    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                        path: dir.clone(),
                        source: e,
                    })?;
                    let path = dir.join(format!("sweep_{}.csv", arm.id));
                    std::fs::write(&path, sweep.to_csv()).map_err(|e| Error::Io { path, source: e })?;
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
