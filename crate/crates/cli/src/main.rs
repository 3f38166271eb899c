use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use laser_teleop::harness::{metrics, replay, run, Metrics, Outcome, Recording, Scenario};
use laser_teleop_bridge::{live_scenario, Hub, HubConfig, Server, ServerConfig};

mod plot;

/// Laser-guided assistive teleoperation simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scripted scenario and write its recording (.jsonl) and table (.csv).
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Recompute and print the metrics of a recording.
    Metrics { recording: PathBuf },
    /// Re-simulate a recording and check that every tick matches.
    Replay { recording: PathBuf },
    /// Write SVG plots of a recording.
    Plot {
        recording: PathBuf,
        /// Output directory; defaults to the recording's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a live session over WebSocket.
    Serve {
        #[arg(long, default_value = "127.0.0.1:9002")]
        addr: String,
        /// Scenario to start with; a live desk session if omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Directory searched by the `load` control message.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        /// Save finished and reset sessions here.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Read-only clients allowed besides the controller.
        #[arg(long, default_value_t = 8)]
        observers: usize,
        /// Wall-clock tick rate in Hz; defaults to the simulation rate.
        #[arg(long)]
        tick_rate: Option<f64>,
        /// Wait for a `start` message before ticking.
        #[arg(long)]
        paused: bool,
    },
}

type Failure = Box<dyn std::error::Error>;

fn outcome_code(complete: bool) -> ExitCode {
    if complete {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn print_metrics(m: &Metrics) {
    println!("complete: {}", m.complete);
    println!("time_s:   {:.3}", m.time_s);
    println!("mov_rad:  {:.4}", m.mov_rad);
    for t in &m.targets {
        let err = t.err_mm.map_or("-".to_string(), |e| format!("{e:.1} mm"));
        println!("target {}: err {err}, reached {}", t.name, t.reached);
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or("recording".into(), |s| s.to_string_lossy().into_owned())
}

fn execute(cmd: Command) -> Result<ExitCode, Failure> {
    match cmd {
        Command::Run { scenario, seed, out } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let rec = run(&s)?;
            std::fs::create_dir_all(&out)?;
            let jsonl = out.join(format!("{}.jsonl", s.name));
            let csv = out.join(format!("{}.csv", s.name));
            rec.save(&jsonl)?;
            rec.save_csv(&csv)?;
            println!("{}: {} rows, {:?}", s.name, rec.rows.len(), rec.summary.outcome);
            print_metrics(&rec.summary.metrics);
            println!("wrote {} and {}", jsonl.display(), csv.display());
            Ok(outcome_code(rec.summary.outcome == Outcome::Completed))
        }
        Command::Metrics { recording } => {
            let rec = Recording::load(&recording)?;
            let m = metrics::compute(&rec.header.scenario, &rec.rows, rec.header.rate);
            println!("{}", serde_json::to_string_pretty(&m)?);
            Ok(outcome_code(m.complete))
        }
        Command::Replay { recording } => {
            let rec = Recording::load(&recording)?;
            let report = replay(&rec)?;
            if !report.identical() {
                let shown: Vec<String> = report.mismatched.iter().take(10).map(u64::to_string).collect();
                return Err(format!(
                    "replay diverged: {} of {} ticks differ (first: {}), metrics match: {}",
                    report.mismatched.len(),
                    report.rows,
                    shown.join(", "),
                    report.metrics_match
                )
                .into());
            }
            println!("replay identical: {} ticks", report.rows);
            print_metrics(&report.metrics);
            Ok(outcome_code(report.metrics.complete))
        }
        Command::Plot { recording, out } => {
            let rec = Recording::load(&recording)?;
            let dir = out.unwrap_or_else(|| recording.parent().map(Path::to_path_buf).unwrap_or_default());
            std::fs::create_dir_all(&dir)?;
            for path in plot::write_all(&rec, &dir, &stem(&recording))? {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            addr,
            scenario,
            scenarios,
            record,
            observers,
            tick_rate,
            paused,
        } => {
            let s = match scenario {
                Some(p) => Scenario::load(&p)?,
                None => live_scenario(),
            };
            if let Some(dir) = &record {
                std::fs::create_dir_all(dir)?;
            }
            let config = HubConfig {
                scenarios_dir: scenarios,
                max_observers: observers,
                autostart: !paused,
                record_dir: record,
            };
            let hub = Hub::new(s, config)?;
            let server = Server::start(&addr, hub, ServerConfig { tick_rate, ..ServerConfig::default() })?;
            println!("serving on ws://{}", server.local_addr());
            server.wait();
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
