use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use qnd_feedback::harness::bench::bench_cycle;
use qnd_feedback::harness::config::ExperimentConfig;
use qnd_feedback::harness::ensemble::{convergence_sweep, run_ensemble_with, run_trajectories};
use qnd_feedback::harness::output::{
    artifact, write_curves_csv, write_histogram_csv, write_json, write_jump_csv, write_sweep_csv,
    write_trajectory_csv,
};
use qnd_feedback::harness::stats::{convergence_stats, jump_aligned_average, sweep_is_monotone, SWEEP_LEVEL};
use qnd_feedback::harness::trajectory::run_trajectory;
use qnd_feedback::{Result, VERSION};

#[derive(Parser)]
#[command(name = "qnd-feedback", version, about = "Closed-loop Fock-state stabilization simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long, global = true)]
    trajectories: Option<usize>,
    #[arg(long, global = true)]
    cycles: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// One closed-loop trajectory.
    Simulate,
    /// Ensemble means, convergence histogram and run metadata.
    Ensemble {
        /// Estimator cycles timed for the latency section.
        #[arg(long, default_value_t = 2000)]
        bench_iterations: usize,
    },
    /// Fidelity curves aligned on quantum jumps.
    Jumpstats,
    /// Convergence-time histogram.
    Convergence {
        /// Repeat for targets 1 to 5.
        #[arg(long)]
        ntag_sweep: bool,
    },
    /// Per-cycle estimator and controller latency.
    Bench {
        #[arg(long, default_value_t = 20_000)]
        iterations: usize,
    },
    /// Check a configuration and print its hash.
    Validate,
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.trajectories {
        cfg.trajectories = n;
    }
    if let Some(n) = common.cycles {
        cfg.cycles = n;
    }
    for warning in cfg.validate()? {
        log::warn!("{warning}");
    }
    Ok(cfg)
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load(&cli.common)?;
    let out = &cli.common.out;
    let format = cli.common.format;
    match cli.command {
        Command::Validate => {
            println!("{}", cfg.to_config_text().trim_end());
            println!("# hash = {}", cfg.hash());
        }
        Command::Simulate => {
            let log = run_trajectory(&cfg, cfg.seed)?;
            let path = match format {
                Format::Csv => {
                    let p = artifact(out, "trajectory.csv");
                    write_trajectory_csv(&p, &log.rows)?;
                    p
                }
                Format::Json => {
                    let p = artifact(out, "trajectory.json");
                    write_json(
                        &p,
                        &json!({
                            "version": VERSION,
                            "config": cfg,
                            "config_hash": cfg.hash(),
                            "seed": cfg.seed,
                            "convergence_cycle": log.convergence_cycle,
                            "jumps": log.jumps,
                            "rows": log.rows,
                        }),
                    )?;
                    p
                }
            };
            announce(&path);
            match log.convergence_cycle {
                Some(c) => println!("converged (F_est >= {}) at cycle {c}", cfg.f_conv),
                None => println!("did not converge within {} cycles", cfg.cycles),
            }
        }
        Command::Ensemble { bench_iterations } => {
            let summary = run_ensemble_with(&cfg, Some(bench_iterations))?;
            let json_path = artifact(out, "summary.json");
            write_json(&json_path, &summary)?;
            announce(&json_path);
            let curves = artifact(out, "curves.csv");
            write_curves_csv(&curves, &summary)?;
            announce(&curves);
            let hist = artifact(out, "histogram.csv");
            write_histogram_csv(&hist, &summary.convergence)?;
            announce(&hist);
            let last = summary.curves.f_real_mean.last().copied().unwrap_or(f64::NAN);
            println!(
                "{} trajectories x {} cycles in {:.1} s; final mean F_real = {last:.4}",
                summary.trajectories, summary.cycles, summary.run.wall_time_s
            );
        }
        Command::Jumpstats => {
            let logs = run_trajectories(&cfg)?;
            let aligned = jump_aligned_average(&logs, cfg.t_a)?;
            let path = match format {
                Format::Csv => {
                    let p = artifact(out, "jump_aligned.csv");
                    write_jump_csv(&p, &aligned)?;
                    p
                }
                Format::Json => {
                    let p = artifact(out, "jump_aligned.json");
                    write_json(&p, &json!({"version": VERSION, "config_hash": cfg.hash(), "jump_aligned": aligned}))?;
                    p
                }
            };
            announce(&path);
            let down: usize = logs.iter().map(|l| l.jumps.len()).sum();
            let duration = cfg.trajectories as f64 * cfg.cycles as f64 * cfg.t_a;
            println!(
                "{} aligned events; plateau {:.3}; recovery {}; jump rate {:.2}/s",
                aligned.events,
                aligned.plateau_real,
                aligned
                    .recovery_ms
                    .map_or_else(|| "not reached".to_string(), |t| format!("{t:.1} ms")),
                down as f64 / duration
            );
        }
        Command::Convergence { ntag_sweep } => {
            if ntag_sweep {
                let points = convergence_sweep(&cfg, &[1, 2, 3, 4, 5], SWEEP_LEVEL)?;
                let path = match format {
                    Format::Csv => {
                        let p = artifact(out, "sweep.csv");
                        write_sweep_csv(&p, &points)?;
                        p
                    }
                    Format::Json => {
                        let p = artifact(out, "sweep.json");
                        write_json(&p, &json!({"version": VERSION, "config_hash": cfg.hash(), "sweep": points}))?;
                        p
                    }
                };
                announce(&path);
                println!("monotone in n_tag: {}", sweep_is_monotone(&points));
            } else {
                let logs = run_trajectories(&cfg)?;
                let stats = convergence_stats(&logs, cfg.f_conv, cfg.n_tag, cfg.cycles, cfg.t_a);
                let json_path = artifact(out, "convergence.json");
                write_json(
                    &json_path,
                    &json!({
                        "version": VERSION,
                        "config": cfg,
                        "config_hash": cfg.hash(),
                        "seed": cfg.seed,
                        "convergence": stats,
                    }),
                )?;
                announce(&json_path);
                if format == Format::Csv {
                    let p = artifact(out, "histogram.csv");
                    write_histogram_csv(&p, &stats)?;
                    announce(&p);
                }
                println!(
                    "converged {}/{}; cumulative {:.3} at 20 ms, {:.3} at 85 ms",
                    stats.converged,
                    stats.trajectories,
                    stats.cumulative_at(20e-3),
                    stats.cumulative_at(85e-3)
                );
            }
        }
        Command::Bench { iterations } => {
            let stats = bench_cycle(&cfg, iterations)?;
            let p = artifact(out, "bench.json");
            write_json(&p, &json!({"version": VERSION, "config_hash": cfg.hash(), "latency": stats}))?;
            announce(&p);
            println!(
                "median {:.2} us, p99 {:.2} us, ~{} MACs/cycle; under 85 us: {}; under 30 us: {}",
                stats.median_us, stats.p99_us, stats.op_estimate, stats.within_budget, stats.within_reference
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            debug_assert!(matches!(code, 2..=4));
            ExitCode::from(code as u8)
        }
    }
}
