//! Independent seeded trajectories run in parallel and reduced in index order.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::bench::{bench_cycle, LatencyStats};
use crate::harness::config::ExperimentConfig;
use crate::harness::stats::{
    sweep_config, ConvergenceAccumulator, ConvergenceStats, JumpAccumulator, JumpAligned, SweepPoint,
};
use crate::harness::trajectory::{run_trajectory_stream, TrajectoryLog};
use crate::truth::Jump;

/// Trajectories simulated before their logs are folded into the summary.
const CHUNK: usize = 128;

/// Per-cycle arithmetic means with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCurves {
    pub cycle: Vec<usize>,
    pub time_s: Vec<f64>,
    pub f_est_mean: Vec<f64>,
    pub f_est_stderr: Vec<f64>,
    pub f_real_mean: Vec<f64>,
    pub f_real_stderr: Vec<f64>,
    /// Mean `F` of the estimate after injection.
    pub f_displaced_mean: Vec<f64>,
    pub f_displaced_stderr: Vec<f64>,
    pub p_below_est: Vec<f64>,
    pub p_tag_est: Vec<f64>,
    pub p_above_est: Vec<f64>,
    pub p_below_real: Vec<f64>,
    pub p_tag_real: Vec<f64>,
    pub p_above_real: Vec<f64>,
    /// Fraction of trajectories with `F_est >= f_settled`.
    pub settled_est: Vec<f64>,
    /// Fraction of trajectories with `F_real >= f_settled`.
    pub settled_real: Vec<f64>,
}

impl MeanCurves {
    /// Mean of `F_real` over cycles `first..=last` (1-based, inclusive).
    pub fn mean_f_real(&self, first: usize, last: usize) -> f64 {
        let slice = &self.f_real_mean[first - 1..last];
        slice.iter().sum::<f64>() / slice.len() as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EventCounts {
    pub jumps_down: usize,
    pub jumps_up: usize,
    pub clamped_cycles: usize,
    pub kick_cycles: usize,
}

/// Wall-clock facts about a run; the only non-deterministic part of a summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub wall_time_s: f64,
    pub threads: usize,
    pub latency: Option<LatencyStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub trajectories: usize,
    pub cycles: usize,
    pub curves: MeanCurves,
    pub convergence: ConvergenceStats,
    pub jump_aligned: Option<JumpAligned>,
    pub events: EventCounts,
    pub run: RunInfo,
}

/// Running sums over trajectories.
#[derive(Debug, Clone)]
pub struct EnsembleAccumulator {
    config: ExperimentConfig,
    n: usize,
    sums: [Vec<f64>; 9],
    squares: [Vec<f64>; 3],
    settled: [Vec<usize>; 2],
    convergence: ConvergenceAccumulator,
    jumps: JumpAccumulator,
    events: EventCounts,
}

impl EnsembleAccumulator {
    pub fn new(config: &ExperimentConfig) -> Self {
        let len = config.cycles;
        Self {
            config: config.clone(),
            n: 0,
            sums: std::array::from_fn(|_| vec![0.0; len]),
            squares: std::array::from_fn(|_| vec![0.0; len]),
            settled: std::array::from_fn(|_| vec![0; len]),
            convergence: ConvergenceAccumulator::new(config.n_tag),
            jumps: JumpAccumulator::new(config.t_a),
            events: EventCounts::default(),
        }
    }

    pub fn add(&mut self, log: &TrajectoryLog) {
        let threshold = self.config.f_settled;
        for (k, (row, &fd)) in log.rows.iter().zip(&log.f_displaced).enumerate().take(self.config.cycles) {
            let values = [
                row.f_est,
                row.f_real,
                row.p_below_est,
                row.p_tag_est,
                row.p_above_est,
                row.p_below_real,
                row.p_tag_real,
                row.p_above_real,
                fd,
            ];
            for (sum, v) in self.sums.iter_mut().zip(values) {
                sum[k] += v;
            }
            self.squares[0][k] += row.f_est * row.f_est;
            self.squares[1][k] += row.f_real * row.f_real;
            self.squares[2][k] += fd * fd;
            self.settled[0][k] += usize::from(row.f_est >= threshold);
            self.settled[1][k] += usize::from(row.f_real >= threshold);
        }
        self.convergence.add(log);
        self.jumps.add(log);
        for jump in &log.jumps {
            match jump.kind {
                Jump::Down => self.events.jumps_down += 1,
                Jump::Up => self.events.jumps_up += 1,
            }
        }
        self.events.clamped_cycles += log.clamped_cycles;
        self.events.kick_cycles += log.kick_cycles;
        self.n += 1;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn finish(&self, run: RunInfo) -> EnsembleSummary {
        let cfg = &self.config;
        let n = self.n.max(1) as f64;
        let mean = |v: &Vec<f64>| v.iter().map(|s| s / n).collect::<Vec<f64>>();
        let stderr = |sum: &Vec<f64>, sq: &Vec<f64>| -> Vec<f64> {
            sum.iter()
                .zip(sq)
                .map(|(s, q)| {
                    if self.n < 2 {
                        0.0
                    } else {
                        let m = s / n;
                        let var = ((q - n * m * m) / (n - 1.0)).max(0.0);
                        (var / n).sqrt()
                    }
                })
                .collect()
        };
        let fraction = |v: &Vec<usize>| v.iter().map(|&c| c as f64 / n).collect::<Vec<f64>>();
        let cycle: Vec<usize> = (1..=cfg.cycles).collect();
        let curves = MeanCurves {
            time_s: cycle.iter().map(|&c| c as f64 * cfg.t_a).collect(),
            cycle,
            f_est_mean: mean(&self.sums[0]),
            f_est_stderr: stderr(&self.sums[0], &self.squares[0]),
            f_real_mean: mean(&self.sums[1]),
            f_real_stderr: stderr(&self.sums[1], &self.squares[1]),
            f_displaced_mean: mean(&self.sums[8]),
            f_displaced_stderr: stderr(&self.sums[8], &self.squares[2]),
            p_below_est: mean(&self.sums[2]),
            p_tag_est: mean(&self.sums[3]),
            p_above_est: mean(&self.sums[4]),
            p_below_real: mean(&self.sums[5]),
            p_tag_real: mean(&self.sums[6]),
            p_above_real: mean(&self.sums[7]),
            settled_est: fraction(&self.settled[0]),
            settled_real: fraction(&self.settled[1]),
        };
        EnsembleSummary {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: crate::VERSION.to_string(),
            config: cfg.clone(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            trajectories: self.n,
            cycles: cfg.cycles,
            curves,
            convergence: self.convergence.finish(cfg.f_conv, cfg.cycles, cfg.t_a),
            jump_aligned: self.jumps.finish(cfg.t_a).ok(),
            events: self.events,
            run,
        }
    }
}

/// Runs `config.trajectories` trajectories; trajectory `i` uses RNG stream `i`.
pub fn run_trajectories(config: &ExperimentConfig) -> Result<Vec<TrajectoryLog>> {
    config.validate()?;
    (0..config.trajectories as u64)
        .into_par_iter()
        .map(|i| run_trajectory_stream(config, config.seed, i))
        .collect()
}

/// Reduces logs in the given order.
pub fn summarize(config: &ExperimentConfig, logs: &[TrajectoryLog], run: RunInfo) -> EnsembleSummary {
    let mut acc = EnsembleAccumulator::new(config);
    for log in logs {
        acc.add(log);
    }
    acc.finish(run)
}

/// Full ensemble run without keeping the individual logs.
pub fn run_ensemble(config: &ExperimentConfig) -> Result<EnsembleSummary> {
    run_ensemble_with(config, None)
}

/// Like [`run_ensemble`], also timing `bench_iterations` estimator cycles.
pub fn run_ensemble_with(config: &ExperimentConfig, bench_iterations: Option<usize>) -> Result<EnsembleSummary> {
    for w in config.validate()? {
        log::warn!("{w}");
    }
    let start = Instant::now();
    let mut acc = EnsembleAccumulator::new(config);
    let total = config.trajectories as u64;
    let mut next = 0u64;
    while next < total {
        let end = (next + CHUNK as u64).min(total);
        let logs: Vec<TrajectoryLog> = (next..end)
            .into_par_iter()
            .map(|i| run_trajectory_stream(config, config.seed, i))
            .collect::<Result<_>>()?;
        for log in &logs {
            acc.add(log);
        }
        log::debug!("{end}/{total} trajectories done");
        next = end;
    }
    let wall_time_s = start.elapsed().as_secs_f64();
    let latency = match bench_iterations {
        Some(iterations) if !config.is_ideal() => Some(bench_cycle(config, iterations)?),
        _ => None,
    };
    Ok(acc.finish(RunInfo {
        wall_time_s,
        threads: rayon::current_num_threads(),
        latency,
    }))
}

/// Convergence statistics for each target in `n_tags`, same seed for each.
pub fn convergence_sweep(base: &ExperimentConfig, n_tags: &[usize], level: f64) -> Result<Vec<SweepPoint>> {
    n_tags
        .iter()
        .map(|&n_tag| {
            let cfg = sweep_config(base, n_tag);
            let summary = run_ensemble(&cfg)?;
            let stats = summary.convergence;
            let time = stats.time_to_level(level);
            Ok(SweepPoint {
                n_tag,
                level,
                time_to_level_cycles: time,
                time_to_level_ms: time.map(|c| c as f64 * cfg.t_a * 1e3),
                converged_fraction: stats.converged as f64 / stats.trajectories.max(1) as f64,
                stats,
            })
        })
        .collect()
}
