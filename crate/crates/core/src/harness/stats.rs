//! Ensemble statistics: jump-aligned recovery curves and convergence times.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::trajectory::TrajectoryLog;
use crate::truth::Jump;

/// Histogram bin width of convergence times, in cycles.
pub const BIN_WIDTH_CYCLES: usize = 10;
/// Jump-alignment window before the jump, in seconds.
pub const JUMP_WINDOW_PRE_S: f64 = 10e-3;
/// Jump-alignment window after the jump, in seconds.
pub const JUMP_WINDOW_POST_S: f64 = 50e-3;
/// True fidelity required in the cycle before a jump for it to be aligned.
pub const JUMP_STABILIZED_FIDELITY: f64 = 0.8;
/// Fraction of the pre-jump plateau that counts as recovered.
pub const RECOVERY_FRACTION: f64 = 0.9;

fn window_cycles(seconds: f64, t_a: f64) -> usize {
    (seconds / t_a).round() as usize
}

/// Accumulates fidelity windows around downward jumps of stabilized trajectories.
#[derive(Debug, Clone)]
pub struct JumpAccumulator {
    pre: usize,
    post: usize,
    sum_real: Vec<f64>,
    sum_est: Vec<f64>,
    counts: Vec<usize>,
    events: usize,
}

impl JumpAccumulator {
    pub fn new(t_a: f64) -> Self {
        let pre = window_cycles(JUMP_WINDOW_PRE_S, t_a);
        let post = window_cycles(JUMP_WINDOW_POST_S, t_a);
        let len = pre + post + 1;
        Self {
            pre,
            post,
            sum_real: vec![0.0; len],
            sum_est: vec![0.0; len],
            counts: vec![0; len],
            events: 0,
        }
    }

    pub fn add(&mut self, log: &TrajectoryLog) {
        let rows = &log.rows;
        for jump in log.jumps.iter().filter(|j| j.kind == Jump::Down) {
            let c = jump.cycle;
            if c < 2 || rows[c - 2].f_real < JUMP_STABILIZED_FIDELITY {
                continue;
            }
            self.events += 1;
            let first = c.saturating_sub(self.pre).max(1);
            let last = (c + self.post).min(rows.len());
            for cycle in first..=last {
                let k = cycle + self.pre - c;
                let row = &rows[cycle - 1];
                self.sum_real[k] += row.f_real;
                self.sum_est[k] += row.f_est;
                self.counts[k] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for k in 0..self.counts.len() {
            self.sum_real[k] += other.sum_real[k];
            self.sum_est[k] += other.sum_est[k];
            self.counts[k] += other.counts[k];
        }
        self.events += other.events;
    }

    pub fn events(&self) -> usize {
        self.events
    }

    pub fn finish(&self, t_a: f64) -> Result<JumpAligned> {
        if self.events == 0 {
            return Err(Error::NoJumpsFound);
        }
        let mean = |sum: &[f64]| -> Vec<f64> {
            sum.iter()
                .zip(&self.counts)
                .map(|(s, &n)| if n > 0 { s / n as f64 } else { f64::NAN })
                .collect()
        };
        let f_real = mean(&self.sum_real);
        let f_est = mean(&self.sum_est);
        let offsets: Vec<i64> = (0..f_real.len()).map(|k| k as i64 - self.pre as i64).collect();
        let time_ms = offsets.iter().map(|&o| o as f64 * t_a * 1e3).collect();
        let plateau = |curve: &[f64]| {
            let before: Vec<f64> = curve[..self.pre].iter().copied().filter(|x| x.is_finite()).collect();
            before.iter().sum::<f64>() / before.len().max(1) as f64
        };
        let plateau_real = plateau(&f_real);
        let plateau_est = plateau(&f_est);
        let recovery_cycles = (self.pre..f_real.len())
            .find(|&k| f_real[k] >= RECOVERY_FRACTION * plateau_real)
            .map(|k| k - self.pre);
        let argmin = |curve: &[f64]| {
            (self.pre..curve.len())
                .filter(|&k| curve[k].is_finite())
                .min_by(|&a, &b| curve[a].total_cmp(&curve[b]))
                .map(|k| (k - self.pre) as i64)
        };
        Ok(JumpAligned {
            pre_cycles: self.pre,
            post_cycles: self.post,
            events: self.events,
            plateau_real,
            plateau_est,
            recovery_cycles,
            recovery_ms: recovery_cycles.map(|c| c as f64 * t_a * 1e3),
            min_real_offset: argmin(&f_real),
            min_est_offset: argmin(&f_est),
            offsets,
            time_ms,
            f_real,
            f_est,
            counts: self.counts.clone(),
        })
    }
}

/// Mean fidelity curves aligned on downward jumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpAligned {
    pub pre_cycles: usize,
    pub post_cycles: usize,
    pub events: usize,
    /// Mean aligned `F_real` before the jump.
    pub plateau_real: f64,
    pub plateau_est: f64,
    /// Cycles after the jump until aligned `F_real` regains 90% of the plateau.
    pub recovery_cycles: Option<usize>,
    pub recovery_ms: Option<f64>,
    /// Offsets (cycles after the jump) of the curve minima.
    pub min_real_offset: Option<i64>,
    pub min_est_offset: Option<i64>,
    pub offsets: Vec<i64>,
    pub time_ms: Vec<f64>,
    pub f_real: Vec<f64>,
    pub f_est: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Jump-aligned average over a set of trajectories.
pub fn jump_aligned_average(logs: &[TrajectoryLog], t_a: f64) -> Result<JumpAligned> {
    let mut acc = JumpAccumulator::new(t_a);
    for log in logs {
        acc.add(log);
    }
    acc.finish(t_a)
}

/// Collects convergence times and converged states.
#[derive(Debug, Clone)]
pub struct ConvergenceAccumulator {
    n_tag: usize,
    times: Vec<Option<usize>>,
    sum_est: Option<DMatrix<f64>>,
    sum_real: Option<DMatrix<f64>>,
}

impl ConvergenceAccumulator {
    pub fn new(n_tag: usize) -> Self {
        Self {
            n_tag,
            times: Vec::new(),
            sum_est: None,
            sum_real: None,
        }
    }

    pub fn add(&mut self, log: &TrajectoryLog) {
        self.times.push(log.convergence_cycle);
        fn add_to(sum: &mut Option<DMatrix<f64>>, m: &DMatrix<f64>) {
            match sum {
                Some(s) => *s += m,
                None => *sum = Some(m.clone()),
            }
        }
        if let (Some(est), Some(real)) = (&log.converged_est, &log.converged_real) {
            add_to(&mut self.sum_est, est.matrix());
            add_to(&mut self.sum_real, real.matrix());
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.times.extend_from_slice(&other.times);
        for (mine, theirs) in [(&mut self.sum_est, &other.sum_est), (&mut self.sum_real, &other.sum_real)] {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => *m += t,
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn finish(&self, f_conv: f64, cycles: usize, t_a: f64) -> ConvergenceStats {
        let trajectories = self.times.len();
        let converged = self.times.iter().flatten().count();
        let n_bins = cycles.div_ceil(BIN_WIDTH_CYCLES);
        let mut counts = vec![0usize; n_bins];
        for &c in self.times.iter().flatten() {
            counts[((c - 1) / BIN_WIDTH_CYCLES).min(n_bins - 1)] += 1;
        }
        let mut running = 0;
        let bins = counts
            .iter()
            .enumerate()
            .map(|(k, &count)| {
                running += count;
                HistogramBin {
                    start_cycle: k * BIN_WIDTH_CYCLES,
                    end_cycle: ((k + 1) * BIN_WIDTH_CYCLES).min(cycles),
                    start_ms: (k * BIN_WIDTH_CYCLES) as f64 * t_a * 1e3,
                    count,
                    cumulative: running as f64 / trajectories.max(1) as f64,
                }
            })
            .collect();
        let mean = |sum: &Option<DMatrix<f64>>| {
            sum.as_ref().map(|s| {
                let m = s / converged as f64;
                m.row_iter().map(|r| r.iter().copied().collect()).collect::<Vec<Vec<f64>>>()
            })
        };
        let mean_converged_est = mean(&self.sum_est);
        let mean_converged_real = mean(&self.sum_real);
        ConvergenceStats {
            f_conv,
            n_tag: self.n_tag,
            cycles,
            t_a,
            trajectories,
            converged,
            bin_width_cycles: BIN_WIDTH_CYCLES,
            mean_converged_p_tag_est: mean_converged_est.as_ref().map(|m| m[self.n_tag][self.n_tag]),
            mean_converged_p_tag_real: mean_converged_real.as_ref().map(|m| m[self.n_tag][self.n_tag]),
            bins,
            times: self.times.clone(),
            mean_converged_est,
            mean_converged_real,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Bin covers convergence cycles in `(start_cycle, end_cycle]`.
    pub start_cycle: usize,
    pub end_cycle: usize,
    pub start_ms: f64,
    pub count: usize,
    /// Fraction of all trajectories converged by `end_cycle`.
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStats {
    pub f_conv: f64,
    pub n_tag: usize,
    pub cycles: usize,
    pub t_a: f64,
    pub trajectories: usize,
    pub converged: usize,
    pub bin_width_cycles: usize,
    pub bins: Vec<HistogramBin>,
    /// Population of the target level in the mean converged state.
    pub mean_converged_p_tag_est: Option<f64>,
    pub mean_converged_p_tag_real: Option<f64>,
    /// Convergence cycle of every trajectory, in input order.
    pub times: Vec<Option<usize>>,
    pub mean_converged_est: Option<Vec<Vec<f64>>>,
    pub mean_converged_real: Option<Vec<Vec<f64>>>,
}

impl ConvergenceStats {
    /// Fraction of trajectories converged by `cycle`.
    pub fn cumulative_at_cycle(&self, cycle: usize) -> f64 {
        let hit = self.times.iter().flatten().filter(|&&c| c <= cycle).count();
        hit as f64 / self.trajectories.max(1) as f64
    }

    /// Fraction of trajectories converged by time `t` (seconds).
    pub fn cumulative_at(&self, t: f64) -> f64 {
        self.cumulative_at_cycle((t / self.t_a + 1e-9).floor() as usize)
    }

    /// First cycle at which the converged fraction reaches `level`.
    pub fn time_to_level(&self, level: f64) -> Option<usize> {
        let mut sorted: Vec<usize> = self.times.iter().flatten().copied().collect();
        sorted.sort_unstable();
        let needed = (level * self.trajectories as f64).ceil().max(1.0) as usize;
        sorted.get(needed - 1).copied()
    }
}

/// Convergence statistics over a set of trajectories.
pub fn convergence_stats(logs: &[TrajectoryLog], f_conv: f64, n_tag: usize, cycles: usize, t_a: f64) -> ConvergenceStats {
    let mut acc = ConvergenceAccumulator::new(n_tag);
    for log in logs {
        acc.add(log);
    }
    acc.finish(f_conv, cycles, t_a)
}

/// Cumulative level used to compare convergence times across targets.
pub const SWEEP_LEVEL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_tag: usize,
    pub level: f64,
    /// Cycle at which the converged fraction reaches `level`.
    pub time_to_level_cycles: Option<usize>,
    pub time_to_level_ms: Option<f64>,
    pub converged_fraction: f64,
    pub stats: ConvergenceStats,
}

/// Configuration for target `n_tag` derived from `base`, with the gain and
/// initial amplitude reset to their automatic values.
pub fn sweep_config(base: &ExperimentConfig, n_tag: usize) -> ExperimentConfig {
    ExperimentConfig {
        n_tag,
        c1: None,
        alpha0: None,
        ..base.clone()
    }
}

/// Whether the sweep times are non-decreasing in `n_tag` (unreached counts as infinite).
pub fn sweep_is_monotone(points: &[SweepPoint]) -> bool {
    points.windows(2).all(|w| {
        match (w[0].time_to_level_cycles, w[1].time_to_level_cycles) {
            (Some(a), Some(b)) => a <= b,
            (_, None) => true,
            (None, Some(_)) => false,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::Outcome;
    use crate::harness::trajectory::{JumpEvent, TrajectoryRow};

    fn synthetic(f_real: &[f64], jumps: &[usize], conv: Option<usize>) -> TrajectoryLog {
        let rows = f_real
            .iter()
            .enumerate()
            .map(|(i, &f)| TrajectoryRow {
                cycle: i + 1,
                time_s: (i + 1) as f64 * 85e-6,
                outcome: Outcome::U,
                phase_idx: i % 4,
                alpha: 0.0,
                f_est: f,
                f_real: f,
                n_mean_est: 3.0,
                p_below_est: 1.0 - f,
                p_tag_est: f,
                p_above_est: 0.0,
                p_below_real: 1.0 - f,
                p_tag_real: f,
                p_above_real: 0.0,
                jump_flag: u8::from(jumps.contains(&(i + 1))),
            })
            .collect();
        TrajectoryLog {
            seed: 0,
            stream: 0,
            rows,
            jumps: jumps.iter().map(|&cycle| JumpEvent { cycle, kind: Jump::Down }).collect(),
            f_displaced: f_real.to_vec(),
            convergence_cycle: conv,
            converged_est: None,
            converged_real: None,
            clamped_cycles: 0,
            kick_cycles: 0,
        }
    }

    #[test]
    fn window_sizes() {
        let acc = JumpAccumulator::new(85e-6);
        assert_eq!((acc.pre, acc.post), (118, 588));
    }

    #[test]
    fn no_jumps_is_error() {
        let log = synthetic(&[0.9; 50], &[], None);
        assert!(matches!(jump_aligned_average(&[log], 85e-6), Err(Error::NoJumpsFound)));
        let log = synthetic(&[0.5; 50], &[20], None);
        assert!(matches!(jump_aligned_average(&[log], 85e-6), Err(Error::NoJumpsFound)));
    }

    #[test]
    fn recovery_of_step_profile() {
        let mut f = vec![1.0; 1000];
        for (k, x) in f.iter_mut().enumerate().skip(199).take(50) {
            *x = (k - 199) as f64 / 50.0;
        }
        let log = synthetic(&f, &[200], None);
        let aligned = jump_aligned_average(&[log], 85e-6).unwrap();
        assert_eq!(aligned.events, 1);
        assert_eq!(aligned.plateau_real, 1.0);
        assert_eq!(aligned.recovery_cycles, Some(45));
        assert_eq!(aligned.min_real_offset, Some(0));
    }

    #[test]
    fn histogram_and_cumulative() {
        let logs: Vec<_> = [Some(5), Some(10), Some(11), None, Some(95)]
            .into_iter()
            .map(|c| synthetic(&[0.1; 100], &[], c))
            .collect();
        let stats = convergence_stats(&logs, 0.95, 3, 100, 85e-6);
        assert_eq!(stats.bins.len(), 10);
        assert_eq!(stats.bins[0].count, 2);
        assert_eq!(stats.bins[1].count, 1);
        assert_eq!(stats.bins[9].count, 1);
        assert_eq!(stats.bins.iter().map(|b| b.count).sum::<usize>(), stats.converged);
        assert_eq!(stats.converged, 4);
        assert!((stats.bins[9].cumulative - 0.8).abs() < 1e-15);
        assert_eq!(stats.cumulative_at_cycle(10), 0.4);
        assert_eq!(stats.time_to_level(0.5), Some(11));
        assert_eq!(stats.time_to_level(0.9), None);
    }

    #[test]
    fn monotone_check() {
        let base = convergence_stats(&[], 0.95, 3, 10, 85e-6);
        let point = |t| SweepPoint {
            n_tag: 1,
            level: 0.5,
            time_to_level_cycles: t,
            time_to_level_ms: None,
            converged_fraction: 0.0,
            stats: base.clone(),
        };
        assert!(sweep_is_monotone(&[point(Some(1)), point(Some(1)), point(Some(4)), point(None)]));
        assert!(!sweep_is_monotone(&[point(Some(5)), point(Some(4))]));
        assert!(!sweep_is_monotone(&[point(None), point(Some(4))]));
    }
}
