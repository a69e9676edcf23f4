//! Per-cycle latency of the estimator and controller.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::controller::compute_control;
use crate::error::Result;
use crate::filter::{FilterState, Outcome, QuantumFilter};
use crate::harness::config::ExperimentConfig;
use crate::harness::trajectory::ClosedLoop;
use crate::truth::RngStream;

/// Cycles of closed-loop warm-up before timing starts.
pub const WARMUP_CYCLES: usize = 200;
/// Real-time budget: one sample period.
pub const BUDGET_US: f64 = 85.0;
/// Reference figure of the embedded controller.
pub const REFERENCE_US: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub iterations: usize,
    pub n_max: usize,
    pub delay: usize,
    pub median_us: f64,
    pub p99_us: f64,
    pub mean_us: f64,
    pub min_us: f64,
    /// Multiply-accumulate count of one cycle with a nonzero displacement.
    pub op_estimate: usize,
    pub within_budget: bool,
    pub within_reference: bool,
}

/// Multiply-accumulate count of one estimator+controller cycle.
///
/// Counts a displacement conjugation as `n² · n` for `D ρ` plus the upper
/// triangle of `(Dρ) Dᵀ`, an elementwise super-operator as one product per
/// upper-triangle entry and kernel term, and the positivity test as a
/// Cholesky factorization.
pub fn op_estimate(n_max: usize, delay: usize) -> usize {
    let n = n_max + 1;
    let tri = n * (n + 1) / 2;
    let conjugate = n * n * n + tri * n;
    let measurement = 3 * tri;
    let relax = 3 * tri + n * n * n / 6;
    let stage = conjugate + measurement + relax;
    let control = 2 * n + 4;
    let displacement = n * n * n / 2;
    (delay + 1) * stage + control + displacement
}

/// Times `chain_advance + estimate_with_inflight + compute_control` (plus
/// building the next displacement) on a synthetic report stream.
///
/// The filter state is first brought to steady state by a short closed-loop
/// run; reports are then drawn with fixed frequencies from the detection
/// model, independent of the state.
pub fn bench_cycle(config: &ExperimentConfig, iterations: usize) -> Result<LatencyStats> {
    let mut warm = ClosedLoop::new(config, config.seed, u64::MAX)?;
    for _ in 0..WARMUP_CYCLES.min(config.cycles.max(1)) {
        warm.step()?;
    }
    let mut state: FilterState = warm.filter_state().clone();
    let imp = config.imperfections();
    let filter = QuantumFilter::new(config.dim(), imp, config.relaxation())?;
    let kraus = config.kraus_pairs()?;
    let control = config.control();
    let mut rng = RngStream::new(config.seed, u64::MAX - 1);

    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let k = kraus[state.phase_cursor()].clone();
        filter.cross(&mut state, k);
        let click = rng.uniform() < imp.eta_a * imp.eta_d;
        let outcome = match (click, rng.uniform() < 0.5) {
            (false, _) => Outcome::U,
            (true, true) => Outcome::G,
            (true, false) => Outcome::E,
        };
        let outcome = if outcome == Outcome::U && imp.p_undetected().is_none() {
            Outcome::G
        } else {
            outcome
        };
        let t0 = Instant::now();
        filter.chain_advance(&mut state, outcome)?;
        let rho = filter.estimate_with_inflight(&state)?;
        let c = compute_control(&rho, &control);
        let d = filter.displacer().displacement(c.alpha)?;
        let elapsed = t0.elapsed();
        filter.inject_displacement(&mut state, d);
        samples.push(elapsed.as_secs_f64() * 1e6);
    }
    Ok(summarize(samples, config))
}

fn summarize(mut samples: Vec<f64>, config: &ExperimentConfig) -> LatencyStats {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let pick = |q: f64| {
        if n == 0 {
            f64::NAN
        } else {
            samples[((q * (n - 1) as f64).round() as usize).min(n - 1)]
        }
    };
    let median_us = pick(0.5);
    let imp = config.imperfections();
    LatencyStats {
        iterations: n,
        n_max: config.n_max,
        delay: imp.delay,
        median_us,
        p99_us: pick(0.99),
        mean_us: samples.iter().sum::<f64>() / n.max(1) as f64,
        min_us: samples.first().copied().unwrap_or(f64::NAN),
        op_estimate: op_estimate(config.n_max, imp.delay),
        within_budget: median_us < BUDGET_US,
        within_reference: median_us < REFERENCE_US,
    }
}
