//! Closed-loop trajectory runner.
//!
//! Wall-clock cycle `j` (1-based):
//! 1. sample `j` crosses the cavity (truth collapse, filter FIFO push);
//! 2. the true field relaxes for one period, possibly with a quantum jump;
//! 3. once `j > d`, the report for sample `j - d` reaches the filter;
//! 4. the controller acts on the in-flight estimate (no injection before the
//!    first report);
//! 5. the row is logged, then the displacement is injected into the truth and
//!    recorded for the next crossing.

use serde::{Deserialize, Serialize};

use crate::controller::{compute_control, Branch, ControlParams};
use crate::error::Result;
use crate::filter::{FilterState, ImperfectionParams, Outcome, QuantumFilter};
use crate::fock::{coherent_state, mean_photon, DensityMatrix, Displacement};
use crate::harness::config::ExperimentConfig;
use crate::measurement::KrausPair;
use crate::truth::{report, sample_and_interact, Jump, JumpModel, RngStream, TruthState};

/// One CSV row; field order is the file's column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub cycle: usize,
    pub time_s: f64,
    /// Report that reached the detector this cycle; `u` while the pipeline fills.
    pub outcome: Outcome,
    /// Ramsey schedule slot of the sample that crossed this cycle.
    pub phase_idx: usize,
    /// Amplitude injected at the end of the cycle.
    pub alpha: f64,
    #[serde(rename = "F_est")]
    pub f_est: f64,
    #[serde(rename = "F_real")]
    pub f_real: f64,
    pub n_mean_est: f64,
    pub p_below_est: f64,
    pub p_tag_est: f64,
    pub p_above_est: f64,
    pub p_below_real: f64,
    pub p_tag_real: f64,
    pub p_above_real: f64,
    /// 1 when the true field jumped this cycle.
    pub jump_flag: u8,
}

impl TrajectoryRow {
    pub fn est_split(&self) -> [f64; 3] {
        [self.p_below_est, self.p_tag_est, self.p_above_est]
    }

    pub fn real_split(&self) -> [f64; 3] {
        [self.p_below_real, self.p_tag_real, self.p_above_real]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub cycle: usize,
    pub kind: Jump,
}

#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub seed: u64,
    pub stream: u64,
    pub rows: Vec<TrajectoryRow>,
    pub jumps: Vec<JumpEvent>,
    /// Per cycle, `F` of the estimate after injection.
    pub f_displaced: Vec<f64>,
    /// First cycle with `F_est >= f_conv`.
    pub convergence_cycle: Option<usize>,
    /// Estimated and true states at the convergence cycle.
    pub converged_est: Option<DensityMatrix>,
    pub converged_real: Option<DensityMatrix>,
    pub clamped_cycles: usize,
    pub kick_cycles: usize,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// What one cycle produced, beyond the logged row.
#[derive(Debug, Clone)]
pub struct CycleOutput {
    pub row: TrajectoryRow,
    /// Target population of the estimate after this cycle's injection.
    pub f_displaced: f64,
    pub jump: Option<Jump>,
    pub branch: Option<Branch>,
    pub clamped: bool,
}

/// A single closed-loop experiment, advanced one cycle at a time.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    n_tag: usize,
    t_a: f64,
    imperfections: ImperfectionParams,
    control: ControlParams,
    kraus: [KrausPair; 4],
    filter: QuantumFilter,
    jumps: JumpModel,
    truth: TruthState,
    state: FilterState,
    rng: RngStream,
    cycle: usize,
    estimate: DensityMatrix,
    real_before_injection: DensityMatrix,
}

impl ClosedLoop {
    pub fn new(config: &ExperimentConfig, seed: u64, stream: u64) -> Result<Self> {
        config.validate()?;
        let dim = config.dim();
        let relaxation = config.relaxation();
        let imperfections = config.imperfections();
        let filter = QuantumFilter::new(dim, imperfections, relaxation)?;
        let alpha0 = config.initial_amplitude();
        let rho0 = coherent_state(alpha0 * alpha0, dim)?;
        let state = filter.initial_state(rho0.clone())?;
        Ok(Self {
            n_tag: config.n_tag,
            t_a: config.t_a,
            imperfections,
            control: config.control(),
            kraus: config.kraus_pairs()?,
            jumps: JumpModel::new(relaxation, dim)?,
            filter,
            truth: TruthState::new(rho0.clone()),
            state,
            rng: RngStream::new(seed, stream),
            cycle: 0,
            estimate: rho0.clone(),
            real_before_injection: rho0,
        })
    }

    /// Cycles completed so far.
    pub fn cycle(&self) -> usize {
        self.cycle
    }

    /// Filter estimate the last control was computed from.
    pub fn estimate(&self) -> &DensityMatrix {
        &self.estimate
    }

    /// True state at the time the last control was computed.
    pub fn real_before_injection(&self) -> &DensityMatrix {
        &self.real_before_injection
    }

    pub fn filter_state(&self) -> &FilterState {
        &self.state
    }

    pub fn step(&mut self) -> Result<CycleOutput> {
        let j = self.cycle + 1;
        self.advance(j).map_err(|e| e.at_cycle(j))
    }

    fn advance(&mut self, j: usize) -> Result<CycleOutput> {
        let imp = self.imperfections;
        let phase_idx = (j - 1) % 4;
        let kraus = &self.kraus[phase_idx];

        sample_and_interact(&mut self.truth, kraus, imp.eta_a, &mut self.rng)?;
        self.filter.cross(&mut self.state, kraus.clone());

        let (relaxed, jump) = self.jumps.step(self.truth.rho_real(), &mut self.rng);
        self.truth.set_rho(relaxed);

        let reported = match self.truth.arrive(imp.delay) {
            Some(record) => {
                let outcome = report(&record, imp.eta_d, imp.eta_f, &mut self.rng);
                self.filter.chain_advance(&mut self.state, outcome)?;
                Some(outcome)
            }
            None => None,
        };

        self.estimate = self.filter.estimate_with_inflight(&self.state)?;
        let (alpha, branch, clamped) = match reported {
            Some(_) => {
                let c = compute_control(&self.estimate, &self.control);
                (c.alpha, Some(c.branch), c.clamped)
            }
            None => (0.0, None, false),
        };

        let est = &self.estimate;
        let real = self.truth.rho_real();
        let (eb, et, ea) = est.population_split(self.n_tag);
        let (rb, rt, ra) = real.population_split(self.n_tag);
        let row = TrajectoryRow {
            cycle: j,
            time_s: j as f64 * self.t_a,
            outcome: reported.unwrap_or(Outcome::U),
            phase_idx,
            alpha,
            f_est: et,
            f_real: rt,
            n_mean_est: mean_photon(est),
            p_below_est: eb,
            p_tag_est: et,
            p_above_est: ea,
            p_below_real: rb,
            p_tag_real: rt,
            p_above_real: ra,
            jump_flag: u8::from(jump.is_some()),
        };
        self.real_before_injection = real.clone();

        let displacement: Displacement = self.filter.displacer().displacement(alpha)?;
        let f_displaced = displacement.conjugate(&self.estimate).population(self.n_tag);
        self.truth.displace(&displacement);
        self.filter.inject_displacement(&mut self.state, displacement);
        self.cycle = j;
        Ok(CycleOutput {
            row,
            f_displaced,
            jump,
            branch,
            clamped,
        })
    }
}

/// Runs `config.cycles` cycles on stream 0 of `seed`.
pub fn run_trajectory(config: &ExperimentConfig, seed: u64) -> Result<TrajectoryLog> {
    run_trajectory_stream(config, seed, 0)
}

/// Runs one trajectory on an explicit RNG stream.
pub fn run_trajectory_stream(config: &ExperimentConfig, seed: u64, stream: u64) -> Result<TrajectoryLog> {
    run_trajectory_observed(config, seed, stream, |_| {})
}

/// Like [`run_trajectory_stream`], calling `observe` after every cycle.
pub fn run_trajectory_observed<F>(
    config: &ExperimentConfig,
    seed: u64,
    stream: u64,
    mut observe: F,
) -> Result<TrajectoryLog>
where
    F: FnMut(&ClosedLoop),
{
    let mut sim = ClosedLoop::new(config, seed, stream)?;
    let mut log = TrajectoryLog {
        seed,
        stream,
        rows: Vec::with_capacity(config.cycles),
        jumps: Vec::new(),
        f_displaced: Vec::with_capacity(config.cycles),
        convergence_cycle: None,
        converged_est: None,
        converged_real: None,
        clamped_cycles: 0,
        kick_cycles: 0,
    };
    for _ in 0..config.cycles {
        let out = sim.step()?;
        observe(&sim);
        if let Some(kind) = out.jump {
            log.jumps.push(JumpEvent {
                cycle: out.row.cycle,
                kind,
            });
        }
        if log.convergence_cycle.is_none() && out.row.f_est >= config.f_conv {
            log.convergence_cycle = Some(out.row.cycle);
            log.converged_est = Some(sim.estimate().clone());
            log.converged_real = Some(sim.real_before_injection().clone());
        }
        log.clamped_cycles += usize::from(out.clamped);
        log.kick_cycles += usize::from(out.branch == Some(Branch::Kick));
        log.f_displaced.push(out.f_displaced);
        log.rows.push(out.row);
    }
    Ok(log)
}
