//! Quantum filter: the ideal projective recurrence and the realistic estimator
//! that accounts for empty samples, detector inefficiency, state-assignment
//! errors, cavity relaxation and the samples still flying to the detector.
//!
//! The realistic filter keeps the state conditioned on every detected sample
//! (`chain_rho`) plus a FIFO with one slot per sample that has crossed the
//! cavity but has not been detected yet. Each slot stores the measurement
//! operators in force when the sample crossed and the displacement that was
//! injected just before it crossed. Detecting the oldest slot applies
//! displacement, detection update and relaxation, in that order; the estimate
//! fed to the controller extends `chain_rho` over the remaining slots with
//! displacement, unread interaction and relaxation.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{
    apply_displacement, mirror_upper, DensityMatrix, Displacement, Displacer, FockDim, Relaxation,
    RelaxationParams,
};
use crate::measurement::{
    detection_probabilities, project, project_with_probability, AtomState, KrausPair,
    MIN_OUTCOME_PROBABILITY,
};

/// Detector and source imperfections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImperfectionParams {
    /// Probability that a sample holds an atom.
    pub eta_a: f64,
    /// Probability that a present atom is detected.
    pub eta_d: f64,
    /// Probability that a detected atom is assigned the wrong level.
    pub eta_f: f64,
    /// Samples in flight between the cavity and the detector.
    pub delay: usize,
}

impl ImperfectionParams {
    pub fn ideal() -> Self {
        Self {
            eta_a: 1.0,
            eta_d: 1.0,
            eta_f: 0.0,
            delay: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("eta_a", self.eta_a), ("eta_d", self.eta_d), ("eta_f", self.eta_f)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(())
    }

    /// Probability that a sample without a click held an undetected atom,
    /// `η_a(1-η_d)/(1-η_a η_d)`. `None` when a missing click is impossible.
    pub fn p_undetected(&self) -> Option<f64> {
        let denom = 1.0 - self.eta_a * self.eta_d;
        if denom <= 0.0 {
            None
        } else {
            Some(self.eta_a * (1.0 - self.eta_d) / denom)
        }
    }
}

/// Detector report for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    G,
    E,
    /// No click.
    U,
}

impl Outcome {
    pub fn label(self) -> char {
        match self {
            Self::G => 'g',
            Self::E => 'e',
            Self::U => 'u',
        }
    }

    pub fn from_label(c: char) -> Option<Self> {
        match c {
            'g' => Some(Self::G),
            'e' => Some(Self::E),
            'u' => Some(Self::U),
            _ => None,
        }
    }

    pub fn click(self) -> Option<AtomState> {
        match self {
            Self::G => Some(AtomState::G),
            Self::E => Some(AtomState::E),
            Self::U => None,
        }
    }
}

impl From<AtomState> for Outcome {
    fn from(s: AtomState) -> Self {
        match s {
            AtomState::G => Self::G,
            AtomState::E => Self::E,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// One step of the ideal filter: displace by the previous control, then project.
pub fn ideal_update(
    rho: &DensityMatrix,
    outcome: AtomState,
    alpha_prev: f64,
    kraus: &KrausPair,
) -> Result<DensityMatrix> {
    project(&apply_displacement(rho, alpha_prev)?, kraus, outcome)
}

/// Ideal filter with its displacement tables precomputed.
#[derive(Debug, Clone)]
pub struct IdealFilter {
    displacer: Displacer,
}

impl IdealFilter {
    pub fn new(dim: FockDim) -> Self {
        Self {
            displacer: Displacer::new(dim),
        }
    }

    pub fn displacer(&self) -> &Displacer {
        &self.displacer
    }

    pub fn update(
        &self,
        rho: &DensityMatrix,
        outcome: AtomState,
        previous: &Displacement,
        kraus: &KrausPair,
    ) -> Result<DensityMatrix> {
        project(&previous.conjugate(rho), kraus, outcome)
    }
}

/// Detector click in `s`, hedged against a wrong state assignment.
///
/// Evaluated as `((1-η_f) M_s ρ M_s + η_f M_s̄ ρ M_s̄) / ((1-η_f) P_s + η_f P_s̄)`,
/// which equals the mixture `(1-P_f) M_s ρ + P_f M_s̄ ρ` of normalized projections.
pub fn click_update(
    rho: &DensityMatrix,
    s: AtomState,
    eta_f: f64,
    kraus: &KrausPair,
) -> Result<DensityMatrix> {
    kraus.check_dim(rho)?;
    let (pg, pe) = detection_probabilities(rho, kraus);
    let (ps, pbar) = match s {
        AtomState::G => (pg, pe),
        AtomState::E => (pe, pg),
    };
    if eta_f == 0.0 {
        return project_with_probability(rho, kraus, s, ps);
    }
    let p_click = (1.0 - eta_f) * ps + eta_f * pbar;
    if !(p_click >= MIN_OUTCOME_PROBABILITY) {
        return Err(Error::ZeroProbabilityOutcome {
            outcome: s.label(),
            probability: p_click,
        });
    }
    let right = kraus.diag(s);
    let wrong = kraus.diag(s.opposite());
    let r = rho.matrix();
    let n = r.nrows();
    let (w_right, w_wrong) = ((1.0 - eta_f) / p_click, eta_f / p_click);
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let k = w_right * right[i] * right[j] + w_wrong * wrong[i] * wrong[j];
            out[(i, j)] = k * r[(i, j)];
        }
    }
    mirror_upper(&mut out);
    Ok(DensityMatrix::new_unchecked(out))
}

/// Conditional probability of a wrong assignment given a click in `s`.
pub fn false_click_probability(rho: &DensityMatrix, s: AtomState, eta_f: f64, kraus: &KrausPair) -> f64 {
    let (pg, pe) = detection_probabilities(rho, kraus);
    let (ps, pbar) = match s {
        AtomState::G => (pg, pe),
        AtomState::E => (pe, pg),
    };
    eta_f * pbar / ((1.0 - eta_f) * ps + eta_f * pbar)
}

/// No click: mixture of an empty sample and an undetected atom in either level.
pub fn noclick_update(
    rho: &DensityMatrix,
    imperfections: &ImperfectionParams,
    kraus: &KrausPair,
) -> Result<DensityMatrix> {
    kraus.check_dim(rho)?;
    let p_u = imperfections.p_undetected().ok_or(Error::ImpossibleNoClick)?;
    Ok(kraus.average(rho, p_u))
}

/// Interaction with a sample that crossed the cavity but is not detected yet.
pub fn unread_interaction(rho: &DensityMatrix, eta_a: f64, kraus: &KrausPair) -> Result<DensityMatrix> {
    kraus.check_dim(rho)?;
    Ok(kraus.average(rho, eta_a))
}

/// A sample between the cavity and the detector.
#[derive(Debug, Clone)]
pub struct PendingSample {
    kraus: KrausPair,
    preceding: Displacement,
}

impl PendingSample {
    pub fn new(kraus: KrausPair, preceding: Displacement) -> Self {
        Self { kraus, preceding }
    }

    pub fn kraus(&self) -> &KrausPair {
        &self.kraus
    }

    /// Displacement injected right before this sample crossed the cavity.
    pub fn preceding(&self) -> &Displacement {
        &self.preceding
    }
}

/// Per-trajectory state of the realistic filter.
#[derive(Debug, Clone)]
pub struct FilterState {
    chain_rho: DensityMatrix,
    pending: VecDeque<PendingSample>,
    next_injection: Displacement,
    cycle_index: usize,
    detected: usize,
}

impl FilterState {
    pub fn chain_rho(&self) -> &DensityMatrix {
        &self.chain_rho
    }

    pub fn pending(&self) -> &VecDeque<PendingSample> {
        &self.pending
    }

    /// Samples that crossed the cavity so far.
    pub fn cycle_index(&self) -> usize {
        self.cycle_index
    }

    /// Ramsey schedule position of the next crossing.
    pub fn phase_cursor(&self) -> usize {
        self.cycle_index % 4
    }

    /// Samples consumed by [`QuantumFilter::chain_advance`].
    pub fn detected(&self) -> usize {
        self.detected
    }
}

/// The realistic filter for one set of experimental parameters.
#[derive(Debug, Clone)]
pub struct QuantumFilter {
    dim: FockDim,
    imperfections: ImperfectionParams,
    relaxation: Relaxation,
    displacer: Displacer,
}

impl QuantumFilter {
    pub fn new(
        dim: FockDim,
        imperfections: ImperfectionParams,
        relaxation: RelaxationParams,
    ) -> Result<Self> {
        imperfections.validate()?;
        Ok(Self {
            dim,
            imperfections,
            relaxation: Relaxation::new(relaxation, dim)?,
            displacer: Displacer::new(dim),
        })
    }

    pub fn dim(&self) -> FockDim {
        self.dim
    }

    pub fn imperfections(&self) -> &ImperfectionParams {
        &self.imperfections
    }

    pub fn relaxation(&self) -> &Relaxation {
        &self.relaxation
    }

    pub fn displacer(&self) -> &Displacer {
        &self.displacer
    }

    pub fn initial_state(&self, rho0: DensityMatrix) -> Result<FilterState> {
        if rho0.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim.size(),
                got: rho0.dim().size(),
            });
        }
        Ok(FilterState {
            chain_rho: rho0,
            pending: VecDeque::with_capacity(self.imperfections.delay + 1),
            next_injection: self.identity(),
            cycle_index: 0,
            detected: 0,
        })
    }

    fn identity(&self) -> Displacement {
        self.displacer
            .displacement(0.0)
            .expect("zero amplitude is always representable")
    }

    /// A sample crosses the cavity with `kraus` in force.
    pub fn cross(&self, state: &mut FilterState, kraus: KrausPair) {
        let preceding = std::mem::replace(&mut state.next_injection, self.identity());
        state.pending.push_back(PendingSample::new(kraus, preceding));
        state.cycle_index += 1;
    }

    /// Records the control injected after the latest crossing.
    pub fn inject(&self, state: &mut FilterState, alpha: f64) -> Result<()> {
        state.next_injection = self.displacer.displacement(alpha)?;
        Ok(())
    }

    /// Same as [`inject`](Self::inject) with a precomputed operator.
    pub fn inject_displacement(&self, state: &mut FilterState, displacement: Displacement) {
        state.next_injection = displacement;
    }

    /// Folds the detector report for the oldest in-flight sample into `chain_rho`.
    pub fn chain_advance(&self, state: &mut FilterState, reported: Outcome) -> Result<()> {
        let slot = state.pending.front().ok_or(Error::PipelineEmpty)?;
        let displaced = slot.preceding.conjugate(&state.chain_rho);
        let measured = match reported.click() {
            Some(s) => click_update(&displaced, s, self.imperfections.eta_f, &slot.kraus)?,
            None => noclick_update(&displaced, &self.imperfections, &slot.kraus)?,
        };
        state.chain_rho = self.relaxation.step(&measured)?;
        state.pending.pop_front();
        state.detected += 1;
        Ok(())
    }

    /// Pushes `kraus_now` for the sample that just crossed, then detects the
    /// oldest in-flight sample.
    pub fn cycle(&self, state: &mut FilterState, kraus_now: KrausPair, reported: Outcome) -> Result<()> {
        self.cross(state, kraus_now);
        self.chain_advance(state, reported)
    }

    /// State used by the controller: `chain_rho` propagated over every
    /// in-flight sample.
    pub fn estimate_with_inflight(&self, state: &FilterState) -> Result<DensityMatrix> {
        let mut rho = state.chain_rho.clone();
        for slot in &state.pending {
            rho = slot.preceding.conjugate(&rho);
            rho = slot.kraus.average(&rho, self.imperfections.eta_a);
            rho = self.relaxation.step(&rho)?;
        }
        Ok(rho)
    }
}
