//! Monte-Carlo model of the actual cavity: random sample occupation, Born-rule
//! collapse, imperfect detector reports and quantum jumps.
//!
//! Every call draws a fixed number of uniforms from the trajectory stream
//! (two per interaction, two per report, one per relaxation step), whatever
//! the parameters, so that trajectories with the same seed stay aligned when
//! parameters that do not change the physics are varied.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::filter::Outcome;
use crate::fock::{mirror_upper, DensityMatrix, Displacement, FockDim, RelaxationParams};
use crate::measurement::{detection_probabilities, project_with_probability, AtomState, KrausPair};

/// Deterministic uniform stream for one trajectory.
///
/// ChaCha8 keyed by `seed_from_u64(seed)` with the trajectory index as the
/// stream id; the output is identical on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

/// What actually crossed the cavity in one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Level an ideal detector would find; `None` for an empty sample.
    pub state: Option<AtomState>,
}

impl SampleRecord {
    pub fn occupied(&self) -> bool {
        self.state.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Jump {
    /// Photon lost to the environment.
    Down,
    /// Thermal photon gained.
    Up,
}

/// The true field state and the samples flying to the detector.
#[derive(Debug, Clone)]
pub struct TruthState {
    rho_real: DensityMatrix,
    inflight: VecDeque<SampleRecord>,
}

impl TruthState {
    pub fn new(rho_real: DensityMatrix) -> Self {
        Self {
            rho_real,
            inflight: VecDeque::new(),
        }
    }

    pub fn rho_real(&self) -> &DensityMatrix {
        &self.rho_real
    }

    pub fn inflight(&self) -> &VecDeque<SampleRecord> {
        &self.inflight
    }

    /// Removes the oldest in-flight sample once `delay` newer ones follow it.
    pub fn arrive(&mut self, delay: usize) -> Option<SampleRecord> {
        if self.inflight.len() > delay {
            self.inflight.pop_front()
        } else {
            None
        }
    }

    pub fn displace(&mut self, displacement: &Displacement) {
        self.rho_real = displacement.conjugate(&self.rho_real);
    }

    pub fn set_rho(&mut self, rho: DensityMatrix) {
        self.rho_real = rho;
    }
}

/// One sample crosses the cavity: occupied with probability `eta_a`, and an
/// atom collapses the field according to the Born rule.
pub fn sample_and_interact(
    truth: &mut TruthState,
    kraus: &KrausPair,
    eta_a: f64,
    rng: &mut RngStream,
) -> Result<SampleRecord> {
    kraus.check_dim(&truth.rho_real)?;
    let u_occupied = rng.uniform();
    let u_state = rng.uniform();
    let record = if u_occupied < eta_a {
        let (pg, pe) = detection_probabilities(&truth.rho_real, kraus);
        let (s, p) = if u_state < pg { (AtomState::G, pg) } else { (AtomState::E, pe) };
        truth.rho_real = project_with_probability(&truth.rho_real, kraus, s, p)?;
        SampleRecord { state: Some(s) }
    } else {
        SampleRecord { state: None }
    };
    truth.inflight.push_back(record);
    Ok(record)
}

/// What the detector reports for a sample.
pub fn report(record: &SampleRecord, eta_d: f64, eta_f: f64, rng: &mut RngStream) -> Outcome {
    let u_detect = rng.uniform();
    let u_flip = rng.uniform();
    match record.state {
        None => Outcome::U,
        Some(_) if u_detect >= eta_d => Outcome::U,
        Some(s) if u_flip < eta_f => s.opposite().into(),
        Some(s) => s.into(),
    }
}

/// First-order jump unraveling of the relaxation over one sample period.
///
/// With `G = κ(1+n_th) a^dag a + κ n_th a a^dag` and `K = I - T_a G / 2`
/// (both diagonal), a photon is lost with probability `κT_a(1+n_th) tr(aρa^dag)`,
/// gained with probability `κT_a n_th tr(a^dag ρ a)`, and otherwise the state
/// becomes `KρK / tr(KρK)`.
#[derive(Debug, Clone)]
pub struct JumpModel {
    params: RelaxationParams,
    dim: FockDim,
    /// `κT_a(1+n_th)`
    down_rate: f64,
    /// `κT_a n_th`
    up_rate: f64,
    no_jump: Vec<f64>,
}

impl JumpModel {
    pub fn new(params: RelaxationParams, dim: FockDim) -> Result<Self> {
        params.validate(dim)?;
        let kt = params.kappa * params.sample_period;
        let down_rate = kt * (1.0 + params.n_th);
        let up_rate = kt * params.n_th;
        let no_jump = (0..dim.size())
            .map(|n| 1.0 - 0.5 * (down_rate * n as f64 + up_rate * raise_norm(n, dim)))
            .collect();
        Ok(Self {
            params,
            dim,
            down_rate,
            up_rate,
            no_jump,
        })
    }

    pub fn params(&self) -> RelaxationParams {
        self.params
    }

    /// `(p_down, p_up)` for state `rho`.
    pub fn probabilities(&self, rho: &DensityMatrix) -> (f64, f64) {
        let mut n_mean = 0.0;
        let mut raise = 0.0;
        for n in 0..self.dim.size() {
            let p = rho.population(n);
            n_mean += n as f64 * p;
            raise += raise_norm(n, self.dim) * p;
        }
        (self.down_rate * n_mean, self.up_rate * raise)
    }

    /// Advances `rho` by one sample period; returns the jump that occurred.
    pub fn step(&self, rho: &DensityMatrix, rng: &mut RngStream) -> (DensityMatrix, Option<Jump>) {
        let u = rng.uniform();
        if self.down_rate == 0.0 && self.up_rate == 0.0 {
            return (rho.clone(), None);
        }
        let (p_down, p_up) = self.probabilities(rho);
        let r = rho.matrix();
        let size = r.nrows();
        let top = size - 1;
        let mut out = DMatrix::zeros(size, size);
        let jump = if u < p_down {
            for j in 0..top {
                for i in 0..=j {
                    out[(i, j)] = (((i + 1) * (j + 1)) as f64).sqrt() * r[(i + 1, j + 1)];
                }
            }
            Some(Jump::Down)
        } else if u < p_down + p_up {
            for j in 1..size {
                for i in 1..=j {
                    out[(i, j)] = ((i * j) as f64).sqrt() * r[(i - 1, j - 1)];
                }
            }
            Some(Jump::Up)
        } else {
            for j in 0..size {
                for i in 0..=j {
                    out[(i, j)] = self.no_jump[i] * r[(i, j)] * self.no_jump[j];
                }
            }
            None
        };
        mirror_upper(&mut out);
        let tr = out.trace();
        out /= tr;
        (DensityMatrix::new_unchecked(out), jump)
    }
}

/// `(a a^dag)_{nn}` for the truncated ladder operators.
fn raise_norm(n: usize, dim: FockDim) -> f64 {
    if n < dim.n_max() {
        (n + 1) as f64
    } else {
        0.0
    }
}

/// Applies one relaxation period to the true state.
pub fn jump_step(
    truth: &mut TruthState,
    relaxation: RelaxationParams,
    rng: &mut RngStream,
) -> Result<Option<Jump>> {
    let model = JumpModel::new(relaxation, truth.rho_real.dim())?;
    let (rho, jump) = model.step(&truth.rho_real, rng);
    truth.rho_real = rho;
    Ok(jump)
}
