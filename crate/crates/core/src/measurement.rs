//! Dispersive QND probe: light-shift model, Ramsey phase schedule and the
//! diagonal measurement operators `M_g = cos((φ_R + Φ(N))/2)`,
//! `M_e = sin((φ_R + Φ(N))/2)`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{mirror_upper, DensityMatrix, FockDim};

/// Probabilities below this are treated as impossible outcomes.
pub const MIN_OUTCOME_PROBABILITY: f64 = 1e-14;

/// Photon-number dependent atomic dephasing `Φ(n)`, with `Φ(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DephasingModel {
    /// `Φ(n) = phi_bar · n`.
    Linear { phi_bar: f64 },
    /// Measured values `Φ(0..=n_max)`, shifted so that `Φ(0) = 0`.
    Tabulated(Vec<f64>),
}

impl DephasingModel {
    pub fn linear(phi_bar: f64) -> Result<Self> {
        if !(phi_bar > 0.0 && phi_bar.is_finite()) {
            return Err(Error::Config(format!("phi_bar must be positive, got {phi_bar}")));
        }
        Ok(Self::Linear { phi_bar })
    }

    /// Large-detuning limit `Φ(n) ≈ (Ω0²/4δ) n`, with both rates in rad/s.
    pub fn dispersive(omega0: f64, delta: f64) -> Result<Self> {
        Self::linear(omega0 * omega0 / (4.0 * delta))
    }

    pub fn tabulated(table: Vec<f64>) -> Result<Self> {
        if table.len() < 2 {
            return Err(Error::Config("dephasing table needs at least two entries".into()));
        }
        if table.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("dephasing table has non-finite entries".into()));
        }
        if table.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("dephasing table must be strictly increasing".into()));
        }
        let offset = table[0];
        Ok(Self::Tabulated(table.into_iter().map(|x| x - offset).collect()))
    }

    pub fn shift(&self, n: usize) -> f64 {
        match self {
            Self::Linear { phi_bar } => phi_bar * n as f64,
            Self::Tabulated(t) => t[n],
        }
    }

    /// Checks that `Φ` is defined on every retained photon number.
    pub fn covers(&self, dim: FockDim) -> Result<()> {
        match self {
            Self::Linear { .. } => Ok(()),
            Self::Tabulated(t) if t.len() >= dim.size() => Ok(()),
            Self::Tabulated(t) => Err(Error::Config(format!(
                "dephasing table has {} entries, {dim} needs {}",
                t.len(),
                dim.size()
            ))),
        }
    }
}

/// Ramsey phase that puts the interferometer at mid-fringe for `n_tag` photons.
pub fn midfringe_phase(n_tag: usize, model: &DephasingModel) -> f64 {
    FRAC_PI_2 - model.shift(n_tag)
}

/// Four-cycle Ramsey phase pattern `φ0, φ0+σ, φ0, φ0-σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub phi_r0: f64,
    pub sigma_r: f64,
}

impl PhaseSchedule {
    pub const PERIOD: usize = 4;

    pub fn new(phi_r0: f64, sigma_r: f64) -> Self {
        Self { phi_r0, sigma_r }
    }

    pub fn offset(&self, index: usize) -> f64 {
        match index % Self::PERIOD {
            0 | 2 => 0.0,
            1 => self.sigma_r,
            _ => -self.sigma_r,
        }
    }

    /// Phase in force for the `k`-th sample (0-based).
    pub fn phase(&self, k: usize) -> f64 {
        self.phi_r0 + self.offset(k)
    }

    /// The Kraus pairs of one schedule period.
    pub fn kraus_pairs(&self, model: &DephasingModel, dim: FockDim) -> Result<[KrausPair; 4]> {
        Ok([
            kraus_pair(self.phase(0), model, dim)?,
            kraus_pair(self.phase(1), model, dim)?,
            kraus_pair(self.phase(2), model, dim)?,
            kraus_pair(self.phase(3), model, dim)?,
        ])
    }
}

/// Atomic level found by an ideal detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AtomState {
    G,
    E,
}

impl AtomState {
    pub fn opposite(self) -> Self {
        match self {
            Self::G => Self::E,
            Self::E => Self::G,
        }
    }

    pub fn label(self) -> char {
        match self {
            Self::G => 'g',
            Self::E => 'e',
        }
    }
}

impl fmt::Display for AtomState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Diagonals of the two measurement operators.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausPair {
    phase: f64,
    mg: Vec<f64>,
    me: Vec<f64>,
}

impl KrausPair {
    /// Ramsey phase the pair was built for.
    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn mg(&self) -> &[f64] {
        &self.mg
    }

    pub fn me(&self) -> &[f64] {
        &self.me
    }

    pub fn diag(&self, s: AtomState) -> &[f64] {
        match s {
            AtomState::G => &self.mg,
            AtomState::E => &self.me,
        }
    }

    pub fn len(&self) -> usize {
        self.mg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mg.is_empty()
    }

    pub fn check_dim(&self, rho: &DensityMatrix) -> Result<()> {
        let got = rho.dim().size();
        if got != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got,
            });
        }
        Ok(())
    }

    /// Unnormalized `M_s ρ M_s`.
    pub fn sandwich(&self, rho: &DensityMatrix, s: AtomState) -> DMatrix<f64> {
        let m = self.diag(s);
        let r = rho.matrix();
        DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| m[i] * r[(i, j)] * m[j])
    }

    /// `ρ ↦ (1-w) ρ + w (M_g ρ M_g + M_e ρ M_e)`, trace preserving for any `w`.
    pub fn average(&self, rho: &DensityMatrix, weight: f64) -> DensityMatrix {
        if weight == 0.0 {
            return rho.clone();
        }
        let r = rho.matrix();
        let n = r.nrows();
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let both = self.mg[i] * self.mg[j] + self.me[i] * self.me[j];
                out[(i, j)] = r[(i, j)] * ((1.0 - weight) + weight * both);
            }
        }
        mirror_upper(&mut out);
        DensityMatrix::new_unchecked(out)
    }
}

/// `M_g`, `M_e` for Ramsey phase `phi_r`.
pub fn kraus_pair(phi_r: f64, model: &DephasingModel, dim: FockDim) -> Result<KrausPair> {
    model.covers(dim)?;
    let (me, mg) = (0..dim.size())
        .map(|n| ((phi_r + model.shift(n)) / 2.0).sin_cos())
        .unzip();
    Ok(KrausPair {
        phase: phi_r,
        mg,
        me,
    })
}

/// Born probabilities `(P_g, P_e)`.
pub fn detection_probabilities(rho: &DensityMatrix, kraus: &KrausPair) -> (f64, f64) {
    let mut pg = 0.0;
    let mut pe = 0.0;
    for n in 0..kraus.len() {
        let p = rho.population(n);
        pg += kraus.mg[n] * kraus.mg[n] * p;
        pe += kraus.me[n] * kraus.me[n] * p;
    }
    (pg, pe)
}

pub fn outcome_probability(rho: &DensityMatrix, kraus: &KrausPair, s: AtomState) -> f64 {
    let (pg, pe) = detection_probabilities(rho, kraus);
    match s {
        AtomState::G => pg,
        AtomState::E => pe,
    }
}

/// Measurement back-action `M_s ρ M_s / P_s`.
pub fn project(rho: &DensityMatrix, kraus: &KrausPair, s: AtomState) -> Result<DensityMatrix> {
    kraus.check_dim(rho)?;
    let p = outcome_probability(rho, kraus, s);
    project_with_probability(rho, kraus, s, p)
}

pub(crate) fn project_with_probability(
    rho: &DensityMatrix,
    kraus: &KrausPair,
    s: AtomState,
    p: f64,
) -> Result<DensityMatrix> {
    if !(p >= MIN_OUTCOME_PROBABILITY) {
        return Err(Error::ZeroProbabilityOutcome {
            outcome: s.label(),
            probability: p,
        });
    }
    let m = kraus.diag(s);
    let r = rho.matrix();
    let n = r.nrows();
    let inv = 1.0 / p;
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            out[(i, j)] = m[i] * r[(i, j)] * m[j] * inv;
        }
    }
    mirror_upper(&mut out);
    Ok(DensityMatrix::new_unchecked(out))
}
