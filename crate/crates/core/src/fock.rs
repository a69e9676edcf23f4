//! Truncated Fock-space linear algebra.
//!
//! Every operator used by the loop (the measurement operators, real
//! displacements and the relaxation generator) maps real symmetric matrices to
//! real symmetric matrices, so states are stored as real `(n_max+1)²`
//! matrices indexed by photon number.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetry tolerance accepted by [`DensityMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Trace tolerance accepted by [`DensityMatrix::new`].
pub const TRACE_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted by [`DensityMatrix::new`].
pub const EIGEN_TOL: f64 = 1e-10;

/// Upper limit on `kappa*T_a*(n_max+1)` for the first-order relaxation step.
pub const MAX_STEP: f64 = 0.05;
const WARN_STEP: f64 = 0.01;

/// Below this magnitude negative eigenvalues are treated as rounding noise.
const CLAMP_FLOOR: f64 = 1e-12;

/// Size of the truncated Fock space: photon numbers `0..=n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FockDim {
    n_max: usize,
}

impl FockDim {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        Ok(Self { n_max })
    }

    pub fn n_max(self) -> usize {
        self.n_max
    }

    /// Matrix dimension, `n_max + 1`.
    pub fn size(self) -> usize {
        self.n_max + 1
    }

    /// Checks that `n` is a retained photon number.
    pub fn check(self, n: usize) -> Result<()> {
        if n > self.n_max {
            Err(Error::PhotonNumberOutOfRange { n, n_max: self.n_max })
        } else {
            Ok(())
        }
    }
}

impl fmt::Display for FockDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n_max={}", self.n_max)
    }
}

/// Real symmetric, unit-trace, positive semidefinite field state.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    m: DMatrix<f64>,
}

impl DensityMatrix {
    /// Wraps `m` after checking symmetry, trace and positivity.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let rho = Self { m };
        rho.validate()?;
        Ok(rho)
    }

    /// Wraps `m` without validation. Operations on such a matrix assume the
    /// caller upholds the invariants.
    pub fn new_unchecked(m: DMatrix<f64>) -> Self {
        Self { m }
    }

    /// The Fock projector `|n><n|`.
    pub fn fock(n: usize, dim: FockDim) -> Result<Self> {
        dim.check(n)?;
        let mut m = DMatrix::zeros(dim.size(), dim.size());
        m[(n, n)] = 1.0;
        Ok(Self { m })
    }

    pub fn vacuum(dim: FockDim) -> Self {
        Self::fock(0, dim).expect("n=0 is always retained")
    }

    /// Diagonal state with the given populations (renormalized).
    pub fn diagonal(populations: &[f64]) -> Result<Self> {
        if populations.len() < 2 {
            return Err(Error::InvalidState("need at least two levels".into()));
        }
        let total: f64 = populations.iter().sum();
        if populations.iter().any(|&p| p < 0.0) || total <= 0.0 {
            return Err(Error::InvalidState("populations must be non-negative".into()));
        }
        let n = populations.len();
        let m = DMatrix::from_fn(n, n, |i, j| if i == j { populations[i] / total } else { 0.0 });
        Ok(Self { m })
    }

    /// Thermal state with mean occupation `n_th`, truncated and renormalized.
    pub fn thermal(n_th: f64, dim: FockDim) -> Result<Self> {
        let ratio = n_th / (1.0 + n_th);
        let pops: Vec<f64> = (0..dim.size()).map(|n| ratio.powi(n as i32)).collect();
        Self::diagonal(&pops)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.m;
        if !m.is_square() {
            return Err(Error::InvalidState("matrix is not square".into()));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidState("non-finite entry".into()));
        }
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let asym = (m[(i, j)] - m[(j, i)]).abs();
                if asym > SYMMETRY_TOL {
                    return Err(Error::InvalidState(format!(
                        "asymmetry {asym:.3e} at ({i},{j})"
                    )));
                }
            }
        }
        let tr = m.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        let min = self.min_eigenvalue();
        if min < -EIGEN_TOL {
            return Err(Error::InvalidState(format!("eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> FockDim {
        FockDim {
            n_max: self.m.nrows() - 1,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    /// Probability of finding `n` photons.
    pub fn population(&self, n: usize) -> f64 {
        self.m[(n, n)]
    }

    pub fn populations(&self) -> Vec<f64> {
        self.m.diagonal().iter().copied().collect()
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = symmetrized(&self.m);
        sym.symmetric_eigenvalues().min()
    }

    /// `(P(n < n_tag), P(n_tag), P(n > n_tag))`.
    pub fn population_split(&self, n_tag: usize) -> (f64, f64, f64) {
        let mut below = 0.0;
        let mut above = 0.0;
        for n in 0..self.m.nrows() {
            if n < n_tag {
                below += self.m[(n, n)];
            } else if n > n_tag {
                above += self.m[(n, n)];
            }
        }
        let tag = if n_tag < self.m.nrows() {
            self.m[(n_tag, n_tag)]
        } else {
            0.0
        };
        (below, tag, above)
    }

    /// Largest elementwise difference to `other`.
    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        (&self.m - &other.m).amax()
    }
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Mirrors the upper triangle onto the lower one.
pub(crate) fn mirror_upper(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// Truncated annihilation operator: `a[n-1][n] = sqrt(n)`.
pub fn annihilation(dim: FockDim) -> DMatrix<f64> {
    let size = dim.size();
    DMatrix::from_fn(size, size, |i, j| {
        if j == i + 1 {
            (j as f64).sqrt()
        } else {
            0.0
        }
    })
}

pub fn creation(dim: FockDim) -> DMatrix<f64> {
    annihilation(dim).transpose()
}

/// Photon number operator `N = a^dag a = diag(0..=n_max)`.
pub fn number(dim: FockDim) -> DMatrix<f64> {
    DMatrix::from_fn(dim.size(), dim.size(), |i, j| if i == j { i as f64 } else { 0.0 })
}

/// Displacement generator `a^dag - a` (real antisymmetric, tridiagonal).
pub fn displacement_generator(dim: FockDim) -> DMatrix<f64> {
    let a = annihilation(dim);
    a.transpose() - a
}

/// Largest amplitude a real displacement may have in a space truncated at `n_max`.
pub fn amplitude_limit(dim: FockDim) -> f64 {
    (dim.n_max() as f64).sqrt()
}

/// Precomputed real normal form of the truncated generator `X = a^dag - a`.
///
/// `X` maps even photon numbers to odd ones and back, so `X²` restricted to the
/// even sector is a symmetric Jacobi matrix with simple spectrum `-λ²`. Each
/// eigenvector `v` yields an invariant plane `(v, w = Xv/λ)` on which
/// `exp(αX)` is a rotation by `αλ`; a zero eigenvalue is a kernel direction.
/// Building `D(α)` is then a sum of cosines and sines times fixed matrices and
/// the result is orthogonal to rounding.
#[derive(Debug, Clone)]
pub struct Displacer {
    dim: FockDim,
    kernel: DMatrix<f64>,
    planes: Vec<RotationPlane>,
}

#[derive(Debug, Clone)]
struct RotationPlane {
    frequency: f64,
    /// `v vᵀ + w wᵀ`
    symmetric: DMatrix<f64>,
    /// `w vᵀ - v wᵀ`
    antisymmetric: DMatrix<f64>,
}

impl Displacer {
    pub fn new(dim: FockDim) -> Self {
        let size = dim.size();
        let x = displacement_generator(dim);
        let x2 = &x * &x;
        let even: Vec<usize> = (0..size).step_by(2).collect();
        let block = DMatrix::from_fn(even.len(), even.len(), |i, j| x2[(even[i], even[j])]);
        let eig = SymmetricEigen::new(block);

        let mut kernel = DMatrix::zeros(size, size);
        let mut planes = Vec::with_capacity(even.len());
        for (k, &mu) in eig.eigenvalues.iter().enumerate() {
            let mut v = nalgebra::DVector::zeros(size);
            for (i, &row) in even.iter().enumerate() {
                v[row] = eig.eigenvectors[(i, k)];
            }
            let lambda = (-mu).max(0.0).sqrt();
            if lambda < 1e-9 {
                kernel += &v * v.transpose();
                continue;
            }
            let w = &x * &v / lambda;
            planes.push(RotationPlane {
                frequency: lambda,
                symmetric: &v * v.transpose() + &w * w.transpose(),
                antisymmetric: &w * v.transpose() - &v * w.transpose(),
            });
        }
        Self {
            dim,
            kernel,
            planes,
        }
    }

    pub fn dim(&self) -> FockDim {
        self.dim
    }

    /// `D(α) = exp(α (a^dag - a))` in the truncated space.
    pub fn displacement(&self, alpha: f64) -> Result<Displacement> {
        let limit = amplitude_limit(self.dim);
        if !alpha.is_finite() || alpha.abs() > limit {
            return Err(Error::AmplitudeOutOfRange { alpha, limit });
        }
        let mut d = self.kernel.clone();
        for plane in &self.planes {
            let (s, c) = (alpha * plane.frequency).sin_cos();
            d.zip_zip_apply(&plane.symmetric, &plane.antisymmetric, |x, p, q| {
                *x += c * p + s * q
            });
        }
        Ok(Displacement { alpha, matrix: d })
    }

    /// `D(α) ρ D(-α)`.
    pub fn apply(&self, rho: &DensityMatrix, alpha: f64) -> Result<DensityMatrix> {
        if alpha == 0.0 {
            return Ok(rho.clone());
        }
        Ok(self.displacement(alpha)?.conjugate(rho))
    }
}

/// A concrete displacement operator, kept around when it is applied repeatedly.
#[derive(Debug, Clone)]
pub struct Displacement {
    alpha: f64,
    matrix: DMatrix<f64>,
}

impl Displacement {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `D ρ Dᵀ`; only the upper triangle is accumulated, then mirrored.
    pub fn conjugate(&self, rho: &DensityMatrix) -> DensityMatrix {
        if self.alpha == 0.0 {
            return rho.clone();
        }
        let d = &self.matrix;
        let left = d * &rho.m;
        let n = d.nrows();
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += left[(i, k)] * d[(j, k)];
                }
                out[(i, j)] = acc;
            }
        }
        mirror_upper(&mut out);
        DensityMatrix { m: out }
    }
}

/// Matrix of `D(α)`; see [`Displacer`].
pub fn displacement(alpha: f64, dim: FockDim) -> Result<DMatrix<f64>> {
    Ok(Displacer::new(dim).displacement(alpha)?.matrix)
}

pub fn apply_displacement(rho: &DensityMatrix, alpha: f64) -> Result<DensityMatrix> {
    Displacer::new(rho.dim()).apply(rho, alpha)
}

/// Poisson probability `e^{-nbar} nbar^n / n!`.
pub fn poisson(nbar: f64, n: usize) -> f64 {
    let mut p = (-nbar).exp();
    for k in 1..=n {
        p *= nbar / k as f64;
    }
    p
}

/// Real coherent state `D(sqrt(nbar)) |0><0| D(-sqrt(nbar))`.
pub fn coherent_state(nbar: f64, dim: FockDim) -> Result<DensityMatrix> {
    if !(nbar >= 0.0) {
        return Err(Error::Config(format!("mean photon number {nbar} must be >= 0")));
    }
    let tail = 1.0 - (0..dim.size()).map(|n| poisson(nbar, n)).sum::<f64>();
    if tail > 1e-2 {
        log::debug!(
            "coherent state with nbar={nbar} puts {tail:.3} of its Poisson mass above {dim}"
        );
    }
    apply_displacement(&DensityMatrix::vacuum(dim), nbar.sqrt())
}

/// Second-order expansion `ρ - α[ρ,X] + α²/2 [[ρ,X],X]` with `X = a^dag - a`.
pub fn bch_quadratic(rho: &DensityMatrix, alpha: f64) -> DMatrix<f64> {
    let x = displacement_generator(rho.dim());
    let c1 = &rho.m * &x - &x * &rho.m;
    let c2 = &c1 * &x - &x * &c1;
    &rho.m - c1 * alpha + c2 * (alpha * alpha / 2.0)
}

/// Cavity damping parameters for one sample period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationParams {
    /// `1/T_cav` in 1/s.
    pub kappa: f64,
    /// Mean thermal photon number of the environment.
    pub n_th: f64,
    /// Sample period `T_a` in s.
    pub sample_period: f64,
}

impl RelaxationParams {
    pub fn new(kappa: f64, n_th: f64, sample_period: f64) -> Self {
        Self {
            kappa,
            n_th,
            sample_period,
        }
    }

    pub fn from_cavity_lifetime(t_cav: f64, n_th: f64, sample_period: f64) -> Self {
        let kappa = if t_cav.is_infinite() { 0.0 } else { 1.0 / t_cav };
        Self::new(kappa, n_th, sample_period)
    }

    /// `kappa*T_a*(n_max+1)`, the size of one first-order step.
    pub fn step_size(&self, dim: FockDim) -> f64 {
        self.kappa * self.sample_period * dim.size() as f64
    }

    pub fn is_trivial(&self) -> bool {
        self.kappa * self.sample_period == 0.0
    }

    pub fn validate(&self, dim: FockDim) -> Result<()> {
        if !(self.kappa >= 0.0 && self.n_th >= 0.0 && self.sample_period >= 0.0) {
            return Err(Error::Config(format!(
                "relaxation parameters must be non-negative: {self:?}"
            )));
        }
        let step = self.step_size(dim);
        if step > MAX_STEP {
            return Err(Error::StepTooLarge(step));
        }
        if step > WARN_STEP {
            log::warn!("relaxation step kappa*T_a*(n_max+1) = {step:.3e} is not small");
        }
        Ok(())
    }

    /// Tolerated negative eigenvalue after one Euler step.
    ///
    /// The step `ρ + T_a Lρ` differs from a completely positive map by the term
    /// `-(T_a²/4) G ρ G` with `G = κ(1+n_th) a^dag a + κ n_th a a^dag`, whose norm
    /// is at most `(κ T_a (1+2 n_th)(n_max+1))²/4`.
    pub fn negativity_tolerance(&self, dim: FockDim) -> f64 {
        let g = self.step_size(dim) * (1.0 + 2.0 * self.n_th);
        (g * g / 4.0).max(1e-8)
    }
}

/// Relaxation super-operator with its coefficients tabulated for one space.
///
/// `(Lρ)_{mn} = d_{mn} ρ_{mn} + l_{mn} ρ_{m+1,n+1} + g_{mn} ρ_{m-1,n-1}` for the
/// truncated ladder operators; `a a^dag` has a zero in its last diagonal entry,
/// which keeps `tr(Lρ) = 0` exactly.
#[derive(Debug, Clone)]
pub struct Relaxation {
    params: RelaxationParams,
    dim: FockDim,
    diag: DMatrix<f64>,
    loss: DMatrix<f64>,
    gain: DMatrix<f64>,
    tolerance: f64,
}

impl Relaxation {
    pub fn new(params: RelaxationParams, dim: FockDim) -> Result<Self> {
        params.validate(dim)?;
        let size = dim.size();
        let kd = params.kappa * (1.0 + params.n_th);
        let ku = params.kappa * params.n_th;
        let aad = |m: usize| if m < dim.n_max() { (m + 1) as f64 } else { 0.0 };
        let diag = DMatrix::from_fn(size, size, |m, n| {
            -0.5 * kd * (m + n) as f64 - 0.5 * ku * (aad(m) + aad(n))
        });
        let loss = DMatrix::from_fn(size, size, |m, n| {
            if m < dim.n_max() && n < dim.n_max() {
                kd * (((m + 1) * (n + 1)) as f64).sqrt()
            } else {
                0.0
            }
        });
        let gain = DMatrix::from_fn(size, size, |m, n| ku * ((m * n) as f64).sqrt());
        Ok(Self {
            params,
            dim,
            diag,
            loss,
            gain,
            tolerance: params.negativity_tolerance(dim),
        })
    }

    pub fn params(&self) -> RelaxationParams {
        self.params
    }

    pub fn dim(&self) -> FockDim {
        self.dim
    }

    /// `Lρ`.
    pub fn generator(&self, rho: &DensityMatrix) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rho.m.nrows(), rho.m.ncols());
        self.accumulate(&rho.m, 1.0, &mut out);
        out
    }

    fn accumulate(&self, rho: &DMatrix<f64>, scale: f64, out: &mut DMatrix<f64>) {
        let n = rho.nrows();
        let top = n - 1;
        for j in 0..n {
            for i in 0..=j {
                let mut v = self.diag[(i, j)] * rho[(i, j)];
                if j < top {
                    v += self.loss[(i, j)] * rho[(i + 1, j + 1)];
                }
                if i > 0 {
                    v += self.gain[(i, j)] * rho[(i - 1, j - 1)];
                }
                out[(i, j)] += scale * v;
            }
        }
        mirror_upper(out);
    }

    /// One Euler step `ρ + T_a Lρ`, followed by the positivity guard.
    pub fn step(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        if self.params.is_trivial() {
            return Ok(rho.clone());
        }
        let mut out = rho.m.clone();
        self.accumulate(&rho.m, self.params.sample_period, &mut out);
        enforce_positivity(out, self.tolerance)
    }
}

/// Clamps slightly negative eigenvalues to zero and renormalizes the trace;
/// fails if the most negative eigenvalue is below `-tolerance`.
pub fn enforce_positivity(m: DMatrix<f64>, tolerance: f64) -> Result<DensityMatrix> {
    let n = m.nrows();
    let shifted = &m + DMatrix::identity(n, n) * CLAMP_FLOOR;
    if Cholesky::new(shifted).is_some() {
        return Ok(DensityMatrix { m });
    }
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.min();
    if min < -tolerance {
        return Err(Error::NegativeEigenvalue { min, tolerance });
    }
    let clamped = eig.eigenvalues.map(|x| x.max(0.0));
    let mut rebuilt =
        &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    mirror_upper(&mut rebuilt);
    let tr = rebuilt.trace();
    rebuilt /= tr;
    Ok(DensityMatrix { m: rebuilt })
}

/// `Lρ` with both the loss and the thermal gain channels.
pub fn lindblad(rho: &DensityMatrix, params: RelaxationParams) -> DMatrix<f64> {
    let params = RelaxationParams {
        sample_period: 0.0,
        ..params
    };
    Relaxation::new(params, rho.dim())
        .expect("zero-length step is always valid")
        .generator(rho)
}

/// First-order relaxation over one sample period.
pub fn relax_step(rho: &DensityMatrix, params: RelaxationParams) -> Result<DensityMatrix> {
    Relaxation::new(params, rho.dim())?.step(rho)
}

/// Overlap with the target Fock state, `ρ[n_tag][n_tag]`.
pub fn fidelity(rho: &DensityMatrix, n_tag: usize) -> Result<f64> {
    rho.dim().check(n_tag)?;
    Ok(rho.population(n_tag))
}

pub fn mean_photon(rho: &DensityMatrix) -> f64 {
    rho.m
        .diagonal()
        .iter()
        .enumerate()
        .map(|(n, p)| n as f64 * p)
        .sum()
}
