//! Lyapunov feedback law with a constant-kick escape branch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, FockDim};

/// Safety rail on the injected amplitude.
pub const MAX_AMPLITUDE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub n_tag: usize,
    /// Gain of the Lyapunov branch.
    pub c1: f64,
    /// Kick amplitude.
    pub c2: f64,
    /// Fidelity below which the kick branch is used.
    pub epsilon: f64,
}

impl ControlParams {
    /// Parameters with `c1` defaulting to [`default_gain`].
    pub fn new(n_tag: usize, c1: Option<f64>, c2: f64, epsilon: f64) -> Self {
        Self {
            n_tag,
            c1: c1.unwrap_or_else(|| default_gain(n_tag)),
            c2,
            epsilon,
        }
    }

    pub fn validate(&self, dim: FockDim) -> Result<()> {
        if self.n_tag + 1 > dim.n_max() {
            return Err(Error::Config(format!(
                "n_tag = {} needs n_max >= n_tag + 1, have {dim}",
                self.n_tag
            )));
        }
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(Error::Config(format!("c1 must be positive, got {}", self.c1)));
        }
        if !(self.c2 > 0.0 && self.c2 <= MAX_AMPLITUDE) {
            return Err(Error::Config(format!("c2 must be in (0, {MAX_AMPLITUDE}], got {}", self.c2)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon must be in (0, 1), got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Gain maximizing the second-order fidelity gain near the target:
/// `1/tr([ρ_tag, a^dag - a]²) = 1/(4 n_tag + 2)`.
pub fn default_gain(n_tag: usize) -> f64 {
    1.0 / (4.0 * n_tag as f64 + 2.0)
}

/// `tr([ρ_tag, a^dag - a] ρ)` for real symmetric `ρ`.
///
/// Only the coherences `ρ_{n-1,n}` and `ρ_{n,n+1}` around the target survive:
/// the trace equals `2√n ρ_{n-1,n} - 2√(n+1) ρ_{n,n+1}`.
pub fn lyapunov_trace(rho: &DensityMatrix, n_tag: usize) -> f64 {
    let n = n_tag;
    let top = rho.dim().n_max();
    let mut t = 0.0;
    if n >= 1 && n <= top {
        t += 2.0 * (n as f64).sqrt() * rho.get(n - 1, n);
    }
    if n < top {
        t -= 2.0 * ((n + 1) as f64).sqrt() * rho.get(n, n + 1);
    }
    t
}

pub fn lyapunov_amplitude(rho: &DensityMatrix, n_tag: usize, c1: f64) -> f64 {
    c1 * lyapunov_trace(rho, n_tag)
}

/// Which branch of the feedback law produced a control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Lyapunov,
    Kick,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub alpha: f64,
    pub branch: Branch,
    /// Set when `|alpha|` hit [`MAX_AMPLITUDE`].
    pub clamped: bool,
}

/// Lyapunov amplitude when `F(ρ) >= ε`, otherwise a kick of size `c2` towards
/// the target photon number (`sign(0) = +1`).
pub fn compute_control(rho: &DensityMatrix, params: &ControlParams) -> Control {
    let fidelity = rho.population(params.n_tag);
    let (alpha, branch) = if fidelity >= params.epsilon {
        (lyapunov_amplitude(rho, params.n_tag, params.c1), Branch::Lyapunov)
    } else {
        let mean: f64 = rho
            .populations()
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum();
        let sign = if params.n_tag as f64 - mean >= 0.0 { 1.0 } else { -1.0 };
        (params.c2 * sign, Branch::Kick)
    };
    let clamped = alpha.abs() > MAX_AMPLITUDE;
    Control {
        alpha: alpha.clamp(-MAX_AMPLITUDE, MAX_AMPLITUDE),
        branch,
        clamped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_state, displacement_generator};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn full_trace(rho: &DensityMatrix, n_tag: usize) -> f64 {
        let x = displacement_generator(rho.dim());
        let size = rho.dim().size();
        let mut tag = DMatrix::zeros(size, size);
        tag[(n_tag, n_tag)] = 1.0;
        let comm = &tag * &x - &x * &tag;
        (comm * rho.matrix()).trace()
    }

    #[test]
    fn gain_values() {
        assert_abs_diff_eq!(default_gain(3), 1.0 / 14.0, epsilon = 1e-15);
        assert_abs_diff_eq!(default_gain(3), 0.071429, epsilon = 1e-6);
        assert_eq!(default_gain(0), 0.5);
    }

    #[test]
    fn gain_matches_commutator_trace() {
        for n_max in [4, 9] {
            let dim = FockDim::new(n_max).unwrap();
            let x = displacement_generator(dim);
            for n_tag in 0..n_max {
                let mut tag = DMatrix::zeros(n_max + 1, n_max + 1);
                tag[(n_tag, n_tag)] = 1.0;
                let c = &tag * &x - &x * &tag;
                assert_abs_diff_eq!((&c * &c).trace(), 4.0 * n_tag as f64 + 2.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fock_states_give_zero_amplitude() {
        let dim = FockDim::new(9).unwrap();
        for n in 0..10 {
            let rho = DensityMatrix::fock(n, dim).unwrap();
            assert_eq!(lyapunov_amplitude(&rho, 3, default_gain(3)), 0.0);
        }
    }

    #[test]
    fn coherence_example() {
        let mut m = DMatrix::zeros(10, 10);
        m[(2, 2)] = 0.4;
        m[(3, 3)] = 0.6;
        m[(2, 3)] = 0.1;
        m[(3, 2)] = 0.1;
        let rho = DensityMatrix::new(m).unwrap();
        let expected = (1.0 / 14.0) * 2.0 * 3f64.sqrt() * 0.1;
        assert_abs_diff_eq!(lyapunov_amplitude(&rho, 3, 1.0 / 14.0), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.02474, epsilon = 1e-5);
        assert_abs_diff_eq!(lyapunov_trace(&rho, 3), full_trace(&rho, 3), epsilon = 1e-15);
    }

    #[test]
    fn reduced_trace_matches_full_trace() {
        let dim = FockDim::new(9).unwrap();
        for nbar in [0.5, 2.0, 3.0, 5.0] {
            let rho = coherent_state(nbar, dim).unwrap();
            for n_tag in 0..=9 {
                assert_abs_diff_eq!(lyapunov_trace(&rho, n_tag), full_trace(&rho, n_tag), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn control_branches() {
        let dim = FockDim::new(9).unwrap();
        let params = ControlParams::new(3, None, 0.1, 0.1);
        let tag = DensityMatrix::fock(3, dim).unwrap();
        let c = compute_control(&tag, &params);
        assert_eq!(c.alpha, 0.0);
        assert_eq!(c.branch, Branch::Lyapunov);

        let c = compute_control(&DensityMatrix::vacuum(dim), &params);
        assert_eq!(c.alpha, 0.1);
        assert_eq!(c.branch, Branch::Kick);

        let high = coherent_state(8.0, dim).unwrap();
        assert!(high.population(3) < 0.1);
        assert_eq!(compute_control(&high, &params).alpha, -0.1);
    }

    #[test]
    fn kick_sign_at_zero_offset() {
        let mut pops = vec![0.0; 10];
        pops[2] = 0.5;
        pops[4] = 0.5;
        let rho = DensityMatrix::diagonal(&pops).unwrap();
        let c = compute_control(&rho, &ControlParams::new(3, None, 0.1, 0.1));
        assert_eq!(c.alpha, 0.1);
    }

    #[test]
    fn amplitude_is_clamped() {
        let dim = FockDim::new(9).unwrap();
        let rho = coherent_state(2.0, dim).unwrap();
        let params = ControlParams::new(3, Some(100.0), 0.1, 0.1);
        let c = compute_control(&rho, &params);
        assert!(c.clamped);
        assert_eq!(c.alpha.abs(), MAX_AMPLITUDE);
    }

    #[test]
    fn validation() {
        let dim = FockDim::new(9).unwrap();
        assert!(ControlParams::new(9, None, 0.1, 0.1).validate(dim).is_err());
        assert!(ControlParams::new(8, None, 0.1, 0.1).validate(dim).is_ok());
        assert!(ControlParams::new(3, None, 0.0, 0.1).validate(dim).is_err());
        assert!(ControlParams::new(3, None, 0.1, 1.5).validate(dim).is_err());
    }
}
