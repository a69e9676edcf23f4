//! Experiment configuration: flat `key = value` files with `#` comments.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::ControlParams;
use crate::error::{Error, Result};
use crate::filter::ImperfectionParams;
use crate::fock::{amplitude_limit, coherent_state, FockDim, RelaxationParams};
use crate::measurement::{midfringe_phase, DephasingModel, KrausPair, PhaseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// No damping, every sample holds one atom, perfect detection, no delay.
    Ideal,
    Realistic,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(Self::Ideal),
            "realistic" => Ok(Self::Realistic),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ideal => "ideal",
            Self::Realistic => "realistic",
        }
    }
}

/// All physical and loop parameters. Defaults describe the lossy experimental set-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub n_max: usize,
    pub n_tag: usize,
    /// Cavity damping time in s; `inf` disables damping.
    #[serde(with = "extended_f64")]
    pub t_cav: f64,
    /// Sample period in s.
    pub t_a: f64,
    pub n_th: f64,
    pub eta_a: f64,
    pub eta_d: f64,
    pub eta_f: f64,
    /// Detection delay in samples.
    pub d: usize,
    /// Dephasing per photon (rad) of the linear light-shift model.
    pub phi_bar: f64,
    /// Measured `Φ(0..=n_max)`; overrides `phi_bar` when present.
    pub dephasing_table: Option<Vec<f64>>,
    pub sigma_r: f64,
    /// `None` selects `1/(4 n_tag + 2)`.
    pub c1: Option<f64>,
    pub c2: f64,
    pub epsilon: f64,
    /// Initial coherent amplitude; `None` selects `sqrt(n_tag)`.
    pub alpha0: Option<f64>,
    pub cycles: usize,
    pub trajectories: usize,
    pub seed: u64,
    /// Estimated fidelity that counts as a converged preparation.
    pub f_conv: f64,
    /// Fidelity threshold behind the "converged after k cycles" fraction.
    pub f_settled: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Realistic,
            n_max: 9,
            n_tag: 3,
            t_cav: 0.13,
            t_a: 85e-6,
            n_th: 0.05,
            eta_a: 0.3,
            eta_d: 0.8,
            eta_f: 0.1,
            d: 4,
            phi_bar: PI / 7.0,
            dephasing_table: None,
            sigma_r: 0.69,
            c1: None,
            c2: 0.1,
            epsilon: 0.1,
            alpha0: None,
            cycles: 1000,
            trajectories: 1000,
            seed: 1,
            f_conv: 0.95,
            f_settled: 0.8,
        }
    }
}

const KEYS: &[&str] = &[
    "mode",
    "n_max",
    "n_tag",
    "t_cav",
    "t_a",
    "n_th",
    "eta_a",
    "eta_d",
    "eta_f",
    "d",
    "phi_bar",
    "dephasing_table",
    "sigma_r",
    "c1",
    "c2",
    "epsilon",
    "alpha0",
    "cycles",
    "trajectories",
    "seed",
    "f_conv",
    "f_settled",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_auto(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn fmt_auto(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl ExperimentConfig {
    /// Defaults of the idealized setting (no damping, perfect atoms and detector).
    pub fn ideal() -> Self {
        Self {
            mode: Mode::Ideal,
            t_cav: f64::INFINITY,
            eta_a: 1.0,
            eta_d: 1.0,
            eta_f: 0.0,
            d: 0,
            cycles: 200,
            ..Self::default()
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = value.parse()?,
            "n_max" => self.n_max = parse_num(key, value)?,
            "n_tag" => self.n_tag = parse_num(key, value)?,
            "t_cav" => self.t_cav = parse_num(key, value)?,
            "t_a" => self.t_a = parse_num(key, value)?,
            "n_th" => self.n_th = parse_num(key, value)?,
            "eta_a" => self.eta_a = parse_num(key, value)?,
            "eta_d" => self.eta_d = parse_num(key, value)?,
            "eta_f" => self.eta_f = parse_num(key, value)?,
            "d" => self.d = parse_num(key, value)?,
            "phi_bar" => self.phi_bar = parse_num(key, value)?,
            "dephasing_table" => {
                self.dephasing_table = if value == "none" {
                    None
                } else {
                    Some(
                        value
                            .split(',')
                            .map(|v| parse_num(key, v.trim()))
                            .collect::<Result<_>>()?,
                    )
                }
            }
            "sigma_r" => self.sigma_r = parse_num(key, value)?,
            "c1" => self.c1 = parse_auto(key, value)?,
            "c2" => self.c2 = parse_num(key, value)?,
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "alpha0" => self.alpha0 = parse_auto(key, value)?,
            "cycles" => self.cycles = parse_num(key, value)?,
            "trajectories" => self.trajectories = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "f_conv" => self.f_conv = parse_num(key, value)?,
            "f_settled" => self.f_settled = parse_num(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key `{other}` (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Canonical `key = value` rendering; parsing it gives back `self`.
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        let table = self.dephasing_table.as_ref().map_or_else(
            || "none".to_string(),
            |t| t.iter().map(f64::to_string).collect::<Vec<_>>().join(", "),
        );
        let values: [String; 22] = [
            self.mode.as_str().to_string(),
            self.n_max.to_string(),
            self.n_tag.to_string(),
            self.t_cav.to_string(),
            self.t_a.to_string(),
            self.n_th.to_string(),
            self.eta_a.to_string(),
            self.eta_d.to_string(),
            self.eta_f.to_string(),
            self.d.to_string(),
            self.phi_bar.to_string(),
            table,
            self.sigma_r.to_string(),
            fmt_auto(self.c1),
            self.c2.to_string(),
            self.epsilon.to_string(),
            fmt_auto(self.alpha0),
            self.cycles.to_string(),
            self.trajectories.to_string(),
            self.seed.to_string(),
            self.f_conv.to_string(),
            self.f_settled.to_string(),
        ];
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of [`to_config_text`](Self::to_config_text), hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_config_text().as_bytes()))
    }

    pub fn dim(&self) -> FockDim {
        FockDim::new(self.n_max).expect("validated config")
    }

    pub fn is_ideal(&self) -> bool {
        self.mode == Mode::Ideal
    }

    /// Damping actually simulated (none in ideal mode).
    pub fn relaxation(&self) -> RelaxationParams {
        let t_cav = if self.is_ideal() { f64::INFINITY } else { self.t_cav };
        RelaxationParams::from_cavity_lifetime(t_cav, self.n_th, self.t_a)
    }

    /// Imperfections actually simulated (none in ideal mode).
    pub fn imperfections(&self) -> ImperfectionParams {
        if self.is_ideal() {
            ImperfectionParams::ideal()
        } else {
            ImperfectionParams {
                eta_a: self.eta_a,
                eta_d: self.eta_d,
                eta_f: self.eta_f,
                delay: self.d,
            }
        }
    }

    pub fn dephasing(&self) -> Result<DephasingModel> {
        match &self.dephasing_table {
            Some(t) => DephasingModel::tabulated(t.clone()),
            None => DephasingModel::linear(self.phi_bar),
        }
    }

    pub fn schedule(&self) -> Result<PhaseSchedule> {
        let model = self.dephasing()?;
        Ok(PhaseSchedule::new(midfringe_phase(self.n_tag, &model), self.sigma_r))
    }

    pub fn kraus_pairs(&self) -> Result<[KrausPair; 4]> {
        let model = self.dephasing()?;
        self.schedule()?.kraus_pairs(&model, self.dim())
    }

    pub fn control(&self) -> ControlParams {
        ControlParams::new(self.n_tag, self.c1, self.c2, self.epsilon)
    }

    pub fn initial_amplitude(&self) -> f64 {
        self.alpha0.unwrap_or_else(|| (self.n_tag as f64).sqrt())
    }

    /// Cross-field checks. Returns human-readable warnings for settings that
    /// are legal but questionable.
    pub fn validate(&self) -> Result<Vec<String>> {
        let dim = FockDim::new(self.n_max)?;
        let mut warnings = Vec::new();
        if !(self.t_a > 0.0 && self.t_a.is_finite()) {
            return Err(Error::Config(format!("t_a must be positive, got {}", self.t_a)));
        }
        if !(self.t_cav > 0.0) {
            return Err(Error::Config(format!("t_cav must be positive, got {}", self.t_cav)));
        }
        if !(self.n_th >= 0.0 && self.n_th.is_finite()) {
            return Err(Error::Config(format!("n_th must be >= 0, got {}", self.n_th)));
        }
        self.imperfections().validate()?;
        ImperfectionParams {
            eta_a: self.eta_a,
            eta_d: self.eta_d,
            eta_f: self.eta_f,
            delay: self.d,
        }
        .validate()?;
        let relax = self.relaxation();
        relax.validate(dim).map_err(|e| Error::Config(strip(e)))?;
        if relax.step_size(dim) > 0.01 {
            warnings.push(format!(
                "relaxation step kappa*T_a*(n_max+1) = {:.3e} is not small",
                relax.step_size(dim)
            ));
        }
        self.dephasing()?.covers(dim)?;
        if !self.sigma_r.is_finite() {
            return Err(Error::Config("sigma_r must be finite".into()));
        }
        self.control().validate(dim)?;
        let alpha0 = self.initial_amplitude();
        if !(alpha0.abs() <= amplitude_limit(dim)) {
            return Err(Error::Config(format!(
                "alpha0 = {alpha0} exceeds the representable amplitude sqrt(n_max)"
            )));
        }
        if self.cycles == 0 || self.trajectories == 0 {
            return Err(Error::Config("cycles and trajectories must be >= 1".into()));
        }
        for (name, f) in [("f_conv", self.f_conv), ("f_settled", self.f_settled)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1], got {f}")));
            }
        }
        let rho0 = coherent_state(alpha0 * alpha0, dim)?;
        let top: f64 = (self.n_max - 1..=self.n_max).map(|n| rho0.population(n)).sum();
        if top > 1e-2 {
            warnings.push(format!(
                "initial state puts {top:.3} of its population in the top two Fock levels"
            ));
        }
        Ok(warnings)
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

/// Serializes non-finite floats as the strings `inf`, `-inf`, `nan`.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}
