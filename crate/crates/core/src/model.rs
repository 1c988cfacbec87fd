//! Atomic configurations, model parameters and the conserved excitation number.
//!
//! All energies and couplings are dimensionless, measured in units of the
//! field frequency (which is fixed to 1).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("level energies must be ascending, got ({0}, {1}, {2})")]
    OrderingViolation(f64, f64, f64),
    #[error("coupling {coupling} must be zero in the {config} configuration (got {value})")]
    ForbiddenCoupling {
        config: Configuration,
        coupling: Coupling,
        value: f64,
    },
    #[error("number of atoms must be positive")]
    NonPositiveAtoms,
    #[error("non-finite parameter {0}")]
    NonFinite(&'static str),
    #[error("unknown configuration '{0}' (expected xi, lambda or v)")]
    UnknownConfiguration(String),
    #[error("unknown coupling '{0}' (expected mu12, mu13 or mu23)")]
    UnknownCoupling(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Which two of the three level pairs are dipole coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Configuration {
    /// Ladder: 1-2 and 2-3.
    Xi,
    /// 1-3 and 2-3.
    Lambda,
    /// 1-2 and 1-3.
    V,
}

impl Configuration {
    pub const ALL: [Configuration; 3] = [Configuration::Xi, Configuration::Lambda, Configuration::V];

    /// The coupling this configuration forces to zero.
    pub fn forbidden(self) -> Coupling {
        match self {
            Configuration::Xi => Coupling::Mu13,
            Configuration::Lambda => Coupling::Mu12,
            Configuration::V => Coupling::Mu23,
        }
    }

    /// The two active couplings, in the (x, y) order used for coupling-plane scans.
    pub fn axes(self) -> (Coupling, Coupling) {
        match self {
            Configuration::Xi => (Coupling::Mu12, Coupling::Mu23),
            Configuration::Lambda => (Coupling::Mu13, Coupling::Mu23),
            Configuration::V => (Coupling::Mu12, Coupling::Mu13),
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Configuration::Xi => "xi",
            Configuration::Lambda => "lambda",
            Configuration::V => "v",
        })
    }
}

impl FromStr for Configuration {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "xi" | "ladder" => Ok(Configuration::Xi),
            "lambda" => Ok(Configuration::Lambda),
            "v" => Ok(Configuration::V),
            other => Err(ModelError::UnknownConfiguration(other.to_string())),
        }
    }
}

/// A dipolar coupling between two levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    Mu12,
    Mu13,
    Mu23,
}

impl Coupling {
    pub const ALL: [Coupling; 3] = [Coupling::Mu12, Coupling::Mu13, Coupling::Mu23];

    /// Zero-based (lower, upper) level indices.
    pub fn levels(self) -> (usize, usize) {
        match self {
            Coupling::Mu12 => (0, 1),
            Coupling::Mu13 => (0, 2),
            Coupling::Mu23 => (1, 2),
        }
    }
}

impl fmt::Display for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Coupling::Mu12 => "mu12",
            Coupling::Mu13 => "mu13",
            Coupling::Mu23 => "mu23",
        })
    }
}

impl FromStr for Coupling {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mu12" => Ok(Coupling::Mu12),
            "mu13" => Ok(Coupling::Mu13),
            "mu23" => Ok(Coupling::Mu23),
            other => Err(ModelError::UnknownCoupling(other.to_string())),
        }
    }
}

/// Coefficients of the conserved excitation number
/// `M = a†a + w1 A11 + w2 A22 + w3 A33`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcitationWeights {
    pub field_weight: u32,
    pub level_weights: [u32; 3],
}

impl ExcitationWeights {
    /// Excitation count of an atomic occupation plus photons.
    pub fn count(&self, occupations: [u32; 3], photons: u32) -> u32 {
        self.field_weight * photons
            + occupations
                .iter()
                .zip(self.level_weights.iter())
                .map(|(n, w)| n * w)
                .sum::<u32>()
    }
}

pub fn excitation_weights(config: Configuration) -> ExcitationWeights {
    let level_weights = match config {
        Configuration::Xi => [0, 1, 2],
        Configuration::Lambda => [0, 0, 1],
        Configuration::V => [0, 1, 1],
    };
    ExcitationWeights {
        field_weight: 1,
        level_weights,
    }
}

/// Physical parameters of one model instance.
///
/// Couplings keep the sign they were given; every energy formula downstream
/// depends only on their magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
    pub mu12: f64,
    pub mu13: f64,
    pub mu23: f64,
    pub config: Configuration,
    pub n_atoms: u32,
}

impl ModelParams {
    /// Parameters with all couplings switched off.
    pub fn new(config: Configuration, omegas: [f64; 3], n_atoms: u32) -> Self {
        ModelParams {
            omega1: omegas[0],
            omega2: omegas[1],
            omega3: omegas[2],
            mu12: 0.0,
            mu13: 0.0,
            mu23: 0.0,
            config,
            n_atoms,
        }
    }

    /// Ladder configuration at the resonance used for the ladder figures,
    /// `omega = (0, 1, 2)`.
    pub fn xi_resonant(mu12: f64, mu23: f64, n_atoms: u32) -> Self {
        ModelParams::new(Configuration::Xi, [0.0, 1.0, 2.0], n_atoms)
            .with_coupling(Coupling::Mu12, mu12)
            .with_coupling(Coupling::Mu23, mu23)
    }

    pub fn with_coupling(mut self, coupling: Coupling, value: f64) -> Self {
        *self.coupling_mut(coupling) = value;
        self
    }

    pub fn with_n_atoms(mut self, n_atoms: u32) -> Self {
        self.n_atoms = n_atoms;
        self
    }

    pub fn coupling(&self, coupling: Coupling) -> f64 {
        match coupling {
            Coupling::Mu12 => self.mu12,
            Coupling::Mu13 => self.mu13,
            Coupling::Mu23 => self.mu23,
        }
    }

    pub fn coupling_mut(&mut self, coupling: Coupling) -> &mut f64 {
        match coupling {
            Coupling::Mu12 => &mut self.mu12,
            Coupling::Mu13 => &mut self.mu13,
            Coupling::Mu23 => &mut self.mu23,
        }
    }

    pub fn omegas(&self) -> [f64; 3] {
        [self.omega1, self.omega2, self.omega3]
    }

    /// `omega2 - omega1`.
    pub fn omega21(&self) -> f64 {
        self.omega2 - self.omega1
    }

    /// `omega3 - omega1`.
    pub fn omega31(&self) -> f64 {
        self.omega3 - self.omega1
    }

    /// `omega3 - omega2`.
    pub fn omega32(&self) -> f64 {
        self.omega3 - self.omega2
    }

    pub fn validate(self) -> Result<Self, ModelError> {
        validate(self)
    }

    /// Parses the flat `key = value` format. Lines starting with `#` are
    /// comments; unknown keys are rejected. Missing energies default to
    /// `(0, 1, 2)`, missing couplings to 0 and a missing atom count to 1.
    pub fn from_kv_str(text: &str) -> Result<Self, ModelError> {
        let mut config = None;
        let mut params = ModelParams::new(Configuration::Xi, [0.0, 1.0, 2.0], 1);
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| ModelError::Parse {
                    line: line_no,
                    msg: format!("expected 'key = value', got '{line}'"),
                })?;
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim().trim_matches('"');
            let real = |v: &str| {
                v.parse::<f64>().map_err(|e| ModelError::Parse {
                    line: line_no,
                    msg: format!("{key}: {e}"),
                })
            };
            match key.as_str() {
                "config" => config = Some(value.parse::<Configuration>()?),
                "omega1" => params.omega1 = real(value)?,
                "omega2" => params.omega2 = real(value)?,
                "omega3" => params.omega3 = real(value)?,
                "mu12" => params.mu12 = real(value)?,
                "mu13" => params.mu13 = real(value)?,
                "mu23" => params.mu23 = real(value)?,
                "n_atoms" => {
                    params.n_atoms = value.parse::<u32>().map_err(|e| ModelError::Parse {
                        line: line_no,
                        msg: format!("n_atoms: {e}"),
                    })?
                }
                _ => {
                    return Err(ModelError::Parse {
                        line: line_no,
                        msg: format!("unknown key '{key}'"),
                    })
                }
            }
        }
        params.config = config.ok_or(ModelError::Parse {
            line: 0,
            msg: "missing 'config' key".into(),
        })?;
        Ok(params)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "config = {}\nomega1 = {}\nomega2 = {}\nomega3 = {}\nmu12 = {}\nmu13 = {}\nmu23 = {}\nn_atoms = {}\n",
            self.config, self.omega1, self.omega2, self.omega3, self.mu12, self.mu13, self.mu23, self.n_atoms
        )
    }
}

/// Checks the level ordering, the forbidden coupling and the atom count.
/// Negative couplings are accepted.
pub fn validate(params: ModelParams) -> Result<ModelParams, ModelError> {
    let named = [
        ("omega1", params.omega1),
        ("omega2", params.omega2),
        ("omega3", params.omega3),
        ("mu12", params.mu12),
        ("mu13", params.mu13),
        ("mu23", params.mu23),
    ];
    if let Some((name, _)) = named.iter().find(|(_, v)| !v.is_finite()) {
        return Err(ModelError::NonFinite(name));
    }
    if !(params.omega1 <= params.omega2 && params.omega2 <= params.omega3) {
        return Err(ModelError::OrderingViolation(
            params.omega1,
            params.omega2,
            params.omega3,
        ));
    }
    let forbidden = params.config.forbidden();
    let value = params.coupling(forbidden);
    if value != 0.0 {
        return Err(ModelError::ForbiddenCoupling {
            config: params.config,
            coupling: forbidden,
            value,
        });
    }
    if params.n_atoms == 0 {
        return Err(ModelError::NonPositiveAtoms);
    }
    Ok(params)
}
