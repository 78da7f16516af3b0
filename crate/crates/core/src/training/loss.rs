use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Focal exponent used when none is given.
pub const DEFAULT_GAMMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Focal,
}

impl LossKind {
    pub const ALL: [LossKind; 2] = [LossKind::Bce, LossKind::Focal];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Focal => "focal",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "focal" => Ok(LossKind::Focal),
            other => Err(Error::InvalidParam(format!("unknown loss `{other}`"))),
        }
    }
}

/// A loss kind together with its focal exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loss {
    pub kind: LossKind,
    pub gamma: f64,
}

impl Loss {
    pub fn bce() -> Self {
        Self {
            kind: LossKind::Bce,
            gamma: 0.0,
        }
    }

    pub fn focal(gamma: f64) -> Self {
        Self {
            kind: LossKind::Focal,
            gamma,
        }
    }

    pub fn value(&self, sim: f64, label: u8) -> f64 {
        match self.kind {
            LossKind::Bce => bce_loss(sim, label),
            LossKind::Focal => focal_loss(sim, label, self.gamma),
        }
    }

    /// dL/dsim of the clamped loss. Zero where the clamp is active.
    pub fn dsim(&self, sim: f64, label: u8) -> f64 {
        if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&sim) {
            return 0.0;
        }
        let g = match self.kind {
            LossKind::Bce => 0.0,
            LossKind::Focal => self.gamma,
        };
        if label == 1 {
            // L = −(1−s)^γ ln s
            let q = 1.0 - sim;
            let mut d = -q.powf(g) / sim;
            if g != 0.0 {
                d += g * q.powf(g - 1.0) * sim.ln();
            }
            d
        } else {
            // L = −s^γ ln(1−s)
            let q = 1.0 - sim;
            let mut d = sim.powf(g) / q;
            if g != 0.0 {
                d -= g * sim.powf(g - 1.0) * q.ln();
            }
            d
        }
    }
}

fn clamp(sim: f64) -> f64 {
    sim.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `−label·ln(s) − (1−label)·ln(1−s)` on the clamped similarity.
pub fn bce_loss(sim: f64, label: u8) -> f64 {
    let s = clamp(sim);
    if label == 1 {
        -s.ln()
    } else {
        -(1.0 - s).ln()
    }
}

/// `−(1−s)^γ ln s` for positives, `−s^γ ln(1−s)` for negatives.
pub fn focal_loss(sim: f64, label: u8, gamma: f64) -> f64 {
    let s = clamp(sim);
    if label == 1 {
        -(1.0 - s).powf(gamma) * s.ln()
    } else {
        -s.powf(gamma) * (1.0 - s).ln()
    }
}
