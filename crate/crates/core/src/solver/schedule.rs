//! Cooling schedules for the progressive cardinality budget `Q(t)`.

use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoolingKind {
    Constant,
    Quadratic,
    Sigmoidal,
    Logarithmic,
}

impl CoolingKind {
    pub fn name(&self) -> &'static str {
        match self {
            CoolingKind::Constant => "const",
            CoolingKind::Quadratic => "quad",
            CoolingKind::Sigmoidal => "sig",
            CoolingKind::Logarithmic => "log",
        }
    }
}

impl FromStr for CoolingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "const" | "constant" => Ok(CoolingKind::Constant),
            "quad" | "quadratic" => Ok(CoolingKind::Quadratic),
            "sig" | "sigmoidal" => Ok(CoolingKind::Sigmoidal),
            "log" | "logarithmic" => Ok(CoolingKind::Logarithmic),
            _ => Err(Error::invalid(format!(
                "unknown cooling schedule '{s}' (expected const|quad|sig|log)"
            ))),
        }
    }
}

/// A nonincreasing integer budget sequence from `upper` down to `lower`,
/// reaching `lower` at the horizon and staying there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoolingSchedule {
    pub kind: CoolingKind,
    pub upper: usize,
    pub lower: usize,
    pub horizon: usize,
}

impl CoolingSchedule {
    pub fn new(kind: CoolingKind, upper: usize, lower: usize, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("cooling horizon must be >= 1"));
        }
        if lower > upper {
            return Err(Error::invalid(format!(
                "cooling target {lower} exceeds its starting value {upper}"
            )));
        }
        Ok(Self {
            kind,
            upper,
            lower,
            horizon,
        })
    }

    /// The fixed budget `q` at every iteration.
    pub fn constant(q: usize) -> Self {
        Self {
            kind: CoolingKind::Constant,
            upper: q,
            lower: q,
            horizon: 1,
        }
    }

    /// `Q(t)`.
    pub fn budget(&self, t: usize) -> usize {
        if self.kind == CoolingKind::Constant || t >= self.horizon || self.upper == self.lower {
            return self.lower;
        }
        let u = self.upper as f64;
        let l = self.lower as f64;
        let tf = t as f64;
        let horizon = self.horizon as f64;
        let raw = match self.kind {
            CoolingKind::Constant => l,
            CoolingKind::Quadratic => u - (u - l) / (horizon * horizon) * tf * tf,
            CoolingKind::Sigmoidal => {
                // calibrated so that Q(horizon) rounds to the target
                let target = l.max(0.25);
                let a = (2.0 * u / target - 1.0).ln() / horizon;
                2.0 * u / (1.0 + (a * tf).exp())
            }
            CoolingKind::Logarithmic => {
                if t == 0 {
                    u
                } else {
                    u - (u - l) / horizon.ln() * tf.ln()
                }
            }
        };
        (raw.round().max(l).min(u)) as usize
    }

    /// First iteration index at which the target is reached.
    pub fn settles_at(&self) -> usize {
        if self.kind == CoolingKind::Constant || self.upper == self.lower {
            0
        } else {
            (0..=self.horizon)
                .find(|&t| self.budget(t) == self.lower)
                .unwrap_or(self.horizon)
        }
    }
}
