use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometric penalty schedule: `rho(k) = min(initial * growth^floor(k / period), max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RhoSchedule {
    pub initial: f64,
    pub growth: f64,
    /// ADMM iterations between increases.
    pub period: usize,
    pub max: f64,
}

impl Default for RhoSchedule {
    fn default() -> Self {
        RhoSchedule {
            initial: 1e-3,
            growth: 10.0,
            period: 3,
            max: 1e-1,
        }
    }
}

impl RhoSchedule {
    /// A schedule that never changes `rho`.
    pub fn constant(rho: f64) -> Self {
        RhoSchedule {
            initial: rho,
            growth: 1.0,
            period: 1,
            max: rho,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.initial) || !positive(self.max) {
            return Err(Error::Config("rho initial and max must be positive".into()));
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return Err(Error::Config(format!(
                "rho growth must be >= 1, got {}",
                self.growth
            )));
        }
        if self.period == 0 {
            return Err(Error::Config("rho period must be at least 1".into()));
        }
        Ok(())
    }

    pub fn rho(&self, k: usize) -> f64 {
        let exponent = (k / self.period).min(i32::MAX as usize) as i32;
        (self.initial * self.growth.powi(exponent)).min(self.max)
    }
}
