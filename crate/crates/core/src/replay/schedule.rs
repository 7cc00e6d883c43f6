//! Variance schedule for the denoising diffusion process.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Default linear schedule bounds.
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;
pub const DEFAULT_STEPS: usize = 100;

/// Beta sequence with the derived alpha and alpha-bar products.
///
/// Steps are 1-indexed in the diffusion math; `beta(t)` takes `t` in
/// `1..=steps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    #[serde(skip)]
    alphas: Vec<f64>,
    #[serde(skip)]
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::contract("schedule needs at least one step"));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(0.0..1.0).contains(&b) || b == 0.0 {
                return Err(Error::Domain(format!("beta[{i}] = {b} outside (0, 1)")));
            }
            if i > 0 && betas[i - 1] >= b {
                return Err(Error::Domain(format!(
                    "betas must increase strictly: beta[{}]={} >= beta[{i}]={b}",
                    i - 1,
                    betas[i - 1]
                )));
            }
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Linear schedule from `beta_min` to `beta_max` over `steps` steps.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::contract("schedule needs at least one step"));
        }
        let betas = if steps == 1 {
            vec![beta_min]
        } else {
            (0..steps)
                .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        NoiseSchedule::from_betas(betas)
    }

    pub fn default_linear() -> Self {
        NoiseSchedule::linear(DEFAULT_STEPS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).unwrap()
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    /// Recompute derived products after deserialization.
    pub fn rebuild(self) -> Result<Self> {
        NoiseSchedule::from_betas(self.betas)
    }
}
