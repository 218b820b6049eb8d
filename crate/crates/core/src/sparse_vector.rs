//! Streaming AboveThreshold (sparse vector technique).
//!
//! The threshold is perturbed once with `Lap(2 s / eps)` at construction and
//! every query is perturbed with a fresh `Lap(4 s / eps)`, where `s` is the
//! declared query sensitivity. The first query that falls below the noisy
//! threshold is answered [`Answer::Bottom`] and the instance halts for good.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::noise::{sample_laplace, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Answer {
    Top,
    Bottom,
}

#[derive(Debug, Clone)]
pub struct AboveThreshold {
    threshold: f64,
    noisy_threshold: f64,
    epsilon: f64,
    sensitivity: f64,
    halted: bool,
    steps: usize,
}

impl AboveThreshold {
    pub fn new(
        threshold: f64,
        epsilon: f64,
        sensitivity: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        ensure_positive("AboveThreshold epsilon", epsilon)?;
        ensure_positive("AboveThreshold sensitivity", sensitivity)?;
        if !threshold.is_finite() {
            return Err(crate::error::invalid("threshold must be finite"));
        }
        let noisy_threshold = threshold - sample_laplace(2.0 * sensitivity / epsilon, rng)?;
        Ok(Self {
            threshold,
            noisy_threshold,
            epsilon,
            sensitivity,
            halted: false,
            steps: 0,
        })
    }

    /// Compares `query_value` plus `Lap(4 s / eps)` against the noisy threshold.
    pub fn step(&mut self, query_value: f64, rng: &mut RngStream) -> Result<Answer> {
        if self.halted {
            return Err(Error::Usage("AboveThreshold already halted".into()));
        }
        let nu = sample_laplace(self.query_noise_scale(), rng)?;
        self.steps += 1;
        if query_value + nu < self.noisy_threshold {
            self.halted = true;
            Ok(Answer::Bottom)
        } else {
            Ok(Answer::Top)
        }
    }

    pub fn query_noise_scale(&self) -> f64 {
        4.0 * self.sensitivity / self.epsilon
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn noisy_threshold(&self) -> f64 {
        self.noisy_threshold
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Accuracy radius `8 s ln(2T/gamma) / eps` of AboveThreshold over `T` queries.
pub fn accuracy_radius(queries: usize, gamma: f64, epsilon: f64, sensitivity: f64) -> f64 {
    8.0 * sensitivity * (2.0 * queries as f64 / gamma).ln() / epsilon
}
