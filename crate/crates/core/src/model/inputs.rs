use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::ModelError;

/// Condition vector of one pipe.
///
/// `u_init` holds up to `S` sensor readings of the initial fraction, zero
/// padded, with `mask` marking real readings by 1. `u_bound` holds `K`
/// samples of the pipe's inlet boundary signal; `indirect` is set when the
/// pipe is fed by a junction and `u_bound` is an upstream operational proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchInput {
    pub pipe_id: String,
    pub u_init: Vec<f64>,
    pub mask: Vec<f64>,
    pub u_bound: Vec<f64>,
    #[serde(default)]
    pub indirect: bool,
}

impl BranchInput {
    pub fn validate(&self, sensors: usize, boundary_samples: usize) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::Config(format!("branch input `{}`: {what}", self.pipe_id)));
        if self.u_init.len() != sensors || self.mask.len() != sensors {
            return bad(&format!(
                "expected {sensors} sensor slots, got {} readings and {} mask entries",
                self.u_init.len(),
                self.mask.len()
            ));
        }
        if self.u_bound.len() != boundary_samples {
            return bad(&format!(
                "expected {boundary_samples} boundary samples, got {}",
                self.u_bound.len()
            ));
        }
        if self.u_init.iter().chain(&self.u_bound).any(|w| !(0.0..=1.0).contains(w)) {
            return bad("fractions must lie in [0, 1]");
        }
        if self.mask.iter().any(|m| *m != 0.0 && *m != 1.0) {
            return bad("mask entries must be 0 or 1");
        }
        Ok(())
    }

    /// `[u_init; mask; u_bound; indirect]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.u_init.len() + self.u_bound.len() + 1);
        v.extend(&self.u_init);
        v.extend(&self.mask);
        v.extend(&self.u_bound);
        v.push(if self.indirect { 1.0 } else { 0.0 });
        v
    }
}

/// A condition reordered to model pipe order and flattened to branch vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCondition {
    vectors: Vec<Vec<f64>>,
}

impl EncodedCondition {
    pub fn new(inputs: &[BranchInput], pipe_ids: &[String], config: &ModelConfig) -> Result<Self, ModelError> {
        for input in inputs {
            if !pipe_ids.contains(&input.pipe_id) {
                return Err(ModelError::UnknownPipe(input.pipe_id.clone()));
            }
        }
        let vectors = pipe_ids
            .iter()
            .map(|id| {
                let mut matching = inputs.iter().filter(|i| &i.pipe_id == id);
                let input = matching.next().ok_or_else(|| ModelError::MissingInput(id.clone()))?;
                if matching.next().is_some() {
                    return Err(ModelError::Config(format!("duplicate branch input for `{id}`")));
                }
                input.validate(config.sensors, config.boundary_samples)?;
                Ok(input.to_vector())
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { vectors })
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
}

/// Query point: a pipe, relative position along it and time normalized by the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrunkInput {
    pub pipe_id: String,
    pub x_rel: f64,
    pub t_rel: f64,
}

impl TrunkInput {
    pub fn new(pipe_id: impl Into<String>, x_rel: f64, t_rel: f64) -> Self {
        Self {
            pipe_id: pipe_id.into(),
            x_rel,
            t_rel,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.x_rel) {
            return Err(ModelError::QueryOutOfRange("x_rel"));
        }
        if !(0.0..=1.0).contains(&self.t_rel) {
            return Err(ModelError::QueryOutOfRange("t_rel"));
        }
        Ok(())
    }
}
