//! Exact single-pipe solution by the method of characteristics.
//!
//! With a spatially uniform velocity `v(t)` the characteristics satisfy
//! `dx/dt = v(t)`, and the fraction is constant along each one. Tracing the
//! characteristic through `(x, t)` backward either hits the inlet at some
//! time `t0 >= 0` (the value is the boundary signal at `t0`) or reaches
//! `t = 0` inside the pipe (the value is the initial profile there).

use super::schedule::{BoundarySignal, InitialProfile, VelocitySchedule};
use crate::error::TransportError;

#[derive(Debug, Clone, PartialEq)]
pub struct SinglePipeProblem {
    pub length_m: f64,
    pub horizon_s: f64,
    pub initial: InitialProfile,
    pub boundary: BoundarySignal,
    pub velocity: VelocitySchedule,
}

/// Where the backward characteristic from a query point starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CharacteristicFoot {
    Inlet { time_s: f64 },
    Initial { position_m: f64 },
}

impl SinglePipeProblem {
    pub fn foot(&self, x: f64, t: f64) -> Result<CharacteristicFoot, TransportError> {
        if !(0.0..=self.length_m).contains(&x) || !(0.0..=self.horizon_s).contains(&t) {
            return Err(TransportError::QueryOutOfDomain {
                x,
                t,
                length: self.length_m,
                horizon: self.horizon_s,
            });
        }
        let bps = &self.velocity.breakpoints;
        let mut remaining = x;
        let mut time = t;
        // walk intervals backward starting from the one containing t
        let mut i = super::schedule::interval_index(bps, t);
        loop {
            let start = bps[i];
            let v = self.velocity.velocities[i];
            let travel = v * (time - start);
            if travel >= remaining {
                let t0 = if v > 0.0 { time - remaining / v } else { time };
                return Ok(CharacteristicFoot::Inlet { time_s: t0.max(0.0) });
            }
            remaining -= travel;
            time = start;
            if i == 0 {
                return Ok(CharacteristicFoot::Initial { position_m: remaining });
            }
            i -= 1;
        }
    }

    /// Exact fraction at `(x, t)`, up to rounding.
    pub fn fraction_at(&self, x: f64, t: f64) -> Result<f64, TransportError> {
        Ok(match self.foot(x, t)? {
            CharacteristicFoot::Inlet { time_s } => self.boundary.at(time_s),
            CharacteristicFoot::Initial { position_m } => self.initial.value_at(position_m, self.length_m),
        })
    }
}

/// Free-function form of [`SinglePipeProblem::fraction_at`].
pub fn characteristics_oracle(problem: &SinglePipeProblem, x: f64, t: f64) -> Result<f64, TransportError> {
    problem.fraction_at(x, t)
}
