//! Piecewise-constant operational schedules and initial fraction profiles.

use serde::{Deserialize, Serialize};

use crate::error::TransportError;

/// Index of the interval of `breakpoints` that contains `t`.
///
/// Breakpoints are ascending with the first at zero; times before zero map to
/// the first interval and times past the last breakpoint to the last one.
pub(crate) fn interval_index(breakpoints: &[f64], t: f64) -> usize {
    breakpoints.partition_point(|&b| b <= t).saturating_sub(1)
}

fn check_breakpoints(id: &str, breakpoints: &[f64], values: usize) -> Result<(), TransportError> {
    let fail = |reason: String| {
        Err(TransportError::Schedule {
            id: id.to_string(),
            reason,
        })
    };
    if breakpoints.is_empty() {
        return fail("no breakpoints".into());
    }
    if breakpoints[0] != 0.0 {
        return fail(format!("first breakpoint must be 0, got {}", breakpoints[0]));
    }
    if breakpoints.iter().any(|b| !b.is_finite()) {
        return fail("non-finite breakpoint".into());
    }
    if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
        return fail("breakpoints must be strictly ascending".into());
    }
    if breakpoints.len() != values {
        return fail(format!(
            "{} breakpoints but {} interval values",
            breakpoints.len(),
            values
        ));
    }
    Ok(())
}

/// Advection speed `v = m / (A rho)` of one pipe, piecewise constant in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocitySchedule {
    pub pipe_id: String,
    pub breakpoints: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl VelocitySchedule {
    pub fn constant(pipe_id: impl Into<String>, v: f64) -> Self {
        Self {
            pipe_id: pipe_id.into(),
            breakpoints: vec![0.0],
            velocities: vec![v],
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        check_breakpoints(&self.pipe_id, &self.breakpoints, self.velocities.len())?;
        if let Some(&v) = self.velocities.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(TransportError::NegativeVelocity(v));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> f64 {
        self.velocities[interval_index(&self.breakpoints, t)]
    }

    /// Largest velocity of any interval that starts before `horizon`.
    pub fn max_before(&self, horizon: f64) -> f64 {
        self.breakpoints
            .iter()
            .zip(&self.velocities)
            .filter(|(b, _)| **b < horizon || **b == 0.0)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max)
    }
}

/// Hydrogen mass fraction imposed by a source or injection station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySignal {
    pub signal_id: String,
    pub breakpoints: Vec<f64>,
    pub fractions: Vec<f64>,
}

impl BoundarySignal {
    pub fn constant(signal_id: impl Into<String>, w: f64) -> Self {
        Self {
            signal_id: signal_id.into(),
            breakpoints: vec![0.0],
            fractions: vec![w],
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        check_breakpoints(&self.signal_id, &self.breakpoints, self.fractions.len())?;
        if let Some(&w) = self.fractions.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(TransportError::FractionOutOfRange(w));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> f64 {
        self.fractions[interval_index(&self.breakpoints, t)]
    }
}

/// Initial hydrogen fraction along a pipe, as a function of position in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialProfile {
    Constant(f64),
    /// `left` on `[0, break_m)`, `right` on `[break_m, length]`.
    Step { break_m: f64, left: f64, right: f64 },
    /// Piecewise-constant values on equal-width segments spanning the pipe.
    Values(Vec<f64>),
}

impl InitialProfile {
    pub fn validate(&self, length_m: f64) -> Result<(), TransportError> {
        let fractions: Vec<f64> = match self {
            InitialProfile::Constant(w) => vec![*w],
            InitialProfile::Step { break_m, left, right } => {
                if !(0.0..=length_m).contains(break_m) {
                    return Err(TransportError::Scenario(format!(
                        "step break {break_m} m outside pipe length {length_m} m"
                    )));
                }
                vec![*left, *right]
            }
            InitialProfile::Values(v) => {
                if v.is_empty() {
                    return Err(TransportError::Scenario("empty initial value array".into()));
                }
                v.clone()
            }
        };
        match fractions.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            Some(&w) => Err(TransportError::FractionOutOfRange(w)),
            None => Ok(()),
        }
    }

    /// Piecewise-constant form: segment edges (ascending, spanning `[0, length]`) and values.
    fn segments(&self, length_m: f64) -> (Vec<f64>, Vec<f64>) {
        match self {
            InitialProfile::Constant(w) => (vec![0.0, length_m], vec![*w]),
            InitialProfile::Step { break_m, left, right } => {
                (vec![0.0, *break_m, length_m], vec![*left, *right])
            }
            InitialProfile::Values(v) => {
                let n = v.len() as f64;
                let edges = (0..=v.len()).map(|i| length_m * i as f64 / n).collect();
                (edges, v.clone())
            }
        }
    }

    /// Point value at `x` meters (right-continuous at jumps).
    pub fn value_at(&self, x: f64, length_m: f64) -> f64 {
        let (edges, values) = self.segments(length_m);
        let i = edges[..values.len()].partition_point(|&e| e <= x).saturating_sub(1);
        values[i.min(values.len() - 1)]
    }

    /// Exact cell averages on a uniform grid of `cells` cells.
    pub fn cell_averages(&self, length_m: f64, cells: usize) -> Vec<f64> {
        if let InitialProfile::Values(v) = self {
            if v.len() == cells {
                return v.clone();
            }
        }
        if let InitialProfile::Constant(w) = self {
            return vec![*w; cells];
        }
        let (edges, values) = self.segments(length_m);
        let dx = length_m / cells as f64;
        (0..cells)
            .map(|c| {
                let lo = c as f64 * dx;
                let hi = lo + dx;
                let mut acc = 0.0;
                let mut lo_val = f64::INFINITY;
                let mut hi_val = f64::NEG_INFINITY;
                for (s, &w) in values.iter().enumerate() {
                    let overlap = edges[s + 1].min(hi) - edges[s].max(lo);
                    if overlap > 0.0 {
                        acc += overlap * w;
                        lo_val = lo_val.min(w);
                        hi_val = hi_val.max(w);
                    }
                }
                (acc / dx).clamp(lo_val, hi_val)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_lookup() {
        let s = VelocitySchedule {
            pipe_id: "p".into(),
            breakpoints: vec![0.0, 5.0, 8.0],
            velocities: vec![1.0, 2.0, 0.5],
        };
        s.validate().unwrap();
        assert_eq!(s.at(0.0), 1.0);
        assert_eq!(s.at(4.999), 1.0);
        assert_eq!(s.at(5.0), 2.0);
        assert_eq!(s.at(100.0), 0.5);
        assert_eq!(s.max_before(6.0), 2.0);
        assert_eq!(s.max_before(100.0), 2.0);
    }

    #[test]
    fn schedule_validation() {
        let mut s = VelocitySchedule::constant("p", 1.0);
        s.velocities[0] = -0.1;
        assert!(matches!(s.validate(), Err(TransportError::NegativeVelocity(_))));

        let bad_start = BoundarySignal {
            signal_id: "s".into(),
            breakpoints: vec![1.0],
            fractions: vec![0.1],
        };
        assert!(bad_start.validate().is_err());

        let not_ascending = BoundarySignal {
            signal_id: "s".into(),
            breakpoints: vec![0.0, 2.0, 2.0],
            fractions: vec![0.1, 0.2, 0.3],
        };
        assert!(not_ascending.validate().is_err());

        assert!(matches!(
            BoundarySignal::constant("s", 1.5).validate(),
            Err(TransportError::FractionOutOfRange(_))
        ));
    }

    #[test]
    fn step_profile_cell_averages() {
        let p = InitialProfile::Step {
            break_m: 2.5,
            left: 0.0,
            right: 1.0,
        };
        assert_eq!(p.cell_averages(4.0, 4), vec![0.0, 0.0, 0.5, 1.0]);
        assert_eq!(p.value_at(2.4, 4.0), 0.0);
        assert_eq!(p.value_at(2.5, 4.0), 1.0);
        assert_eq!(p.value_at(4.0, 4.0), 1.0);
    }

    #[test]
    fn values_profile_resamples() {
        let p = InitialProfile::Values(vec![0.2, 0.6]);
        assert_eq!(p.cell_averages(10.0, 2), vec![0.2, 0.6]);
        let fine = p.cell_averages(10.0, 4);
        assert_eq!(fine, vec![0.2, 0.2, 0.6, 0.6]);
        let coarse = InitialProfile::Values(vec![0.2, 0.6, 0.4, 0.8]).cell_averages(10.0, 2);
        assert!((coarse[0] - 0.4).abs() < 1e-15 && (coarse[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn serde_shapes() {
        let p: InitialProfile = serde_json::from_str(r#"{"constant": 0.1}"#).unwrap();
        assert_eq!(p, InitialProfile::Constant(0.1));
        let p: InitialProfile =
            serde_json::from_str(r#"{"step": {"break_m": 3, "left": 0, "right": 1}}"#).unwrap();
        assert!(matches!(p, InitialProfile::Step { .. }));
    }
}
