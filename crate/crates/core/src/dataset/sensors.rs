use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::DatasetError;
use crate::network::NetworkTopology;
use crate::transport::SimulationResult;

/// Sensor positions in meters per pipe, with `slots` entries per branch input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub slots: usize,
    pub positions: BTreeMap<String, Vec<f64>>,
}

impl SensorLayout {
    /// `slots` equally spaced interior points on every pipe: `L (k + 1) / (slots + 1)`.
    pub fn uniform(topology: &NetworkTopology, slots: usize) -> Self {
        let positions = topology
            .pipes
            .iter()
            .map(|p| {
                let xs = (0..slots)
                    .map(|k| p.length_m * (k + 1) as f64 / (slots + 1) as f64)
                    .collect();
                (p.id.clone(), xs)
            })
            .collect();
        Self { slots, positions }
    }

    pub fn validate(&self, topology: &NetworkTopology) -> Result<(), DatasetError> {
        for (pipe_id, xs) in &self.positions {
            let pipe = topology
                .pipe(pipe_id)
                .ok_or_else(|| DatasetError::UnknownPipe(pipe_id.clone()))?;
            if xs.len() > self.slots {
                return Err(DatasetError::Config(format!(
                    "pipe `{pipe_id}` has {} sensors but only {} slots",
                    xs.len(),
                    self.slots
                )));
            }
            if let Some(x) = xs.iter().find(|x| !(0.0..=pipe.length_m).contains(*x)) {
                return Err(DatasetError::Config(format!(
                    "sensor at {x} m outside pipe `{pipe_id}` of length {} m",
                    pipe.length_m
                )));
            }
        }
        Ok(())
    }
}

/// Padded initial readings of one pipe.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorReading {
    pub pipe_id: String,
    pub u_init: Vec<f64>,
    pub mask: Vec<f64>,
}

/// Reads the `t = 0` field at every sensor, in topology pipe order. Pipes
/// missing from the layout get all-padding readings.
pub fn read_sensors(
    topology: &NetworkTopology,
    result: &SimulationResult,
    layout: &SensorLayout,
) -> Result<Vec<SensorReading>, DatasetError> {
    layout.validate(topology)?;
    let initial = result
        .snapshots
        .first()
        .filter(|s| s.time_s == 0.0)
        .ok_or(DatasetError::MissingInitialSnapshot)?;
    topology
        .pipes
        .iter()
        .map(|p| {
            let field = initial
                .fields
                .iter()
                .find(|f| f.pipe_id == p.id)
                .ok_or_else(|| DatasetError::UnknownPipe(p.id.clone()))?;
            let mut u_init = vec![0.0; layout.slots];
            let mut mask = vec![0.0; layout.slots];
            for (k, &x) in layout.positions.get(&p.id).into_iter().flatten().enumerate() {
                u_init[k] = field.values[field.cell_of(x)];
                mask[k] = 1.0;
            }
            Ok(SensorReading {
                pipe_id: p.id.clone(),
                u_init,
                mask,
            })
        })
        .collect()
}
