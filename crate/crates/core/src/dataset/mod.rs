//! Scenario sampling, virtual sensors and `(U, T, w)` sample assembly.

mod io;
mod sampling;
mod sensors;

use serde::{Deserialize, Serialize};

use crate::model::BranchInput;

pub use io::{DatasetHeader, DATASET_FILE, DATASET_SCHEMA_VERSION, SAMPLES_CSV};
pub use sampling::{
    boundary_inputs, build_samples, generate_dataset, lookup_target, sample_scenarios, BoundaryInput, CountRange,
    InitialFamily, Range, SampledScenario, SamplingConfig, SplitRatios,
};
pub use sensors::{read_sensors, SensorLayout, SensorReading};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Branch inputs `U` of one scenario, shared by all of its samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub scenario_id: String,
    pub split: Split,
    pub inputs: Vec<BranchInput>,
}

/// One query with its simulated target; `U` is found through `scenario_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub scenario_id: String,
    pub pipe_id: String,
    pub x_rel: f64,
    pub t_rel: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub conditions: Vec<Condition>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn condition(&self, scenario_id: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.scenario_id == scenario_id)
    }

    pub fn conditions_in(&self, split: Split) -> impl Iterator<Item = &Condition> {
        self.conditions.iter().filter(move |c| c.split == split)
    }

    /// Samples whose scenario belongs to `split`.
    pub fn samples_in(&self, split: Split) -> Vec<&Sample> {
        let ids: std::collections::HashSet<&str> =
            self.conditions_in(split).map(|c| c.scenario_id.as_str()).collect();
        self.samples.iter().filter(|s| ids.contains(s.scenario_id.as_str())).collect()
    }

    /// Scenario counts per split, in train/val/test order.
    pub fn split_counts(&self) -> [usize; 3] {
        Split::ALL.map(|s| self.conditions_in(s).count())
    }
}
