//! Hydrogen-fraction transport over a pipe network.
//!
//! Each pipe carries `dw/dt + v(t) dw/dx = 0` with a prescribed, piecewise
//! constant advection speed. Nodes mix their incoming streams by mass and
//! feed the result to every outgoing pipe.

mod oracle;
mod schedule;
mod simulate;
mod upwind;

pub use oracle::{characteristics_oracle, CharacteristicFoot, SinglePipeProblem};
pub use schedule::{BoundarySignal, InitialProfile, VelocitySchedule};
pub use simulate::{
    simulate_network, InitialField, NodeSeries, Scenario, SimulationResult, Snapshot, DEFAULT_SNAPSHOT_STRIDE,
};
pub use upwind::{cell_index, mix_at_node, step_upwind, FractionField};
