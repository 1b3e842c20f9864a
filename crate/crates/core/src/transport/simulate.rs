//! Network-coupled transport simulation.

use std::collections::{HashMap, HashSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::schedule::{BoundarySignal, InitialProfile, VelocitySchedule};
use super::upwind::{courant, mix_at_node, upwind_in_place, FractionField};
use crate::error::TransportError;
use crate::network::{NetworkTopology, NodeKind};

pub const DEFAULT_SNAPSHOT_STRIDE: usize = 10;

fn default_stride() -> usize {
    DEFAULT_SNAPSHOT_STRIDE
}

fn default_density() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialField {
    pub pipe_id: String,
    pub cells: usize,
    pub profile: InitialProfile,
}

/// One complete set of operations over a horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub velocity_schedules: Vec<VelocitySchedule>,
    pub boundary_signals: Vec<BoundarySignal>,
    pub initial_fields: Vec<InitialField>,
    pub horizon_s: f64,
    pub dt_s: f64,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    /// Density used to turn velocities into mixing mass flows, `m = v A rho_ref`.
    #[serde(default = "default_density")]
    pub reference_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub time_s: f64,
    /// In topology pipe order.
    pub fields: Vec<FractionField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSeries {
    pub node_id: String,
    /// Mixed outlet fraction at each snapshot time.
    pub fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub snapshots: Vec<Snapshot>,
    pub node_outlet_fractions: Vec<NodeSeries>,
}

impl SimulationResult {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.snapshots.iter().map(|s| s.time_s)
    }

    pub fn snapshot_at(&self, time_s: f64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.time_s == time_s)
    }

    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("at least the initial snapshot")
    }

    /// CSV with columns `time_s,pipe_id,cell_index,x_m,fraction`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "time_s,pipe_id,cell_index,x_m,fraction")?;
        for snap in &self.snapshots {
            for field in &snap.fields {
                for (i, w) in field.values.iter().enumerate() {
                    writeln!(
                        out,
                        "{},{},{},{},{}",
                        snap.time_s,
                        field.pipe_id,
                        i,
                        field.cell_center(i),
                        w
                    )?;
                }
            }
        }
        Ok(())
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn step_count(&self) -> usize {
        ((self.horizon_s / self.dt_s) - 1e-9).ceil().max(1.0) as usize
    }

    /// Time of step `n`; the last step is shortened to land on the horizon.
    pub fn step_time(&self, n: usize) -> f64 {
        (n as f64 * self.dt_s).min(self.horizon_s)
    }

    pub fn velocity(&self, pipe_id: &str) -> Option<&VelocitySchedule> {
        self.velocity_schedules.iter().find(|s| s.pipe_id == pipe_id)
    }

    pub fn signal(&self, signal_id: &str) -> Option<&BoundarySignal> {
        self.boundary_signals.iter().find(|s| s.signal_id == signal_id)
    }

    pub fn initial(&self, pipe_id: &str) -> Option<&InitialField> {
        self.initial_fields.iter().find(|s| s.pipe_id == pipe_id)
    }

    /// Largest Courant number over pipes and the velocity intervals inside the horizon.
    pub fn max_courant(&self, topology: &NetworkTopology) -> f64 {
        topology
            .pipes
            .iter()
            .filter_map(|p| {
                let v = self.velocity(&p.id)?.max_before(self.horizon_s);
                let cells = self.initial(&p.id)?.cells;
                Some(v * self.dt_s / (p.length_m / cells as f64))
            })
            .fold(0.0, f64::max)
    }

    /// Checks coverage, schedule validity and the CFL bound against `topology`.
    pub fn validate(&self, topology: &NetworkTopology) -> Result<(), TransportError> {
        let report = topology.validate();
        if !report.is_valid() {
            return Err(crate::error::NetworkError::Invalid(report).into());
        }
        if !(self.horizon_s > 0.0) || !self.horizon_s.is_finite() {
            return Err(TransportError::Scenario(format!("horizon {} must be positive", self.horizon_s)));
        }
        if !(self.dt_s > 0.0) || !self.dt_s.is_finite() {
            return Err(TransportError::Scenario(format!("dt {} must be positive", self.dt_s)));
        }
        if self.snapshot_stride == 0 {
            return Err(TransportError::Scenario("snapshot_stride must be at least 1".into()));
        }
        if !(self.reference_density > 0.0) {
            return Err(TransportError::Scenario("reference_density must be positive".into()));
        }

        let pipe_ids: HashSet<&str> = topology.pipes.iter().map(|p| p.id.as_str()).collect();
        check_cover(
            "velocity schedule",
            &pipe_ids,
            self.velocity_schedules.iter().map(|s| s.pipe_id.as_str()),
        )?;
        check_cover(
            "initial field",
            &pipe_ids,
            self.initial_fields.iter().map(|s| s.pipe_id.as_str()),
        )?;
        let signal_ids: HashSet<&str> = topology
            .nodes
            .iter()
            .filter_map(|n| n.boundary_signal_id.as_deref())
            .collect();
        check_cover(
            "boundary signal",
            &signal_ids,
            self.boundary_signals.iter().map(|s| s.signal_id.as_str()),
        )?;

        for s in &self.velocity_schedules {
            s.validate()?;
        }
        for s in &self.boundary_signals {
            s.validate()?;
        }
        for pipe in &topology.pipes {
            let init = self.initial(&pipe.id).expect("coverage checked");
            if init.cells < 2 {
                return Err(TransportError::Scenario(format!(
                    "pipe `{}` needs at least 2 cells, got {}",
                    pipe.id, init.cells
                )));
            }
            init.profile.validate(pipe.length_m)?;
            let dx = pipe.length_m / init.cells as f64;
            let v = self.velocity(&pipe.id).expect("coverage checked").max_before(self.horizon_s);
            courant(v, self.dt_s, dx, &format!("pipe `{}`", pipe.id))?;
        }

        for node in &topology.nodes {
            if node.kind == NodeKind::Junction
                && topology.pipes.iter().any(|p| p.from_node == node.id)
                && !topology.pipes.iter().any(|p| p.to_node == node.id)
            {
                return Err(TransportError::Scenario(format!(
                    "junction `{}` feeds pipes but has no inflow",
                    node.id
                )));
            }
        }
        Ok(())
    }
}

fn check_cover<'a>(
    what: &str,
    expected: &HashSet<&str>,
    given: impl Iterator<Item = &'a str>,
) -> Result<(), TransportError> {
    let mut seen = HashSet::new();
    for id in given {
        if !expected.contains(id) {
            return Err(TransportError::Coverage(format!("{what} for unknown id `{id}`")));
        }
        if !seen.insert(id) {
            return Err(TransportError::Coverage(format!("{what} `{id}` given more than once")));
        }
    }
    let mut missing: Vec<&&str> = expected.difference(&seen).collect();
    missing.sort();
    if let Some(id) = missing.first() {
        return Err(TransportError::Coverage(format!("missing {what} for `{id}`")));
    }
    Ok(())
}

/// Index-resolved view of one node for the time loop.
struct NodePlan<'a> {
    upstream: Vec<usize>,
    downstream: Vec<usize>,
    signal: Option<&'a BoundarySignal>,
}

/// Mixed outlet fraction of every node given current pipe fields and operations at `t`.
fn node_mixes(
    plans: &[NodePlan<'_>],
    fields: &[Vec<f64>],
    flows: &[f64],
    t: f64,
) -> Result<Vec<f64>, TransportError> {
    plans
        .iter()
        .map(|plan| {
            let inflows: Vec<(f64, f64)> = plan
                .upstream
                .iter()
                .filter(|&&p| flows[p] > 0.0)
                .map(|&p| (flows[p], *fields[p].last().expect("cells")))
                .collect();
            if let Some(signal) = plan.signal {
                let w = signal.at(t);
                if inflows.is_empty() {
                    return Ok(w);
                }
                let inflow: f64 = inflows.iter().map(|s| s.0).sum();
                let outflow: f64 = plan.downstream.iter().map(|&p| flows[p]).sum();
                let injected = outflow - inflow;
                let injection = (injected > 0.0).then_some((injected, w));
                return mix_at_node(&inflows, injection);
            }
            if !inflows.is_empty() {
                return mix_at_node(&inflows, None);
            }
            // stalled inflow: plain average of the upstream pipe ends
            if plan.upstream.is_empty() {
                return Ok(0.0);
            }
            let sum: f64 = plan.upstream.iter().map(|&p| *fields[p].last().expect("cells")).sum();
            Ok((sum / plan.upstream.len() as f64).clamp(0.0, 1.0))
        })
        .collect()
}

/// Runs the upwind transport over the whole network.
///
/// Per step: every node mixes the current outlet values of its upstream
/// pipes, then every pipe advances one upwind step with its from-node's mix
/// as inlet value. Snapshots are kept every `snapshot_stride` steps,
/// starting at `t = 0`.
pub fn simulate_network(
    topology: &NetworkTopology,
    scenario: &Scenario,
) -> Result<SimulationResult, TransportError> {
    scenario.validate(topology)?;
    topology.topological_nodes()?;

    let node_index: HashMap<&str, usize> = topology
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let plans: Vec<NodePlan<'_>> = topology
        .nodes
        .iter()
        .map(|n| NodePlan {
            upstream: topology
                .pipes
                .iter()
                .enumerate()
                .filter(|(_, p)| p.to_node == n.id)
                .map(|(i, _)| i)
                .collect(),
            downstream: topology
                .pipes
                .iter()
                .enumerate()
                .filter(|(_, p)| p.from_node == n.id)
                .map(|(i, _)| i)
                .collect(),
            signal: n
                .boundary_signal_id
                .as_deref()
                .filter(|_| n.kind.is_controlled())
                .map(|id| scenario.signal(id).expect("coverage checked")),
        })
        .collect();

    let pipes = &topology.pipes;
    let schedules: Vec<&VelocitySchedule> = pipes
        .iter()
        .map(|p| scenario.velocity(&p.id).expect("coverage checked"))
        .collect();
    let inlet_node: Vec<usize> = pipes.iter().map(|p| node_index[p.from_node.as_str()]).collect();
    let dx: Vec<f64> = pipes
        .iter()
        .map(|p| p.length_m / scenario.initial(&p.id).expect("coverage checked").cells as f64)
        .collect();
    let mut fields: Vec<Vec<f64>> = pipes
        .iter()
        .map(|p| {
            let init = scenario.initial(&p.id).expect("coverage checked");
            init.profile.cell_averages(p.length_m, init.cells)
        })
        .collect();

    let steps = scenario.step_count();
    let mut snapshots = Vec::new();
    let mut node_series: Vec<Vec<f64>> = vec![Vec::new(); topology.nodes.len()];
    let mut velocities = vec![0.0; pipes.len()];
    let mut flows = vec![0.0; pipes.len()];

    for n in 0..=steps {
        let t = scenario.step_time(n);
        for (i, p) in pipes.iter().enumerate() {
            velocities[i] = schedules[i].at(t);
            flows[i] = velocities[i] * p.area_m2 * scenario.reference_density;
        }
        let mixes = node_mixes(&plans, &fields, &flows, t)?;

        if n % scenario.snapshot_stride == 0 {
            snapshots.push(Snapshot {
                step: n,
                time_s: t,
                fields: pipes
                    .iter()
                    .zip(&fields)
                    .map(|(p, values)| FractionField::new(p.id.clone(), p.length_m, values.clone()))
                    .collect(),
            });
            for (series, w) in node_series.iter_mut().zip(&mixes) {
                series.push(*w);
            }
        }
        if n == steps {
            break;
        }

        let dt = scenario.step_time(n + 1) - t;
        for (i, values) in fields.iter_mut().enumerate() {
            let c = courant(velocities[i], dt, dx[i], &pipes[i].id)?;
            upwind_in_place(values, c, mixes[inlet_node[i]]);
        }
    }

    Ok(SimulationResult {
        snapshots,
        node_outlet_fractions: topology
            .nodes
            .iter()
            .zip(node_series)
            .map(|(n, fractions)| NodeSeries {
                node_id: n.id.clone(),
                fractions,
            })
            .collect(),
    })
}
