use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{DatasetHeader, DATASET_SCHEMA_VERSION};
use super::sensors::{read_sensors, SensorLayout};
use super::{Condition, Dataset, Sample, Split};
use crate::error::DatasetError;
use crate::model::BranchInput;
use crate::network::NetworkTopology;
use crate::transport::{
    cell_index, simulate_network, BoundarySignal, InitialField, InitialProfile, Scenario, SimulationResult,
    VelocitySchedule,
};

/// Closed interval `[min, max]`; `min == max` pins the value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn check(&self, name: &str, lo: f64, hi: f64) -> Result<(), DatasetError> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return Err(DatasetError::Config(format!(
                "{name} range [{}, {}] is empty",
                self.min, self.max
            )));
        }
        if self.min < lo || self.max > hi {
            return Err(DatasetError::Config(format!(
                "{name} range [{}, {}] leaves [{lo}, {hi}]",
                self.min, self.max
            )));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        rng.gen_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

impl CountRange {
    pub fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        rng.gen_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialFamily {
    Constant,
    TwoLevelStep,
    /// Eight random segment levels smoothed by a three-point moving average.
    SmoothedRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    /// Scenario counts; train and val are rounded, test takes the rest.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let train = ((n as f64 * self.train).round() as usize).min(n);
        let val = ((n as f64 * self.val).round() as usize).min(n - train);
        [train, val, n - train - val]
    }

    fn split_of(&self, index: usize, n: usize) -> Split {
        let [train, val, _] = self.counts(n);
        if index < train {
            Split::Train
        } else if index < train + val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub scenarios: usize,
    pub seed: u64,
    pub horizon_s: f64,
    /// Target cell width; each pipe gets `ceil(length / cell_length_m)` cells (at least 2).
    pub cell_length_m: f64,
    /// Courant number at the fastest sampled velocity.
    pub courant: f64,
    pub snapshot_stride: usize,
    pub velocity_m_s: Range,
    /// Velocity changes per pipe within the horizon.
    pub velocity_breakpoints: CountRange,
    /// Levels of source and injection signals and of initial fields.
    pub fraction: Range,
    pub signal_breakpoints: CountRange,
    pub initial_family: InitialFamily,
    pub queries_per_scenario: usize,
    pub split: SplitRatios,
    /// Sensor slots per pipe (`S`).
    pub sensors: usize,
    /// Boundary samples per pipe (`K`).
    pub boundary_samples: usize,
    /// Explicit sensor positions; equally spaced interior points when absent.
    pub sensor_layout: Option<SensorLayout>,
    /// Half-width of additive uniform noise on sensor readings.
    pub sensor_noise: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            scenarios: 200,
            seed: 0,
            horizon_s: 3600.0,
            cell_length_m: 50.0,
            courant: 0.9,
            snapshot_stride: 10,
            velocity_m_s: Range::new(0.5, 2.0),
            velocity_breakpoints: CountRange::new(0, 2),
            fraction: Range::new(0.0, 0.3),
            signal_breakpoints: CountRange::new(0, 3),
            initial_family: InitialFamily::TwoLevelStep,
            queries_per_scenario: 256,
            split: SplitRatios {
                train: 0.8,
                val: 0.1,
                test: 0.1,
            },
            sensors: 4,
            boundary_samples: 16,
            sensor_layout: None,
            sensor_noise: 0.0,
        }
    }
}

impl SamplingConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self, topology: &NetworkTopology) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::Config(m));
        if self.scenarios == 0 {
            return bad("at least one scenario is required".into());
        }
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            return bad(format!("horizon {} must be positive", self.horizon_s));
        }
        if !(self.cell_length_m > 0.0) {
            return bad(format!("cell length {} must be positive", self.cell_length_m));
        }
        if !(self.courant > 0.0 && self.courant <= 1.0) {
            return bad(format!("Courant target {} must lie in (0, 1]", self.courant));
        }
        if self.snapshot_stride == 0 {
            return bad("snapshot stride must be positive".into());
        }
        self.velocity_m_s.check("velocity", 0.0, f64::MAX)?;
        self.fraction.check("fraction", 0.0, 1.0)?;
        for (name, c) in [
            ("velocity breakpoint", self.velocity_breakpoints),
            ("signal breakpoint", self.signal_breakpoints),
        ] {
            if c.min > c.max {
                return bad(format!("{name} count range [{}, {}] is empty", c.min, c.max));
            }
        }
        if self.queries_per_scenario == 0 {
            return bad("queries per scenario must be positive".into());
        }
        let SplitRatios { train, val, test } = self.split;
        if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r)) || (train + val + test - 1.0).abs() > 1e-9 {
            return bad(format!("split ratios {train}/{val}/{test} must be in [0, 1] and sum to 1"));
        }
        if self.boundary_samples == 0 {
            return bad("at least one boundary sample is required".into());
        }
        if !(0.0..=1.0).contains(&self.sensor_noise) {
            return bad(format!("sensor noise {} must lie in [0, 1]", self.sensor_noise));
        }
        if let Some(layout) = &self.sensor_layout {
            if layout.slots != self.sensors {
                return bad(format!(
                    "sensor layout has {} slots, config has {}",
                    layout.slots, self.sensors
                ));
            }
            layout.validate(topology)?;
        }
        Ok(())
    }

    pub fn layout(&self, topology: &NetworkTopology) -> SensorLayout {
        self.sensor_layout
            .clone()
            .unwrap_or_else(|| SensorLayout::uniform(topology, self.sensors))
    }

    fn cells(&self, length_m: f64) -> usize {
        ((length_m / self.cell_length_m).ceil() as usize).max(2)
    }

    /// Generator for scenario `index`; stream 0 is not used.
    fn scenario_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        rng
    }

    /// Separate stream for the queries and noise of scenario `index`.
    fn query_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((1u64 << 32) + index as u64);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledScenario {
    pub id: String,
    pub split: Split,
    pub scenario: Scenario,
}

fn breakpoints<R: Rng>(rng: &mut R, count: usize, horizon: f64) -> Vec<f64> {
    let mut inner: Vec<f64> = (0..count).map(|_| rng.gen_range(0.0..horizon)).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    inner.retain(|b| *b > 0.0);
    let mut out = vec![0.0];
    out.extend(inner);
    out
}

fn initial_profile<R: Rng>(rng: &mut R, config: &SamplingConfig, length_m: f64) -> InitialProfile {
    match config.initial_family {
        InitialFamily::Constant => InitialProfile::Constant(config.fraction.sample(rng)),
        InitialFamily::TwoLevelStep => InitialProfile::Step {
            break_m: rng.gen_range(0.0..=length_m),
            left: config.fraction.sample(rng),
            right: config.fraction.sample(rng),
        },
        InitialFamily::SmoothedRandom => {
            let raw: Vec<f64> = (0..8).map(|_| config.fraction.sample(rng)).collect();
            let smooth = (0..raw.len())
                .map(|i| {
                    let lo = i.saturating_sub(1);
                    let hi = (i + 1).min(raw.len() - 1);
                    let window = &raw[lo..=hi];
                    (window.iter().sum::<f64>() / window.len() as f64).clamp(config.fraction.min, config.fraction.max)
                })
                .collect();
            InitialProfile::Values(smooth)
        }
    }
}

/// Draws `config.scenarios` scenarios with ids `<hash prefix>-<index>` and
/// scenario-level split labels. `dt` is chosen from the fastest sampled
/// velocity so the Courant number never exceeds `config.courant`.
pub fn sample_scenarios(topology: &NetworkTopology, config: &SamplingConfig) -> Result<Vec<SampledScenario>, DatasetError> {
    let report = topology.validate();
    if !report.is_valid() {
        return Err(crate::error::NetworkError::Invalid(report).into());
    }
    config.validate(topology)?;
    let hash = topology.topology_hash();
    let horizon = config.horizon_s;
    let dx_min = topology
        .pipes
        .iter()
        .map(|p| p.length_m / config.cells(p.length_m) as f64)
        .fold(f64::INFINITY, f64::min);

    (0..config.scenarios)
        .map(|index| {
            let mut rng = config.scenario_rng(index);
            let velocity_schedules: Vec<VelocitySchedule> = topology
                .pipes
                .iter()
                .map(|p| {
                    let count = config.velocity_breakpoints.sample(&mut rng);
                    let breakpoints = breakpoints(&mut rng, count, horizon);
                    let velocities = breakpoints.iter().map(|_| config.velocity_m_s.sample(&mut rng)).collect();
                    VelocitySchedule {
                        pipe_id: p.id.clone(),
                        breakpoints,
                        velocities,
                    }
                })
                .collect();
            let boundary_signals: Vec<BoundarySignal> = topology
                .nodes
                .iter()
                .filter(|n| n.kind.is_controlled())
                .filter_map(|n| n.boundary_signal_id.clone())
                .map(|signal_id| {
                    let count = config.signal_breakpoints.sample(&mut rng);
                    let breakpoints = breakpoints(&mut rng, count, horizon);
                    let fractions = breakpoints.iter().map(|_| config.fraction.sample(&mut rng)).collect();
                    BoundarySignal {
                        signal_id,
                        breakpoints,
                        fractions,
                    }
                })
                .collect();
            let initial_fields = topology
                .pipes
                .iter()
                .map(|p| InitialField {
                    pipe_id: p.id.clone(),
                    cells: config.cells(p.length_m),
                    profile: initial_profile(&mut rng, config, p.length_m),
                })
                .collect();

            let vmax = velocity_schedules
                .iter()
                .map(|s| s.max_before(horizon))
                .fold(0.0, f64::max);
            let steps = (horizon * vmax / (config.courant * dx_min)).ceil().max(1.0);
            let scenario = Scenario {
                velocity_schedules,
                boundary_signals,
                initial_fields,
                horizon_s: horizon,
                dt_s: horizon / steps,
                snapshot_stride: config.snapshot_stride,
                reference_density: 1.0,
            };
            scenario.validate(topology)?;
            Ok(SampledScenario {
                id: format!("{}-{index:05}", &hash[..8]),
                split: config.split.split_of(index, config.scenarios),
                scenario,
            })
        })
        .collect()
}

/// Operational estimate of the fraction leaving `node` at time `t`:
/// controlled nodes contribute their signal, junctions the flow-weighted mix
/// of what their upstream nodes emit, using scheduled flows only.
fn operational_mix(
    topology: &NetworkTopology,
    scenario: &Scenario,
    node: &str,
    t: f64,
    memo: &mut HashMap<String, f64>,
) -> f64 {
    if let Some(&w) = memo.get(node) {
        return w;
    }
    let density = scenario.reference_density;
    let flow = |pipe_id: &str, area: f64| {
        scenario.velocity(pipe_id).map_or(0.0, |s| s.at(t)) * area * density
    };
    let upstream: Vec<(f64, f64)> = topology
        .pipes
        .iter()
        .filter(|p| p.to_node == node)
        .map(|p| (flow(&p.id, p.area_m2), operational_mix(topology, scenario, &p.from_node, t, memo)))
        .collect();
    let signal = topology
        .node(node)
        .filter(|n| n.kind.is_controlled())
        .and_then(|n| n.boundary_signal_id.as_deref())
        .and_then(|id| scenario.signal(id))
        .map(|s| s.at(t));

    let inflow: f64 = upstream.iter().filter(|s| s.0 > 0.0).map(|s| s.0).sum();
    let hydrogen: f64 = upstream.iter().filter(|s| s.0 > 0.0).map(|s| s.0 * s.1).sum();
    let w = match signal {
        Some(w) if inflow == 0.0 => w,
        Some(w) => {
            let outflow: f64 = topology
                .pipes
                .iter()
                .filter(|p| p.from_node == node)
                .map(|p| flow(&p.id, p.area_m2))
                .sum();
            let injected = (outflow - inflow).max(0.0);
            (hydrogen + injected * w) / (inflow + injected)
        }
        None if inflow > 0.0 => hydrogen / inflow,
        None if !upstream.is_empty() => upstream.iter().map(|s| s.1).sum::<f64>() / upstream.len() as f64,
        None => 0.0,
    };
    let w = w.clamp(0.0, 1.0);
    memo.insert(node.to_string(), w);
    w
}

/// `u_bound` of one pipe and whether it is an upstream proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryInput {
    pub pipe_id: String,
    pub u_bound: Vec<f64>,
    pub indirect: bool,
}

/// Boundary samples at `K` uniform times over `[0, horizon]`, endpoints
/// included. Pipes leaving a source or injection station see its signal;
/// junction-fed pipes see the operational upstream mix.
pub fn boundary_inputs(
    topology: &NetworkTopology,
    scenario: &Scenario,
    samples: usize,
) -> Vec<BoundaryInput> {
    let times: Vec<f64> = (0..samples)
        .map(|k| {
            if samples == 1 {
                0.0
            } else {
                scenario.horizon_s * k as f64 / (samples - 1) as f64
            }
        })
        .collect();
    let mut memos: Vec<HashMap<String, f64>> = vec![HashMap::new(); samples];
    topology
        .pipes
        .iter()
        .map(|p| {
            let direct = topology.node(&p.from_node).is_some_and(|n| n.kind.is_controlled());
            let u_bound = times
                .iter()
                .zip(memos.iter_mut())
                .map(|(&t, memo)| operational_mix(topology, scenario, &p.from_node, t, memo))
                .collect();
            BoundaryInput {
                pipe_id: p.id.clone(),
                u_bound,
                indirect: !direct,
            }
        })
        .collect()
}

/// Target at relative position `x_rel` of `pipe_id` in the snapshot at `time_s`.
pub fn lookup_target(result: &SimulationResult, pipe_id: &str, x_rel: f64, time_s: f64) -> Result<f64, DatasetError> {
    let tol = 1e-9 * time_s.abs().max(1.0);
    let snapshot = result
        .snapshots
        .iter()
        .find(|s| (s.time_s - time_s).abs() <= tol)
        .ok_or(DatasetError::NotASnapshot(time_s))?;
    let field = snapshot
        .fields
        .iter()
        .find(|f| f.pipe_id == pipe_id)
        .ok_or_else(|| DatasetError::UnknownPipe(pipe_id.to_string()))?;
    Ok(field.values[cell_index(x_rel, field.cell_count())])
}

/// Assembles conditions and query samples from simulated scenarios.
pub fn build_samples(
    topology: &NetworkTopology,
    scenarios: &[SampledScenario],
    results: &[SimulationResult],
    config: &SamplingConfig,
) -> Result<Dataset, DatasetError> {
    if scenarios.len() != results.len() {
        return Err(DatasetError::Config(format!(
            "{} scenarios but {} simulation results",
            scenarios.len(),
            results.len()
        )));
    }
    config.validate(topology)?;
    let layout = config.layout(topology);
    let per_scenario: Vec<(Condition, Vec<Sample>)> = scenarios
        .par_iter()
        .zip(results.par_iter())
        .enumerate()
        .map(|(index, (sampled, result))| {
            let mut rng = config.query_rng(index);
            let readings = read_sensors(topology, result, &layout)?;
            let bounds = boundary_inputs(topology, &sampled.scenario, config.boundary_samples);
            let inputs = readings
                .into_iter()
                .zip(bounds)
                .map(|(r, b)| {
                    let mut u_init = r.u_init;
                    if config.sensor_noise > 0.0 {
                        for (u, m) in u_init.iter_mut().zip(&r.mask) {
                            if *m == 1.0 {
                                let e = rng.gen_range(-config.sensor_noise..=config.sensor_noise);
                                *u = (*u + e).clamp(0.0, 1.0);
                            }
                        }
                    }
                    BranchInput {
                        pipe_id: r.pipe_id,
                        u_init,
                        mask: r.mask,
                        u_bound: b.u_bound,
                        indirect: b.indirect,
                    }
                })
                .collect();

            let horizon = sampled.scenario.horizon_s;
            let samples = (0..config.queries_per_scenario)
                .map(|_| {
                    let pipe = &topology.pipes[rng.gen_range(0..topology.pipes.len())];
                    let snapshot = &result.snapshots[rng.gen_range(0..result.snapshots.len())];
                    let x_rel: f64 = rng.gen_range(0.0..=1.0);
                    let field = snapshot
                        .fields
                        .iter()
                        .find(|f| f.pipe_id == pipe.id)
                        .ok_or_else(|| DatasetError::UnknownPipe(pipe.id.clone()))?;
                    Ok(Sample {
                        scenario_id: sampled.id.clone(),
                        pipe_id: pipe.id.clone(),
                        x_rel,
                        t_rel: snapshot.time_s / horizon,
                        target: field.values[cell_index(x_rel, field.cell_count())],
                    })
                })
                .collect::<Result<Vec<_>, DatasetError>>()?;
            Ok((
                Condition {
                    scenario_id: sampled.id.clone(),
                    split: sampled.split,
                    inputs,
                },
                samples,
            ))
        })
        .collect::<Result<_, DatasetError>>()?;

    let mut conditions = Vec::with_capacity(per_scenario.len());
    let mut samples = Vec::with_capacity(per_scenario.len() * config.queries_per_scenario);
    for (c, s) in per_scenario {
        conditions.push(c);
        samples.extend(s);
    }
    Ok(Dataset {
        header: DatasetHeader {
            schema_version: DATASET_SCHEMA_VERSION,
            topology_hash: topology.topology_hash(),
            sensors: config.sensors,
            boundary_samples: config.boundary_samples,
            horizon_s: config.horizon_s,
            pipe_ids: topology.pipe_ids(),
            scenario_count: conditions.len(),
            sample_count: samples.len(),
            sampling: config.clone(),
        },
        conditions,
        samples,
    })
}

/// Samples, simulates (in parallel) and assembles a dataset.
pub fn generate_dataset(
    topology: &NetworkTopology,
    config: &SamplingConfig,
) -> Result<(Vec<SampledScenario>, Dataset), DatasetError> {
    let scenarios = sample_scenarios(topology, config)?;
    let results = scenarios
        .par_iter()
        .map(|s| simulate_network(topology, &s.scenario))
        .collect::<Result<Vec<_>, _>>()?;
    let dataset = build_samples(topology, &scenarios, &results, config)?;
    Ok((scenarios, dataset))
}
