//! Operator networks mapping pipe conditions and a query point to a hydrogen
//! mass fraction.
//!
//! Two architectures share the same inputs and trunk:
//!
//! * [`Architecture::Graph`]: one branch MLP per pipe produces a feature
//!   vector, `R` rounds of mean message passing over the pipe line graph mix
//!   neighbouring features, and the query pipe's aggregated feature is
//!   projected to the head dimension and dotted with the trunk output.
//! * [`Architecture::Vanilla`]: per-pipe branch MLPs emit head-dimension
//!   vectors that are multiplied elementwise across all pipes before the dot
//!   product.
//!
//! The trunk sees a learned embedding of the query pipe plus its relative
//! position and time. The head output is unbounded; callers clamp to
//! `[0, 1]` only when reporting.

mod checkpoint;
mod inputs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::network::{neighbor_lists, AdjacencyMap, NetworkTopology};
use crate::nn::{glorot_uniform, Activation, Mlp, Tape, Var};

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use inputs::{BranchInput, EncodedCondition, TrunkInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Graph,
    Vanilla,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Sensor slots per pipe (`S`).
    pub sensors: usize,
    /// Boundary samples per pipe (`K`).
    pub boundary_samples: usize,
    /// Branch feature width for the graph model (`d`).
    pub feature_dim: usize,
    /// Head dimension shared by branch and trunk (`p`).
    pub head_dim: usize,
    /// Pipe embedding width (`d_e`).
    pub embedding_dim: usize,
    /// Message-passing rounds (`R`).
    pub rounds: usize,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    /// Output activation of the branch MLPs.
    pub branch_output: Activation,
    pub aggregator_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::graph()
    }
}

impl ModelConfig {
    pub fn graph() -> Self {
        Self {
            architecture: Architecture::Graph,
            sensors: 4,
            boundary_samples: 16,
            feature_dim: 32,
            head_dim: 16,
            embedding_dim: 8,
            rounds: 2,
            branch_hidden: vec![64, 64],
            trunk_hidden: vec![64, 64],
            branch_output: Activation::Tanh,
            aggregator_activation: Activation::Tanh,
        }
    }

    /// The multiplicative baseline with the same head dimension and MLP widths.
    pub fn vanilla() -> Self {
        Self {
            architecture: Architecture::Vanilla,
            rounds: 0,
            branch_output: Activation::Identity,
            ..Self::graph()
        }
    }

    /// Width of the vector a branch MLP consumes: `[u_init; mask; u_bound; indirect]`.
    pub fn branch_input_dim(&self) -> usize {
        2 * self.sensors + self.boundary_samples + 1
    }

    pub fn branch_output_dim(&self) -> usize {
        match self.architecture {
            Architecture::Graph => self.feature_dim,
            Architecture::Vanilla => self.head_dim,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("boundary_samples", self.boundary_samples),
            ("head_dim", self.head_dim),
            ("embedding_dim", self.embedding_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.architecture == Architecture::Graph && self.feature_dim == 0 {
            return Err(ModelError::Config("feature_dim must be positive".into()));
        }
        if self.branch_hidden.contains(&0) || self.trunk_hidden.contains(&0) {
            return Err(ModelError::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// What a checkpoint records about the model it holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub config: ModelConfig,
    pub topology_hash: String,
    pub pipe_ids: Vec<String>,
    pub horizon_s: f64,
    pub init_seed: u64,
}

/// Offsets of the shared aggregator weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregatorLayout {
    pub w_self: usize,
    pub w_nbr: usize,
    pub bias: usize,
}

/// Where each component lives in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub branches: Vec<Mlp>,
    pub aggregator: Option<AggregatorLayout>,
    /// `p x d` row-major, graph model only.
    pub projection: Option<usize>,
    pub trunk: Mlp,
    /// `pipes x d_e` row-major.
    pub embeddings: usize,
    pub head_bias: usize,
    pub total: usize,
}

impl ParamLayout {
    fn new(config: &ModelConfig, pipes: usize) -> Self {
        let mut next = 0;
        let mut branch_dims = vec![config.branch_input_dim()];
        branch_dims.extend(&config.branch_hidden);
        branch_dims.push(config.branch_output_dim());
        let branches = (0..pipes)
            .map(|_| {
                let mlp = Mlp::new(&branch_dims, Activation::Tanh, config.branch_output, next);
                next = mlp.end();
                mlp
            })
            .collect();

        let d = config.feature_dim;
        let (aggregator, projection) = match config.architecture {
            Architecture::Graph => {
                let agg = AggregatorLayout {
                    w_self: next,
                    w_nbr: next + d * d,
                    bias: next + 2 * d * d,
                };
                next += 2 * d * d + d;
                let proj = next;
                next += config.head_dim * d;
                (Some(agg), Some(proj))
            }
            Architecture::Vanilla => (None, None),
        };

        let mut trunk_dims = vec![config.embedding_dim + 2];
        trunk_dims.extend(&config.trunk_hidden);
        trunk_dims.push(config.head_dim);
        let trunk = Mlp::new(&trunk_dims, Activation::Tanh, Activation::Identity, next);
        next = trunk.end();
        let embeddings = next;
        next += pipes * config.embedding_dim;
        let head_bias = next;
        next += 1;
        Self {
            branches,
            aggregator,
            projection,
            trunk,
            embeddings,
            head_bias,
            total: next,
        }
    }
}

/// Itemized trainable-parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub architecture: Architecture,
    pub branch_per_pipe: usize,
    pub branch_total: usize,
    pub aggregator: usize,
    pub projection: usize,
    pub trunk: usize,
    pub embeddings: usize,
    pub head_bias: usize,
    pub total: usize,
}

/// Per-pipe condition features already reduced to the head dimension.
#[derive(Debug, Clone)]
pub enum ConditionVars {
    /// Graph model: one projected vector per pipe.
    PerPipe(Vec<Var>),
    /// Vanilla model: one combined vector for every query.
    Shared(Var),
}

#[derive(Debug, Clone)]
pub struct OperatorModel {
    descriptor: ModelDescriptor,
    layout: ParamLayout,
    neighbors: Vec<Vec<usize>>,
    pub params: Vec<f64>,
}

impl OperatorModel {
    /// Builds a freshly initialized model for `topology`.
    pub fn new(
        config: ModelConfig,
        topology: &NetworkTopology,
        horizon_s: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if !(horizon_s > 0.0) {
            return Err(ModelError::Config(format!("horizon {horizon_s} must be positive")));
        }
        let adjacency = topology.line_graph_adjacency()?;
        let pipe_ids = topology.pipe_ids();
        let neighbors = neighbor_lists(&pipe_ids, &adjacency)?;
        let layout = ParamLayout::new(&config, pipe_ids.len());
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_params(&config, &layout, pipe_ids.len(), &mut params, &mut rng);
        Ok(Self {
            descriptor: ModelDescriptor {
                config,
                topology_hash: topology.topology_hash(),
                pipe_ids,
                horizon_s,
                init_seed: seed,
            },
            layout,
            neighbors,
            params,
        })
    }

    /// Rebuilds a model around stored parameters, refusing a different network.
    pub fn from_parts(
        descriptor: ModelDescriptor,
        topology: &NetworkTopology,
        params: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let network = topology.topology_hash();
        if descriptor.topology_hash != network {
            return Err(ModelError::TopologyMismatch {
                checkpoint: descriptor.topology_hash,
                network,
            });
        }
        descriptor.config.validate()?;
        let adjacency = topology.line_graph_adjacency()?;
        let neighbors = neighbor_lists(&descriptor.pipe_ids, &adjacency)?;
        let layout = ParamLayout::new(&descriptor.config, descriptor.pipe_ids.len());
        if params.len() != layout.total {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self {
            descriptor,
            layout,
            neighbors,
            params,
        })
    }

    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    pub fn config(&self) -> &ModelConfig {
        &self.descriptor.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn pipe_ids(&self) -> &[String] {
        &self.descriptor.pipe_ids
    }

    pub fn pipe_index(&self, pipe_id: &str) -> Result<usize, ModelError> {
        self.descriptor
            .pipe_ids
            .iter()
            .position(|p| p == pipe_id)
            .ok_or_else(|| ModelError::UnknownPipe(pipe_id.to_string()))
    }

    /// Replaces the neighbour structure used by aggregation (test configurations).
    pub fn set_adjacency(&mut self, adjacency: &AdjacencyMap) -> Result<(), ModelError> {
        self.neighbors = neighbor_lists(&self.descriptor.pipe_ids, adjacency)?;
        Ok(())
    }

    pub fn parameter_count(&self) -> ParameterReport {
        let c = self.config();
        let branch_per_pipe = self.layout.branches.first().map_or(0, Mlp::param_count);
        let pipes = self.descriptor.pipe_ids.len();
        let d = c.feature_dim;
        let (aggregator, projection) = match c.architecture {
            Architecture::Graph => (2 * d * d + d, c.head_dim * d),
            Architecture::Vanilla => (0, 0),
        };
        let report = ParameterReport {
            architecture: c.architecture,
            branch_per_pipe,
            branch_total: branch_per_pipe * pipes,
            aggregator,
            projection,
            trunk: self.layout.trunk.param_count(),
            embeddings: pipes * c.embedding_dim,
            head_bias: 1,
            total: self.params.len(),
        };
        debug_assert_eq!(
            report.branch_total
                + report.aggregator
                + report.projection
                + report.trunk
                + report.embeddings
                + report.head_bias,
            report.total
        );
        report
    }

    /// Orders and validates one condition (one input per pipe) for evaluation.
    pub fn encode_condition(&self, inputs: &[BranchInput]) -> Result<EncodedCondition, ModelError> {
        EncodedCondition::new(inputs, &self.descriptor.pipe_ids, self.config())
    }

    /// Per-pipe branch outputs `h`.
    pub fn branch_forward_tape(&self, tape: &mut Tape, condition: &EncodedCondition) -> Result<Vec<Var>, ModelError> {
        self.layout
            .branches
            .iter()
            .zip(condition.vectors())
            .map(|(mlp, u)| {
                let x = tape.input(u.clone());
                Ok(mlp.forward_tape(&self.params, tape, x)?)
            })
            .collect()
    }

    /// `R` rounds of `h'_p = act(W_self h_p + W_nbr mean_{q ~ p} h_q + b)`.
    pub fn aggregate_tape(
        &self,
        tape: &mut Tape,
        features: &[Var],
        neighbors: &[Vec<usize>],
    ) -> Result<Vec<Var>, ModelError> {
        let agg = self
            .layout
            .aggregator
            .ok_or_else(|| ModelError::Config("vanilla model has no aggregator".into()))?;
        if features.len() != neighbors.len() {
            return Err(ModelError::Config(format!(
                "{} feature vectors for {} pipes",
                features.len(),
                neighbors.len()
            )));
        }
        let d = self.config().feature_dim;
        let mut h = features.to_vec();
        for _ in 0..self.config().rounds {
            let mut next = Vec::with_capacity(h.len());
            for (p, nbrs) in neighbors.iter().enumerate() {
                let own = tape.affine(&self.params, h[p], agg.w_self, Some(agg.bias), d)?;
                let pre = if nbrs.is_empty() {
                    own
                } else {
                    let nbr_vars: Vec<Var> = nbrs.iter().map(|&q| h[q]).collect();
                    let mean = tape.mean(&nbr_vars, d)?;
                    let msg = tape.affine(&self.params, mean, agg.w_nbr, None, d)?;
                    tape.add(own, msg)?
                };
                next.push(match self.config().aggregator_activation {
                    Activation::Tanh => tape.tanh(pre),
                    Activation::Identity => pre,
                });
            }
            h = next;
        }
        Ok(h)
    }

    /// Branch side of the model, reduced to head-dimension vectors.
    pub fn condition_tape(&self, tape: &mut Tape, condition: &EncodedCondition) -> Result<ConditionVars, ModelError> {
        let h = self.branch_forward_tape(tape, condition)?;
        match self.config().architecture {
            Architecture::Graph => {
                let b = self.aggregate_tape(tape, &h, &self.neighbors)?;
                let proj = self.layout.projection.expect("graph layout");
                let p = self.config().head_dim;
                let projected = b
                    .into_iter()
                    .map(|v| tape.affine(&self.params, v, proj, None, p))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(ConditionVars::PerPipe(projected))
            }
            Architecture::Vanilla => {
                let mut combined = h[0];
                for &v in &h[1..] {
                    combined = tape.mul(combined, v)?;
                }
                Ok(ConditionVars::Shared(combined))
            }
        }
    }

    /// Trunk output for a query on pipe `pipe` at relative position and time.
    pub fn trunk_tape(&self, tape: &mut Tape, pipe: usize, x_rel: f64, t_rel: f64) -> Result<Var, ModelError> {
        let de = self.config().embedding_dim;
        let emb = tape.param(&self.params, self.layout.embeddings + pipe * de, de);
        let coords = tape.input(vec![x_rel, t_rel]);
        let input = tape.concat(&[emb, coords]);
        Ok(self.layout.trunk.forward_tape(&self.params, tape, input)?)
    }

    /// Raw head output `<branch, trunk> + beta` for one query.
    pub fn head_tape(
        &self,
        tape: &mut Tape,
        condition: &ConditionVars,
        pipe: usize,
        x_rel: f64,
        t_rel: f64,
    ) -> Result<Var, ModelError> {
        let trunk = self.trunk_tape(tape, pipe, x_rel, t_rel)?;
        let branch = match condition {
            ConditionVars::PerPipe(v) => v[pipe],
            ConditionVars::Shared(v) => *v,
        };
        let dot = tape.dot(branch, trunk)?;
        Ok(tape.add_scalar_param(&self.params, dot, self.layout.head_bias)?)
    }

    /// Records a full estimate on `tape` and returns the output node.
    pub fn estimate_tape(
        &self,
        tape: &mut Tape,
        inputs: &[BranchInput],
        query: &TrunkInput,
    ) -> Result<Var, ModelError> {
        query.validate()?;
        let pipe = self.pipe_index(&query.pipe_id)?;
        let condition = self.encode_condition(inputs)?;
        let vars = self.condition_tape(tape, &condition)?;
        self.head_tape(tape, &vars, pipe, query.x_rel, query.t_rel)
    }

    /// Unclamped estimate of the hydrogen mass fraction at `query`.
    pub fn estimate(&self, inputs: &[BranchInput], query: &TrunkInput) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let out = self.estimate_tape(&mut tape, inputs, query)?;
        Ok(tape.value(out)[0])
    }

    /// Estimate clamped to the physical range, for reporting.
    pub fn estimate_clamped(&self, inputs: &[BranchInput], query: &TrunkInput) -> Result<f64, ModelError> {
        Ok(self.estimate(inputs, query)?.clamp(0.0, 1.0))
    }

    /// Estimates for many queries sharing one condition.
    pub fn estimate_many(
        &self,
        condition: &EncodedCondition,
        queries: &[(usize, f64, f64)],
    ) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.condition_tape(&mut tape, condition)?;
        queries
            .iter()
            .map(|&(pipe, x, t)| {
                let out = self.head_tape(&mut tape, &vars, pipe, x, t)?;
                Ok(tape.value(out)[0])
            })
            .collect()
    }

    /// Per-pipe branch features without a tape.
    pub fn branch_forward(&self, inputs: &[BranchInput]) -> Result<Vec<Vec<f64>>, ModelError> {
        let condition = self.encode_condition(inputs)?;
        self.layout
            .branches
            .iter()
            .zip(condition.vectors())
            .map(|(mlp, u)| Ok(mlp.forward(&self.params, u)?))
            .collect()
    }

    /// Message passing over an explicit adjacency; `features` are in model pipe order.
    pub fn aggregate(&self, features: &[Vec<f64>], adjacency: &AdjacencyMap) -> Result<Vec<Vec<f64>>, ModelError> {
        let neighbors = neighbor_lists(&self.descriptor.pipe_ids, adjacency)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = features.iter().map(|f| tape.input(f.clone())).collect();
        let out = self.aggregate_tape(&mut tape, &vars, &neighbors)?;
        Ok(out.into_iter().map(|v| tape.value(v).to_vec()).collect())
    }
}

fn init_params(config: &ModelConfig, layout: &ParamLayout, pipes: usize, params: &mut [f64], rng: &mut ChaCha8Rng) {
    for mlp in &layout.branches {
        mlp.init(params, rng);
    }
    let d = config.feature_dim;
    if let Some(agg) = layout.aggregator {
        glorot_uniform(rng, d, d, &mut params[agg.w_self..agg.w_self + d * d]);
        glorot_uniform(rng, d, d, &mut params[agg.w_nbr..agg.w_nbr + d * d]);
        params[agg.bias..agg.bias + d].fill(0.0);
    }
    if let Some(proj) = layout.projection {
        let p = config.head_dim;
        glorot_uniform(rng, d, p, &mut params[proj..proj + p * d]);
    }
    layout.trunk.init(params, rng);
    let de = config.embedding_dim;
    glorot_uniform(rng, pipes, de, &mut params[layout.embeddings..layout.embeddings + pipes * de]);
    params[layout.head_bias] = 0.0;
}
