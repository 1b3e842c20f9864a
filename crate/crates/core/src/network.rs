//! Pipeline network topology: nodes, directed pipes and the pipe line graph.
//!
//! Pipes are directed (flow follows the pipe orientation). Two pipes are
//! neighbours in the line graph when they share an endpoint node in either
//! role, so the adjacency is symmetric.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::NetworkError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Source,
    HydrogenInjection,
    Junction,
    Load,
}

impl NodeKind {
    /// Sources and injection stations carry an operational boundary signal.
    pub fn is_controlled(self) -> bool {
        matches!(self, NodeKind::Source | NodeKind::HydrogenInjection)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_signal_id: Option<String>,
}

impl Node {
    pub fn new(id: impl Into<String>, kind: NodeKind) -> Self {
        Self {
            id: id.into(),
            kind,
            boundary_signal_id: None,
        }
    }

    pub fn controlled(id: impl Into<String>, kind: NodeKind, signal: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            boundary_signal_id: Some(signal.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipe {
    pub id: String,
    pub from_node: String,
    pub to_node: String,
    pub length_m: f64,
    pub area_m2: f64,
}

impl Pipe {
    pub fn new(
        id: impl Into<String>,
        from_node: impl Into<String>,
        to_node: impl Into<String>,
        length_m: f64,
        area_m2: f64,
    ) -> Self {
        Self {
            id: id.into(),
            from_node: from_node.into(),
            to_node: to_node.into(),
            length_m,
            area_m2,
        }
    }
}

/// A network definition. Node and pipe order is preserved; it fixes the
/// pipe indexing used by the simulator and the operator models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub nodes: Vec<Node>,
    pub pipes: Vec<Pipe>,
}

/// Maps each pipe id to the ids of pipes sharing at least one endpoint.
pub type AdjacencyMap = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateNodeId(String),
    DuplicatePipeId(String),
    MissingSignal(String),
    UnexpectedSignal(String),
    NonPositiveLength(String),
    NonPositiveArea(String),
    SelfLoop(String),
    MissingNode { pipe: String, node: String },
    NoOutflow(String),
    NoInflow(String),
    Disconnected { components: usize },
    Empty,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNodeId(id) => write!(f, "node id `{id}` is not unique"),
            Violation::DuplicatePipeId(id) => write!(f, "pipe id `{id}` is not unique"),
            Violation::MissingSignal(id) => {
                write!(f, "node `{id}` is a source/injection but has no boundary_signal_id")
            }
            Violation::UnexpectedSignal(id) => {
                write!(f, "node `{id}` is a junction/load but declares a boundary_signal_id")
            }
            Violation::NonPositiveLength(id) => write!(f, "pipe `{id}` has non-positive length_m"),
            Violation::NonPositiveArea(id) => write!(f, "pipe `{id}` has non-positive area_m2"),
            Violation::SelfLoop(id) => write!(f, "pipe `{id}` starts and ends at the same node"),
            Violation::MissingNode { pipe, node } => {
                write!(f, "pipe `{pipe}` references unknown node `{node}`")
            }
            Violation::NoOutflow(id) => write!(f, "controlled node `{id}` has no outgoing pipe"),
            Violation::NoInflow(id) => write!(f, "load node `{id}` has no incoming pipe"),
            Violation::Disconnected { components } => {
                write!(f, "network is not connected ({components} components)")
            }
            Violation::Empty => write!(f, "network has no nodes"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "network is valid");
        }
        for v in &self.violations {
            writeln!(f, "violation: {v}")?;
        }
        Ok(())
    }
}

impl NetworkTopology {
    pub fn new(nodes: Vec<Node>, pipes: Vec<Pipe>) -> Self {
        Self { nodes, pipes }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn pipe(&self, id: &str) -> Option<&Pipe> {
        self.pipes.iter().find(|p| p.id == id)
    }

    pub fn pipe_index(&self, id: &str) -> Option<usize> {
        self.pipes.iter().position(|p| p.id == id)
    }

    pub fn pipe_ids(&self) -> Vec<String> {
        self.pipes.iter().map(|p| p.id.clone()).collect()
    }

    /// Lists every violated invariant. An empty report means the topology is valid.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.nodes.is_empty() {
            violations.push(Violation::Empty);
        }

        let mut seen = HashSet::new();
        for node in &self.nodes {
            if !seen.insert(node.id.as_str()) {
                violations.push(Violation::DuplicateNodeId(node.id.clone()));
            }
            match (node.kind.is_controlled(), &node.boundary_signal_id) {
                (true, None) => violations.push(Violation::MissingSignal(node.id.clone())),
                (false, Some(_)) => violations.push(Violation::UnexpectedSignal(node.id.clone())),
                _ => {}
            }
        }

        let mut seen_pipes = HashSet::new();
        for pipe in &self.pipes {
            if !seen_pipes.insert(pipe.id.as_str()) {
                violations.push(Violation::DuplicatePipeId(pipe.id.clone()));
            }
            // `!(x > 0)` also rejects NaN
            if !(pipe.length_m > 0.0) || !pipe.length_m.is_finite() {
                violations.push(Violation::NonPositiveLength(pipe.id.clone()));
            }
            if !(pipe.area_m2 > 0.0) || !pipe.area_m2.is_finite() {
                violations.push(Violation::NonPositiveArea(pipe.id.clone()));
            }
            if pipe.from_node == pipe.to_node {
                violations.push(Violation::SelfLoop(pipe.id.clone()));
            }
            for end in [&pipe.from_node, &pipe.to_node] {
                if !seen.contains(end.as_str()) {
                    violations.push(Violation::MissingNode {
                        pipe: pipe.id.clone(),
                        node: end.clone(),
                    });
                }
            }
        }

        for node in &self.nodes {
            let has_out = self.pipes.iter().any(|p| p.from_node == node.id);
            let has_in = self.pipes.iter().any(|p| p.to_node == node.id);
            if node.kind.is_controlled() && !has_out {
                violations.push(Violation::NoOutflow(node.id.clone()));
            }
            if node.kind == NodeKind::Load && !has_in {
                violations.push(Violation::NoInflow(node.id.clone()));
            }
        }

        if !self.nodes.is_empty() {
            let components = self.component_count();
            if components > 1 {
                violations.push(Violation::Disconnected { components });
            }
        }

        ValidationReport { violations }
    }

    fn ensure_valid(&self) -> Result<(), NetworkError> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(NetworkError::Invalid(report))
        }
    }

    /// Weakly connected components over known nodes; pipes to unknown nodes are ignored.
    fn component_count(&self) -> usize {
        let index: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for p in &self.pipes {
            if let (Some(&a), Some(&b)) = (index.get(p.from_node.as_str()), index.get(p.to_node.as_str())) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        let mut component = vec![usize::MAX; self.nodes.len()];
        let mut count = 0;
        for start in 0..self.nodes.len() {
            if component[start] != usize::MAX {
                continue;
            }
            let mut queue = VecDeque::from([start]);
            component[start] = count;
            while let Some(u) = queue.pop_front() {
                for &w in &adj[u] {
                    if component[w] == usize::MAX {
                        component[w] = count;
                        queue.push_back(w);
                    }
                }
            }
            count += 1;
        }
        count
    }

    /// Line graph of the network: pipes are vertices, shared endpoints are edges.
    pub fn line_graph_adjacency(&self) -> Result<AdjacencyMap, NetworkError> {
        self.ensure_valid()?;
        let mut by_node: HashMap<&str, Vec<&str>> = HashMap::new();
        for p in &self.pipes {
            by_node.entry(p.from_node.as_str()).or_default().push(p.id.as_str());
            by_node.entry(p.to_node.as_str()).or_default().push(p.id.as_str());
        }
        let mut adjacency: AdjacencyMap = self
            .pipes
            .iter()
            .map(|p| (p.id.clone(), BTreeSet::new()))
            .collect();
        for pipes in by_node.values() {
            for &a in pipes {
                for &b in pipes {
                    if a != b {
                        adjacency.get_mut(a).expect("pipe present").insert(b.to_string());
                    }
                }
            }
        }
        Ok(adjacency)
    }

    pub fn upstream_pipes(&self, node_id: &str) -> Result<BTreeSet<String>, NetworkError> {
        if self.node(node_id).is_none() {
            return Err(NetworkError::UnknownNode(node_id.to_string()));
        }
        Ok(self
            .pipes
            .iter()
            .filter(|p| p.to_node == node_id)
            .map(|p| p.id.clone())
            .collect())
    }

    pub fn downstream_pipes(&self, node_id: &str) -> Result<BTreeSet<String>, NetworkError> {
        if self.node(node_id).is_none() {
            return Err(NetworkError::UnknownNode(node_id.to_string()));
        }
        Ok(self
            .pipes
            .iter()
            .filter(|p| p.from_node == node_id)
            .map(|p| p.id.clone())
            .collect())
    }

    /// Nodes in an order where every pipe goes from an earlier to a later
    /// node. Fails when the directed pipe graph has a cycle.
    pub fn topological_nodes(&self) -> Result<Vec<usize>, NetworkError> {
        let index: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let mut indegree = vec![0usize; self.nodes.len()];
        let mut out = vec![Vec::new(); self.nodes.len()];
        for p in &self.pipes {
            let a = index[p.from_node.as_str()];
            let b = index[p.to_node.as_str()];
            out[a].push(b);
            indegree[b] += 1;
        }
        let mut queue: VecDeque<usize> = (0..self.nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &w in &out[u] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    queue.push_back(w);
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = (0..self.nodes.len())
                .find(|&i| indegree[i] > 0)
                .map(|i| self.nodes[i].id.clone())
                .unwrap_or_default();
            return Err(NetworkError::DirectedCycle(stuck));
        }
        Ok(order)
    }

    /// SHA-256 over the canonical JSON form; keys datasets and checkpoints to a network.
    pub fn topology_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("topology serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Six-pipe demonstration network: two sources, one hydrogen injection
    /// station, two junctions and two loads.
    ///
    /// ```text
    ///  s1 --p1--\            /--p5--> l1
    ///            j1 --p3--> j2
    ///  s2 --p2--/  \         ^
    ///               \        |p4
    ///                \--p6--> l2   h1
    /// ```
    pub fn reference_six_pipe() -> Self {
        Self::new(
            vec![
                Node::controlled("s1", NodeKind::Source, "sig_s1"),
                Node::controlled("s2", NodeKind::Source, "sig_s2"),
                Node::controlled("h1", NodeKind::HydrogenInjection, "sig_h1"),
                Node::new("j1", NodeKind::Junction),
                Node::new("j2", NodeKind::Junction),
                Node::new("l1", NodeKind::Load),
                Node::new("l2", NodeKind::Load),
            ],
            vec![
                Pipe::new("p1", "s1", "j1", 2000.0, 0.20),
                Pipe::new("p2", "s2", "j1", 1500.0, 0.15),
                Pipe::new("p3", "j1", "j2", 2500.0, 0.30),
                Pipe::new("p4", "h1", "j2", 1000.0, 0.05),
                Pipe::new("p5", "j2", "l1", 2000.0, 0.25),
                Pipe::new("p6", "j1", "l2", 1500.0, 0.10),
            ],
        )
    }
}

/// Pipe-index neighbour lists in topology order; the form consumed by the aggregator.
pub fn neighbor_lists(pipe_ids: &[String], adjacency: &AdjacencyMap) -> Result<Vec<Vec<usize>>, NetworkError> {
    let index: HashMap<&str, usize> = pipe_ids.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    if adjacency.len() != pipe_ids.len() {
        return Err(NetworkError::AdjacencyMismatch(format!(
            "adjacency covers {} pipes, expected {}",
            adjacency.len(),
            pipe_ids.len()
        )));
    }
    pipe_ids
        .iter()
        .map(|p| {
            let nbrs = adjacency
                .get(p)
                .ok_or_else(|| NetworkError::AdjacencyMismatch(format!("no adjacency entry for `{p}`")))?;
            nbrs.iter()
                .map(|q| {
                    index
                        .get(q.as_str())
                        .copied()
                        .ok_or_else(|| NetworkError::AdjacencyMismatch(format!("unknown neighbour `{q}`")))
                })
                .collect()
        })
        .collect()
}

/// Hop distances between pipes in the line graph (`usize::MAX` when unreachable).
pub fn line_graph_distances(neighbors: &[Vec<usize>], from: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; neighbors.len()];
    dist[from] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        for &w in &neighbors[u] {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}
