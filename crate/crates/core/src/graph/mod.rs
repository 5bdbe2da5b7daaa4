//! Network topology: the raw pipe graph, boundary normalization, smoothing of
//! degree-2 vertices into long pipes, DAG orientation and direction-following
//! (DF) edge ordering.

pub mod fixtures;
mod order;
pub mod random;
mod smooth;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use order::{count_extras, df_order, is_acyclic, orient_dag, topological_node_order, ExtraCounts};
pub use smooth::{
    smooth, LongPipe, LongPipeKind, Segment, SmoothedGraph, SmoothedNode, SmoothedNodeKind,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("duplicate pipe id `{0}`")]
    DuplicatePipe(String),
    #[error("pipe `{pipe}` references unknown node `{node}`")]
    UnknownNode { pipe: String, node: String },
    #[error("pipe `{0}` is a self-loop")]
    SelfLoop(String),
    #[error("pipe `{pipe}` has nonpositive {field} ({value})")]
    NonPositive {
        pipe: String,
        field: &'static str,
        value: f64,
    },
    #[error("network graph is not connected")]
    Disconnected,
    #[error("network has no supply node")]
    NoSupply,
    #[error("network has no demand node")]
    NoDemand,
    #[error("interior node `{0}` is a dead end (degree 1)")]
    DeadEnd(String),
    #[error("pipe `{0}` joins two boundary nodes of the same kind")]
    BoundaryConflict(String),
    #[error("pipe chain through `{0}` has conflicting fixed directions")]
    ConflictingDirections(String),
    #[error("pipe chain starting with `{0}` closes a loop on a single node")]
    LoopPipe(String),
    #[error("fixed-direction pipes contain a directed cycle")]
    DirectedCycle,
    #[error("long pipe `{0}` violates the direction-following order")]
    NotDfOrdered(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Supply,
    Demand,
    Interior,
}

impl NodeKind {
    pub fn is_boundary(self) -> bool {
        !matches!(self, NodeKind::Interior)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    /// Set on boundary nodes created by normalization: the id of the node
    /// the boundary condition was originally attached to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias_of: Option<String>,
}

impl Node {
    pub fn new(id: impl Into<String>, kind: NodeKind) -> Self {
        Self {
            id: id.into(),
            kind,
            alias_of: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipe {
    pub id: String,
    pub from: String,
    pub to: String,
    #[serde(rename = "length_m")]
    pub length: f64,
    #[serde(rename = "diameter_m")]
    pub diameter: f64,
    #[serde(rename = "lambda")]
    pub friction: f64,
    #[serde(default)]
    pub directed: bool,
}

impl Pipe {
    pub fn new(
        id: impl Into<String>,
        from: impl Into<String>,
        to: impl Into<String>,
        length: f64,
        diameter: f64,
        friction: f64,
    ) -> Self {
        Self {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            length,
            diameter,
            friction,
            directed: false,
        }
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.diameter * self.diameter / 4.0
    }

    fn other_end(&self, node: &str) -> &str {
        if self.from == node {
            &self.to
        } else {
            &self.from
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub nodes: Vec<Node>,
    pub pipes: Vec<Pipe>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizeOptions {
    /// Length of the stub pipe inserted in front of a boundary node of degree > 1.
    pub stub_length: f64,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        Self { stub_length: 1.0 }
    }
}

impl NetworkGraph {
    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn pipe(&self, id: &str) -> Option<&Pipe> {
        self.pipes.iter().find(|p| p.id == id)
    }

    pub fn degree(&self, node: &str) -> usize {
        self.pipes
            .iter()
            .map(|p| (p.from == node) as usize + (p.to == node) as usize)
            .sum()
    }

    pub fn total_length(&self) -> f64 {
        self.pipes.iter().map(|p| p.length).sum()
    }

    /// Resolves a node id as used in scenario files: either the node itself
    /// or the boundary node that normalization created in its place.
    pub fn resolve_boundary(&self, id: &str) -> Option<&Node> {
        self.nodes
            .iter()
            .find(|n| n.alias_of.as_deref() == Some(id))
            .or_else(|| self.node(id))
    }

    /// Pipe ids incident to each node, sorted.
    pub(crate) fn incidence(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut inc: BTreeMap<&str, Vec<usize>> =
            self.nodes.iter().map(|n| (n.id.as_str(), Vec::new())).collect();
        for (k, p) in self.pipes.iter().enumerate() {
            inc.entry(&p.from).or_default().push(k);
            inc.entry(&p.to).or_default().push(k);
        }
        for list in inc.values_mut() {
            list.sort_by(|&a, &b| self.pipes[a].id.cmp(&self.pipes[b].id));
        }
        inc
    }

    /// Structural and parameter checks shared by every entry point.
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
        }
        let mut pipe_ids = BTreeSet::new();
        for p in &self.pipes {
            if !pipe_ids.insert(p.id.as_str()) {
                return Err(GraphError::DuplicatePipe(p.id.clone()));
            }
            for end in [&p.from, &p.to] {
                if !ids.contains(end.as_str()) {
                    return Err(GraphError::UnknownNode {
                        pipe: p.id.clone(),
                        node: end.clone(),
                    });
                }
            }
            if p.from == p.to {
                return Err(GraphError::SelfLoop(p.id.clone()));
            }
            for (field, value) in [
                ("length", p.length),
                ("diameter", p.diameter),
                ("lambda", p.friction),
            ] {
                if !(value > 0.0) || !value.is_finite() {
                    return Err(GraphError::NonPositive {
                        pipe: p.id.clone(),
                        field,
                        value,
                    });
                }
            }
        }
        if !self.nodes.iter().any(|n| n.kind == NodeKind::Supply) {
            return Err(GraphError::NoSupply);
        }
        if !self.nodes.iter().any(|n| n.kind == NodeKind::Demand) {
            return Err(GraphError::NoDemand);
        }
        if !self.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let Some(first) = self.nodes.first() else {
            return false;
        };
        let inc = self.incidence();
        let mut seen = BTreeSet::from([first.id.as_str()]);
        let mut queue = VecDeque::from([first.id.as_str()]);
        while let Some(v) = queue.pop_front() {
            for &k in &inc[v] {
                let w = self.pipes[k].other_end(v);
                if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen.len() == self.nodes.len()
    }
}

/// Validates the raw network and brings it into boundary-normal form: every
/// supply and demand node ends up with degree one, supply pipes point away
/// from their supply node and demand pipes point towards their demand node.
pub fn validate_and_normalize(
    raw: &NetworkGraph,
    opts: &NormalizeOptions,
) -> Result<NetworkGraph, GraphError> {
    raw.validate()?;
    let mut g = raw.clone();
    let inc = raw.incidence();

    let mut boundary: Vec<&Node> = raw.nodes.iter().filter(|n| n.kind.is_boundary()).collect();
    boundary.sort_by(|a, b| a.id.cmp(&b.id));
    for node in boundary {
        let adjacent = &inc[node.id.as_str()];
        if adjacent.len() < 2 {
            continue;
        }
        let template = &raw.pipes[adjacent[0]];
        let mut stub_id = format!("{}~stub", node.id);
        while g.node(&stub_id).is_some() || g.pipe(&stub_id).is_some() {
            stub_id.push('_');
        }
        let (from, to) = match node.kind {
            NodeKind::Supply => (stub_id.clone(), node.id.clone()),
            _ => (node.id.clone(), stub_id.clone()),
        };
        g.nodes.push(Node {
            id: stub_id.clone(),
            kind: node.kind,
            alias_of: Some(node.id.clone()),
        });
        g.pipes.push(Pipe {
            id: stub_id,
            from,
            to,
            length: opts.stub_length,
            diameter: template.diameter,
            friction: template.friction,
            directed: true,
        });
        if let Some(n) = g.nodes.iter_mut().find(|n| n.id == node.id) {
            n.kind = NodeKind::Interior;
        }
    }

    let kinds: BTreeMap<String, NodeKind> =
        g.nodes.iter().map(|n| (n.id.clone(), n.kind)).collect();
    for p in &mut g.pipes {
        let (kf, kt) = (kinds[&p.from], kinds[&p.to]);
        let flip = match (kf, kt) {
            (NodeKind::Supply, NodeKind::Supply) | (NodeKind::Demand, NodeKind::Demand) => {
                return Err(GraphError::BoundaryConflict(p.id.clone()));
            }
            (NodeKind::Demand, _) | (_, NodeKind::Supply) => true,
            _ => false,
        };
        if flip {
            std::mem::swap(&mut p.from, &mut p.to);
        }
        if kf.is_boundary() || kt.is_boundary() {
            p.directed = true;
        }
    }
    Ok(g)
}
