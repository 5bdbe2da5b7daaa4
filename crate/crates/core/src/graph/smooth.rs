use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{GraphError, NetworkGraph, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothedNodeKind {
    Supply,
    Demand,
    Junction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedNode {
    pub id: String,
    pub kind: SmoothedNodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias_of: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LongPipeKind {
    Supply,
    Demand,
    Junction,
}

/// One physical pipe inside a long pipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub pipe: String,
    #[serde(rename = "length_m")]
    pub length: f64,
    #[serde(rename = "diameter_m")]
    pub diameter: f64,
    #[serde(rename = "lambda")]
    pub friction: f64,
}

impl Segment {
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.diameter * self.diameter / 4.0
    }
}

/// Edge of the smoothed graph: a maximal chain of physical pipes whose inner
/// vertices had degree two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongPipe {
    pub id: String,
    pub from: String,
    pub to: String,
    pub kind: LongPipeKind,
    /// Segments in flow-direction order (`from` to `to`).
    pub segments: Vec<Segment>,
    /// Smoothed-out vertices; `interior_nodes[k]` sits between
    /// `segments[k]` and `segments[k + 1]`.
    pub interior_nodes: Vec<String>,
    pub directed: bool,
}

impl LongPipe {
    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    pub fn starts_at_supply(&self) -> bool {
        self.kind == LongPipeKind::Supply
    }

    pub(crate) fn reverse(&mut self) {
        std::mem::swap(&mut self.from, &mut self.to);
        self.segments.reverse();
        self.interior_nodes.reverse();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedGraph {
    pub nodes: Vec<SmoothedNode>,
    /// Long pipes; after `df_order` their position is the DF order index.
    pub long_pipes: Vec<LongPipe>,
}

impl SmoothedGraph {
    pub fn node(&self, id: &str) -> Option<&SmoothedNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_kind(&self, id: &str) -> Option<SmoothedNodeKind> {
        self.node(id).map(|n| n.kind)
    }

    pub fn junctions(&self) -> impl Iterator<Item = &SmoothedNode> {
        self.nodes
            .iter()
            .filter(|n| n.kind == SmoothedNodeKind::Junction)
    }

    /// Indices of long pipes ending at `node`, in current order.
    pub fn incoming(&self, node: &str) -> Vec<usize> {
        (0..self.long_pipes.len())
            .filter(|&k| self.long_pipes[k].to == node)
            .collect()
    }

    /// Indices of long pipes starting at `node`, in current order.
    pub fn outgoing(&self, node: &str) -> Vec<usize> {
        (0..self.long_pipes.len())
            .filter(|&k| self.long_pipes[k].from == node)
            .collect()
    }

    pub fn total_length(&self) -> f64 {
        self.long_pipes.iter().map(|p| p.total_length()).sum()
    }

    pub fn is_degenerate(&self) -> bool {
        self.long_pipes.len() == 1
    }

    /// Whether every node sees all of its incoming long pipes before all of
    /// its outgoing ones.
    pub fn is_df_ordered(&self) -> bool {
        self.nodes.iter().all(|n| {
            let max_in = self.incoming(&n.id).into_iter().max();
            let min_out = self.outgoing(&n.id).into_iter().min();
            match (max_in, min_out) {
                (Some(i), Some(o)) => i < o,
                _ => true,
            }
        })
    }
}

/// Collapses every chain of degree-2 interior vertices into a single long pipe.
/// The input must already be normalized.
pub fn smooth(g: &NetworkGraph) -> Result<SmoothedGraph, GraphError> {
    let inc = g.incidence();
    let kind_of: BTreeMap<&str, NodeKind> = g.nodes.iter().map(|n| (n.id.as_str(), n.kind)).collect();
    let removable = |id: &str| kind_of[id] == NodeKind::Interior && inc[id].len() == 2;

    for n in &g.nodes {
        if n.kind == NodeKind::Interior && inc[n.id.as_str()].len() < 2 {
            return Err(GraphError::DeadEnd(n.id.clone()));
        }
    }

    let mut anchors: Vec<&str> = g
        .nodes
        .iter()
        .map(|n| n.id.as_str())
        .filter(|id| !removable(id))
        .collect();
    anchors.sort_unstable();

    let mut used = vec![false; g.pipes.len()];
    let mut long_pipes = Vec::new();
    for &start in &anchors {
        for &first in &inc[start] {
            if used[first] {
                continue;
            }
            // (pipe index, traversed along its own orientation)
            let mut chain = Vec::new();
            let mut interior = Vec::new();
            let mut cur = start;
            let mut k = first;
            loop {
                used[k] = true;
                let p = &g.pipes[k];
                chain.push((k, p.from == cur));
                cur = p.other_end(cur);
                if !removable(cur) {
                    break;
                }
                interior.push(cur.to_string());
                k = *inc[cur].iter().find(|&&j| j != k).expect("degree-2 vertex");
            }
            let end = cur;
            if end == start {
                return Err(GraphError::LoopPipe(g.pipes[first].id.clone()));
            }

            let mut forward: Option<bool> = None;
            for &(k, along) in &chain {
                if g.pipes[k].directed {
                    match forward {
                        Some(f) if f != along => {
                            return Err(GraphError::ConflictingDirections(g.pipes[k].id.clone()))
                        }
                        _ => forward = Some(along),
                    }
                }
            }
            let directed = forward.is_some();
            let forward = forward.unwrap_or_else(|| {
                let &(_, along) = chain
                    .iter()
                    .min_by(|a, b| g.pipes[a.0].id.cmp(&g.pipes[b.0].id))
                    .unwrap();
                along
            });

            let segments = chain
                .iter()
                .map(|&(k, _)| {
                    let p = &g.pipes[k];
                    Segment {
                        pipe: p.id.clone(),
                        length: p.length,
                        diameter: p.diameter,
                        friction: p.friction,
                    }
                })
                .collect();
            let id = chain
                .iter()
                .map(|&(k, _)| g.pipes[k].id.as_str())
                .min()
                .unwrap()
                .to_string();
            let mut lp = LongPipe {
                id,
                from: start.to_string(),
                to: end.to_string(),
                kind: LongPipeKind::Junction,
                segments,
                interior_nodes: interior,
                directed,
            };
            if !forward {
                lp.reverse();
            }
            lp.kind = if kind_of[lp.from.as_str()] == NodeKind::Supply {
                LongPipeKind::Supply
            } else if kind_of[lp.to.as_str()] == NodeKind::Demand {
                LongPipeKind::Demand
            } else {
                LongPipeKind::Junction
            };
            long_pipes.push(lp);
        }
    }
    if let Some(k) = used.iter().position(|u| !u) {
        return Err(GraphError::LoopPipe(g.pipes[k].id.clone()));
    }
    long_pipes.sort_by(|a, b| a.id.cmp(&b.id));

    let kept: BTreeSet<&str> = anchors.iter().copied().collect();
    let mut nodes: Vec<SmoothedNode> = g
        .nodes
        .iter()
        .filter(|n| kept.contains(n.id.as_str()))
        .map(|n| SmoothedNode {
            id: n.id.clone(),
            kind: match n.kind {
                NodeKind::Supply => SmoothedNodeKind::Supply,
                NodeKind::Demand => SmoothedNodeKind::Demand,
                NodeKind::Interior => SmoothedNodeKind::Junction,
            },
            alias_of: n.alias_of.clone(),
        })
        .collect();
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(SmoothedGraph { nodes, long_pipes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::fork;
    use crate::graph::{validate_and_normalize, Node, NormalizeOptions, Pipe};

    #[test]
    fn fork_smooths_to_three_long_pipes() {
        let g = validate_and_normalize(&fork(), &NormalizeOptions::default()).unwrap();
        let s = smooth(&g).unwrap();
        assert_eq!(s.long_pipes.len(), 3);
        let junctions: Vec<_> = s.junctions().map(|n| n.id.as_str()).collect();
        assert_eq!(junctions, ["4"]);
        let count = |k| s.long_pipes.iter().filter(|p| p.kind == k).count();
        assert_eq!(count(LongPipeKind::Supply), 2);
        assert_eq!(count(LongPipeKind::Demand), 1);
        let from10 = s.long_pipes.iter().find(|p| p.from == "10").unwrap();
        assert_eq!(from10.interior_nodes, ["9", "8", "7"]);
        assert_eq!(from10.to, "4");
        assert!((s.total_length() - g.total_length()).abs() == 0.0);
    }

    #[test]
    fn path_graph_is_one_long_pipe() {
        let g = NetworkGraph {
            nodes: vec![
                Node::new("s", NodeKind::Supply),
                Node::new("a", NodeKind::Interior),
                Node::new("b", NodeKind::Interior),
                Node::new("d", NodeKind::Demand),
            ],
            pipes: vec![
                Pipe::new("p3", "d", "b", 30.0, 0.3, 0.01),
                Pipe::new("p1", "s", "a", 10.0, 0.5, 0.01),
                Pipe::new("p2", "b", "a", 20.0, 0.4, 0.01),
            ],
        };
        let g = validate_and_normalize(&g, &NormalizeOptions::default()).unwrap();
        let s = smooth(&g).unwrap();
        assert_eq!(s.long_pipes.len(), 1);
        let lp = &s.long_pipes[0];
        assert_eq!((lp.from.as_str(), lp.to.as_str()), ("s", "d"));
        let lens: Vec<f64> = lp.segments.iter().map(|x| x.length).collect();
        assert_eq!(lens, [10.0, 20.0, 30.0]);
        assert_eq!(lp.interior_nodes, ["a", "b"]);
        assert!(s.is_degenerate());
    }

    #[test]
    fn dead_end_rejected() {
        let mut g = fork();
        g.nodes.push(Node::new("x", NodeKind::Interior));
        g.pipes.push(Pipe::new("ex", "4", "x", 10.0, 0.5, 0.01));
        let g = validate_and_normalize(&g, &NormalizeOptions::default()).unwrap();
        assert_eq!(smooth(&g), Err(GraphError::DeadEnd("x".into())));
    }

    #[test]
    fn loop_on_junction_rejected() {
        let mut g = fork();
        g.nodes.push(Node::new("x", NodeKind::Interior));
        g.pipes.push(Pipe::new("ex1", "4", "x", 10.0, 0.5, 0.01));
        g.pipes.push(Pipe::new("ex2", "x", "4", 10.0, 0.5, 0.01));
        let g = validate_and_normalize(&g, &NormalizeOptions::default()).unwrap();
        assert!(matches!(smooth(&g), Err(GraphError::LoopPipe(_))));
    }
}
