//! Small reference networks.

use super::{NetworkGraph, Node, NodeKind, Pipe};

/// Two supplies (`1`, `10`) feeding one demand (`6`) through junction `4`;
/// nine pipes `e0..e8` of equal length, diameter and friction.
pub fn fork_network(length: f64, diameter: f64, friction: f64) -> NetworkGraph {
    let mut g = NetworkGraph::default();
    for i in 1..=10 {
        let kind = match i {
            1 | 10 => NodeKind::Supply,
            6 => NodeKind::Demand,
            _ => NodeKind::Interior,
        };
        g.nodes.push(Node::new(i.to_string(), kind));
    }
    let edges = [(1, 2), (2, 3), (3, 4), (10, 9), (9, 8), (8, 7), (7, 4), (4, 5), (5, 6)];
    for (k, (a, b)) in edges.iter().enumerate() {
        g.pipes.push(Pipe::new(format!("e{k}"), a.to_string(), b.to_string(), length, diameter, friction));
    }
    g
}

/// Supply `s` joined to demand `d` by one pipe `p`.
pub fn single_pipe(length: f64, diameter: f64, friction: f64) -> NetworkGraph {
    NetworkGraph {
        nodes: vec![Node::new("s", NodeKind::Supply), Node::new("d", NodeKind::Demand)],
        pipes: vec![Pipe::new("p", "s", "d", length, diameter, friction)],
    }
}
