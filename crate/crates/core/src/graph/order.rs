use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{GraphError, LongPipeKind, SmoothedGraph, SmoothedNodeKind};

/// Topological order of the nodes using only the edges selected by `use_edge`.
///
/// Ready nodes are released by (hop distance from the supply set, id), so the
/// order starts at the supply nodes in id order and sweeps outwards.
fn node_order(
    g: &SmoothedGraph,
    use_edge: impl Fn(usize) -> bool,
) -> Result<BTreeMap<String, usize>, GraphError> {
    let index: BTreeMap<&str, usize> = g
        .nodes
        .iter()
        .enumerate()
        .map(|(k, n)| (n.id.as_str(), k))
        .collect();
    let nn = g.nodes.len();
    let mut adj = vec![Vec::new(); nn];
    for p in &g.long_pipes {
        let (a, b) = (index[p.from.as_str()], index[p.to.as_str()]);
        adj[a].push(b);
        adj[b].push(a);
    }

    let mut dist = vec![usize::MAX; nn];
    let mut queue = VecDeque::new();
    for (k, n) in g.nodes.iter().enumerate() {
        if n.kind == SmoothedNodeKind::Supply {
            dist[k] = 0;
            queue.push_back(k);
        }
    }
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }

    let mut indeg = vec![0usize; nn];
    let mut out = vec![Vec::new(); nn];
    for (k, p) in g.long_pipes.iter().enumerate() {
        if use_edge(k) {
            let (a, b) = (index[p.from.as_str()], index[p.to.as_str()]);
            indeg[b] += 1;
            out[a].push(b);
        }
    }
    let key = |k: usize| Reverse((dist[k], g.nodes[k].id.as_str(), k));
    let mut ready: BinaryHeap<_> = (0..nn).filter(|&k| indeg[k] == 0).map(key).collect();
    let mut order = BTreeMap::new();
    while let Some(Reverse((_, id, v))) = ready.pop() {
        order.insert(id.to_string(), order.len());
        for &w in &out[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                ready.push(key(w));
            }
        }
    }
    if order.len() != nn {
        return Err(GraphError::DirectedCycle);
    }
    Ok(order)
}

/// Whether the long pipes, read as directed edges, form no cycle.
pub fn is_acyclic(g: &SmoothedGraph) -> bool {
    node_order(g, |_| true).is_ok()
}

/// Node ids of an acyclic smoothed graph in topological order.
pub fn topological_node_order(g: &SmoothedGraph) -> Result<Vec<String>, GraphError> {
    let order = node_order(g, |_| true)?;
    let mut ids: Vec<(usize, String)> = order.into_iter().map(|(id, k)| (k, id)).collect();
    ids.sort();
    Ok(ids.into_iter().map(|(_, id)| id).collect())
}

/// Directs every undirected long pipe from the lower to the higher node of a
/// topological order of the fixed-direction subgraph. Fixed directions are
/// kept; the result is acyclic.
pub fn orient_dag(g: &SmoothedGraph) -> Result<SmoothedGraph, GraphError> {
    let order = node_order(g, |k| g.long_pipes[k].directed)?;
    let mut out = g.clone();
    for p in &mut out.long_pipes {
        if !p.directed && order[&p.from] > order[&p.to] {
            p.reverse();
        }
        p.directed = true;
    }
    Ok(out)
}

/// Sorts the long pipes by the topological order of their start node (ties by
/// pipe id), which makes every incoming pipe precede every outgoing pipe.
pub fn df_order(g: &SmoothedGraph) -> Result<SmoothedGraph, GraphError> {
    let order = node_order(g, |_| true)?;
    let mut out = g.clone();
    out.long_pipes
        .sort_by(|a, b| (order[&a.from], &a.id).cmp(&(order[&b.from], &b.id)));
    debug_assert!(out.is_df_ordered());
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtraCounts {
    pub n_s: usize,
    pub n_j: usize,
    pub n_d: usize,
    /// Extra flow variables.
    pub n_e: usize,
    /// Algebraic constraint rows.
    pub n_a: usize,
}

/// Extra variables and algebraic constraints the network assembly will need.
pub fn count_extras(g: &SmoothedGraph) -> ExtraCounts {
    let count = |k| g.long_pipes.iter().filter(|p| p.kind == k).count();
    let (n_s, n_j, n_d) = (
        count(LongPipeKind::Supply),
        count(LongPipeKind::Junction),
        count(LongPipeKind::Demand),
    );
    if g.is_degenerate() {
        return ExtraCounts {
            n_s,
            n_j,
            n_d,
            n_e: 0,
            n_a: 0,
        };
    }
    let n_e = g
        .long_pipes
        .iter()
        .filter(|p| g.node_kind(&p.to) == Some(SmoothedNodeKind::Junction))
        .count();
    let n_a = g.junctions().map(|j| g.incoming(&j.id).len()).sum();
    ExtraCounts {
        n_s,
        n_j,
        n_d,
        n_e,
        n_a,
    }
}
