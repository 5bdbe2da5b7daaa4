//! Seeded random network generator used by property tests and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NetworkGraph, Node, NodeKind, Pipe};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomNetworkOptions {
    pub junctions: usize,
    /// Upper bound on junction-to-junction edges added on top of the spanning tree.
    pub extra_edges: usize,
    /// Upper bound on degree-2 vertices inserted into each edge.
    pub max_interior: usize,
    pub length_range: (f64, f64),
    pub diameter_range: (f64, f64),
    pub friction_range: (f64, f64),
}

impl Default for RandomNetworkOptions {
    fn default() -> Self {
        Self {
            junctions: 4,
            extra_edges: 2,
            max_interior: 2,
            length_range: (300.0, 1500.0),
            diameter_range: (0.3, 0.8),
            friction_range: (0.008, 0.02),
        }
    }
}

struct Builder {
    rng: ChaCha8Rng,
    opts: RandomNetworkOptions,
    g: NetworkGraph,
    interior: usize,
}

impl Builder {
    fn add_node(&mut self, id: String, kind: NodeKind) -> String {
        self.g.nodes.push(Node::new(id.clone(), kind));
        id
    }

    fn sample(&mut self, (lo, hi): (f64, f64)) -> f64 {
        self.rng.gen_range(lo..=hi)
    }

    /// Adds an edge `a -> b`, split into a random number of physical pipes.
    fn add_edge(&mut self, a: &str, b: &str) {
        let pieces = self.rng.gen_range(0..=self.opts.max_interior) + 1;
        let mut prev = a.to_string();
        for k in 0..pieces {
            let next = if k + 1 == pieces {
                b.to_string()
            } else {
                self.interior += 1;
                let id = format!("v{}", self.interior);
                self.add_node(id, NodeKind::Interior)
            };
            let id = format!("e{}", self.g.pipes.len());
            let length = self.sample(self.opts.length_range);
            let diameter = self.sample(self.opts.diameter_range);
            let friction = self.sample(self.opts.friction_range);
            // Random declared orientation; the topology pipeline decides the real one.
            let (from, to) = if self.rng.gen_bool(0.5) {
                (prev.clone(), next.clone())
            } else {
                (next.clone(), prev.clone())
            };
            self.g
                .pipes
                .push(Pipe::new(id, from, to, length, diameter, friction));
            prev = next;
        }
    }
}

/// Generates a connected network with exactly `opts.junctions` junction
/// nodes (degree ≥ 3 interior vertices), degree-2 interior vertices along
/// the edges, and at least one supply and one demand node. With zero
/// junctions the result is a single supply-to-demand chain.
pub fn random_network(seed: u64, opts: &RandomNetworkOptions) -> NetworkGraph {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        opts: *opts,
        g: NetworkGraph::default(),
        interior: 0,
    };
    if opts.junctions == 0 {
        let s = b.add_node("s0".into(), NodeKind::Supply);
        let d = b.add_node("d0".into(), NodeKind::Demand);
        b.add_edge(&s, &d);
        return b.g;
    }

    let junctions: Vec<String> = (0..opts.junctions)
        .map(|k| b.add_node(format!("j{k}"), NodeKind::Interior))
        .collect();
    let mut degree = vec![0usize; junctions.len()];
    for k in 1..junctions.len() {
        let parent = b.rng.gen_range(0..k);
        b.add_edge(&junctions[parent], &junctions[k]);
        degree[parent] += 1;
        degree[k] += 1;
    }
    if junctions.len() > 1 {
        let extra = b.rng.gen_range(0..=opts.extra_edges);
        for _ in 0..extra {
            let x = b.rng.gen_range(0..junctions.len());
            let mut y = b.rng.gen_range(0..junctions.len() - 1);
            if y >= x {
                y += 1;
            }
            b.add_edge(&junctions[x], &junctions[y]);
            degree[x] += 1;
            degree[y] += 1;
        }
    }

    let (mut supplies, mut demands) = (0usize, 0usize);
    let first_supply = 0;
    let first_demand = junctions.len() - 1;
    for k in 0..junctions.len() {
        let mut want = 3usize.saturating_sub(degree[k]);
        if k == first_supply || k == first_demand {
            want = want.max(1);
        }
        for _ in 0..want {
            let supply = if k == first_supply && supplies == 0 {
                true
            } else if k == first_demand && demands == 0 {
                false
            } else {
                b.rng.gen_bool(0.4)
            };
            if supply {
                let id = b.add_node(format!("s{supplies}"), NodeKind::Supply);
                supplies += 1;
                b.add_edge(&id, &junctions[k]);
            } else {
                let id = b.add_node(format!("d{demands}"), NodeKind::Demand);
                demands += 1;
                b.add_edge(&junctions[k], &id);
            }
            degree[k] += 1;
        }
    }
    b.g
}
