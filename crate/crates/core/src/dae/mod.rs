//! Network DAE `M ẋ = K x + B u + f(x, u)`: assembly from per-pipe
//! operators, the implicit Euler residual and its Jacobian.

mod scenario;

use std::collections::BTreeMap;

use thiserror::Error;

pub use scenario::{PressureUnit, Scenario, ScenarioError, Signal, SolverSection};

use crate::fvm::{assemble_operators, build_grid, FvmError, PipeGrid, PipeOperators, DEFAULT_SOUND_SPEED_SQ};
use crate::graph::{
    count_extras, df_order, orient_dag, smooth, topological_node_order, validate_and_normalize, GraphError,
    NetworkGraph, NormalizeOptions, SmoothedGraph, SmoothedNodeKind,
};
use crate::linalg::{BlockPartition, BlockSystem, SparseMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DaeError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("pipe {pipe}: {source}")]
    Fvm { pipe: String, source: FvmError },
    #[error("long pipe `{0}` has no upstream pressure source")]
    NoInletPressure(String),
    #[error("long pipes are not in direction-following order at `{0}`")]
    NotDfOrdered(String),
    #[error("assembled {extras} extra variables and {rows} constraint rows, expected {expected}")]
    ConstraintCount { extras: usize, rows: usize, expected: usize },
    #[error("no supply pressure signal for node `{0}`")]
    MissingSupply(String),
    #[error("no demand flow signal for node `{0}`")]
    MissingDemand(String),
    #[error("vector length {found} does not match {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("nonpositive pressure {value} Pa in long pipe `{pipe}` at point {point}")]
    NonPositivePressure { pipe: String, point: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscretizationOptions {
    /// Target cell size in meters.
    pub mesh_h: f64,
    /// Squared speed of sound, m²/s².
    pub c: f64,
    pub stub_length: f64,
}

impl Default for DiscretizationOptions {
    fn default() -> Self {
        Self {
            mesh_h: 50.0,
            c: DEFAULT_SOUND_SPEED_SQ,
            stub_length: NormalizeOptions::default().stub_length,
        }
    }
}

/// Normalizes, smooths, orients and DF-orders a raw network.
pub fn prepare_graph(raw: &NetworkGraph, stub_length: f64) -> Result<SmoothedGraph, GraphError> {
    let g = validate_and_normalize(raw, &NormalizeOptions { stub_length })?;
    let s = smooth(&g)?;
    df_order(&orient_dag(&s)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inlet {
    /// `p_1` is the supply input `u[input]`.
    Supply { input: usize },
    /// `p_1` is the terminal pressure of the donor pipe.
    Pipe { donor: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outlet {
    /// `q_n` is the demand input `u[input]`.
    Demand { input: usize },
    /// `q_n` is the extra unknown `x[var]`.
    Extra { var: usize },
}

/// Unknowns of one long pipe: `p_2..p_n` at `offset..offset+m`, then
/// `q_1..q_{n-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipeSlots {
    pub offset: usize,
    pub m: usize,
    pub inlet: Inlet,
    pub outlet: Outlet,
}

impl PipeSlots {
    pub fn p(&self, j: usize) -> usize {
        self.offset + j
    }

    pub fn q(&self, j: usize) -> usize {
        self.offset + self.m + j
    }

    /// Index of `p_n`.
    pub fn p_end(&self) -> usize {
        self.offset + self.m - 1
    }

    pub fn q_start(&self) -> usize {
        self.offset + self.m
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + 2 * self.m
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConstraintRow {
    /// Incoming terminal flows minus outgoing initial flows.
    MassBalance { node: String },
    /// `p_n` of `pipe` minus `p_n` of `donor`.
    PressureEquality { node: String, pipe: usize, donor: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexMap {
    pub pipes: Vec<PipeSlots>,
    /// Differential unknowns; extras follow.
    pub n_diff: usize,
    pub n_extra: usize,
    pub constraints: Vec<ConstraintRow>,
}

impl IndexMap {
    pub fn dim(&self) -> usize {
        self.n_diff + self.n_extra
    }
}

/// Boundary input: `node` is the scenario key, `pipe` the long pipe it drives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSlot {
    pub node: String,
    pub pipe: usize,
}

#[derive(Debug, Clone)]
pub struct DaeSystem {
    pub graph: SmoothedGraph,
    pub grids: Vec<PipeGrid>,
    pub ops: Vec<PipeOperators>,
    pub index: IndexMap,
    pub m: SparseMatrix,
    pub k: SparseMatrix,
    /// `dim × (supplies + demands)`; supply pressures come first in `u`.
    pub b: SparseMatrix,
    pub supplies: Vec<InputSlot>,
    pub demands: Vec<InputSlot>,
    pub partition: BlockPartition,
}

impl DaeSystem {
    pub fn from_network(raw: &NetworkGraph, opts: &DiscretizationOptions) -> Result<Self, DaeError> {
        let g = prepare_graph(raw, opts.stub_length)?;
        Self::discretize(g, opts)
    }

    pub fn discretize(g: SmoothedGraph, opts: &DiscretizationOptions) -> Result<Self, DaeError> {
        let grids = g
            .long_pipes
            .iter()
            .map(|p| {
                build_grid(p, opts.mesh_h).map_err(|source| DaeError::Fvm {
                    pipe: p.id.clone(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let ops: Vec<_> = grids.iter().map(|gr| assemble_operators(gr, opts.c)).collect();
        assemble_dae(g, grids, ops)
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn n_inputs(&self) -> usize {
        self.supplies.len() + self.demands.len()
    }

    /// `u(t) = [supply pressures; demand flows]`.
    pub fn inputs_at(&self, sc: &Scenario, t: f64) -> Result<Vec<f64>, DaeError> {
        let mut u = Vec::with_capacity(self.n_inputs());
        for s in &self.supplies {
            let sig = sc.supplies.get(&s.node).ok_or_else(|| DaeError::MissingSupply(s.node.clone()))?;
            u.push(sig.value(t));
        }
        for d in &self.demands {
            let sig = sc.demands.get(&d.node).ok_or_else(|| DaeError::MissingDemand(d.node.clone()))?;
            u.push(sig.value(t));
        }
        Ok(u)
    }

    fn check_len(&self, v: &[f64], expected: usize) -> Result<(), DaeError> {
        if v.len() != expected {
            return Err(DaeError::DimensionMismatch {
                expected,
                found: v.len(),
            });
        }
        Ok(())
    }

    pub fn inlet_pressure(&self, pipe: usize, x: &[f64], u: &[f64]) -> f64 {
        match self.index.pipes[pipe].inlet {
            Inlet::Supply { input } => u[input],
            Inlet::Pipe { donor } => x[self.index.pipes[donor].p_end()],
        }
    }

    pub fn outlet_flow(&self, pipe: usize, x: &[f64], u: &[f64]) -> f64 {
        match self.index.pipes[pipe].outlet {
            Outlet::Demand { input } => u[self.supplies.len() + input],
            Outlet::Extra { var } => x[var],
        }
    }

    fn map_fvm(&self, pipe: usize, e: FvmError) -> DaeError {
        match e {
            FvmError::NonPositivePressure { point, value } => DaeError::NonPositivePressure {
                pipe: self.graph.long_pipes[pipe].id.clone(),
                point,
                value,
            },
            source => DaeError::Fvm {
                pipe: self.graph.long_pipes[pipe].id.clone(),
                source,
            },
        }
    }

    fn pipe_state<'a>(&self, pipe: usize, x: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let s = &self.index.pipes[pipe];
        (&x[s.offset..s.q_start()], &x[s.q_start()..s.q_start() + s.m])
    }

    /// Nonlinear term `f(x, u)`; nonzero only on flow rows.
    pub fn friction(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, DaeError> {
        self.check_len(x, self.dim())?;
        self.check_len(u, self.n_inputs())?;
        let mut f = vec![0.0; self.dim()];
        for (i, s) in self.index.pipes.iter().enumerate() {
            let (p, q) = self.pipe_state(i, x);
            let g = self.ops[i]
                .friction
                .eval(self.inlet_pressure(i, x, u), p, q)
                .map_err(|e| self.map_fvm(i, e))?;
            f[s.q_start()..s.q_start() + s.m].copy_from_slice(&g);
        }
        Ok(f)
    }

    /// `∂f/∂x` as a sparse matrix.
    pub fn friction_jacobian(&self, x: &[f64], u: &[f64]) -> Result<SparseMatrix, DaeError> {
        let mut t = Vec::new();
        self.friction_jacobian_triplets(x, u, 1.0, &mut t)?;
        Ok(SparseMatrix::from_triplets(self.dim(), self.dim(), t))
    }

    fn friction_jacobian_triplets(
        &self,
        x: &[f64],
        u: &[f64],
        scale: f64,
        out: &mut Vec<(usize, usize, f64)>,
    ) -> Result<(), DaeError> {
        self.check_len(x, self.dim())?;
        self.check_len(u, self.n_inputs())?;
        for (i, s) in self.index.pipes.iter().enumerate() {
            let (p, q) = self.pipe_state(i, x);
            let jac = self.ops[i]
                .friction
                .jacobian(self.inlet_pressure(i, x, u), p, q)
                .map_err(|e| self.map_fvm(i, e))?;
            for r in 0..s.m {
                out.push((s.q(r), s.q(r), scale * jac.dq[r]));
                if r >= 1 {
                    out.push((s.q(r), s.p(r - 1), scale * jac.dp[r]));
                }
            }
            if let Inlet::Pipe { donor } = s.inlet {
                out.push((s.q(0), self.index.pipes[donor].p_end(), scale * jac.dp_in));
            }
        }
        Ok(())
    }

    /// `K x + B u + f(x, u)`.
    pub fn rhs(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, DaeError> {
        let mut r = self.friction(x, u)?;
        self.k.mul_vec_acc(1.0, x, &mut r);
        self.b.mul_vec_acc(1.0, u, &mut r);
        Ok(r)
    }

    /// `F(x) = s M (x − x_prev) − τ (K x + B u + f(x, u))`, `s = mass_scale`.
    ///
    /// With `s = 1` this is the implicit Euler residual; `s = 0, τ = 1` gives
    /// the (negated) steady-state residual.
    pub fn residual(
        &self,
        x: &[f64],
        x_prev: &[f64],
        u: &[f64],
        tau: f64,
        mass_scale: f64,
    ) -> Result<Vec<f64>, DaeError> {
        self.check_len(x_prev, self.dim())?;
        let rhs = self.rhs(x, u)?;
        let mut out: Vec<f64> = rhs.iter().map(|v| -tau * v).collect();
        if mass_scale != 0.0 {
            let dx: Vec<f64> = x.iter().zip(x_prev).map(|(a, b)| a - b).collect();
            self.m.mul_vec_acc(mass_scale, &dx, &mut out);
        }
        Ok(out)
    }

    /// `D_F = s M − τ K − τ ∂f/∂x`.
    pub fn jacobian(&self, x: &[f64], u: &[f64], tau: f64, mass_scale: f64) -> Result<SparseMatrix, DaeError> {
        let mut t = self.linear_part(tau, mass_scale);
        self.friction_jacobian_triplets(x, u, -tau, &mut t)?;
        Ok(SparseMatrix::from_triplets(self.dim(), self.dim(), t))
    }

    /// Picard matrix: the friction factor `|q|/p̃` frozen at `x`.
    pub fn picard_matrix(&self, x: &[f64], u: &[f64], tau: f64, mass_scale: f64) -> Result<SparseMatrix, DaeError> {
        self.check_len(x, self.dim())?;
        self.check_len(u, self.n_inputs())?;
        let mut t = self.linear_part(tau, mass_scale);
        for (i, s) in self.index.pipes.iter().enumerate() {
            let (p, q) = self.pipe_state(i, x);
            let lag = self.ops[i]
                .friction
                .lagged(self.inlet_pressure(i, x, u), p, q)
                .map_err(|e| self.map_fvm(i, e))?;
            for (r, v) in lag.into_iter().enumerate() {
                t.push((s.q(r), s.q(r), -tau * v));
            }
        }
        Ok(SparseMatrix::from_triplets(self.dim(), self.dim(), t))
    }

    fn linear_part(&self, tau: f64, mass_scale: f64) -> Vec<(usize, usize, f64)> {
        let mut t: Vec<_> = self.k.triplets().map(|(i, j, v)| (i, j, -tau * v)).collect();
        if mass_scale != 0.0 {
            t.extend(self.m.triplets().map(|(i, j, v)| (i, j, mass_scale * v)));
        }
        t
    }

    /// 2×2 split of a system matrix into differential and algebraic parts.
    pub fn split(&self, a: &SparseMatrix) -> BlockSystem {
        BlockSystem::split(a, &self.partition)
    }

    /// Observable names: node pressures, then initial and terminal flow of
    /// every long pipe.
    pub fn observable_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.graph.nodes.iter().map(|n| format!("p:{}", n.id)).collect();
        for p in &self.graph.long_pipes {
            names.push(format!("q_in:{}", p.id));
            names.push(format!("q_out:{}", p.id));
        }
        names
    }

    pub fn observables(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .graph
            .nodes
            .iter()
            .map(|n| self.node_pressure(&n.id, x, u).unwrap_or(f64::NAN))
            .collect();
        for i in 0..self.index.pipes.len() {
            out.push(x[self.index.pipes[i].q_start()]);
            out.push(self.outlet_flow(i, x, u));
        }
        out
    }

    /// Pressure at a smoothed-graph node.
    pub fn node_pressure(&self, node: &str, x: &[f64], u: &[f64]) -> Option<f64> {
        if let Some(k) = self.graph.incoming(node).first() {
            return Some(x[self.index.pipes[*k].p_end()]);
        }
        let k = *self.graph.outgoing(node).first()?;
        Some(self.inlet_pressure(k, x, u))
    }

    /// Flow entering the network at each supply, keyed by scenario node.
    pub fn supply_flows(&self, x: &[f64]) -> Vec<(String, f64)> {
        self.supplies
            .iter()
            .map(|s| (s.node.clone(), x[self.index.pipes[s.pipe].q_start()]))
            .collect()
    }

    /// Flow leaving the network at each demand, keyed by scenario node.
    pub fn demand_flows(&self, x: &[f64], u: &[f64]) -> Vec<(String, f64)> {
        self.demands
            .iter()
            .map(|d| (d.node.clone(), self.outlet_flow(d.pipe, x, u)))
            .collect()
    }

    /// Inflow minus outflow at every junction.
    pub fn junction_imbalance(&self, x: &[f64], u: &[f64]) -> Vec<(String, f64)> {
        self.graph
            .junctions()
            .map(|j| {
                let inflow: f64 = self.graph.incoming(&j.id).iter().map(|&k| self.outlet_flow(k, x, u)).sum();
                let outflow: f64 = self
                    .graph
                    .outgoing(&j.id)
                    .iter()
                    .map(|&k| x[self.index.pipes[k].q_start()])
                    .sum();
                (j.id.clone(), inflow - outflow)
            })
            .collect()
    }
}

fn scenario_key(g: &SmoothedGraph, node: &str) -> String {
    let n = g.node(node).expect("long pipe endpoint is a graph node");
    n.alias_of.clone().unwrap_or_else(|| n.id.clone())
}

/// Places the per-pipe operators on the block diagonal and adds the inlet
/// pressure coupling, the extra terminal flows and the junction constraints.
pub fn assemble_dae(g: SmoothedGraph, grids: Vec<PipeGrid>, ops: Vec<PipeOperators>) -> Result<DaeSystem, DaeError> {
    if let Some(bad) = g.nodes.iter().find(|n| {
        let max_in = g.incoming(&n.id).into_iter().max();
        let min_out = g.outgoing(&n.id).into_iter().min();
        matches!((max_in, min_out), (Some(i), Some(o)) if i >= o)
    }) {
        return Err(DaeError::NotDfOrdered(bad.id.clone()));
    }
    let np = g.long_pipes.len();
    assert_eq!(grids.len(), np);
    assert_eq!(ops.len(), np);

    // Inputs in DF order.
    let mut supplies = Vec::new();
    let mut demands = Vec::new();
    for (k, p) in g.long_pipes.iter().enumerate() {
        if g.node_kind(&p.from) == Some(SmoothedNodeKind::Supply) {
            supplies.push(InputSlot {
                node: scenario_key(&g, &p.from),
                pipe: k,
            });
        }
        if g.node_kind(&p.to) == Some(SmoothedNodeKind::Demand) {
            demands.push(InputSlot {
                node: scenario_key(&g, &p.to),
                pipe: k,
            });
        }
    }

    let mut offset = 0;
    let mut sizes = Vec::with_capacity(np);
    let mut slots = Vec::with_capacity(np);
    for (k, p) in g.long_pipes.iter().enumerate() {
        let m = ops[k].dim();
        let inlet = if let Some(i) = supplies.iter().position(|s| s.pipe == k) {
            Inlet::Supply { input: i }
        } else {
            let donor = *g
                .incoming(&p.from)
                .first()
                .ok_or_else(|| DaeError::NoInletPressure(p.id.clone()))?;
            Inlet::Pipe { donor }
        };
        slots.push(PipeSlots {
            offset,
            m,
            inlet,
            outlet: Outlet::Demand { input: usize::MAX },
        });
        sizes.push(2 * m);
        offset += 2 * m;
    }
    let n_diff = offset;
    let mut n_extra = 0;
    for (k, p) in g.long_pipes.iter().enumerate() {
        slots[k].outlet = if let Some(i) = demands.iter().position(|d| d.pipe == k) {
            Outlet::Demand { input: i }
        } else {
            debug_assert_eq!(g.node_kind(&p.to), Some(SmoothedNodeKind::Junction));
            n_extra += 1;
            Outlet::Extra {
                var: n_diff + n_extra - 1,
            }
        };
    }

    let mut constraints = Vec::new();
    for id in topological_node_order(&g)? {
        if g.node_kind(&id) != Some(SmoothedNodeKind::Junction) {
            continue;
        }
        let incoming = g.incoming(&id);
        constraints.push(ConstraintRow::MassBalance { node: id.clone() });
        if let Some((&donor, rest)) = incoming.split_first() {
            for &pipe in rest {
                constraints.push(ConstraintRow::PressureEquality {
                    node: id.clone(),
                    pipe,
                    donor,
                });
            }
        }
    }
    let expected = count_extras(&g).n_e;
    if n_extra != expected || constraints.len() != expected {
        return Err(DaeError::ConstraintCount {
            extras: n_extra,
            rows: constraints.len(),
            expected,
        });
    }

    let dim = n_diff + n_extra;
    let n_in = supplies.len() + demands.len();
    let mut mt = Vec::new();
    let mut kt = Vec::new();
    let mut bt = Vec::new();
    for (k, s) in slots.iter().enumerate() {
        let o = &ops[k];
        mt.extend(o.m_p.triplets().map(|(i, j, v)| (s.p(i), s.p(j), v)));
        mt.extend(o.m_q.triplets().map(|(i, j, v)| (s.q(i), s.q(j), v)));
        kt.extend(o.k_pq.triplets().map(|(i, j, v)| (s.p(i), s.q(j), v)));
        kt.extend(o.k_qp.triplets().map(|(i, j, v)| (s.q(i), s.p(j), v)));
        let nz_bq = o.b_q.iter().enumerate().filter(|(_, v)| **v != 0.0);
        match s.outlet {
            Outlet::Demand { input } => bt.extend(nz_bq.map(|(r, &v)| (s.p(r), supplies.len() + input, v))),
            Outlet::Extra { var } => kt.extend(nz_bq.map(|(r, &v)| (s.p(r), var, v))),
        }
        let nz_bp = o.b_p.iter().enumerate().filter(|(_, v)| **v != 0.0);
        match s.inlet {
            Inlet::Supply { input } => bt.extend(nz_bp.map(|(r, &v)| (s.q(r), input, v))),
            Inlet::Pipe { donor } => kt.extend(nz_bp.map(|(r, &v)| (s.q(r), slots[donor].p_end(), v))),
        }
    }
    for (r, c) in constraints.iter().enumerate() {
        let row = n_diff + r;
        match c {
            ConstraintRow::MassBalance { node } => {
                for k in g.incoming(node) {
                    if let Outlet::Extra { var } = slots[k].outlet {
                        kt.push((row, var, 1.0));
                    }
                }
                for k in g.outgoing(node) {
                    kt.push((row, slots[k].q_start(), -1.0));
                }
            }
            ConstraintRow::PressureEquality { pipe, donor, .. } => {
                kt.push((row, slots[*pipe].p_end(), 1.0));
                kt.push((row, slots[*donor].p_end(), -1.0));
            }
        }
    }

    let partition = BlockPartition::from_sizes(&sizes).expect("every pipe has at least two cells");
    Ok(DaeSystem {
        graph: g,
        grids,
        ops,
        index: IndexMap {
            pipes: slots,
            n_diff,
            n_extra,
            constraints,
        },
        m: SparseMatrix::from_triplets(dim, dim, mt),
        k: SparseMatrix::from_triplets(dim, dim, kt),
        b: SparseMatrix::from_triplets(dim, n_in, bt),
        supplies,
        demands,
        partition,
    })
}

/// `F(x)` of one implicit Euler step; see [`DaeSystem::residual`].
pub fn eval_residual(
    sys: &DaeSystem,
    x: &[f64],
    x_prev: &[f64],
    u: &[f64],
    tau: f64,
) -> Result<Vec<f64>, DaeError> {
    sys.residual(x, x_prev, u, tau, 1.0)
}

/// `D_F(x)` of one implicit Euler step together with its 2×2 split.
pub fn eval_jacobian(sys: &DaeSystem, x: &[f64], u: &[f64], tau: f64) -> Result<(SparseMatrix, BlockSystem), DaeError> {
    let j = sys.jacobian(x, u, tau, 1.0)?;
    let blocks = sys.split(&j);
    Ok((j, blocks))
}

/// Node pressures and flows as a map, for reports.
pub fn observables_map(sys: &DaeSystem, x: &[f64], u: &[f64]) -> BTreeMap<String, f64> {
    sys.observable_names().into_iter().zip(sys.observables(x, u)).collect()
}
