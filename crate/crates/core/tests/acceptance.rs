//! Acceptance suite. Every test prints one `[acceptance] criterion N` line
//! with PASS or FAIL before asserting.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use gasnet_core::dae::{ConstraintRow, DaeSystem, DiscretizationOptions, Inlet, Outlet, Scenario, Signal};
use gasnet_core::graph::fixtures::fork_network;
use gasnet_core::graph::random::{random_network, RandomNetworkOptions};
use gasnet_core::graph::{count_extras, NetworkGraph, SmoothedGraph};
use gasnet_core::linalg::first_entry_above_blocks;
use gasnet_core::sim::{
    discretization_from_section, implicit_euler_simulate, implicit_euler_simulate_steps, initial_state,
    NonlinearMethod, PreconditionerStrategy, SolverConfig, TimeSeriesOutput,
};
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn load_network(name: &str) -> NetworkGraph {
    serde_json::from_str(&std::fs::read_to_string(data(name)).unwrap()).unwrap()
}

fn load_scenario(name: &str) -> Scenario {
    Scenario::from_json_str(&std::fs::read_to_string(data(name)).unwrap()).unwrap()
}

fn report(n: u32, name: &str, pass: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let pass = pass && elapsed < limit;
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "[acceptance] criterion {n} ({name}): {verdict}; {detail}; {:.2} s of {} s",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

/// Builds the system and the scenario-configured solver for a data pair.
fn setup(network: &str, scenario: &str) -> (DaeSystem, Scenario, SolverConfig) {
    let sc = load_scenario(scenario);
    let sys = DaeSystem::from_network(&load_network(network), &discretization_from_section(&sc.solver)).unwrap();
    let cfg = SolverConfig::default().with_section(&sc.solver).unwrap();
    (sys, sc, cfg)
}

fn run(sys: &DaeSystem, sc: &Scenario, cfg: &SolverConfig, steps: usize) -> TimeSeriesOutput {
    let x0 = initial_state(sys, sc, cfg).unwrap();
    implicit_euler_simulate_steps(sys, sc, cfg, &x0, steps).unwrap()
}

#[test]
fn criterion_1_single_pipe_steady_state() {
    let start = Instant::now();
    let (l, d, lam, ps, qd) = (10_000.0f64, 0.5f64, 0.01, 50e5f64, 50.0f64);
    let c = 340.0f64 * 340.0;
    let a = std::f64::consts::PI * d * d / 4.0;
    let exact = (ps * ps - c * lam * qd * qd.abs() * l / (d * a * a)).sqrt();
    let sc = load_scenario("single_pipe_scenario.json");
    let cfg = SolverConfig::default().with_section(&sc.solver).unwrap();
    let error = |h: f64| {
        let opts = DiscretizationOptions {
            mesh_h: h,
            c,
            ..Default::default()
        };
        let sys = DaeSystem::from_network(&load_network("single_pipe.json"), &opts).unwrap();
        let x = initial_state(&sys, &sc, &cfg).unwrap();
        let u = sys.inputs_at(&sc, 0.0).unwrap();
        (sys.node_pressure("d", &x, &u).unwrap() - exact).abs() / exact
    };
    let (e50, e25) = (error(50.0), error(25.0));
    report(
        1,
        "single pipe steady state",
        e50 < 1e-3 && e25 < e50,
        start.elapsed(),
        Duration::from_secs(5),
        &format!("p(L) exact {exact:.3} Pa, relative error {e50:.3e} at h = 50 m and {e25:.3e} at h = 25 m"),
    );
}

fn random_scenario(sys: &DaeSystem) -> Scenario {
    let mut sc = Scenario::constant(&[], &[], 10.0, 1.0);
    for s in &sys.supplies {
        sc.supplies.insert(s.node.clone(), Signal::constant(50e5));
    }
    for d in &sys.demands {
        sc.demands
            .insert(d.node.clone(), Signal::new(&d.node, vec![(0.0, 5.0), (5.0, 10.0)]).unwrap());
    }
    sc
}

#[test]
fn criterion_2_exact_preconditioner_two_steps() {
    let start = Instant::now();
    let cfg = SolverConfig {
        precond: PreconditionerStrategy::PerNewtonIteration,
        eps_tol: 1e-12,
        ..Default::default()
    };
    let (fork, fork_sc, _) = setup("fork.json", "fork_switch.json");
    let raw = random_network(
        8,
        &RandomNetworkOptions {
            junctions: 8,
            ..Default::default()
        },
    );
    let random = DaeSystem::from_network(&raw, &DiscretizationOptions::default()).unwrap();
    let random_sc = random_scenario(&random);
    let mut detail = Vec::new();
    let mut pass = true;
    for (name, sys, sc) in [("fork", &fork, &fork_sc), ("random 8-junction", &random, &random_sc)] {
        let out = run(sys, sc, &cfg, 10);
        let counts: Vec<usize> = out.steps.iter().flat_map(|s| s.krylov_iterations.clone()).collect();
        let worst = counts.iter().copied().max().unwrap_or(0);
        let solves = counts.len();
        pass &= worst <= 2 && solves > 0;
        detail.push(format!("{name}: {solves} Newton steps, max {worst} GMRES iterations"));
    }
    report(
        2,
        "two-step preconditioning",
        pass,
        start.elapsed(),
        Duration::from_secs(10),
        &detail.join(", "),
    );
}

fn random_state(sys: &DaeSystem, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; sys.dim()];
    for s in &sys.index.pipes {
        for j in 0..s.m {
            x[s.p(j)] = rng.gen_range(2e6..6e6);
            x[s.q(j)] = rng.gen_range(-80.0..80.0);
        }
    }
    for v in &mut x[sys.index.n_diff..] {
        *v = rng.gen_range(-80.0..80.0);
    }
    let mut u: Vec<f64> = (0..sys.supplies.len()).map(|_| rng.gen_range(2e6..6e6)).collect();
    u.extend((0..sys.demands.len()).map(|_| rng.gen_range(0.0..80.0)));
    (x, u)
}

#[test]
fn criterion_3_block_structure() {
    let start = Instant::now();
    let mut runner = TestRunner::new(Config {
        cases: 100,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&(any_seed(), 0usize..=12), |(seed, junctions)| {
        let raw = random_network(
            seed,
            &RandomNetworkOptions {
                junctions,
                ..Default::default()
            },
        );
        let sys = DaeSystem::from_network(&raw, &DiscretizationOptions::default())
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let (x, u) = random_state(&sys, &mut ChaCha8Rng::seed_from_u64(seed));
        let jac = sys.jacobian(&x, &u, 1.0, 1.0).unwrap();
        let blocks = sys.split(&jac);
        if let Some((i, j)) = first_entry_above_blocks(&blocks.a11, &sys.partition) {
            return Err(TestCaseError::fail(format!("entry ({i}, {j}) above the block diagonal")));
        }
        let n = sys.index.n_diff;
        let df = sys.friction_jacobian(&x, &u).unwrap();
        if let Some((i, j, _)) = df.triplets().find(|&(i, j, _)| i >= n || j >= n) {
            return Err(TestCaseError::fail(format!("friction derivative at ({i}, {j}) outside the (1,1) block")));
        }
        Ok(())
    });
    let detail = match &result {
        Ok(()) => "100 random networks with up to 12 junctions".to_string(),
        Err(e) => e.to_string(),
    };
    report(
        3,
        "block lower-triangular structure",
        result.is_ok(),
        start.elapsed(),
        Duration::from_secs(30),
        &detail,
    );
}

fn any_seed() -> impl proptest::strategy::Strategy<Value = u64> {
    proptest::num::u64::ANY
}

#[test]
fn criterion_4_constraint_counting() {
    let start = Instant::now();
    let mut runner = TestRunner::new(Config {
        cases: 100,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&(any_seed(), 1usize..=12), |(seed, junctions)| {
        let raw = random_network(
            seed,
            &RandomNetworkOptions {
                junctions,
                ..Default::default()
            },
        );
        let opts = DiscretizationOptions {
            mesh_h: 200.0,
            ..Default::default()
        };
        let sys = DaeSystem::from_network(&raw, &opts).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let g: &SmoothedGraph = &sys.graph;
        let brute: usize = g.junctions().map(|j| g.incoming(&j.id).len()).sum();
        let c = count_extras(g);
        let (n_e, n_a) = (sys.index.n_extra, sys.index.constraints.len());
        if n_e != brute || n_a != brute || c.n_s + c.n_j != brute {
            return Err(TestCaseError::fail(format!(
                "n_e = {n_e}, n_a = {n_a}, n_s + n_j = {}, incoming sum = {brute}",
                c.n_s + c.n_j
            )));
        }
        Ok(())
    });
    let detail = match &result {
        Ok(()) => "n_e = n_a = n_s + n_j on 100 random networks".to_string(),
        Err(e) => e.to_string(),
    };
    report(
        4,
        "constraint counting",
        result.is_ok(),
        start.elapsed(),
        Duration::from_secs(5),
        &detail,
    );
}

#[test]
fn criterion_5_conservation_and_flow_reversal() {
    let start = Instant::now();
    let final_supply = |scenario: &str| {
        let (sys, sc, cfg) = setup("fork.json", scenario);
        let x0 = initial_state(&sys, &sc, &cfg).unwrap();
        let out = implicit_euler_simulate(&sys, &sc, &cfg, &x0).unwrap();
        let flows = sys.supply_flows(&out.final_state);
        let get = |n: &str| flows.iter().find(|f| f.0 == n).unwrap().1;
        (get("1"), get("10"))
    };
    let (a1, a10) = final_supply("fork_case1.json");
    let conservation = ((a1 + a10) - 30.0).abs() / 30.0;
    let (b1, b10) = final_supply("fork_case2.json");
    report(
        5,
        "conservation and flow reversal",
        conservation < 1e-6 && b10 < 0.0,
        start.elapsed(),
        Duration::from_secs(10),
        &format!(
            "case 1 supplies {a1:.6} + {a10:.6} kg/s (relative defect {conservation:.2e}); case 2 supplies {b1:.4} and {b10:.4} kg/s"
        ),
    );
}

#[test]
fn criterion_6_newton_versus_picard() {
    let start = Instant::now();
    let (sys, sc, cfg) = setup("fork.json", "fork_switch.json");
    let count = |method| {
        let c = SolverConfig {
            method,
            eps0: 1e-5,
            ..cfg
        };
        run(&sys, &sc, &c, 1).steps[0].newton_iterations
    };
    let (newton, picard) = (count(NonlinearMethod::Newton), count(NonlinearMethod::Picard));
    report(
        6,
        "Newton versus Picard",
        picard > 2 * newton,
        start.elapsed(),
        Duration::from_secs(10),
        &format!("first step: Newton {newton}, Picard {picard} iterations"),
    );
}

#[test]
fn criterion_7_inexact_newton() {
    let start = Instant::now();
    let (sys, sc, cfg) = setup("fork.json", "fork_switch.json");
    let counts = |eps_tol| {
        let c = SolverConfig { eps_tol, ..cfg };
        let out = run(&sys, &sc, &c, 10);
        (out.steps[0].newton_iterations, out.steps[9].newton_iterations)
    };
    let (loose_1, loose_10) = counts(1e-3);
    let (tight_1, tight_10) = counts(1e-6);
    report(
        7,
        "inexact Newton robustness",
        loose_1 <= tight_1 + 1 && loose_10 == tight_10,
        start.elapsed(),
        Duration::from_secs(10),
        &format!(
            "first step {loose_1} vs {tight_1}, tenth step {loose_10} vs {tight_10} Newton iterations (eps_tol 1e-3 vs 1e-6, {} preconditioner)",
            cfg.precond
        ),
    );
}

/// Dense reference evaluation of the discretized network equations, written
/// point by point from the finite-volume balances.
mod dense {
    use super::*;

    pub struct Grid {
        pub h: Vec<f64>,
        pub a: Vec<f64>,
        pub kappa: Vec<f64>,
    }

    pub fn grids(g: &SmoothedGraph, target_h: f64) -> Vec<Grid> {
        g.long_pipes
            .iter()
            .map(|p| {
                let mut grid = Grid {
                    h: vec![],
                    a: vec![],
                    kappa: vec![],
                };
                for s in &p.segments {
                    let cells = (s.length / target_h - 1e-9).ceil() as usize;
                    for _ in 0..cells {
                        grid.h.push(s.length / cells as f64);
                        grid.a.push(std::f64::consts::PI * s.diameter * s.diameter / 4.0);
                        grid.kappa.push(s.friction / (s.diameter * grid.a.last().unwrap()));
                    }
                }
                grid
            })
            .collect()
    }

    /// Returns `(F, J)` for `F = M (x − x_prev) − τ (rhs)`.
    pub fn evaluate(
        sys: &DaeSystem,
        grids: &[Grid],
        c: f64,
        x: &[f64],
        xp: &[f64],
        u: &[f64],
        tau: f64,
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = x.len();
        let mut f = vec![0.0; n];
        let mut jac = vec![vec![0.0; n]; n];
        let dot = |i: usize| x[i] - xp[i];
        for (k, (slots, grid)) in sys.index.pipes.iter().zip(grids).enumerate() {
            let cells = grid.h.len();
            assert_eq!(slots.m, cells);
            // Point i (1-based, 1..=cells+1): pressure column, None at the inlet.
            let p_col = |i: usize| if i == 1 { None } else { Some(slots.p(i - 2)) };
            let q_col = |i: usize| if i == cells + 1 { None } else { Some(slots.q(i - 1)) };
            let (p1, p1_col) = match slots.inlet {
                Inlet::Supply { input } => (u[input], None),
                Inlet::Pipe { donor } => {
                    let col = sys.index.pipes[donor].p_end();
                    (x[col], Some(col))
                }
            };
            let (qn, qn_col) = match slots.outlet {
                Outlet::Demand { input } => (u[sys.supplies.len() + input], None),
                Outlet::Extra { var } => (x[var], Some(var)),
            };
            let p = |i: usize| p_col(i).map_or(p1, |j| x[j]);
            let q = |i: usize| q_col(i).map_or(qn, |j| x[j]);
            let pcol = |i: usize| if i == 1 { p1_col } else { p_col(i) };
            let qcol = |i: usize| if i == cells + 1 { qn_col } else { q_col(i) };
            let (h, a) = (&grid.h, &grid.a);
            // h[j], a[j] belong to cell j + 1 (between points j + 1 and j + 2).
            let hc = |j: usize| h[j - 1];
            let ac = |j: usize| a[j - 1];

            // Mass balance at points 2..=cells+1.
            for i in 2..=cells + 1 {
                let row = p_col(i).unwrap();
                let mut flux: Vec<(Option<usize>, f64, f64)> = Vec::new();
                if i <= cells {
                    let (al, ar) = (ac(i - 1), ac(i));
                    let mass = (hc(i - 1) + hc(i)) / 2.0;
                    f[row] += mass * dot(row);
                    jac[row][row] += mass;
                    flux.push((qcol(i - 1), q(i - 1), -c / (2.0 * al)));
                    flux.push((qcol(i), q(i), c * (1.0 / (2.0 * al) - 1.0 / (2.0 * ar))));
                    flux.push((qcol(i + 1), q(i + 1), c / (2.0 * ar)));
                } else {
                    let hl = hc(cells);
                    let prev = p_col(i - 1);
                    f[row] += 3.0 * hl / 8.0 * dot(row);
                    jac[row][row] += 3.0 * hl / 8.0;
                    if let Some(pc) = prev {
                        f[row] += hl / 8.0 * dot(pc);
                        jac[row][pc] += hl / 8.0;
                    }
                    let al = ac(cells);
                    flux.push((qcol(i), q(i), c / (2.0 * al)));
                    flux.push((qcol(i - 1), q(i - 1), -c / (2.0 * al)));
                }
                // M ṗ + flux = 0, so rhs = −flux.
                for (col, val, coef) in flux {
                    f[row] += tau * coef * val;
                    if let Some(j) = col {
                        jac[row][j] += tau * coef;
                    }
                }
            }

            // Momentum balance at points 1..=cells.
            for i in 1..=cells {
                let row = q_col(i).unwrap();
                let mut terms: Vec<(Option<usize>, f64, f64)> = Vec::new();
                let weight;
                if i == 1 {
                    let h1 = hc(1);
                    f[row] += 3.0 * h1 / 8.0 * dot(row);
                    jac[row][row] += 3.0 * h1 / 8.0;
                    if let Some(qc) = q_col(2) {
                        f[row] += h1 / 8.0 * dot(qc);
                        jac[row][qc] += h1 / 8.0;
                    }
                    let a1 = ac(1);
                    terms.push((pcol(1), p(1), -a1 / 2.0));
                    terms.push((pcol(2), p(2), a1 / 2.0));
                    weight = h1 * grid.kappa[0];
                } else {
                    let mass = (hc(i - 1) + hc(i)) / 2.0;
                    f[row] += mass * dot(row);
                    jac[row][row] += mass;
                    let (al, ar) = (ac(i - 1), ac(i));
                    terms.push((pcol(i - 1), p(i - 1), -al / 2.0));
                    terms.push((pcol(i), p(i), (al - ar) / 2.0));
                    terms.push((pcol(i + 1), p(i + 1), ar / 2.0));
                    weight = hc(i - 1) * grid.kappa[i - 2] + hc(i) * grid.kappa[i - 1];
                }
                for (col, val, coef) in terms {
                    f[row] += tau * coef * val;
                    if let Some(j) = col {
                        jac[row][j] += tau * coef;
                    }
                }
                // Friction: rhs gains −(c/4)·weight·q|q|/p at the same point.
                let (qi, pi) = (q(i), p(i));
                let g = -(c / 4.0) * weight;
                f[row] -= tau * g * qi * qi.abs() / pi;
                jac[row][row] -= tau * g * 2.0 * qi.abs() / pi;
                if let Some(pc) = pcol(i) {
                    jac[row][pc] -= tau * g * (-qi * qi.abs() / (pi * pi));
                }
            }
            let _ = k;
        }

        // Junction rows: incoming terminal flows minus outgoing initial
        // flows, and terminal pressure equalities against the donor.
        for (r, con) in sys.index.constraints.iter().enumerate() {
            let row = sys.index.n_diff + r;
            match con {
                ConstraintRow::MassBalance { node } => {
                    for k in sys.graph.incoming(node) {
                        let col = match sys.index.pipes[k].outlet {
                            Outlet::Extra { var } => var,
                            Outlet::Demand { .. } => unreachable!(),
                        };
                        f[row] -= tau * x[col];
                        jac[row][col] -= tau;
                    }
                    for k in sys.graph.outgoing(node) {
                        let col = sys.index.pipes[k].q_start();
                        f[row] += tau * x[col];
                        jac[row][col] += tau;
                    }
                }
                ConstraintRow::PressureEquality { pipe, donor, .. } => {
                    let (a, b) = (sys.index.pipes[*pipe].p_end(), sys.index.pipes[*donor].p_end());
                    f[row] -= tau * (x[a] - x[b]);
                    jac[row][a] -= tau;
                    jac[row][b] += tau;
                }
            }
        }
        (f, jac)
    }
}

fn oracle_network() -> NetworkGraph {
    let mut g = fork_network(1000.0, 0.5, 0.01);
    let shape = [(900.0, 0.5), (1100.0, 0.45), (1000.0, 0.6), (700.0, 0.4), (1200.0, 0.5), (800.0, 0.55)];
    for (k, p) in g.pipes.iter_mut().enumerate() {
        let (len, d) = shape[k % shape.len()];
        p.length = len;
        p.diameter = d;
        p.friction = 0.008 + 0.002 * k as f64;
    }
    g
}

#[test]
fn criterion_8_dense_oracle_equivalence() {
    let start = Instant::now();
    let opts = DiscretizationOptions {
        mesh_h: 100.0,
        ..Default::default()
    };
    let sys = DaeSystem::from_network(&oracle_network(), &opts).unwrap();
    let grids = dense::grids(&sys.graph, opts.mesh_h);
    let n = sys.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_f: f64 = 0.0;
    let mut worst_j: f64 = 0.0;
    for _ in 0..20 {
        let (x, u) = random_state(&sys, &mut rng);
        let (xp, _) = random_state(&sys, &mut rng);
        let tau = rng.gen_range(0.1..10.0);
        let (f_ref, j_ref) = dense::evaluate(&sys, &grids, opts.c, &x, &xp, &u, tau);
        let f = sys.residual(&x, &xp, &u, tau, 1.0).unwrap();
        let j = sys.jacobian(&x, &u, tau, 1.0).unwrap().to_dense();
        for i in 0..n {
            let scale = j_ref[i].iter().map(|v| v.abs()).fold(0.0, f64::max);
            let fscale = f_ref[i].abs().max(scale * x.iter().map(|v| v.abs()).fold(0.0, f64::max) * 1e-6);
            worst_f = worst_f.max((f[i] - f_ref[i]).abs() / fscale);
            for k in 0..n {
                worst_j = worst_j.max((j[i][k] - j_ref[i][k]).abs() / scale);
            }
        }
    }

    // Friction Jacobian against central differences.
    let mut worst_fd: f64 = 0.0;
    for _ in 0..1000 {
        let (x, u) = random_state(&sys, &mut rng);
        let jac = sys.friction_jacobian(&x, &u).unwrap();
        let dense_j = jac.to_dense();
        for col in 0..sys.index.n_diff {
            let step = 1e-6 * x[col].abs().max(1.0);
            let (mut a, mut b) = (x.clone(), x.clone());
            a[col] += step;
            b[col] -= step;
            let (fa, fb) = (sys.friction(&a, &u).unwrap(), sys.friction(&b, &u).unwrap());
            let scale = (0..n).map(|i| dense_j[i][col].abs()).fold(0.0, f64::max);
            if scale == 0.0 {
                continue;
            }
            for i in 0..n {
                let fd = (fa[i] - fb[i]) / (2.0 * step);
                worst_fd = worst_fd.max((fd - dense_j[i][col]).abs() / scale);
            }
        }
    }
    report(
        8,
        "dense oracle equivalence",
        n <= 200 && worst_f < 1e-10 && worst_j < 1e-10 && worst_fd < 1e-6,
        start.elapsed(),
        Duration::from_secs(30),
        &format!(
            "{n} unknowns; residual {worst_f:.2e}, Jacobian {worst_j:.2e}, friction finite differences {worst_fd:.2e} (relative)"
        ),
    );
}
