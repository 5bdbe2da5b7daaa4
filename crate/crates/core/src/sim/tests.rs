use super::*;
use crate::dae::{DiscretizationOptions, Signal};
use crate::graph::fixtures::{fork_network, single_pipe};

fn fork_sys() -> DaeSystem {
    DaeSystem::from_network(&fork_network(1000.0, 0.5, 0.01), &DiscretizationOptions::default()).unwrap()
}

fn case1(horizon: f64, tau: f64) -> Scenario {
    Scenario::constant(&[("1", 30e5), ("10", 30e5)], &[("6", 30.0)], horizon, tau)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn option_parsing_round_trips() {
    for s in ["frozen", "per-step", "per-newton"] {
        let p: PreconditionerStrategy = s.parse().unwrap();
        assert_eq!(p.to_string(), s);
    }
    assert_eq!("p1".parse::<PreconditionerStrategy>().unwrap(), PreconditionerStrategy::Frozen);
    assert_eq!("picard".parse::<NonlinearMethod>().unwrap(), NonlinearMethod::Picard);
    assert_eq!("idr4".parse::<KrylovMethod>().unwrap(), KrylovMethod::Idr(4));
    assert!("bicg".parse::<KrylovMethod>().is_err());
    assert!("sometimes".parse::<PreconditionerStrategy>().is_err());
}

#[test]
fn config_overrides_and_validation() {
    let section = SolverSection {
        eps0: Some(1e-6),
        precond: Some("per-newton".into()),
        initial: Some("constant".into()),
        ..Default::default()
    };
    let cfg = SolverConfig::default().with_section(&section).unwrap();
    assert_eq!(cfg.eps0, 1e-6);
    assert_eq!(cfg.eps_tol, 1e-3);
    assert_eq!(cfg.precond, PreconditionerStrategy::PerNewtonIteration);
    assert_eq!(cfg.initial, InitialCondition::Constant);
    assert!(SolverConfig { eps_tol: 0.0, ..cfg }.validate().is_err());
    assert!(SolverConfig { n_max: 0, ..cfg }.validate().is_err());
}

#[test]
fn converged_start_takes_zero_iterations() {
    let sys = fork_sys();
    let sc = case1(10.0, 1.0);
    let cfg = SolverConfig::default();
    let x = initial_state(&sys, &sc, &cfg).unwrap();
    let u = sys.inputs_at(&sc, 1.0).unwrap();
    let prob = StepProblem {
        sys: &sys,
        x_prev: &x,
        u: &u,
        tau: 1.0,
        mass_scale: 1.0,
    };
    let mut cache = PreconditionerCache::new(cfg.precond);
    let rep = newton_solve(&prob, &x, &cfg, &mut cache).unwrap();
    assert_eq!(rep.iterations, 0);
    assert_eq!(cache.builds(), 0);
}

#[test]
fn frictionless_problem_is_solved_in_one_iteration() {
    let sys = DaeSystem::from_network(&fork_network(1000.0, 0.5, 1e-300), &DiscretizationOptions::default()).unwrap();
    let sc = case1(1.0, 1.0);
    let cfg = SolverConfig {
        eps_tol: 1e-12,
        precond: PreconditionerStrategy::PerNewtonIteration,
        ..Default::default()
    };
    let x0 = constant_state(&sys, 29e5);
    let u = sys.inputs_at(&sc, 1.0).unwrap();
    let prob = StepProblem {
        sys: &sys,
        x_prev: &x0,
        u: &u,
        tau: 1.0,
        mass_scale: 1.0,
    };
    let rep = newton_solve(&prob, &x0, &cfg, &mut PreconditionerCache::new(cfg.precond)).unwrap();
    assert_eq!(rep.iterations, 1);
    assert!(rep.krylov_iterations[0] <= 2);
}

#[test]
fn picard_from_zero_flow_solves_frictionless_system() {
    let sys = fork_sys();
    let sc = case1(1.0, 1.0);
    let x0 = constant_state(&sys, 29e5);
    let u = sys.inputs_at(&sc, 1.0).unwrap();
    let picard = sys.picard_matrix(&x0, &u, 1.0, 1.0).unwrap();
    let linear = sys.m.add_scaled(1.0, &sys.k, -1.0);
    assert_eq!(picard.to_dense(), linear.to_dense());
}

#[test]
fn picard_fixed_point_is_a_root() {
    let sys = fork_sys();
    let mut sc = case1(3.0, 1.0);
    sc.supplies.insert("10".into(), Signal::constant(28e5));
    let cfg = SolverConfig {
        method: NonlinearMethod::Picard,
        initial: InitialCondition::Constant,
        eps0: 1e-7,
        eps_tol: 1e-10,
        ..Default::default()
    };
    let x0 = initial_state(&sys, &sc, &cfg).unwrap();
    let out = implicit_euler_simulate(&sys, &sc, &cfg, &x0).unwrap();
    assert!(out.steps.iter().all(|s| s.final_residual < 1e-7));
}

#[test]
fn newton_residual_decreases_strictly() {
    let sys = fork_sys();
    let mut sc = case1(10.0, 1.0);
    sc.supplies.insert("10".into(), Signal::new("10", vec![(0.0, 30e5), (1.0, 20e5)]).unwrap());
    let cfg = SolverConfig::default();
    let x0 = initial_state(&sys, &sc, &cfg).unwrap();
    let out = implicit_euler_simulate(&sys, &sc, &cfg, &x0).unwrap();
    for s in &out.steps {
        assert!(s.residuals.windows(2).all(|w| w[1] < w[0]), "{:?}", s.residuals);
    }
}

#[test]
fn single_pipe_steady_state_matches_closed_form() {
    let (l, d, lam, ps, qd) = (10_000.0, 0.5, 0.01, 50e5, 50.0);
    let opts = DiscretizationOptions {
        mesh_h: 50.0,
        c: 340.0 * 340.0,
        ..Default::default()
    };
    let sys = DaeSystem::from_network(&single_pipe(l, d, lam), &opts).unwrap();
    let sc = Scenario::constant(&[("s", ps)], &[("d", qd)], 0.0, 1.0);
    let x = initial_state(&sys, &sc, &SolverConfig::default()).unwrap();
    let u = sys.inputs_at(&sc, 0.0).unwrap();
    let a = std::f64::consts::PI * d * d / 4.0;
    let exact = (ps * ps - opts.c * lam * qd * qd * l / (d * a * a)).sqrt();
    let got = sys.node_pressure("d", &x, &u).unwrap();
    assert!(rel(got, exact) < 1e-3, "{got} vs {exact}");
}

#[test]
fn zero_demand_gives_uniform_pressure() {
    let sys = fork_sys();
    let sc = Scenario::constant(&[("1", 30e5), ("10", 30e5)], &[("6", 0.0)], 0.0, 1.0);
    let x = initial_state(&sys, &sc, &SolverConfig::default()).unwrap();
    for s in &sys.index.pipes {
        for j in 0..s.m {
            assert!(rel(x[s.p(j)], 30e5) < 1e-12);
            assert!(x[s.q(j)].abs() < 1e-9);
        }
    }
}

#[test]
fn steady_state_is_a_fixed_point_of_time_stepping() {
    let sys = fork_sys();
    for tau in [0.1, 1.0, 30.0] {
        let sc = case1(5.0 * tau, tau);
        let cfg = SolverConfig::default();
        let x0 = initial_state(&sys, &sc, &cfg).unwrap();
        let out = implicit_euler_simulate(&sys, &sc, &cfg, &x0).unwrap();
        assert!(out.steps.iter().all(|s| s.newton_iterations <= 1));
        let first = &out.rows[0];
        for row in &out.rows {
            for (a, b) in row.iter().zip(first) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }
}

#[test]
fn steady_state_conserves_mass() {
    let sys = fork_sys();
    let sc = case1(0.0, 1.0);
    let x = initial_state(&sys, &sc, &SolverConfig::default()).unwrap();
    let u = sys.inputs_at(&sc, 0.0).unwrap();
    for (_, r) in sys.junction_imbalance(&x, &u) {
        assert!(r.abs() < 1e-9);
    }
    let supplied: f64 = sys.supply_flows(&x).iter().map(|f| f.1).sum();
    assert!(rel(supplied, 30.0) < 1e-6);
}

#[test]
fn steady_limit_does_not_depend_on_tau() {
    let sys = fork_sys();
    let mut sc = case1(0.0, 1.0);
    sc.supplies.insert("10".into(), Signal::constant(20e5));
    let cfg = SolverConfig {
        initial: InitialCondition::Constant,
        eps0: 1e-6,
        ..Default::default()
    };
    let u = sys.inputs_at(&sc, 0.0).unwrap();
    let guess = constant_state(&sys, 25e5);
    let target = steady_state(&sys, &u, &guess, &cfg).unwrap().x;
    let mut finals = Vec::new();
    for tau in [20.0, 10.0] {
        sc.tau = tau;
        sc.horizon = 2000.0;
        let x0 = initial_state(&sys, &sc, &cfg).unwrap();
        let out = implicit_euler_simulate(&sys, &sc, &cfg, &x0).unwrap();
        finals.push(out.final_state);
    }
    for x in &finals {
        let worst = x.iter().zip(&target).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)).fold(0.0, f64::max);
        assert!(worst < 1e-10, "{worst}");
    }
}

#[test]
fn trajectory_ignores_pipe_declaration_order() {
    let raw = fork_network(1000.0, 0.5, 0.01);
    let mut shuffled = raw.clone();
    shuffled.pipes.reverse();
    shuffled.pipes.swap(1, 4);
    shuffled.nodes.reverse();
    let mut sc = case1(10.0, 1.0);
    sc.supplies.insert("10".into(), Signal::new("10", vec![(0.0, 30e5), (2.0, 20e5)]).unwrap());
    let cfg = SolverConfig::default();
    let run = |g| {
        let sys = DaeSystem::from_network(g, &DiscretizationOptions::default()).unwrap();
        let x0 = initial_state(&sys, &sc, &cfg).unwrap();
        let out = implicit_euler_simulate(&sys, &sc, &cfg, &x0).unwrap();
        let mut cols: Vec<(String, Vec<f64>)> = out.names.iter().map(|n| (n.clone(), out.column(n).unwrap())).collect();
        cols.sort_by(|a, b| a.0.cmp(&b.0));
        cols
    };
    let (a, b) = (run(&raw), run(&shuffled));
    assert_eq!(a.len(), b.len());
    for ((na, va), (nb, vb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        for (x, y) in va.iter().zip(vb) {
            assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0), "{na}: {x} vs {y}");
        }
    }
}

#[test]
fn empty_horizon_keeps_only_the_initial_row() {
    let sys = fork_sys();
    let sc = case1(0.0, 1.0);
    let cfg = SolverConfig::default();
    let x0 = initial_state(&sys, &sc, &cfg).unwrap();
    let out = implicit_euler_simulate(&sys, &sc, &cfg, &x0).unwrap();
    assert_eq!(out.times, vec![0.0]);
    assert_eq!(out.rows.len(), 1);
    assert!(out.steps.is_empty());
}

#[test]
fn inconsistent_initial_state_is_rejected() {
    let sys = fork_sys();
    let sc = case1(1.0, 1.0);
    let mut x0 = constant_state(&sys, 30e5);
    x0[sys.index.pipes[1].p_end()] = 29e5;
    let err = implicit_euler_simulate(&sys, &sc, &SolverConfig::default(), &x0).unwrap_err();
    assert!(matches!(err, SimError::InconsistentInitial(_)), "{err}");
}

#[test]
fn stale_frozen_preconditioner_fails_with_hint() {
    let sys = fork_sys();
    let mut sc = case1(5.0, 1.0);
    sc.supplies.insert("10".into(), Signal::new("10", vec![(0.0, 30e5), (1.0, 20e5)]).unwrap());
    let x0 = initial_state(&sys, &sc, &SolverConfig::default()).unwrap();
    let cfg = SolverConfig {
        krylov_max_iter: 1,
        eps_tol: 1e-10,
        ..Default::default()
    };
    let err = implicit_euler_simulate(&sys, &sc, &cfg, &x0).unwrap_err();
    match err {
        SimError::Step { source, .. } => match *source {
            SimError::KrylovStalled { ref hint, .. } => assert!(hint.contains("per-newton")),
            other => panic!("{other}"),
        },
        other => panic!("{other}"),
    }
}

#[test]
fn preconditioner_build_counts_follow_strategy() {
    let sys = fork_sys();
    let mut sc = case1(4.0, 1.0);
    sc.supplies.insert("10".into(), Signal::new("10", vec![(0.0, 30e5), (1.0, 20e5)]).unwrap());
    let base = SolverConfig::default();
    let x0 = initial_state(&sys, &sc, &base).unwrap();
    let run = |precond| {
        let cfg = SolverConfig { precond, ..base };
        implicit_euler_simulate(&sys, &sc, &cfg, &x0).unwrap()
    };
    let frozen = run(PreconditionerStrategy::Frozen);
    assert_eq!(frozen.preconditioner_builds, 1);
    let per_step = run(PreconditionerStrategy::PerTimeStep);
    assert_eq!(per_step.preconditioner_builds, per_step.steps.iter().filter(|s| s.newton_iterations > 0).count());
    let per_newton = run(PreconditionerStrategy::PerNewtonIteration);
    let total: usize = per_newton.steps.iter().map(|s| s.newton_iterations).sum();
    assert_eq!(per_newton.preconditioner_builds, total);
    assert!(per_newton.steps.iter().flat_map(|s| &s.krylov_iterations).all(|&k| k <= 2));
}

#[cfg(feature = "idr")]
#[test]
fn idr_and_gmres_reach_the_same_trajectory() {
    let sys = fork_sys();
    let mut sc = case1(5.0, 1.0);
    sc.supplies.insert("10".into(), Signal::new("10", vec![(0.0, 30e5), (1.0, 20e5)]).unwrap());
    let base = SolverConfig {
        eps_tol: 1e-8,
        ..Default::default()
    };
    let x0 = initial_state(&sys, &sc, &base).unwrap();
    let g = implicit_euler_simulate(&sys, &sc, &base, &x0).unwrap();
    let cfg = SolverConfig {
        krylov: KrylovMethod::Idr(4),
        ..base
    };
    let i = implicit_euler_simulate(&sys, &sc, &cfg, &x0).unwrap();
    for (a, b) in g.final_state.iter().zip(&i.final_state) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
    }
}

#[test]
fn first_step_iterations_barely_depend_on_inner_tolerance() {
    let sys = fork_sys();
    let mut sc = case1(1.0, 1.0);
    sc.supplies.insert("10".into(), Signal::new("10", vec![(0.0, 30e5), (1.0, 20e5)]).unwrap());
    let base = SolverConfig::default();
    let x0 = initial_state(&sys, &sc, &base).unwrap();
    let count = |eps_tol| {
        let cfg = SolverConfig { eps_tol, ..base };
        implicit_euler_simulate(&sys, &sc, &cfg, &x0).unwrap().steps[0].newton_iterations
    };
    let exact = count(1e-12);
    assert_eq!(count(1e-6), exact);
    assert_eq!(count(1e-4), exact);
    assert!(count(1e-3) <= exact + 1);
}
