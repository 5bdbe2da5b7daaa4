use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use gasnet_core::dae::{prepare_graph, DaeSystem, DiscretizationOptions, Scenario};
use gasnet_core::graph::random::{random_network, RandomNetworkOptions};
use gasnet_core::graph::{count_extras, ExtraCounts, LongPipe, NetworkGraph, SmoothedGraph, SmoothedNode};
use gasnet_core::linalg::first_entry_above_blocks;
use gasnet_core::sim::{
    constant_state, discretization_from_section, implicit_euler_simulate, implicit_euler_simulate_steps,
    initial_state, NonlinearMethod, PreconditionerStrategy, SolverConfig, TimeSeriesOutput,
};
use serde::Serialize;

use crate::args::{AnalyzeArgs, ConvergenceArgs, Overrides, RunArgs};
use crate::error::CliError;
use crate::output::{num, sci, OutDir};

const NORMAL_PRESSURE: f64 = 50e5;

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_network(path: &Path) -> Result<NetworkGraph, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::Parse {
        kind: "network",
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn load_scenario(path: &Path, ov: &Overrides) -> Result<Scenario, CliError> {
    let mut sc = Scenario::from_json_str(&read(path)?).map_err(|e| CliError::scenario(path, e))?;
    if let Some(tau) = ov.tau {
        sc.tau = tau;
        sc.validate().map_err(|e| CliError::Usage(format!("--tau: {e}")))?;
    }
    Ok(sc)
}

fn discretization(sc: Option<&Scenario>, ov: &Overrides) -> Result<DiscretizationOptions, CliError> {
    let mut d = sc.map(|s| discretization_from_section(&s.solver)).unwrap_or_default();
    if let Some(h) = ov.mesh {
        if !(h > 0.0 && h.is_finite()) {
            return Err(CliError::Usage(format!("--mesh must be positive, got {h}")));
        }
        d.mesh_h = h;
    }
    Ok(d)
}

fn solver_config(sc: &Scenario, ov: &Overrides) -> Result<SolverConfig, CliError> {
    let mut cfg = SolverConfig::default()
        .with_section(&sc.solver)
        .map_err(|e| CliError::Usage(format!("scenario solver section: {e}")))?;
    if let Some(v) = ov.eps0 {
        cfg.eps0 = v;
    }
    if let Some(v) = ov.eps_tol {
        cfg.eps_tol = v;
    }
    if let Some(v) = ov.precond {
        cfg.precond = v;
    }
    if let Some(v) = ov.method {
        cfg.method = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Setup {
    sys: DaeSystem,
    sc: Scenario,
    cfg: SolverConfig,
}

fn setup(args: &RunArgs) -> Result<Setup, CliError> {
    let raw = load_network(&args.network)?;
    let sc = load_scenario(&args.scenario, &args.overrides)?;
    let cfg = solver_config(&sc, &args.overrides)?;
    let sys = DaeSystem::from_network(&raw, &discretization(Some(&sc), &args.overrides)?)?;
    Ok(Setup { sys, sc, cfg })
}

#[derive(Serialize)]
struct Conservation {
    supplied: f64,
    demanded: f64,
    relative_defect: f64,
}

#[derive(Serialize)]
struct IterationTotals {
    steps: usize,
    newton: usize,
    krylov: usize,
    max_newton_per_step: usize,
}

#[derive(Serialize)]
struct Summary {
    final_time_s: f64,
    supply_flows: BTreeMap<String, f64>,
    demand_flows: BTreeMap<String, f64>,
    node_pressures: BTreeMap<String, f64>,
    conservation: Conservation,
    max_junction_imbalance: f64,
    iterations: IterationTotals,
    preconditioner_builds: usize,
}

fn summarize(sys: &DaeSystem, out: &TimeSeriesOutput) -> Summary {
    let (x, u) = (&out.final_state, &out.final_inputs);
    let supply_flows: BTreeMap<_, _> = sys.supply_flows(x).into_iter().collect();
    let demand_flows: BTreeMap<_, _> = sys.demand_flows(x, u).into_iter().collect();
    let supplied: f64 = supply_flows.values().sum();
    let demanded: f64 = demand_flows.values().sum();
    let scale = supplied.abs().max(demanded.abs());
    let node_pressures = sys
        .graph
        .nodes
        .iter()
        .filter_map(|n| Some((n.id.clone(), sys.node_pressure(&n.id, x, u)?)))
        .collect();
    Summary {
        final_time_s: *out.times.last().unwrap(),
        supply_flows,
        demand_flows,
        node_pressures,
        conservation: Conservation {
            supplied,
            demanded,
            relative_defect: if scale > 0.0 { (supplied - demanded).abs() / scale } else { 0.0 },
        },
        max_junction_imbalance: sys
            .junction_imbalance(x, u)
            .into_iter()
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max),
        iterations: IterationTotals {
            steps: out.steps.len(),
            newton: out.steps.iter().map(|s| s.newton_iterations).sum(),
            krylov: out.steps.iter().map(|s| s.krylov_total()).sum(),
            max_newton_per_step: out.steps.iter().map(|s| s.newton_iterations).max().unwrap_or(0),
        },
        preconditioner_builds: out.preconditioner_builds,
    }
}

pub fn simulate(args: &RunArgs) -> Result<(), CliError> {
    let Setup { sys, sc, cfg } = setup(args)?;
    let dir = OutDir::create(&args.out)?;
    let x0 = initial_state(&sys, &sc, &cfg)?;
    let out = implicit_euler_simulate(&sys, &sc, &cfg, &x0)?;

    let mut header = vec!["t_s".to_string()];
    header.extend(out.names.iter().cloned());
    dir.write_csv(
        "timeseries.csv",
        &header,
        out.times
            .iter()
            .zip(&out.rows)
            .map(|(t, row)| std::iter::once(num(*t)).chain(row.iter().map(|v| num(*v))).collect::<Vec<_>>()),
    )?;
    let header: Vec<String> = ["step", "t_s", "newton_iters", "krylov_iters_total", "final_residual"]
        .map(String::from)
        .to_vec();
    dir.write_csv(
        "iterations.csv",
        &header,
        out.steps.iter().map(|s| {
            vec![
                s.step.to_string(),
                num(s.t),
                s.newton_iterations.to_string(),
                s.krylov_total().to_string(),
                sci(s.final_residual),
            ]
        }),
    )?;
    dir.write_json("summary.json", &summarize(&sys, &out))
}

#[derive(Serialize)]
struct OrderedPipe<'a> {
    order: usize,
    #[serde(flatten)]
    pipe: &'a LongPipe,
}

#[derive(Serialize)]
struct GraphReport<'a> {
    nodes: &'a [SmoothedNode],
    long_pipes: Vec<OrderedPipe<'a>>,
}

#[derive(Serialize)]
struct Counts {
    #[serde(flatten)]
    extras: ExtraCounts,
    n_diff: usize,
    n_extra: usize,
    dim: usize,
    blocks: usize,
    n_inputs: usize,
}

#[derive(Serialize)]
struct Structure {
    block_lower_triangular: bool,
    friction_in_a11: bool,
    first_violation: Option<String>,
    jacobian_nnz: usize,
}

/// State at which the Jacobian pattern is taken: a uniform pressure (the
/// scenario's mean supply pressure if given) with unit flows, so that every
/// friction derivative is structurally present.
fn analysis_state(sys: &DaeSystem, sc: Option<&Scenario>) -> Result<(Vec<f64>, Vec<f64>, f64), CliError> {
    let p = sc.map_or(NORMAL_PRESSURE, |s| s.mean_supply_pressure(0.0));
    let mut x = constant_state(sys, p);
    for s in &sys.index.pipes {
        x[s.q_start()..s.range().end].fill(1.0);
    }
    x[sys.index.n_diff..].fill(1.0);
    match sc {
        Some(sc) => Ok((x, sys.inputs_at(sc, sc.tau)?, sc.tau)),
        None => {
            let mut u = vec![p; sys.supplies.len()];
            u.resize(sys.n_inputs(), 1.0);
            Ok((x, u, 1.0))
        }
    }
}

pub fn analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let random = args.random_junctions.map(|k| {
        random_network(
            args.seed,
            &RandomNetworkOptions {
                junctions: k,
                ..Default::default()
            },
        )
    });
    let raw = match (&random, &args.network) {
        (Some(g), _) => g.clone(),
        (None, Some(p)) => load_network(p)?,
        (None, None) => return Err(CliError::Usage("--network or --random-junctions is required".into())),
    };
    let sc = args.scenario.as_deref().map(|p| load_scenario(p, &args.overrides)).transpose()?;
    let disc = discretization(sc.as_ref(), &args.overrides)?;
    let g: SmoothedGraph = prepare_graph(&raw, disc.stub_length).map_err(gasnet_core::dae::DaeError::from)?;
    let sys = DaeSystem::discretize(g.clone(), &disc)?;
    let dir = OutDir::create(&args.out)?;

    if let Some(net) = &random {
        dir.write_json("network.json", net)?;
    }
    dir.write_json(
        "smoothed_graph.json",
        &GraphReport {
            nodes: &g.nodes,
            long_pipes: g
                .long_pipes
                .iter()
                .enumerate()
                .map(|(order, pipe)| OrderedPipe { order, pipe })
                .collect(),
        },
    )?;
    let header: Vec<String> = ["order", "id", "from", "to", "kind", "segments", "length_m", "cells"]
        .map(String::from)
        .to_vec();
    dir.write_csv(
        "df_order.csv",
        &header,
        g.long_pipes.iter().enumerate().map(|(k, p)| {
            vec![
                k.to_string(),
                p.id.clone(),
                p.from.clone(),
                p.to.clone(),
                serde_json::to_value(p.kind).unwrap().as_str().unwrap_or_default().to_string(),
                p.segments.len().to_string(),
                num(p.total_length()),
                sys.grids[k].cells().to_string(),
            ]
        }),
    )?;
    dir.write_json(
        "counts.json",
        &Counts {
            extras: count_extras(&g),
            n_diff: sys.index.n_diff,
            n_extra: sys.index.n_extra,
            dim: sys.dim(),
            blocks: sys.partition.blocks(),
            n_inputs: sys.n_inputs(),
        },
    )?;

    let (x, u, tau) = analysis_state(&sys, sc.as_ref())?;
    let jac = sys.jacobian(&x, &u, tau, 1.0)?;
    let mut pattern = format!("{} {} {}\n", jac.nrows(), jac.ncols(), jac.nnz());
    for (i, j, _) in jac.triplets() {
        pattern.push_str(&format!("{i} {j}\n"));
    }
    dir.write_text("jacobian_pattern.txt", &pattern)?;

    let blocks = sys.split(&jac);
    let above = first_entry_above_blocks(&blocks.a11, &sys.partition);
    let n = sys.index.n_diff;
    let outside = sys.friction_jacobian(&x, &u)?.triplets().find(|&(i, j, _)| i >= n || j >= n);
    let first_violation = match (above, outside) {
        (Some((i, j)), _) => Some(format!("A11 entry ({i}, {j}) above the block diagonal")),
        (None, Some((i, j, _))) => Some(format!("friction derivative ({i}, {j}) outside A11")),
        (None, None) => None,
    };
    dir.write_json(
        "structure.json",
        &Structure {
            block_lower_triangular: above.is_none(),
            friction_in_a11: outside.is_none(),
            first_violation,
            jacobian_nnz: jac.nnz(),
        },
    )
}

struct Run {
    method: NonlinearMethod,
    precond: PreconditionerStrategy,
    eps_tol: f64,
}

fn worker_count(jobs: usize) -> usize {
    let env = std::env::var("GASNET_THREADS").ok().and_then(|v| v.parse::<usize>().ok());
    let n = env.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    n.clamp(1, jobs.max(1))
}

pub fn convergence(args: &ConvergenceArgs) -> Result<(), CliError> {
    let Setup { sys, sc, cfg } = setup(&args.run)?;
    if args.eps_tol_grid.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(CliError::Usage("--eps-tol-grid values must be positive".into()));
    }
    let dir = OutDir::create(&args.run.out)?;
    let x0 = initial_state(&sys, &sc, &cfg)?;

    let mut runs = Vec::new();
    for method in [NonlinearMethod::Newton, NonlinearMethod::Picard] {
        for precond in [
            PreconditionerStrategy::Frozen,
            PreconditionerStrategy::PerTimeStep,
            PreconditionerStrategy::PerNewtonIteration,
        ] {
            for &eps_tol in &args.eps_tol_grid {
                runs.push(Run {
                    method,
                    precond,
                    eps_tol,
                });
            }
        }
    }
    let results: Vec<Mutex<Option<Result<TimeSeriesOutput, String>>>> = runs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..worker_count(runs.len()) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(r) = runs.get(k) else { break };
                let run_cfg = SolverConfig {
                    method: r.method,
                    precond: r.precond,
                    eps_tol: r.eps_tol,
                    ..cfg
                };
                let res = implicit_euler_simulate_steps(&sys, &sc, &run_cfg, &x0, args.steps).map_err(|e| e.to_string());
                *results[k].lock().unwrap() = Some(res);
            });
        }
    });

    let header: Vec<String> = [
        "method",
        "precond",
        "eps_tol",
        "step",
        "newton_iters",
        "krylov_iters",
        "final_residual",
        "residuals",
        "status",
    ]
    .map(String::from)
    .to_vec();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, slot) in runs.iter().zip(results) {
        let head = [r.method.to_string(), r.precond.to_string(), sci(r.eps_tol)];
        match slot.into_inner().unwrap().expect("every run is executed") {
            Ok(out) => {
                for s in &out.steps {
                    let mut row = head.to_vec();
                    row.extend([
                        s.step.to_string(),
                        s.newton_iterations.to_string(),
                        join(s.krylov_iterations.iter().map(|k| k.to_string())),
                        sci(s.final_residual),
                        join(s.residuals.iter().map(|v| sci(*v))),
                        "ok".to_string(),
                    ]);
                    rows.push(row);
                }
            }
            Err(msg) => {
                let mut row = head.to_vec();
                row.extend([String::new(), String::new(), String::new(), String::new(), String::new(), msg.clone()]);
                rows.push(row);
                failures.push(format!("{} {} eps_tol {}: {msg}", head[0], head[1], head[2]));
            }
        }
    }
    dir.write_csv("convergence.csv", &header, rows)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Solver(format!("{} of {} runs failed; first: {}", failures.len(), runs.len(), failures[0])))
    }
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(";")
}
