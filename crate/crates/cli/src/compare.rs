use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use oscmdp::baselines::{pdm_solve, policy_iteration, PdmConfig};
use oscmdp::constraints::max_violation;
use oscmdp::io::{read_constraints_for, read_mdp, write_json};
use oscmdp::mdp::dynamics_residual;
use oscmdp::{ConstraintSet, ConvexSet, Mdp, Polyhedron, Solver, SolverConfig};
use serde::Serialize;

use crate::args::{CompareArgs, Method};
use crate::manifest::{manifest_path, RunManifest, Timings};
use crate::solve::solver_config;

/// One CSV row. Times are means over `runs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub method: &'static str,
    pub status: String,
    pub objective: f64,
    pub max_violation: f64,
    pub dynamics_residual: f64,
    pub wall_time_s: f64,
    pub setup_time_s: f64,
    pub iterations: usize,
    pub runs: usize,
}

struct Measured {
    status: String,
    d: Vec<f64>,
    iterations: usize,
    setup: Duration,
    wall: Duration,
}

pub fn run(args: &CompareArgs, threads: Option<usize>) -> Result<()> {
    let started = Instant::now();
    if args.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let cfg = solver_config(&args.solver)?;
    let pdm_cfg = PdmConfig {
        max_iters: args.pdm_max_iters,
        ..PdmConfig::default()
    };
    pdm_cfg.validate()?;
    let mdp: Mdp<f64> = read_mdp(&args.mdp).with_context(|| format!("reading {}", args.mdp.display()))?;
    let cset = read_constraints_for(&args.constraints, &mdp)
        .with_context(|| format!("reading {}", args.constraints.display()))?;
    let linear = match cset.as_linear() {
        Some((e, b)) => Some(Polyhedron::new(e, b)?),
        None if args.methods.contains(&Method::Pdm) => {
            bail!("method pdm needs linear constraints, got a {} set", cset.kind())
        }
        None => None,
    };

    let mut rows = Vec::new();
    let mut total_setup = 0.0;
    let mut total_solve = 0.0;
    for &method in &args.methods {
        let mut runs = Vec::with_capacity(args.runs);
        for _ in 0..args.runs {
            runs.push(measure(method, &mdp, &cset, linear.as_ref(), &cfg, &pdm_cfg)?);
        }
        let first = &runs[0];
        if runs.iter().any(|r| r.d != first.d) {
            bail!("method {} is not deterministic across runs", method.name());
        }
        let mean = |f: fn(&Measured) -> Duration| runs.iter().map(|r| f(r).as_secs_f64()).sum::<f64>() / runs.len() as f64;
        let wall = mean(|r| r.wall);
        let setup = mean(|r| r.setup);
        total_setup += setup * runs.len() as f64;
        total_solve += (wall - setup) * runs.len() as f64;
        rows.push(Row {
            method: method.name(),
            status: first.status.clone(),
            objective: first.d.iter().zip(mdp.cost()).map(|(d, c)| d * c).sum(),
            max_violation: max_violation(&cset.violation(&first.d)),
            dynamics_residual: dynamics_residual(&first.d, &mdp)?,
            wall_time_s: wall,
            setup_time_s: setup,
            iterations: first.iterations,
            runs: args.runs,
        });
    }

    let mut writer = csv::Writer::from_path(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    for row in &rows {
        writer.serialize(row)?;
    }
    writer.flush()?;

    let config = serde_json::json!({
        "methods": args.methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "runs": args.runs,
        "solver": cfg,
        "pdm": pdm_cfg,
    });
    let mut manifest = RunManifest::new(config, threads);
    manifest.add_input(&args.mdp)?;
    manifest.add_input(&args.constraints)?;
    manifest.outputs.push(args.out.clone());
    manifest.timings = Timings {
        setup_seconds: total_setup,
        solve_seconds: total_solve,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(manifest_path(&args.out), &manifest)?;
    Ok(())
}

fn measure(
    method: Method,
    mdp: &Mdp<f64>,
    cset: &ConstraintSet<f64>,
    linear: Option<&Polyhedron<f64>>,
    cfg: &SolverConfig,
    pdm_cfg: &PdmConfig,
) -> Result<Measured> {
    let start = Instant::now();
    Ok(match method {
        Method::Oscmdp => {
            cset.reset_warm_start();
            let solver = Solver::new(mdp, cfg.clone())?;
            let res = solver.solve(cset)?;
            Measured {
                status: res.status.to_string(),
                d: res.d.into_vec(),
                iterations: res.iterations,
                setup: solver.setup_time(),
                wall: start.elapsed(),
            }
        }
        Method::Pdm => {
            let poly = linear.expect("checked before the runs");
            let res = pdm_solve(mdp, poly, pdm_cfg)?;
            Measured {
                status: if res.converged { "converged" } else { "max_iters" }.to_string(),
                d: res.d_avg.into_vec(),
                iterations: res.iterations,
                setup: Duration::ZERO,
                wall: start.elapsed(),
            }
        }
        Method::Pi => {
            let res = policy_iteration(mdp, mdp.cost(), 1e-12)?;
            Measured {
                status: if res.stable { "unconstrained" } else { "max_iters" }.to_string(),
                d: res.occupancy.into_vec(),
                iterations: res.iterations,
                setup: Duration::ZERO,
                wall: start.elapsed(),
            }
        }
    })
}
