use std::time::Instant;

use anyhow::{Context, Result};
use oscmdp::io::{read_constraints_for, read_json, read_mdp, write_json, ResultFile};
use oscmdp::{Mdp, Solver, SolverConfig, Status};

use crate::args::{SolveArgs, SolverArgs};
use crate::manifest::{manifest_path, RunManifest, Timings};

/// Process exit code of a finished solve.
pub fn exit_code(status: Status) -> u8 {
    match status {
        Status::Optimal => 0,
        Status::Infeasible => 2,
        Status::MaxIters => 3,
    }
}

pub fn solver_config(args: &SolverArgs) -> Result<SolverConfig> {
    let base = match &args.config {
        Some(path) => read_json(path).with_context(|| format!("reading {}", path.display()))?,
        None => SolverConfig::default(),
    };
    let cfg = args.apply(base);
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: &SolveArgs, threads: Option<usize>) -> Result<Status> {
    let started = Instant::now();
    let cfg = solver_config(&args.solver)?;
    let mdp: Mdp<f64> = read_mdp(&args.mdp).with_context(|| format!("reading {}", args.mdp.display()))?;
    let cset = read_constraints_for(&args.constraints, &mdp)
        .with_context(|| format!("reading {}", args.constraints.display()))?;

    let solver = Solver::new(&mdp, cfg.clone())?;
    let res = solver.solve(&cset)?;
    let file = ResultFile::from_result(&res, &mdp, &cfg)?;
    write_json(&args.out, &file).with_context(|| format!("writing {}", args.out.display()))?;

    let mut manifest = RunManifest::new(serde_json::to_value(&cfg)?, threads);
    manifest.add_input(&args.mdp)?;
    manifest.add_input(&args.constraints)?;
    manifest.outputs.push(args.out.clone());
    manifest.timings = Timings {
        setup_seconds: solver.setup_time().as_secs_f64(),
        solve_seconds: res.solve_time.as_secs_f64(),
        total_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(manifest_path(&args.out), &manifest)?;

    eprintln!(
        "{} after {} iterations: objective {:.8}, max violation {:.2e}, dynamics residual {:.2e}",
        res.status,
        res.iterations,
        res.objective,
        res.max_violation(),
        res.dynamics_residual
    );
    Ok(res.status)
}
