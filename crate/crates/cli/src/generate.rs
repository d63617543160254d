use std::fs;

use anyhow::{Context, Result};
use oscmdp::bench::{garnet, grid_world, random_linear_constraints, relax_to_include, GarnetSpec, GridSpec};
use oscmdp::io::{write_constraints, write_json, write_mdp};
use oscmdp::mdp::occupancy_from_policy;
use oscmdp::{ConstraintSet, Mdp, Policy, Polyhedron};
use serde::Serialize;

use crate::args::{GarnetArgs, GenerateKind, GridArgs};
use crate::manifest::RunManifest;

/// Layout of a generated grid world, for plotting.
#[derive(Debug, Serialize)]
struct GridLayout {
    side: usize,
    obstacles: Vec<usize>,
    start: usize,
    goal: usize,
    action_names: [&'static str; 4],
}

pub fn run(kind: &GenerateKind, threads: Option<usize>) -> Result<()> {
    match kind {
        GenerateKind::Garnet(a) => garnet_cmd(a, threads),
        GenerateKind::Gridworld(a) => grid_cmd(a, threads),
    }
}

fn garnet_cmd(args: &GarnetArgs, threads: Option<usize>) -> Result<()> {
    let mut spec = GarnetSpec::new(args.states, args.actions, args.fb, args.seed);
    spec.gamma = args.gamma;
    let mdp: Mdp<f64> = garnet(&spec)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let constraint_seed = args.constraint_seed.unwrap_or(args.seed + 1000);
    let config = serde_json::json!({
        "kind": "garnet",
        "spec": spec,
        "num_constraints": args.nc,
        "constraint_seed": constraint_seed,
        "relax": args.relax,
    });
    let mut manifest = RunManifest::new(config, threads);

    let mdp_path = args.out.join("mdp.json");
    write_mdp(&mdp_path, &mdp)?;
    manifest.outputs.push(mdp_path);
    if args.nc > 0 {
        let (e, mut b) = random_linear_constraints::<f64>(mdp.num_pairs(), args.nc, constraint_seed)?;
        if args.relax {
            let uniform = occupancy_from_policy(&Policy::uniform(args.states, args.actions), &mdp)?;
            relax_to_include(&e, &mut b, uniform.as_slice());
        }
        let set: ConstraintSet<f64> = Polyhedron::new(e, b)?.into();
        let path = args.out.join("constraints.json");
        write_constraints(&path, &set)?;
        manifest.outputs.push(path);
    }
    finish(manifest, &args.out)
}

fn grid_cmd(args: &GridArgs, threads: Option<usize>) -> Result<()> {
    let spec = GridSpec {
        side: args.side,
        obstacles: args.obstacle_cells.clone(),
        num_obstacles: args.obstacles,
        slip: args.slip,
        gamma: args.gamma,
        collision_bound: args.b0,
        path_bound: args.bp,
        seed: args.seed,
        absorbing_goal: !args.open_goal,
    };
    let grid = grid_world::<f64>(&spec)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut manifest = RunManifest::new(serde_json::json!({ "kind": "gridworld", "spec": spec }), threads);

    let mdp_path = args.out.join("mdp.json");
    write_mdp(&mdp_path, &grid.mdp)?;
    let set: ConstraintSet<f64> = grid.constraints()?.into();
    let cons_path = args.out.join("constraints.json");
    write_constraints(&cons_path, &set)?;
    let layout_path = args.out.join("grid.json");
    write_json(
        &layout_path,
        &GridLayout {
            side: grid.side,
            obstacles: grid.obstacles.clone(),
            start: grid.start,
            goal: grid.goal,
            action_names: oscmdp::bench::GRID_ACTION_NAMES,
        },
    )?;
    manifest.outputs.extend([mdp_path, cons_path, layout_path]);
    finish(manifest, &args.out)
}

fn finish(manifest: RunManifest, dir: &std::path::Path) -> Result<()> {
    write_json(dir.join("manifest.json"), &manifest)?;
    Ok(())
}
