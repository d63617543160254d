//! Seeded property checks, one per stated invariant. Each runs `CASES`
//! deterministic cases and reports the first failure as a string.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use oscmdp::baselines::{
    displacement_oracle, pdm_solve, policy_iteration, qp_prox_oracle, PdmConfig,
};
use oscmdp::bench::{garnet, grid_world, random_linear_constraints, relax_to_include, GarnetSpec, GridSpec};
use oscmdp::io::{ConstraintFile, MdpFile};
use oscmdp::linalg::{norm2, symmetric_eigen, DenseMatrix};
use oscmdp::mdp::{
    advantage, dynamics_residual, occupancy_from_policy, policy_from_occupancy, xi_apply,
};
use oscmdp::qrpi::{dual_objective, qrpi_step, solve_reg_mdp, QrpiState};
use oscmdp::{
    ConstraintSet, ConvexSet, Halfspace, InnerStop, L2Ball, Mdp, Polyhedron, RegEvalBackend,
    SolverConfig, Status,
};
use rand::Rng;

use super::{dot, max_abs_diff, normals, random_occupancy, random_policy, rng, small_mdp};

pub const CASES: u32 = 100;

type Check = fn() -> Result<(), String>;

/// Every property, by module.
pub const ALL: &[(&str, Check)] = &[
    ("mdp: policy occupancies lie in the polytope", occupancy_in_polytope),
    ("mdp: policy extraction inverts occupancy", policy_round_trip),
    ("mdp: marginal map matches dense product", xi_matches_dense),
    ("mdp: advantage is affine in the value", advantage_affine),
    ("qrpi: complementarity of emitted states", qrpi_complementarity),
    ("qrpi: log-error decreases linearly", qrpi_r_linear),
    ("qrpi: dual objective is non-decreasing", qrpi_dual_monotone),
    ("qrpi: tolerance mode output is feasible", qrpi_tol_feasible),
    ("constraints: projection is idempotent", projection_idempotent),
    ("constraints: projection is firmly nonexpansive", projection_firmly_nonexpansive),
    ("constraints: polyhedral multipliers are optimal", polyhedron_dual_optimal),
    ("oscmdp: feasible instances converge", feasible_converges),
    ("oscmdp: infeasible instances are detected", infeasible_detected),
    ("oscmdp: optimal exit is a fixed point of the prox", dual_consistency),
    ("oscmdp: displacement norm on the mass halfspace", limit_distance),
    ("baselines: dual ascent multipliers stay nonnegative", pdm_multipliers_nonnegative),
    ("baselines: prox oracle satisfies KKT", prox_oracle_kkt),
    ("baselines: displacement separates the sets", displacement_separates),
    ("bench: garnet instances are valid and sparse", garnet_valid),
    ("bench: grid worlds are valid", grid_valid),
    ("io: files round-trip", files_round_trip),
];

fn run<S: Strategy>(
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let cfg = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn seeds() -> impl Strategy<Value = u64> {
    any::<u64>()
}

fn random_set(seed: u64, dim: usize) -> ConstraintSet<f64> {
    let mut r = rng(seed);
    match r.random_range(0..3) {
        0 => Halfspace::new(normals(&mut r, dim), r.random_range(-1.0..1.0))
            .unwrap()
            .into(),
        1 => L2Ball::new(normals(&mut r, dim), r.random_range(0.1..2.0))
            .unwrap()
            .into(),
        _ => {
            let rows = r.random_range(1..=dim.min(4));
            let e = DenseMatrix::from_row_major(rows, dim, normals(&mut r, rows * dim)).unwrap();
            Polyhedron::new(e, normals(&mut r, rows)).unwrap().into()
        }
    }
}

pub fn occupancy_in_polytope() -> Result<(), String> {
    run(seeds(), |seed| {
        let mdp = small_mdp(seed, 8, 5);
        let d = random_occupancy(&mut rng(seed), &mdp);
        let res = dynamics_residual(d.as_slice(), &mdp).unwrap();
        prop_assert!(res <= 1e-10, "residual {res:e}");
        prop_assert!((d.total_mass() - 1.0).abs() <= 1e-10);
        Ok(())
    })
}

pub fn policy_round_trip() -> Result<(), String> {
    run(seeds(), |seed| {
        // Garnet initial distributions are uniform, so every marginal is positive.
        let mdp = small_mdp(seed, 8, 5);
        let (s, a) = (mdp.num_states(), mdp.num_actions());
        let pi = random_policy(&mut rng(seed), s, a);
        let d = occupancy_from_policy(&pi, &mdp).unwrap();
        let back = policy_from_occupancy(&d, s, a).unwrap();
        let err = max_abs_diff(pi.as_slice(), back.as_slice());
        prop_assert!(err <= 1e-8, "policy error {err:e}");
        Ok(())
    })
}

pub fn xi_matches_dense() -> Result<(), String> {
    run((1usize..=5, 1usize..=5, seeds()), |(s, a, seed)| {
        let d = normals(&mut rng(seed), s * a);
        let mut xi = DenseMatrix::zeros(s * a, s);
        for st in 0..s {
            for ac in 0..a {
                xi[(st * a + ac, st)] = 1.0;
            }
        }
        let dense = xi.tr_matvec(&d);
        let fast = xi_apply(&d, s, a).unwrap();
        prop_assert!(max_abs_diff(&dense, &fast) <= 1e-14);
        Ok(())
    })
}

pub fn advantage_affine() -> Result<(), String> {
    run((seeds(), 0.0f64..=1.0, 1e-3f64..10.0), |(seed, alpha, sigma)| {
        let mdp = small_mdp(seed, 8, 5);
        let mut r = rng(seed);
        let v1 = normals(&mut r, mdp.num_states());
        let v2 = normals(&mut r, mdp.num_states());
        let w = normals(&mut r, mdp.num_pairs());
        let mix: Vec<f64> = v1.iter().zip(&v2).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect();
        let lhs = advantage(&mix, &w, sigma, &mdp).unwrap();
        let a1 = advantage(&v1, &w, sigma, &mdp).unwrap();
        let a2 = advantage(&v2, &w, sigma, &mdp).unwrap();
        let rhs: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect();
        let scale = 1.0 + lhs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-12 * scale);
        Ok(())
    })
}

fn inner_setup(seed: u64) -> (Mdp<f64>, Vec<f64>, f64) {
    let mdp = small_mdp(seed, 6, 4);
    let mut r = rng(seed.wrapping_add(1));
    let w = normals(&mut r, mdp.num_pairs());
    let sigma = [1e-3, 1e-1, 1.0][r.random_range(0..3)];
    (mdp, w, sigma)
}

pub fn qrpi_complementarity() -> Result<(), String> {
    run((seeds(), 1usize..20), |(seed, steps)| {
        let (mdp, w, sigma) = inner_setup(seed);
        let backend = RegEvalBackend::direct(&mdp).unwrap();
        let mut state = QrpiState::zeros(&mdp);
        for _ in 0..steps {
            state = qrpi_step(&state, &w, sigma, &backend, &mdp).unwrap();
            prop_assert!(state.phi.iter().zip(&state.d).all(|(p, d)| p * d == 0.0));
            prop_assert!(state.phi.iter().chain(&state.d).all(|&x| x >= 0.0));
        }
        Ok(())
    })
}

pub fn qrpi_r_linear() -> Result<(), String> {
    run(seeds(), |seed| {
        let (mdp, w, sigma) = inner_setup(seed);
        let backend = RegEvalBackend::direct(&mdp).unwrap();
        let zeros = vec![0.0; mdp.num_pairs()];
        let stop = InnerStop::Tol { tol: 1e-14, max_iters: 200_000 };
        let star = solve_reg_mdp(&w, sigma, &zeros, None, stop, &backend, &mdp).unwrap().state.d;
        let mut state = QrpiState::zeros(&mdp);
        let mut points = Vec::new();
        for l in 1..=400 {
            state = qrpi_step(&state, &w, sigma, &backend, &mdp).unwrap();
            let err = max_abs_diff(&state.d, &star);
            if err <= 1e-11 {
                break;
            }
            points.push((l as f64, err.ln()));
        }
        if points.len() >= 2 {
            let n = points.len() as f64;
            let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
            let my = points.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
            let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
            let slope = sxy / sxx;
            prop_assert!(slope < 0.0, "slope {slope} over {} points", points.len());
        }
        Ok(())
    })
}

pub fn qrpi_dual_monotone() -> Result<(), String> {
    run(seeds(), |seed| {
        let (mdp, w, sigma) = inner_setup(seed);
        let backend = RegEvalBackend::direct(&mdp).unwrap();
        let mut state = QrpiState::zeros(&mdp);
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..200 {
            state = qrpi_step(&state, &w, sigma, &backend, &mdp).unwrap();
            let kappa = dual_objective(&state.v, &state.phi, &w, sigma, &mdp);
            prop_assert!(kappa >= prev - 1e-12 * prev.abs().max(1.0), "{kappa} after {prev}");
            prev = kappa;
        }
        Ok(())
    })
}

pub fn qrpi_tol_feasible() -> Result<(), String> {
    run(seeds(), |seed| {
        let (mdp, w, sigma) = inner_setup(seed);
        let backend = RegEvalBackend::direct(&mdp).unwrap();
        let zeros = vec![0.0; mdp.num_pairs()];
        let stop = InnerStop::Tol { tol: InnerStop::DEFAULT_TOL, max_iters: 100_000 };
        let out = solve_reg_mdp(&w, sigma, &zeros, None, stop, &backend, &mdp).unwrap();
        let res = dynamics_residual(&out.state.d, &mdp).unwrap();
        prop_assert!(out.converged);
        prop_assert!(res <= 1e-8, "residual {res:e}");
        prop_assert!(out.state.d.iter().all(|&x| x >= 0.0));
        Ok(())
    })
}

pub fn projection_idempotent() -> Result<(), String> {
    run((seeds(), 1usize..12), |(seed, dim)| {
        let set = random_set(seed, dim);
        let y: Vec<f64> = normals(&mut rng(seed ^ 1), dim).iter().map(|x| 3.0 * x).collect();
        let p = set.project(&y).point;
        let pp = set.project(&p).point;
        prop_assert!(max_abs_diff(&p, &pp) <= 1e-9);
        Ok(())
    })
}

pub fn projection_firmly_nonexpansive() -> Result<(), String> {
    run((seeds(), 1usize..12), |(seed, dim)| {
        let set = random_set(seed, dim);
        let mut r = rng(seed ^ 2);
        let x: Vec<f64> = normals(&mut r, dim).iter().map(|v| 3.0 * v).collect();
        let y: Vec<f64> = normals(&mut r, dim).iter().map(|v| 3.0 * v).collect();
        let px = set.project(&x).point;
        let py = set.project(&y).point;
        let dp: Vec<f64> = px.iter().zip(&py).map(|(a, b)| a - b).collect();
        let dxy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        prop_assert!(dot(&dp, &dp) <= dot(&dxy, &dp) + 1e-9);
        Ok(())
    })
}

pub fn polyhedron_dual_optimal() -> Result<(), String> {
    run((seeds(), 1usize..12), |(seed, dim)| {
        let mut r = rng(seed);
        let rows = r.random_range(1..=dim.min(4));
        let e = DenseMatrix::from_row_major(rows, dim, normals(&mut r, rows * dim)).unwrap();
        let b = normals(&mut r, rows);
        let poly = Polyhedron::new(e.clone(), b.clone()).unwrap();
        let y: Vec<f64> = normals(&mut r, dim).iter().map(|x| 3.0 * x).collect();
        let out = poly.project_dual(&y, 1e-10);
        let slack: Vec<f64> = e.matvec(&out.projection.point).iter().zip(&b).map(|(ex, bi)| ex - bi).collect();
        for ((&l, &g), &bi) in out.multipliers.iter().zip(&slack).zip(&b) {
            prop_assert!(l >= 0.0);
            prop_assert!(g <= 1e-8 * (1.0 + bi.abs()), "violation {g:e}");
            prop_assert!((l * g).abs() <= 1e-7 * (1.0 + bi.abs()), "complementarity {:e}", l * g);
        }
        Ok(())
    })
}

/// Halfspace through a random policy occupancy, shifted outward by `margin`.
fn feasible_halfspace(seed: u64, mdp: &Mdp<f64>, margin: f64) -> Halfspace<f64> {
    let mut r = rng(seed ^ 3);
    let d = random_occupancy(&mut r, mdp);
    let normal = normals(&mut r, mdp.num_pairs());
    let offset = dot(&normal, d.as_slice()) + margin;
    Halfspace::new(normal, offset).unwrap()
}

pub fn feasible_converges() -> Result<(), String> {
    run(seeds(), |seed| {
        let mdp = small_mdp(seed, 6, 4);
        let set = feasible_halfspace(seed, &mdp, 0.0);
        let res = oscmdp::solve(&mdp, &set, SolverConfig::default()).unwrap();
        prop_assert_eq!(res.status, Status::Optimal);
        prop_assert!(res.fixed_point_residual <= 1e-5);
        Ok(())
    })
}

fn mass_halfspace(mdp: &Mdp<f64>, bound: f64) -> Halfspace<f64> {
    Halfspace::new(vec![1.0; mdp.num_pairs()], bound).unwrap()
}

/// `aᵀd ≤ min_{d ∈ 𝒟} aᵀd − margin` for a random `a`.
fn separated_halfspace(seed: u64, mdp: &Mdp<f64>, margin: f64) -> Halfspace<f64> {
    let normal = normals(&mut rng(seed ^ 6), mdp.num_pairs());
    let lowest = policy_iteration(mdp, &normal, 1e-12).unwrap().objective;
    Halfspace::new(normal, lowest - margin).unwrap()
}

pub fn infeasible_detected() -> Result<(), String> {
    run((seeds(), 0.01f64..0.5), |(seed, margin)| {
        let mdp = small_mdp(seed, 6, 4);
        let set = separated_halfspace(seed, &mdp, margin);
        let cfg = SolverConfig::default();
        let res = oscmdp::solve(&mdp, &set, cfg.clone()).unwrap();
        prop_assert_eq!(res.status, Status::Infeasible);
        let last = res.trace.last().unwrap();
        prop_assert!(last.primal_step.is_some_and(|s| s <= cfg.eps_inf));
        // Every occupancy violates the constraint by at least the margin.
        prop_assert!(res.max_violation() >= margin * (1.0 - 1e-6));
        Ok(())
    })
}

pub fn dual_consistency() -> Result<(), String> {
    run(seeds(), |seed| {
        let mdp = small_mdp(seed, 6, 4);
        let set = feasible_halfspace(seed, &mdp, 0.05);
        let cfg = SolverConfig::default();
        let sigma = cfg.sigma;
        let res = oscmdp::solve(&mdp, &set, cfg).unwrap();
        prop_assert_eq!(res.status, Status::Optimal);
        let shifted: Vec<f64> = res.d.as_slice().iter().zip(&res.nu).map(|(d, n)| d + sigma * n).collect();
        let backend = RegEvalBackend::direct(&mdp).unwrap();
        let stop = InnerStop::Feasible { tol: 1e-12, max_iters: 200_000 };
        let out = solve_reg_mdp(&shifted, sigma, &res.phi, Some(&res.value), stop, &backend, &mdp).unwrap();
        let err = max_abs_diff(&out.state.d, res.d.as_slice());
        prop_assert!(err <= 1e-6, "prox moved the point by {err:e}");
        Ok(())
    })
}

pub fn limit_distance() -> Result<(), String> {
    run((seeds(), 0.1f64..0.9), |(seed, bound)| {
        let mdp = small_mdp(seed, 6, 4);
        let set = mass_halfspace(&mdp, bound);
        // Every point of 𝒟 is equally far from this set, so the primal iterate
        // may drift for a long time; look at the displacement after a fixed
        // horizon instead of waiting for detection.
        let cfg = SolverConfig {
            eps_opt: f64::MIN_POSITIVE,
            eps_inf: f64::MIN_POSITIVE,
            max_outer_iters: 20_000,
            ..SolverConfig::default()
        };
        let res = oscmdp::solve(&mdp, &set, cfg).unwrap();
        let expected = (1.0 - bound) / (mdp.num_pairs() as f64).sqrt();
        let got = norm2(&res.v_estimate);
        prop_assert!((got - expected).abs() <= 0.01 * expected, "{got} vs {expected}");
        Ok(())
    })
}

pub fn pdm_multipliers_nonnegative() -> Result<(), String> {
    run(seeds(), |seed| {
        let mdp = small_mdp(seed, 6, 4);
        let mut r = rng(seed ^ 4);
        let rows = r.random_range(1..=3);
        let (e, mut b) = random_linear_constraints::<f64>(mdp.num_pairs(), rows, seed).unwrap();
        let d = random_occupancy(&mut r, &mdp);
        relax_to_include(&e, &mut b, d.as_slice());
        let poly = Polyhedron::new(e, b).unwrap();
        let cfg = PdmConfig { max_iters: 300, trace_every: 1, ..PdmConfig::default() };
        let out = pdm_solve(&mdp, &poly, &cfg).unwrap();
        prop_assert!(out.lambda.iter().all(|&l| l >= 0.0));
        prop_assert!(out.trace.iter().all(|t| t.min_lambda >= 0.0));
        Ok(())
    })
}

/// Stationarity residual of `d` for `min ½‖x − y‖²` over the polytope, where
/// `g = d − y`: on the support `g` must be cancelled by the flow rows, and
/// elsewhere the leftover must be nonnegative.
fn polytope_stationarity(mdp: &Mdp<f64>, d: &[f64], g: &[f64]) -> f64 {
    let (n, s) = (mdp.num_pairs(), mdp.num_states());
    let columns: Vec<Vec<f64>> = (0..s)
        .map(|i| {
            let mut unit = vec![0.0; s];
            unit[i] = 1.0;
            mdp.flow_apply(&unit)
        })
        .collect();
    let flow: Vec<Vec<f64>> = (0..n).map(|j| columns.iter().map(|c| c[j]).collect()).collect();
    let support: Vec<usize> = (0..n).filter(|&j| d[j] > 1e-12).collect();
    let mut normal = DenseMatrix::<f64>::zeros(s, s);
    let mut rhs = vec![0.0; s];
    for &j in &support {
        for p in 0..s {
            rhs[p] -= flow[j][p] * g[j];
            for q in 0..s {
                normal[(p, q)] += flow[j][p] * flow[j][q];
            }
        }
    }
    let (vals, vecs) = symmetric_eigen(&normal);
    let cut = 1e-10 * vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut mu = vec![0.0; s];
    for (lam, u) in vals.iter().zip(&vecs) {
        if lam.abs() > cut {
            let coef = dot(u, &rhs) / lam;
            mu.iter_mut().zip(u).for_each(|(m, ui)| *m += coef * ui);
        }
    }
    (0..n)
        .map(|j| {
            let r = g[j] + dot(&flow[j], &mu);
            if d[j] > 1e-12 { r.abs() } else { (-r).max(0.0) }
        })
        .fold(0.0, f64::max)
}

pub fn prox_oracle_kkt() -> Result<(), String> {
    run(seeds(), |seed| {
        let mdp = small_mdp(seed, 6, 4);
        let w = normals(&mut rng(seed ^ 5), mdp.num_pairs());
        let sigma = 1.0;
        let d = qp_prox_oracle(&mdp, &w, sigma, 1e-13).unwrap();
        // prox_{σf}(w) projects y = w − σc, so the objective gradient is d − y.
        let g: Vec<f64> = d.iter().zip(&w).zip(mdp.cost()).map(|((di, wi), c)| di - wi + sigma * c).collect();
        let res = polytope_stationarity(&mdp, &d, &g);
        prop_assert!(res <= 1e-8, "stationarity {res:e}");
        prop_assert!(dynamics_residual(&d, &mdp).unwrap() <= 1e-10);
        prop_assert!(d.iter().all(|&x| x >= 0.0));
        Ok(())
    })
}

pub fn displacement_separates() -> Result<(), String> {
    run((seeds(), 0.01f64..0.5), |(seed, margin)| {
        let mdp = small_mdp(seed, 6, 4);
        let set = separated_halfspace(seed, &mdp, margin);
        let out = displacement_oracle(&mdp, &set, 1e-13).unwrap();
        if norm2(&out.v) > 1e-9 {
            let threshold = dot(&out.v, &out.z);
            let mut r = rng(seed ^ 7);
            for _ in 0..200 {
                let d = random_occupancy(&mut r, &mdp);
                prop_assert!(dot(&out.v, d.as_slice()) > threshold);
            }
        }
        Ok(())
    })
}

pub fn garnet_valid() -> Result<(), String> {
    run((1usize..40, 1usize..8, 0.01f64..=1.0, seeds()), |(s, a, fb, seed)| {
        let spec = GarnetSpec::new(s, a, fb, seed);
        let mdp: Mdp<f64> = garnet(&spec).unwrap();
        prop_assert_eq!(mdp.kernel().nnz(), s * a * spec.successors());
        prop_assert_eq!(spec.successors(), ((fb * s as f64) - 1e-9 * fb * s as f64).ceil().max(1.0) as usize);
        Ok(())
    })
}

pub fn grid_valid() -> Result<(), String> {
    run((2usize..9, 0.0f64..0.5, seeds()), |(side, slip, seed)| {
        let max_obstacles = side * side - 2;
        let spec = GridSpec {
            side,
            num_obstacles: (seed as usize) % (max_obstacles + 1),
            slip,
            seed,
            absorbing_goal: seed % 2 == 0,
            ..GridSpec::default()
        };
        let g = grid_world::<f64>(&spec).unwrap();
        prop_assert_eq!(g.mdp.num_states(), side * side);
        prop_assert_eq!(g.mdp.num_actions(), 4);
        prop_assert!(!g.obstacles.contains(&g.start) && !g.obstacles.contains(&g.goal));
        // Mdp::new has already checked stochastic rows; rebuild to be sure.
        let file = MdpFile::from_mdp(&g.mdp);
        prop_assert!(file.into_mdp::<f64>().is_ok());
        Ok(())
    })
}

pub fn files_round_trip() -> Result<(), String> {
    run(seeds(), |seed| {
        let mdp = small_mdp(seed, 8, 5);
        let file = MdpFile::from_mdp(&mdp);
        let text = serde_json::to_string(&file).unwrap();
        let back: MdpFile = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &file);
        let rebuilt: Mdp<f64> = back.into_mdp().unwrap();
        prop_assert_eq!(MdpFile::from_mdp(&rebuilt), file);

        let set = random_set(seed, mdp.num_pairs());
        let cfile = ConstraintFile::from_set(&set);
        let text = serde_json::to_string(&cfile).unwrap();
        let back: ConstraintFile = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back.into_set::<f64>().unwrap(), set);
        Ok(())
    })
}
