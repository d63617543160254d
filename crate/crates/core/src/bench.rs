//! Seeded benchmark generators: Garnet MDPs, a slippery grid world and random
//! linear constraints.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constraints::Polyhedron;
use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, DenseMatrix};
use crate::mdp::Mdp;
use crate::scalar::Scalar;

/// Random MDP with a fixed number of successors per state-action pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarnetSpec {
    pub num_states: usize,
    pub num_actions: usize,
    /// Fraction of nonzero entries in each kernel row, in (0, 1].
    pub branching: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl GarnetSpec {
    pub fn new(num_states: usize, num_actions: usize, branching: f64, seed: u64) -> Self {
        Self {
            num_states,
            num_actions,
            branching,
            gamma: 0.95,
            seed,
        }
    }

    /// `⌈f_b·S⌉`, the number of successors of each pair.
    pub fn successors(&self) -> usize {
        let raw = self.branching * self.num_states as f64;
        // Absorb representation error such as 0.05·100 = 5.000000000000001.
        ((raw - 1e-9 * raw.abs()).ceil() as usize).clamp(1, self.num_states.max(1))
    }

    fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(Error::Invalid("S and A must be positive".into()));
        }
        if !(self.branching > 0.0 && self.branching <= 1.0) {
            return Err(Error::Invalid(format!("branching factor {} not in (0, 1]", self.branching)));
        }
        Ok(())
    }
}

/// Generates a Garnet MDP: `⌈f_b·S⌉` distinct successors per pair, weights
/// from the gaps between sorted uniform cut points, `N(0, 1)` costs and a
/// uniform initial distribution.
pub fn garnet<T: Scalar>(spec: &GarnetSpec) -> Result<Mdp<T>> {
    spec.validate()?;
    let (s_n, a_n) = (spec.num_states, spec.num_actions);
    let k = spec.successors();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = Vec::with_capacity(s_n * a_n);
    for _ in 0..s_n * a_n {
        let mut next: Vec<usize> = sample(&mut rng, s_n, k).into_vec();
        next.sort_unstable();
        let mut cuts: Vec<f64> = (0..k - 1).map(|_| rng.random::<f64>()).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.push(1.0);
        let mut prev = 0.0;
        let row = next
            .into_iter()
            .zip(cuts)
            .map(|(j, c)| {
                let p = c - prev;
                prev = c;
                (j, T::lit(p))
            })
            .collect();
        rows.push(row);
    }
    let cost = (0..s_n * a_n)
        .map(|_| T::lit(StandardNormal.sample(&mut rng)))
        .collect();
    let kernel = CsrMatrix::from_row_lists(s_n, rows)?;
    let initial = vec![T::one() / T::from_count(s_n); s_n];
    Mdp::new(s_n, a_n, kernel, cost, T::lit(spec.gamma), initial)
}

/// Grid actions, in kernel order.
pub const GRID_ACTIONS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
pub const GRID_ACTION_NAMES: [&str; 4] = ["up", "down", "left", "right"];

/// Square grid with obstacles; the agent starts top-left and heads for the
/// bottom-right cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub side: usize,
    /// Explicit obstacle cells (`row·side + col`). When `None`,
    /// `num_obstacles` cells are drawn with `seed`.
    pub obstacles: Option<Vec<usize>>,
    pub num_obstacles: usize,
    pub slip: f64,
    pub gamma: f64,
    /// Bound on the discounted collision probability.
    pub collision_bound: f64,
    /// Bound on the discounted path cost.
    pub path_bound: f64,
    pub seed: u64,
    /// Every action at the goal stays there.
    #[serde(default = "default_true")]
    pub absorbing_goal: bool,
}

fn default_true() -> bool {
    true
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            side: 25,
            obstacles: None,
            num_obstacles: 45,
            slip: 0.05,
            gamma: 0.99,
            collision_bound: 1e-3,
            path_bound: 0.9,
            seed: 3,
            absorbing_goal: true,
        }
    }
}

/// Generated grid world.
#[derive(Debug, Clone)]
pub struct GridWorld<T> {
    /// Cost is the path cost.
    pub mdp: Mdp<T>,
    /// 1 on obstacle states.
    pub collision_cost: Vec<T>,
    /// 1 everywhere except the goal.
    pub path_cost: Vec<T>,
    pub side: usize,
    pub obstacles: Vec<usize>,
    pub start: usize,
    pub goal: usize,
    pub collision_bound: T,
    pub path_bound: T,
}

impl<T: Scalar> GridWorld<T> {
    /// `[ℓ₀ᵀ; cᵀ] d ≤ (b₀, b_p)`.
    pub fn constraints(&self) -> Result<Polyhedron<T>> {
        let e = DenseMatrix::from_rows(&[self.collision_cost.clone(), self.path_cost.clone()])?;
        Polyhedron::new(e, vec![self.collision_bound, self.path_bound])
    }
}

fn grid_obstacles(spec: &GridSpec) -> Result<Vec<usize>> {
    let n2 = spec.side * spec.side;
    let (start, goal) = (0, n2 - 1);
    let mut obs = match &spec.obstacles {
        Some(list) => list.clone(),
        None => {
            let free = n2.saturating_sub(2);
            if spec.num_obstacles > free {
                return Err(Error::Invalid(format!(
                    "{} obstacles do not fit in a {}×{} grid",
                    spec.num_obstacles, spec.side, spec.side
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            // Cells 1..n²−1 exclude start and goal.
            sample(&mut rng, free, spec.num_obstacles)
                .into_iter()
                .map(|i| i + 1)
                .collect()
        }
    };
    obs.sort_unstable();
    obs.dedup();
    if let Some(&bad) = obs.iter().find(|&&o| o >= n2 || o == start || o == goal) {
        return Err(Error::Invalid(format!("invalid obstacle cell {bad}")));
    }
    Ok(obs)
}

/// Builds the grid world. The intended move succeeds with probability
/// `1 − δ`; with probability `δ` the agent tries a uniformly random one of the
/// four moves. Moves off the grid leave it in place. Obstacles do not block
/// motion.
pub fn grid_world<T: Scalar>(spec: &GridSpec) -> Result<GridWorld<T>> {
    if spec.side < 2 {
        return Err(Error::Invalid("grid side must be at least 2".into()));
    }
    if !(0.0..1.0).contains(&spec.slip) {
        return Err(Error::Invalid(format!("slip {} not in [0, 1)", spec.slip)));
    }
    let n = spec.side;
    let n2 = n * n;
    let obstacles = grid_obstacles(spec)?;
    let (start, goal) = (0, n2 - 1);
    let target = |s: usize, (dr, dc): (isize, isize)| -> usize {
        let (r, c) = ((s / n) as isize + dr, (s % n) as isize + dc);
        if r < 0 || c < 0 || r >= n as isize || c >= n as isize {
            s
        } else {
            r as usize * n + c as usize
        }
    };
    let mut trip = Vec::with_capacity(n2 * 4 * 5);
    for s in 0..n2 {
        for (a, &mv) in GRID_ACTIONS.iter().enumerate() {
            let row = s * 4 + a;
            if spec.absorbing_goal && s == goal {
                trip.push((row, goal, T::one()));
                continue;
            }
            trip.push((row, target(s, mv), T::lit(1.0 - spec.slip)));
            if spec.slip > 0.0 {
                for &other in &GRID_ACTIONS {
                    trip.push((row, target(s, other), T::lit(spec.slip / 4.0)));
                }
            }
        }
    }
    let kernel = CsrMatrix::from_entries(n2 * 4, n2, &trip)?;
    let mut collision_cost = vec![T::zero(); n2 * 4];
    for &o in &obstacles {
        collision_cost[o * 4..o * 4 + 4].fill(T::one());
    }
    let mut path_cost = vec![T::one(); n2 * 4];
    path_cost[goal * 4..goal * 4 + 4].fill(T::zero());
    let mut initial = vec![T::zero(); n2];
    initial[start] = T::one();
    let mdp = Mdp::new(n2, 4, kernel, path_cost.clone(), T::lit(spec.gamma), initial)?;
    Ok(GridWorld {
        mdp,
        collision_cost,
        path_cost,
        side: n,
        obstacles,
        start,
        goal,
        collision_bound: T::lit(spec.collision_bound),
        path_bound: T::lit(spec.path_bound),
    })
}

/// `n_c` random linear constraints with `E ~ N(0, 1)` and `b ~ N(−0.2, 1)`.
pub fn random_linear_constraints<T: Scalar>(
    num_pairs: usize,
    num_constraints: usize,
    seed: u64,
) -> Result<(DenseMatrix<T>, Vec<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..num_pairs * num_constraints)
        .map(|_| T::lit(StandardNormal.sample(&mut rng)))
        .collect();
    let e = DenseMatrix::from_row_major(num_constraints, num_pairs, data)?;
    let normal = Normal::new(-0.2, 1.0).expect("valid normal parameters");
    let b = (0..num_constraints)
        .map(|_| T::lit(normal.sample(&mut rng)))
        .collect();
    Ok((e, b))
}

/// Raises each `b_i` to at least `E_i·d` so that `d` becomes feasible.
pub fn relax_to_include<T: Scalar>(e: &DenseMatrix<T>, b: &mut [T], d: &[T]) {
    for (bi, ed) in b.iter_mut().zip(e.matvec(d)) {
        *bi = bi.max(ed);
    }
}
