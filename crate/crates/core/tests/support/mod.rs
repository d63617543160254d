//! Instance generators and property checks shared by the integration targets.
#![allow(dead_code)]

pub mod properties;

use oscmdp::bench::{garnet, GarnetSpec};
use oscmdp::linalg::{DenseMatrix, Lu};
use oscmdp::mdp::occupancy_from_policy;
use oscmdp::{Mdp, OccupancyMeasure, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

/// Small Garnet with `S ≤ max_s`, `A ≤ max_a` drawn from `seed`.
pub fn small_mdp(seed: u64, max_s: usize, max_a: usize) -> Mdp<f64> {
    let mut r = rng(seed ^ 0x5eed);
    let s = r.random_range(1..=max_s);
    let a = r.random_range(1..=max_a);
    let fb = [0.2, 0.5, 1.0][r.random_range(0..3)];
    let mut spec = GarnetSpec::new(s, a, fb, seed);
    spec.gamma = [0.5, 0.9, 0.95][r.random_range(0..3)];
    garnet(&spec).expect("valid garnet")
}

pub fn random_policy(rng: &mut impl Rng, s: usize, a: usize) -> Policy<f64> {
    let mut probs = Vec::with_capacity(s * a);
    for _ in 0..s {
        let row: Vec<f64> = (0..a).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = row.iter().sum();
        probs.extend(row.iter().map(|x| x / total));
    }
    Policy::new(s, a, probs).expect("valid policy")
}

pub fn random_occupancy(rng: &mut impl Rng, mdp: &Mdp<f64>) -> OccupancyMeasure<f64> {
    let pi = random_policy(rng, mdp.num_states(), mdp.num_actions());
    occupancy_from_policy(&pi, mdp).expect("occupancy")
}

/// Projection onto `{x : Ex ≤ b}` by enumerating candidate active sets and
/// keeping the closest KKT point. Rows of `E` must be linearly independent.
pub fn enumerate_projection(e: &DenseMatrix<f64>, b: &[f64], y: &[f64]) -> Vec<f64> {
    let m = e.nrows();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let mut x = y.to_vec();
        if !active.is_empty() {
            let k = active.len();
            let mut g = DenseMatrix::zeros(k, k);
            for (p, &i) in active.iter().enumerate() {
                for (q, &j) in active.iter().enumerate() {
                    g[(p, q)] = dot(e.row(i), e.row(j));
                }
            }
            let rhs: Vec<f64> = active.iter().map(|&i| dot(e.row(i), y) - b[i]).collect();
            let Ok(lu) = Lu::factor(g) else { continue };
            let mu = lu.solve(&rhs);
            if mu.iter().any(|&v| v < -1e-12) {
                continue;
            }
            for (&i, &mi) in active.iter().zip(&mu) {
                for (xj, &eij) in x.iter_mut().zip(e.row(i)) {
                    *xj -= mi * eij;
                }
            }
        }
        let feasible = (0..m).all(|i| dot(e.row(i), &x) <= b[i] + 1e-10 * (1.0 + b[i].abs()));
        if !feasible {
            continue;
        }
        let dist: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, x));
        }
    }
    best.expect("a feasible active set exists").1
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}
