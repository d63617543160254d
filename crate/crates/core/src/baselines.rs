//! Reference solvers used to check the splitting method.
//!
//! * [`policy_iteration`]: exact unconstrained optimum.
//! * [`pdm_solve`]: Lagrangian primal-dual method with averaged primal iterates.
//! * [`qp_prox_oracle`]: dense projection onto the occupancy polytope, which
//!   gives the regularized MDP solution independently of QRPI.
//! * [`displacement_oracle`]: alternating projections for the gap vector
//!   between the occupancy polytope and a constraint set.
//!
//! Values follow the normalization of the occupancy measure: with `V` the
//! undiscounted-sum value `E[Σ γᵗ c]`, the reported objective is
//! `cᵀd = (1 − γ)ρᵀV`.

use serde::{Deserialize, Serialize};

use crate::constraints::{max_violation, violations_within, ConvexSet, Polyhedron};
use crate::error::{check_len, Error, Result};
use crate::linalg::{dist_inf, dot, norm_inf, Cholesky, DenseMatrix, Lu};
use crate::mdp::{Mdp, OccupancyMeasure, Policy};
use crate::qrpi::gram_matrix;
use crate::scalar::Scalar;

/// Largest `S·A` accepted by [`qp_prox_oracle`].
pub const QP_ORACLE_MAX_PAIRS: usize = 64;
/// Largest `S·A` accepted by [`displacement_oracle`].
pub const DISPLACEMENT_ORACLE_MAX_PAIRS: usize = 128;

/// Output of [`policy_iteration`].
#[derive(Debug, Clone)]
pub struct PolicyIterationResult<T> {
    /// `E[Σ γᵗ c(sₜ, aₜ) | s₀ = s]`.
    pub value: Vec<T>,
    /// Greedy action per state.
    pub actions: Vec<usize>,
    pub policy: Policy<T>,
    pub occupancy: OccupancyMeasure<T>,
    /// `cᵀd`, equal to `(1 − γ)ρᵀV`.
    pub objective: T,
    pub iterations: usize,
    /// False if the sweep cap was hit before the policy stabilized.
    pub stable: bool,
}

/// `V = (I − γP_π)⁻¹ c_π` for a deterministic policy.
pub fn evaluate_deterministic<T: Scalar>(mdp: &Mdp<T>, actions: &[usize], cost: &[T]) -> Result<Vec<T>> {
    let n = mdp.num_states();
    check_len("actions", n, actions.len())?;
    check_len("cost", mdp.num_pairs(), cost.len())?;
    let gamma = mdp.gamma();
    let mut a = DenseMatrix::identity(n);
    let mut rhs = Vec::with_capacity(n);
    for (s, &act) in actions.iter().enumerate() {
        let r = mdp.pair(s, act);
        let (cols, vals) = mdp.kernel().row(r);
        for (&j, &p) in cols.iter().zip(vals) {
            a[(s, j)] -= gamma * p;
        }
        rhs.push(cost[r]);
    }
    let lu = Lu::factor(a).map_err(|e| Error::Internal(format!("policy evaluation: {e}")))?;
    Ok(lu.solve(&rhs))
}

/// `Q(s, a) = c(s, a) + γ Σ P(s'|s, a) V(s')`.
pub fn q_values<T: Scalar>(mdp: &Mdp<T>, value: &[T], cost: &[T]) -> Vec<T> {
    let pv = mdp.kernel().matvec(value);
    cost.iter()
        .zip(pv)
        .map(|(&c, p)| c + mdp.gamma() * p)
        .collect()
}

/// Greedy improvement. A state keeps its action unless another one is better
/// by more than `tol·(1 + |Q|)`; otherwise the lowest-index minimizer wins.
fn improve<T: Scalar>(mdp: &Mdp<T>, q: &[T], current: Option<&[usize]>, tol: T) -> Vec<usize> {
    let a_n = mdp.num_actions();
    q.chunks(a_n)
        .enumerate()
        .map(|(s, row)| {
            let (best, best_q) = row
                .iter()
                .enumerate()
                .fold((0, row[0]), |(ba, bq), (a, &x)| if x < bq { (a, x) } else { (ba, bq) });
            match current {
                Some(cur) if row[cur[s]] <= best_q + tol * (T::one() + best_q.abs()) => cur[s],
                _ => best,
            }
        })
        .collect()
}

/// Runs at most `max_sweeps` improvement/evaluation sweeps starting from the
/// greedy policy of `v0` (or of `V = 0`).
pub fn policy_iteration_warm<T: Scalar>(
    mdp: &Mdp<T>,
    cost: &[T],
    v0: Option<&[T]>,
    max_sweeps: usize,
    tol: T,
) -> Result<PolicyIterationResult<T>> {
    check_len("cost", mdp.num_pairs(), cost.len())?;
    let zero = vec![T::zero(); mdp.num_states()];
    let v0 = v0.unwrap_or(&zero);
    check_len("initial value", mdp.num_states(), v0.len())?;
    let mut actions = improve(mdp, &q_values(mdp, v0, cost), None, tol);
    let mut value = evaluate_deterministic(mdp, &actions, cost)?;
    let mut iterations = 1;
    let mut stable = false;
    while iterations < max_sweeps.max(1) {
        let next = improve(mdp, &q_values(mdp, &value, cost), Some(&actions), tol);
        if next == actions {
            stable = true;
            break;
        }
        actions = next;
        value = evaluate_deterministic(mdp, &actions, cost)?;
        iterations += 1;
    }
    if !stable && iterations >= max_sweeps.max(1) {
        let next = improve(mdp, &q_values(mdp, &value, cost), Some(&actions), tol);
        stable = next == actions;
    }
    let policy = Policy::deterministic(mdp.num_actions(), &actions)?;
    let occupancy = crate::mdp::occupancy_from_policy(&policy, mdp)?;
    let objective = occupancy.objective(cost);
    Ok(PolicyIterationResult {
        value,
        actions,
        policy,
        occupancy,
        objective,
        iterations,
        stable,
    })
}

/// Policy iteration to a stable policy. `tol` is the relative improvement
/// below which an action is not switched.
pub fn policy_iteration<T: Scalar>(mdp: &Mdp<T>, cost: &[T], tol: T) -> Result<PolicyIterationResult<T>> {
    // Policy iteration terminates in at most A^S sweeps; the cap only guards
    // against round-off cycling.
    let cap = 10 * mdp.num_states() * mdp.num_actions() + 100;
    let out = policy_iteration_warm(mdp, cost, None, cap, tol)?;
    if !out.stable {
        log::warn!("policy iteration stopped after {cap} sweeps without a stable policy");
    }
    Ok(out)
}

/// Primal-dual method parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdmConfig {
    /// `a₀` in the step size `a₀/(k + 1)`.
    pub step_scale: f64,
    /// Policy-iteration sweeps per dual step.
    pub sweeps: usize,
    pub eps_lambda: f64,
    pub eps_con: f64,
    pub max_iters: usize,
    pub trace_every: usize,
}

impl Default for PdmConfig {
    fn default() -> Self {
        Self {
            step_scale: 10.0,
            sweeps: 2,
            eps_lambda: 1e-4,
            eps_con: 1e-4,
            max_iters: 20_000,
            trace_every: 100,
        }
    }
}

impl PdmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_scale > 0.0) {
            return Err(Error::Invalid(format!("step scale must be positive, got {}", self.step_scale)));
        }
        if self.sweeps == 0 {
            return Err(Error::Invalid("at least one policy-iteration sweep is required".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::Invalid("trace_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdmTraceRecord {
    pub k: usize,
    /// Objective of the running average.
    pub objective: f64,
    pub max_violation: f64,
    pub lambda_change: f64,
    pub min_lambda: f64,
}

#[derive(Debug, Clone)]
pub struct PdmResult<T> {
    pub d_avg: OccupancyMeasure<T>,
    pub lambda: Vec<T>,
    pub objective: T,
    pub violation: Vec<T>,
    pub iterations: usize,
    /// True when both stopping tests passed before `max_iters`.
    pub converged: bool,
    pub trace: Vec<PdmTraceRecord>,
}

/// Dual ascent on the Lagrangian `cᵀd + λᵀ(Ed − b)` with inexact best
/// responses and uniform averaging of the primal iterates.
pub fn pdm_solve<T: Scalar>(mdp: &Mdp<T>, poly: &Polyhedron<T>, cfg: &PdmConfig) -> Result<PdmResult<T>> {
    cfg.validate()?;
    let e = poly.matrix();
    let b = poly.rhs();
    check_len("constraint columns", mdp.num_pairs(), e.ncols())?;
    let n_c = e.nrows();
    let tol = T::lit(1e-12);
    let mut lambda = vec![T::zero(); n_c];
    let mut d_avg = vec![T::zero(); mdp.num_pairs()];
    let mut value: Option<Vec<T>> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for k in 0..cfg.max_iters {
        let shifted: Vec<T> = e
            .tr_matvec(&lambda)
            .into_iter()
            .zip(mdp.cost())
            .map(|(el, &c)| c + el)
            .collect();
        let br = policy_iteration_warm(mdp, &shifted, value.as_deref(), cfg.sweeps, tol)?;
        let d_k = br.occupancy.as_slice();
        let weight = T::one() / T::from_count(k + 1);
        for (avg, &x) in d_avg.iter_mut().zip(d_k) {
            *avg += weight * (x - *avg);
        }
        value = Some(br.value);

        let step = T::lit(cfg.step_scale) / T::from_count(k + 1);
        let ed = e.matvec(d_k);
        let next: Vec<T> = lambda
            .iter()
            .zip(ed.iter().zip(b))
            .map(|(&l, (&g, &bi))| (l + step * (g - bi)).max(T::zero()))
            .collect();
        let change = dist_inf(&next, &lambda);
        lambda = next;
        iterations = k + 1;

        let violation = poly.violation(&d_avg);
        let feasible = violations_within(&violation, b, T::lit(cfg.eps_con));
        let done = change <= T::lit(cfg.eps_lambda) && feasible;
        if k % cfg.trace_every == 0 || done {
            trace.push(PdmTraceRecord {
                k,
                objective: dot(&d_avg, mdp.cost()).as_f64(),
                max_violation: max_violation(&violation).as_f64(),
                lambda_change: change.as_f64(),
                min_lambda: lambda.iter().fold(f64::INFINITY, |m, l| m.min(l.as_f64())),
            });
        }
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("primal-dual method stopped at max_iters = {}", cfg.max_iters);
    }
    let d_avg = OccupancyMeasure::new(d_avg)?;
    let violation = poly.violation(d_avg.as_slice());
    Ok(PdmResult {
        objective: d_avg.objective(mdp.cost()),
        d_avg,
        lambda,
        violation,
        iterations,
        converged,
        trace,
    })
}

/// Euclidean projection onto the occupancy polytope for small MDPs, by
/// Dykstra's method between the flow equalities and the nonnegative orthant,
/// finished by an exact solve on the detected support.
#[derive(Debug, Clone)]
pub struct OccupancyProjector<'a, T> {
    mdp: &'a Mdp<T>,
    gram: Cholesky<T>,
    /// Rows of `M = γP − Ξ`, dense.
    flow_rows: DenseMatrix<T>,
    rhs: Vec<T>,
    pub max_iters: usize,
    pub tol: T,
}

/// A projection onto the occupancy polytope and how it was found.
#[derive(Debug, Clone)]
pub struct PolytopeProjection<T> {
    pub point: Vec<T>,
    pub iterations: usize,
    /// KKT residual of the returned point.
    pub kkt_residual: T,
    /// True when the support solve certified the point.
    pub exact: bool,
}

impl<'a, T: Scalar> OccupancyProjector<'a, T> {
    pub fn new(mdp: &'a Mdp<T>, max_pairs: usize) -> Result<Self> {
        let n = mdp.num_pairs();
        if n > max_pairs {
            return Err(Error::SizeGuard {
                size: n,
                limit: max_pairs,
            });
        }
        let s_n = mdp.num_states();
        let gram = Cholesky::factor(&gram_matrix(mdp))?;
        let mut flow_rows = DenseMatrix::zeros(n, s_n);
        for j in 0..s_n {
            let mut e = vec![T::zero(); s_n];
            e[j] = T::one();
            for (r, x) in mdp.flow_apply(&e).into_iter().enumerate() {
                flow_rows[(r, j)] = x;
            }
        }
        let rhs = mdp
            .initial()
            .iter()
            .map(|&r| -(T::one() - mdp.gamma()) * r)
            .collect();
        Ok(Self {
            mdp,
            gram,
            flow_rows,
            rhs,
            max_iters: 200_000,
            tol: T::lit(1e-13),
        })
    }

    /// Projection onto `{x : Mᵀx = −(1 − γ)ρ}`.
    fn project_affine(&self, x: &[T]) -> Vec<T> {
        let resid: Vec<T> = self
            .mdp
            .flow_apply_tr(x)
            .into_iter()
            .zip(&self.rhs)
            .map(|(a, &r)| a - r)
            .collect();
        let mu = self.gram.solve(&resid);
        let corr = self.mdp.flow_apply(&mu);
        x.iter().zip(corr).map(|(&a, c)| a - c).collect()
    }

    /// Equality-constrained projection with `x_j = 0` off `support`, plus its
    /// KKT residual. `None` if the reduced system is singular.
    fn solve_on_support(&self, y: &[T], support: &[bool]) -> Option<(Vec<T>, T)> {
        let s_n = self.mdp.num_states();
        let mut g = DenseMatrix::zeros(s_n, s_n);
        let mut by = vec![T::zero(); s_n];
        for (j, row) in self.flow_rows.rows().enumerate() {
            if !support[j] {
                continue;
            }
            for p in 0..s_n {
                by[p] += row[p] * y[j];
                for q in 0..s_n {
                    g[(p, q)] += row[p] * row[q];
                }
            }
        }
        let chol = Cholesky::factor(&g).ok()?;
        let r: Vec<T> = by.iter().zip(&self.rhs).map(|(&a, &b)| a - b).collect();
        let mu = chol.solve(&r);
        let m_mu = self.flow_rows.matvec(&mu);
        let mut x = vec![T::zero(); y.len()];
        let mut kkt = T::zero();
        for j in 0..y.len() {
            if support[j] {
                x[j] = y[j] - m_mu[j];
                kkt = kkt.max(-x[j]);
            } else {
                // Multiplier of x_j ≥ 0 must be nonnegative.
                kkt = kkt.max(y[j] - m_mu[j]);
            }
        }
        let flow: Vec<T> = self
            .mdp
            .flow_apply_tr(&x)
            .into_iter()
            .zip(&self.rhs)
            .map(|(a, &b)| a - b)
            .collect();
        kkt = kkt.max(norm_inf(&flow));
        Some((x, kkt))
    }

    pub fn project(&self, y: &[T]) -> Result<PolytopeProjection<T>> {
        check_len("point", self.mdp.num_pairs(), y.len())?;
        let n = y.len();
        let scale = T::one().max(norm_inf(y));
        let certify = T::lit(1e-12) * scale;
        let mut x = y.to_vec();
        let mut p = vec![T::zero(); n];
        let mut q = vec![T::zero(); n];
        let mut best: Option<(Vec<T>, T)> = None;
        let mut iterations = 0;
        for it in 0..self.max_iters {
            iterations = it + 1;
            let shifted: Vec<T> = x.iter().zip(&p).map(|(&a, &b)| a + b).collect();
            let aff = self.project_affine(&shifted);
            for j in 0..n {
                p[j] = shifted[j] - aff[j];
            }
            let prev = std::mem::replace(&mut x, vec![T::zero(); n]);
            for j in 0..n {
                let t = aff[j] + q[j];
                x[j] = t.max(T::zero());
                q[j] = t - x[j];
            }
            // x alone can sit still while the correction terms keep moving.
            let change = dist_inf(&x, &prev).max(dist_inf(&x, &aff));
            if it % 25 == 0 || change <= self.tol * scale {
                let thresh = T::lit(1e-9) * scale;
                let support: Vec<bool> = aff.iter().map(|&v| v > thresh).collect();
                if let Some((xs, kkt)) = self.solve_on_support(y, &support) {
                    if kkt <= certify {
                        return Ok(PolytopeProjection {
                            point: xs,
                            iterations,
                            kkt_residual: kkt,
                            exact: true,
                        });
                    }
                    if best.as_ref().is_none_or(|(_, k)| kkt < *k) {
                        best = Some((xs, kkt));
                    }
                }
            }
            if change <= self.tol * scale && it > 0 {
                break;
            }
        }
        let dykstra_kkt = self.kkt_of_point(y, &x);
        let (point, kkt) = match best {
            Some((xs, k)) if k < dykstra_kkt => (xs, k),
            _ => (x, dykstra_kkt),
        };
        log::warn!("occupancy projection not certified, KKT residual {kkt}");
        Ok(PolytopeProjection {
            point: point.into_iter().map(|v| v.max(T::zero())).collect(),
            iterations,
            kkt_residual: kkt,
            exact: false,
        })
    }

    /// KKT residual of an arbitrary candidate, using its own support.
    fn kkt_of_point(&self, y: &[T], x: &[T]) -> T {
        let scale = T::one().max(norm_inf(y));
        let support: Vec<bool> = x.iter().map(|&v| v > T::lit(1e-9) * scale).collect();
        self.solve_on_support(y, &support)
            .map(|(xs, k)| k.max(dist_inf(&xs, x)))
            .unwrap_or_else(T::infinity)
    }
}

/// `argmin_{d ∈ 𝒟} cᵀd + ‖d − w‖²/(2σ)` for `S·A ≤` [`QP_ORACLE_MAX_PAIRS`].
///
/// Projected gradient with step `σ`. The objective is `1/σ`-smooth, so one
/// step from any start already lands on `proj_𝒟(w − σc)`; the loop then
/// verifies stationarity.
pub fn qp_prox_oracle<T: Scalar>(mdp: &Mdp<T>, w: &[T], sigma: T, tol: T) -> Result<Vec<T>> {
    check_len("governing vector", mdp.num_pairs(), w.len())?;
    if !(sigma > T::zero()) {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    let proj = OccupancyProjector::new(mdp, QP_ORACLE_MAX_PAIRS)?;
    let mut d = vec![T::zero(); w.len()];
    for _ in 0..50 {
        let y: Vec<T> = d
            .iter()
            .zip(w.iter().zip(mdp.cost()))
            .map(|(&di, (&wi, &c))| di - sigma * (c + (di - wi) / sigma))
            .collect();
        let out = proj.project(&y)?;
        if !out.exact {
            return Err(Error::Numerical(format!(
                "occupancy projection not certified, KKT residual {}",
                out.kkt_residual
            )));
        }
        let change = dist_inf(&out.point, &d);
        d = out.point;
        if change <= tol {
            break;
        }
    }
    Ok(d)
}

/// Gap vector between the occupancy polytope and a constraint set.
#[derive(Debug, Clone)]
pub struct Displacement<T> {
    /// `d̄ − z̄`.
    pub v: Vec<T>,
    pub d: Vec<T>,
    pub z: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternating projections `d ← proj_𝒟(z)`, `z ← proj_𝒞(d)` until `d − z`
/// changes by at most `tol` in ∞-norm.
pub fn displacement_oracle<T: Scalar, C: ConvexSet<T>>(
    mdp: &Mdp<T>,
    cset: &C,
    tol: T,
) -> Result<Displacement<T>> {
    check_len("constraint set dimension", mdp.num_pairs(), cset.dim())?;
    let proj = OccupancyProjector::new(mdp, DISPLACEMENT_ORACLE_MAX_PAIRS)?;
    let max_iters = 20_000;
    let mut z = cset.project(&vec![T::zero(); mdp.num_pairs()]).point;
    let mut gap_prev: Option<Vec<T>> = None;
    let mut d = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iters {
        d = proj.project(&z)?.point;
        z = cset.project(&d).point;
        let gap: Vec<T> = d.iter().zip(&z).map(|(&a, &b)| a - b).collect();
        iterations = it + 1;
        let stalled = gap_prev.as_ref().is_some_and(|g| dist_inf(g, &gap) <= tol);
        gap_prev = Some(gap);
        if stalled {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("alternating projections did not settle within {max_iters} iterations");
    }
    Ok(Displacement {
        v: gap_prev.unwrap_or_default(),
        d,
        z,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CsrMatrix;

    fn singleton(cost: f64) -> Mdp<f64> {
        let p = CsrMatrix::from_entries(1, 1, &[(0, 0, 1.0)]).unwrap();
        Mdp::new(1, 1, p, vec![cost], 0.9, vec![1.0]).unwrap()
    }

    /// Two states; action 0 stays, action 1 moves to the absorbing state 1.
    fn chain(gamma: f64) -> Mdp<f64> {
        let p = CsrMatrix::from_entries(
            4,
            2,
            &[(0, 0, 1.0), (1, 1, 1.0), (2, 1, 1.0), (3, 1, 1.0)],
        )
        .unwrap();
        Mdp::new(2, 2, p, vec![1.0, 1.0, 0.0, 0.0], gamma, vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn singleton_policy_iteration() {
        let m = singleton(1.0);
        let out = policy_iteration(&m, m.cost(), 1e-12).unwrap();
        assert!((out.objective - 1.0).abs() < 1e-12);
        assert!((out.value[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn chain_leaves_at_once() {
        let gamma = 0.8;
        let m = chain(gamma);
        let out = policy_iteration(&m, m.cost(), 1e-12).unwrap();
        // One unit of cost at time zero, then zero forever.
        assert_eq!(out.actions[0], 1);
        assert!((out.objective - (1.0 - gamma)).abs() < 1e-12);
        assert!((out.objective - (1.0 - gamma) * out.value[0]).abs() < 1e-12);
    }

    #[test]
    fn lowest_index_tie_break() {
        let p = CsrMatrix::from_entries(2, 1, &[(0, 0, 1.0), (1, 0, 1.0)]).unwrap();
        let m = Mdp::new(1, 2, p, vec![0.5, 0.5], 0.9, vec![1.0]).unwrap();
        let out = policy_iteration(&m, m.cost(), 1e-12).unwrap();
        assert_eq!(out.actions, vec![0]);
    }

    #[test]
    fn singleton_prox_oracle() {
        let m = singleton(3.0);
        let d = qp_prox_oracle(&m, &[-4.0], 0.5, 1e-12).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_size_guard() {
        let n = 9;
        let trip: Vec<_> = (0..n * 8).map(|r| (r, r / 8, 1.0)).collect();
        let p = CsrMatrix::from_entries(n * 8, n, &trip).unwrap();
        let m = Mdp::new(n, 8, p, vec![0.0; n * 8], 0.9, vec![1.0 / n as f64; n]).unwrap();
        let err = qp_prox_oracle(&m, &vec![0.0; n * 8], 1.0, 1e-10).unwrap_err();
        assert!(matches!(err, Error::SizeGuard { size: 72, limit: 64 }));
    }

    #[test]
    fn pdm_with_slack_constraint_reaches_unconstrained() {
        let m = chain(0.8);
        let e = DenseMatrix::from_rows(&[vec![1.0; 4]]).unwrap();
        let poly = Polyhedron::new(e, vec![2.0]).unwrap();
        let out = pdm_solve(&m, &poly, &PdmConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.lambda, vec![0.0]);
        assert!((out.objective - 0.2).abs() < 1e-12);
    }
}
