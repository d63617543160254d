//! Tabular discounted MDPs, occupancy measures and the linear operators that
//! couple them.
//!
//! State-action pairs are flattened state-major: the pair `(s, a)` lives at
//! index `s * A + a`. Data stored action-major (`a * S + s`) can be converted
//! with [`to_action_major`] / [`from_action_major`].
//!
//! With `M = γP − Ξ` (an `SA × S` operator, `Ξ` mapping a state vector onto
//! every action of that state) the flow constraint of the occupancy polytope
//! reads `Mᵀd + (1 − γ)ρ = 0`.

use crate::error::{check_len, Error, Result};
use crate::linalg::{norm_inf, CsrMatrix, DenseMatrix, Lu};
use crate::scalar::Scalar;

/// Marginal mass below which a state counts as unvisited.
pub const MARGINAL_FLOOR: f64 = 1e-12;

/// Tolerance for stochasticity checks on kernels, distributions and policies.
pub const STOCHASTIC_TOL: f64 = 1e-12;

fn stochastic_tol<T: Scalar>(terms: usize) -> T {
    // f32 cannot resolve 1e-12; allow a few ulps per summed term instead.
    T::lit(STOCHASTIC_TOL).max(T::epsilon() * T::from_count(4 * terms.max(1)))
}

/// Finite discounted MDP `(S, A, P, c, γ, ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp<T> {
    num_states: usize,
    num_actions: usize,
    kernel: CsrMatrix<T>,
    cost: Vec<T>,
    gamma: T,
    initial: Vec<T>,
}

impl<T: Scalar> Mdp<T> {
    /// Validates and assembles an MDP. `kernel` has `S·A` rows (state-major)
    /// and `S` columns.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        kernel: CsrMatrix<T>,
        cost: Vec<T>,
        gamma: T,
        initial: Vec<T>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Invalid("S and A must be positive".into()));
        }
        let sa = num_states * num_actions;
        check_len("kernel rows", sa, kernel.nrows())?;
        check_len("kernel cols", num_states, kernel.ncols())?;
        check_len("cost", sa, cost.len())?;
        check_len("initial distribution", num_states, initial.len())?;
        if !(gamma > T::zero() && gamma < T::one()) {
            return Err(Error::Invalid(format!("discount {gamma} not in (0, 1)")));
        }
        for r in 0..sa {
            let (_, vals) = kernel.row(r);
            if vals.iter().any(|&v| v < T::zero() || !v.is_finite()) {
                return Err(Error::Invalid(format!("kernel row {r} has a negative entry")));
            }
            let total: T = vals.iter().copied().sum();
            if (total - T::one()).abs() > stochastic_tol(vals.len()) {
                return Err(Error::Invalid(format!("kernel row {r} sums to {total}")));
            }
        }
        if cost.iter().any(|c| !c.is_finite()) {
            return Err(Error::Invalid("cost has non-finite entries".into()));
        }
        if initial.iter().any(|&p| p < T::zero()) {
            return Err(Error::Invalid("initial distribution has a negative entry".into()));
        }
        let mass: T = initial.iter().copied().sum();
        if (mass - T::one()).abs() > stochastic_tol(num_states) {
            return Err(Error::Invalid(format!("initial distribution sums to {mass}")));
        }
        Ok(Self {
            num_states,
            num_actions,
            kernel,
            cost,
            gamma,
            initial,
        })
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Number of state-action pairs `S·A`.
    #[inline]
    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn kernel(&self) -> &CsrMatrix<T> {
        &self.kernel
    }

    pub fn cost(&self) -> &[T] {
        &self.cost
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn initial(&self) -> &[T] {
        &self.initial
    }

    /// Same dynamics with a different cost vector.
    pub fn with_cost(&self, cost: Vec<T>) -> Result<Self> {
        check_len("cost", self.num_pairs(), cost.len())?;
        Ok(Self {
            cost,
            ..self.clone()
        })
    }

    /// Index of the pair `(s, a)`.
    #[inline]
    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    /// `Ξ·v`: copies each state value onto all of its actions.
    pub fn xi_expand(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.num_states);
        v.iter()
            .flat_map(|&x| std::iter::repeat_n(x, self.num_actions))
            .collect()
    }

    /// `M·v = γPv − Ξv`.
    pub fn flow_apply(&self, v: &[T]) -> Vec<T> {
        let mut out = self.kernel.matvec(v);
        let a = self.num_actions;
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.gamma * *o - v[r / a];
        }
        out
    }

    /// `Mᵀ·x = γPᵀx − Ξᵀx`.
    pub fn flow_apply_tr(&self, x: &[T]) -> Vec<T> {
        let mut out = self.kernel.tr_matvec(x);
        let marg = xi_sum(x, self.num_states, self.num_actions);
        for (o, m) in out.iter_mut().zip(marg) {
            *o = self.gamma * *o - m;
        }
        out
    }

    /// State-to-state kernel `P_π` induced by a policy, dense `S × S`.
    pub fn policy_kernel(&self, pi: &Policy<T>) -> DenseMatrix<T> {
        let (s_n, a_n) = (self.num_states, self.num_actions);
        let mut p = DenseMatrix::zeros(s_n, s_n);
        for s in 0..s_n {
            for a in 0..a_n {
                let w = pi.prob(s, a);
                if w == T::zero() {
                    continue;
                }
                let (cols, vals) = self.kernel.row(self.pair(s, a));
                for (&j, &v) in cols.iter().zip(vals) {
                    p[(s, j)] += w * v;
                }
            }
        }
        p
    }

    /// Expected one-step cost under a policy, for an arbitrary cost vector.
    pub fn policy_cost(&self, pi: &Policy<T>, cost: &[T]) -> Vec<T> {
        (0..self.num_states)
            .map(|s| {
                (0..self.num_actions)
                    .map(|a| pi.prob(s, a) * cost[self.pair(s, a)])
                    .sum()
            })
            .collect()
    }
}

fn xi_sum<T: Scalar>(d: &[T], s_n: usize, a_n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); s_n];
    for (s, chunk) in d.chunks(a_n).enumerate().take(s_n) {
        out[s] = chunk.iter().copied().sum();
    }
    out
}

/// `Ξᵀd`: per-state marginal `Σₐ d(s, a)`.
pub fn xi_apply<T: Scalar>(d: &[T], num_states: usize, num_actions: usize) -> Result<Vec<T>> {
    check_len("state-action vector", num_states * num_actions, d.len())?;
    Ok(xi_sum(d, num_states, num_actions))
}

/// ‖Ξᵀd − (1 − γ)ρ − γPᵀd‖∞, zero exactly when `d` satisfies the flow
/// constraint.
pub fn dynamics_residual<T: Scalar>(d: &[T], mdp: &Mdp<T>) -> Result<T> {
    check_len("occupancy", mdp.num_pairs(), d.len())?;
    let flow = mdp.flow_apply_tr(d);
    let one_minus_gamma = T::one() - mdp.gamma();
    Ok(flow
        .iter()
        .zip(mdp.initial())
        .fold(T::zero(), |acc, (&f, &r)| acc.max((f + one_minus_gamma * r).abs())))
}

/// `c + γPV − ΞV − w/σ`, the regularized (dis)advantage.
pub fn advantage<T: Scalar>(v: &[T], w: &[T], sigma: T, mdp: &Mdp<T>) -> Result<Vec<T>> {
    check_len("value", mdp.num_states(), v.len())?;
    check_len("governing vector", mdp.num_pairs(), w.len())?;
    if !(sigma > T::zero()) {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    let mv = mdp.flow_apply(v);
    Ok(mv
        .into_iter()
        .zip(mdp.cost())
        .zip(w)
        .map(|((m, &c), &wi)| c + m - wi / sigma)
        .collect())
}

/// Discounted state-action visitation frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure<T>(Vec<T>);

impl<T: Scalar> OccupancyMeasure<T> {
    /// Accepts entries down to −1e-12 and clamps them to zero.
    pub fn new(d: Vec<T>) -> Result<Self> {
        let floor = -T::lit(1e-12);
        if let Some(bad) = d.iter().find(|&&x| !(x >= floor)) {
            return Err(Error::Invalid(format!("negative occupancy entry {bad}")));
        }
        Ok(Self(d.into_iter().map(|x| x.max(T::zero())).collect()))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_mass(&self) -> T {
        self.0.iter().copied().sum()
    }

    /// `cᵀd`.
    pub fn objective(&self, cost: &[T]) -> T {
        crate::linalg::dot(&self.0, cost)
    }

    /// Membership in the occupancy polytope up to `tol`.
    pub fn is_member(&self, mdp: &Mdp<T>, tol: T) -> Result<bool> {
        Ok(dynamics_residual(&self.0, mdp)? <= tol && (self.total_mass() - T::one()).abs() <= tol)
    }
}

impl<T> AsRef<[T]> for OccupancyMeasure<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

/// Stationary Markov policy, row-major `S × A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T> {
    num_states: usize,
    num_actions: usize,
    probs: Vec<T>,
}

impl<T: Scalar> Policy<T> {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<T>) -> Result<Self> {
        check_len("policy", num_states * num_actions, probs.len())?;
        for (s, row) in probs.chunks(num_actions).enumerate() {
            if row.iter().any(|&p| p < T::zero()) {
                return Err(Error::Invalid(format!("policy row {s} has a negative entry")));
            }
            let total: T = row.iter().copied().sum();
            if (total - T::one()).abs() > stochastic_tol(num_actions) {
                return Err(Error::Invalid(format!("policy row {s} sums to {total}")));
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = T::one() / T::from_count(num_actions);
        Self {
            num_states,
            num_actions,
            probs: vec![p; num_states * num_actions],
        }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![T::zero(); actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::Invalid(format!("action {a} out of range")));
            }
            probs[s * num_actions + a] = T::one();
        }
        Ok(Self {
            num_states: actions.len(),
            num_actions,
            probs,
        })
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> T {
        self.probs[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn as_slice(&self) -> &[T] {
        &self.probs
    }
}

/// π(a|s) = d(s,a) / Σₐ d(s,a); states whose marginal is below
/// [`MARGINAL_FLOOR`] get the uniform distribution.
pub fn policy_from_occupancy<T: Scalar>(
    d: &OccupancyMeasure<T>,
    num_states: usize,
    num_actions: usize,
) -> Result<Policy<T>> {
    let d = d.as_slice();
    check_len("occupancy", num_states * num_actions, d.len())?;
    let floor = T::lit(MARGINAL_FLOOR);
    let uniform = T::one() / T::from_count(num_actions);
    let mut probs = Vec::with_capacity(d.len());
    for row in d.chunks(num_actions) {
        let m: T = row.iter().copied().sum();
        if m > floor {
            probs.extend(row.iter().map(|&x| x / m));
        } else {
            probs.extend(std::iter::repeat_n(uniform, num_actions));
        }
    }
    Ok(Policy {
        num_states,
        num_actions,
        probs,
    })
}

/// State marginal μ of a policy: solves `(I − γP_πᵀ)μ = (1 − γ)ρ`.
pub fn state_marginal<T: Scalar>(pi: &Policy<T>, mdp: &Mdp<T>) -> Result<Vec<T>> {
    check_len("policy states", mdp.num_states(), pi.num_states())?;
    check_len("policy actions", mdp.num_actions(), pi.num_actions())?;
    let n = mdp.num_states();
    let p = mdp.policy_kernel(pi);
    let gamma = mdp.gamma();
    let mut a = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = -gamma * p[(j, i)];
        }
        a[(i, i)] += T::one();
    }
    let rhs: Vec<T> = mdp
        .initial()
        .iter()
        .map(|&r| (T::one() - gamma) * r)
        .collect();
    let lu = Lu::factor(a).map_err(|e| Error::Internal(format!("flow system: {e}")))?;
    Ok(lu.solve(&rhs))
}

/// Occupancy measure `d_π(s, a) = μ(s)·π(a|s)`.
pub fn occupancy_from_policy<T: Scalar>(
    pi: &Policy<T>,
    mdp: &Mdp<T>,
) -> Result<OccupancyMeasure<T>> {
    let mu = state_marginal(pi, mdp)?;
    let a_n = mdp.num_actions();
    let d = (0..mdp.num_pairs())
        .map(|r| (mu[r / a_n] * pi.as_slice()[r]).max(T::zero()))
        .collect();
    Ok(OccupancyMeasure(d))
}

/// Reorders a state-major vector (`s·A + a`) into action-major (`a·S + s`).
pub fn to_action_major<T: Copy>(x: &[T], num_states: usize, num_actions: usize) -> Vec<T> {
    (0..num_actions)
        .flat_map(|a| (0..num_states).map(move |s| x[s * num_actions + a]))
        .collect()
}

/// Inverse of [`to_action_major`].
pub fn from_action_major<T: Copy>(x: &[T], num_states: usize, num_actions: usize) -> Vec<T> {
    (0..num_states)
        .flat_map(|s| (0..num_actions).map(move |a| x[a * num_states + s]))
        .collect()
}

/// Largest absolute row-sum deviation of a policy, for diagnostics.
pub fn policy_row_error<T: Scalar>(pi: &Policy<T>) -> T {
    let devs: Vec<T> = (0..pi.num_states())
        .map(|s| pi.row(s).iter().copied().sum::<T>() - T::one())
        .collect();
    norm_inf(&devs)
}
