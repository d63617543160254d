//! Quadratically regularized policy iteration.
//!
//! Computes `prox_{σf}(w) = argmin { cᵀd + ‖d − w‖²/(2σ) : d ∈ 𝒟 }` by block
//! coordinate ascent on its dual in `(V, φ)`:
//!
//! ```text
//! V ← G⁻¹ (Mᵀ(w/σ − c + φ) + (1 − γ)ρ/σ),   G = MᵀM,  M = γP − Ξ
//! a ← c + MV − w/σ
//! φ ← max(a, 0),   d ← σ·max(−a, 0)
//! ```
//!
//! `M` has full column rank, so `G` is positive definite and the value step is
//! a plain linear solve, either by a Cholesky factor computed once per MDP or
//! by conjugate gradients on mat-vec products.

use crate::error::{check_len, Error, Result};
use crate::linalg::{conjugate_gradient, dist_inf, Cholesky, DenseMatrix};
use crate::mdp::{advantage, dynamics_residual, Mdp};
use crate::scalar::Scalar;

/// How the regularized policy evaluation system is solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMode {
    Direct,
    Indirect(CgConfig),
}

/// Conjugate gradient settings for [`EvalMode::Indirect`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    /// Relative residual tolerance, ‖r‖∞ ≤ tol·max(1, ‖rhs‖∞).
    pub tol: f64,
    /// Iteration cap; `None` means `10·S`.
    pub max_iters: Option<usize>,
    pub jacobi: bool,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: None,
            jacobi: false,
        }
    }
}

#[derive(Debug, Clone)]
enum Backend<T> {
    Direct(Cholesky<T>),
    Indirect { cfg: CgConfig, diag: Option<Vec<T>> },
}

/// Solver for `G·V = r`, built once per MDP and shared by every QRPI call.
#[derive(Debug, Clone)]
pub struct RegEvalBackend<T> {
    backend: Backend<T>,
    num_states: usize,
}

/// Dense `G = (γP − Ξ)ᵀ(γP − Ξ)`, accumulated row by row of `M`.
pub fn gram_matrix<T: Scalar>(mdp: &Mdp<T>) -> DenseMatrix<T> {
    let n = mdp.num_states();
    let gamma = mdp.gamma();
    let mut g = DenseMatrix::zeros(n, n);
    let mut entries: Vec<(usize, T)> = Vec::new();
    for r in 0..mdp.num_pairs() {
        let s = r / mdp.num_actions();
        let (cols, vals) = mdp.kernel().row(r);
        entries.clear();
        let mut has_diag = false;
        for (&j, &p) in cols.iter().zip(vals) {
            let mut v = gamma * p;
            if j == s {
                v -= T::one();
                has_diag = true;
            }
            entries.push((j, v));
        }
        if !has_diag {
            entries.push((s, -T::one()));
        }
        for &(i, vi) in &entries {
            let row = g.row_mut(i);
            for &(j, vj) in &entries {
                if j <= i {
                    row[j] += vi * vj;
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            g[(j, i)] = g[(i, j)];
        }
    }
    g
}

fn gram_diagonal<T: Scalar>(mdp: &Mdp<T>) -> Vec<T> {
    let gamma = mdp.gamma();
    let mut diag = vec![T::zero(); mdp.num_states()];
    for r in 0..mdp.num_pairs() {
        let s = r / mdp.num_actions();
        let (cols, vals) = mdp.kernel().row(r);
        let mut self_term = -T::one();
        for (&j, &p) in cols.iter().zip(vals) {
            if j == s {
                self_term += gamma * p;
            } else {
                diag[j] += gamma * gamma * p * p;
            }
        }
        diag[s] += self_term * self_term;
    }
    diag
}

impl<T: Scalar> RegEvalBackend<T> {
    pub fn build(mdp: &Mdp<T>, mode: EvalMode) -> Result<Self> {
        let backend = match mode {
            EvalMode::Direct => {
                let g = gram_matrix(mdp);
                let chol = Cholesky::factor(&g).map_err(|e| {
                    Error::Internal(format!("regularized evaluation matrix: {e}"))
                })?;
                Backend::Direct(chol)
            }
            EvalMode::Indirect(cfg) => Backend::Indirect {
                diag: cfg.jacobi.then(|| gram_diagonal(mdp)),
                cfg,
            },
        };
        Ok(Self {
            backend,
            num_states: mdp.num_states(),
        })
    }

    pub fn direct(mdp: &Mdp<T>) -> Result<Self> {
        Self::build(mdp, EvalMode::Direct)
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.backend, Backend::Direct(_))
    }

    /// The Cholesky factor, when built in direct mode.
    pub fn cholesky(&self) -> Option<&Cholesky<T>> {
        match &self.backend {
            Backend::Direct(c) => Some(c),
            Backend::Indirect { .. } => None,
        }
    }

    /// `G·v` without forming `G`.
    pub fn gram_apply(mdp: &Mdp<T>, v: &[T]) -> Vec<T> {
        mdp.flow_apply_tr(&mdp.flow_apply(v))
    }

    /// Solves `G·x = rhs`; `guess` warm-starts the iterative backend.
    pub fn solve(&self, mdp: &Mdp<T>, rhs: &[T], guess: Option<&[T]>) -> Result<Vec<T>> {
        check_len("evaluation rhs", self.num_states, rhs.len())?;
        match &self.backend {
            Backend::Direct(chol) => Ok(chol.solve(rhs)),
            Backend::Indirect { cfg, diag } => {
                let cap = cfg.max_iters.unwrap_or(10 * self.num_states);
                let out = conjugate_gradient(
                    |v| Self::gram_apply(mdp, v),
                    rhs,
                    guess,
                    diag.as_deref(),
                    T::lit(cfg.tol),
                    cap,
                );
                if out.converged {
                    Ok(out.x)
                } else {
                    Err(Error::Numerical(format!(
                        "conjugate gradients stopped after {} iterations with residual {}",
                        out.iterations, out.residual
                    )))
                }
            }
        }
    }
}

/// Inner iterate `(V, φ, d)`; `φ ⊥ d` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct QrpiState<T> {
    pub v: Vec<T>,
    pub phi: Vec<T>,
    pub d: Vec<T>,
}

impl<T: Scalar> QrpiState<T> {
    pub fn zeros(mdp: &Mdp<T>) -> Self {
        Self {
            v: vec![T::zero(); mdp.num_states()],
            phi: vec![T::zero(); mdp.num_pairs()],
            d: vec![T::zero(); mdp.num_pairs()],
        }
    }
}

/// Inner loop stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerStop {
    /// Exactly this many QRPI steps.
    FixedIters(usize),
    /// Until successive iterates differ by at most `tol` (see
    /// [`step_change`]), or `max_iters`.
    Tol { tol: f64, max_iters: usize },
    /// Until `d` satisfies the flow constraint to within `tol` in ∞-norm, or
    /// `max_iters`.
    Feasible { tol: f64, max_iters: usize },
}

impl InnerStop {
    pub const DEFAULT_TOL: f64 = 1e-10;
    pub const DEFAULT_CAP: usize = 500;

    pub fn tol(tol: f64) -> Self {
        InnerStop::Tol {
            tol,
            max_iters: Self::DEFAULT_CAP,
        }
    }
}

impl Default for InnerStop {
    fn default() -> Self {
        InnerStop::FixedIters(2)
    }
}

/// Result of [`solve_reg_mdp`].
#[derive(Debug, Clone)]
pub struct QrpiOutcome<T> {
    pub state: QrpiState<T>,
    pub iterations: usize,
    /// False when a tolerance stop hit its iteration cap.
    pub converged: bool,
    /// [`step_change`] of the last step (infinite after a single step).
    pub last_change: T,
}

/// Right-hand side `Mᵀ(w/σ − c + φ) + (1 − γ)ρ/σ` of the value step.
fn value_rhs<T: Scalar>(phi: &[T], w: &[T], sigma: T, mdp: &Mdp<T>) -> Vec<T> {
    let inner: Vec<T> = w
        .iter()
        .zip(mdp.cost())
        .zip(phi)
        .map(|((&wi, &c), &p)| wi / sigma - c + p)
        .collect();
    let mut rhs = mdp.flow_apply_tr(&inner);
    let scale = (T::one() - mdp.gamma()) / sigma;
    for (r, &rho) in rhs.iter_mut().zip(mdp.initial()) {
        *r += scale * rho;
    }
    rhs
}

fn check_inputs<T: Scalar>(phi: &[T], w: &[T], sigma: T, mdp: &Mdp<T>) -> Result<()> {
    check_len("dual occupancy", mdp.num_pairs(), phi.len())?;
    check_len("governing vector", mdp.num_pairs(), w.len())?;
    if !(sigma > T::zero()) {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Regularized policy evaluation: the maximizer of the dual over `V` for
/// fixed `φ`.
pub fn value_update<T: Scalar>(
    backend: &RegEvalBackend<T>,
    phi: &[T],
    w: &[T],
    sigma: T,
    mdp: &Mdp<T>,
    guess: Option<&[T]>,
) -> Result<Vec<T>> {
    check_inputs(phi, w, sigma, mdp)?;
    let rhs = value_rhs(phi, w, sigma, mdp);
    backend.solve(mdp, &rhs, guess)
}

/// Splits an advantage vector into `(φ, d) = (max(a, 0), σ·max(−a, 0))`.
pub fn split_advantage<T: Scalar>(adv: &[T], sigma: T) -> (Vec<T>, Vec<T>) {
    let phi = adv.iter().map(|&a| a.max(T::zero())).collect();
    let d = adv.iter().map(|&a| sigma * (-a).max(T::zero())).collect();
    (phi, d)
}

/// One QRPI step from `state` (only `φ` and, as a solver guess, `V` are read).
pub fn qrpi_step<T: Scalar>(
    state: &QrpiState<T>,
    w: &[T],
    sigma: T,
    backend: &RegEvalBackend<T>,
    mdp: &Mdp<T>,
) -> Result<QrpiState<T>> {
    let v = value_update(backend, &state.phi, w, sigma, mdp, Some(&state.v))?;
    let adv = advantage(&v, w, sigma, mdp)?;
    let (phi, d) = split_advantage(&adv, sigma);
    Ok(QrpiState { v, phi, d })
}

/// `max(‖d_ℓ − d_{ℓ−1}‖∞, σ‖φ_ℓ − φ_{ℓ−1}‖∞)`, the change of the scaled
/// advantage. `d` alone can stay fixed, typically at zero, for several steps
/// while `φ` is still moving.
pub fn step_change<T: Scalar>(prev: &QrpiState<T>, next: &QrpiState<T>, sigma: T) -> T {
    dist_inf(&next.d, &prev.d).max(sigma * dist_inf(&next.phi, &prev.phi))
}

/// Runs QRPI from a warm-started dual occupancy.
///
/// `v_guess` only seeds the iterative backend and does not change the
/// iterates of the direct one.
pub fn solve_reg_mdp<T: Scalar>(
    w: &[T],
    sigma: T,
    phi_init: &[T],
    v_guess: Option<&[T]>,
    stop: InnerStop,
    backend: &RegEvalBackend<T>,
    mdp: &Mdp<T>,
) -> Result<QrpiOutcome<T>> {
    check_inputs(phi_init, w, sigma, mdp)?;
    if phi_init.iter().any(|&p| p < T::zero()) {
        return Err(Error::Invalid("initial dual occupancy must be nonnegative".into()));
    }
    let mut state = QrpiState {
        v: v_guess.map_or_else(|| vec![T::zero(); mdp.num_states()], <[T]>::to_vec),
        phi: phi_init.to_vec(),
        d: vec![T::zero(); mdp.num_pairs()],
    };
    let (cap, tol) = match stop {
        InnerStop::FixedIters(n) => (n, None),
        InnerStop::Tol { tol, max_iters } | InnerStop::Feasible { tol, max_iters } => {
            (max_iters, Some(T::lit(tol)))
        }
    };
    let by_residual = matches!(stop, InnerStop::Feasible { .. });
    let mut last_change = T::infinity();
    let mut iterations = 0;
    while iterations < cap {
        let next = qrpi_step(&state, w, sigma, backend, mdp)?;
        if iterations > 0 {
            last_change = step_change(&state, &next, sigma);
        }
        state = next;
        iterations += 1;
        if let Some(tol) = tol {
            let measure = if by_residual {
                dynamics_residual(&state.d, mdp)?
            } else {
                last_change
            };
            if measure <= tol {
                return Ok(QrpiOutcome {
                    state,
                    iterations,
                    converged: true,
                    last_change,
                });
            }
        }
    }
    let converged = tol.is_none();
    if !converged {
        log::warn!("QRPI hit its cap of {cap} iterations (last change {last_change})");
    }
    Ok(QrpiOutcome {
        state,
        iterations,
        converged,
        last_change,
    })
}

/// Dual objective
/// `κ(V, φ) = −σ/2‖c + MV − φ‖² + wᵀ(c + MV − φ) + (1 − γ)ρᵀV`.
pub fn dual_objective<T: Scalar>(v: &[T], phi: &[T], w: &[T], sigma: T, mdp: &Mdp<T>) -> T {
    let mv = mdp.flow_apply(v);
    let mut quad = T::zero();
    let mut lin = T::zero();
    for (((&m, &c), &p), &wi) in mv.iter().zip(mdp.cost()).zip(phi).zip(w) {
        let u = c + m - p;
        quad += u * u;
        lin += wi * u;
    }
    let init: T = v
        .iter()
        .zip(mdp.initial())
        .map(|(&vi, &r)| vi * r)
        .sum();
    -sigma / T::lit(2.0) * quad + lin + (T::one() - mdp.gamma()) * init
}

/// Primal objective of the regularized problem, `cᵀd + ‖d − w‖²/(2σ)`.
pub fn prox_objective<T: Scalar>(d: &[T], w: &[T], sigma: T, cost: &[T]) -> T {
    d.iter()
        .zip(w)
        .zip(cost)
        .map(|((&di, &wi), &c)| c * di + (di - wi) * (di - wi) / (T::lit(2.0) * sigma))
        .sum()
}
