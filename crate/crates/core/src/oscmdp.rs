//! Douglas-Rachford splitting for constrained MDPs.
//!
//! The problem `min cᵀd s.t. d ∈ 𝒟 ∩ 𝒞` is split into `f = cᵀd + ι_𝒟` and
//! `g = ι_𝒞`. Each outer iteration performs
//!
//! ```text
//! d_k     = prox_{σf}(w_k)            (a few warm-started QRPI steps)
//! ν_k     = (w_k − d_k)/σ
//! z_k     = proj_𝒞(2d_k − w_k)
//! w_{k+1} = w_k + ω(z_k − d_k)
//! ```
//!
//! For infeasible problems `w_k − w_{k+1}` converges to ω times the minimal
//! displacement vector between `𝒟` and `𝒞` while `d_k` settles; both are
//! used for the infeasibility certificate.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::constraints::{max_violation, violations_within, ConvexSet};
use crate::error::{check_len, Error, Result};
use crate::linalg::{dist_inf, norm2, norm_inf};
use crate::mdp::{dynamics_residual, Mdp, OccupancyMeasure};
use crate::qrpi::{solve_reg_mdp, CgConfig, EvalMode, InnerStop, RegEvalBackend};
use crate::scalar::Scalar;

/// `(d, z, nu, w_k)` of the last completed iteration.
type LastIterate<T> = (Vec<T>, Vec<T>, Vec<T>, Vec<T>);

/// Outer loop parameters. Defaults follow the reference benchmark settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub sigma: f64,
    /// Relaxation of the governing update, in (0, 2).
    pub omega: f64,
    /// QRPI steps per outer iteration.
    pub inner_iters: usize,
    /// When set, each inner solve runs to this tolerance instead of
    /// `inner_iters` fixed steps.
    #[serde(default)]
    pub inner_tol: Option<f64>,
    pub eps_opt: f64,
    pub eps_con: f64,
    pub eps_inf: f64,
    pub max_outer_iters: usize,
    pub trace_every: usize,
    /// Tolerance of the final inner solve that restores `d ∈ 𝒟`.
    pub safeguard_tol: f64,
    pub safeguard_max_iters: usize,
    /// Solve the regularized evaluation system by conjugate gradients
    /// instead of a Cholesky factor.
    #[serde(default)]
    pub indirect: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            sigma: 2e-5,
            omega: 1.5,
            inner_iters: 2,
            inner_tol: None,
            eps_opt: 1e-5,
            eps_con: 1e-4,
            eps_inf: 1e-6,
            max_outer_iters: 200_000,
            trace_every: 10,
            safeguard_tol: 1e-8,
            safeguard_max_iters: 100_000,
            indirect: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma", self.sigma),
            ("eps_opt", self.eps_opt),
            ("eps_con", self.eps_con),
            ("eps_inf", self.eps_inf),
            ("safeguard_tol", self.safeguard_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::Invalid(format!("omega must lie in (0, 2), got {}", self.omega)));
        }
        if self.inner_iters == 0 {
            return Err(Error::Invalid("inner_iters must be at least 1".into()));
        }
        if let Some(t) = self.inner_tol {
            if !(t > 0.0) {
                return Err(Error::Invalid(format!("inner_tol must be positive, got {t}")));
            }
        }
        if self.trace_every == 0 {
            return Err(Error::Invalid("trace_every must be at least 1".into()));
        }
        Ok(())
    }

    fn inner_stop(&self) -> InnerStop {
        match self.inner_tol {
            Some(tol) => InnerStop::tol(tol),
            None => InnerStop::FixedIters(self.inner_iters),
        }
    }

    fn eval_mode(&self) -> EvalMode {
        if self.indirect {
            EvalMode::Indirect(CgConfig::default())
        } else {
            EvalMode::Direct
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Infeasible,
    MaxIters,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::MaxIters => "max_iters",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One logged outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub objective: f64,
    /// ‖d_k − z_k‖∞
    pub fixed_point_residual: f64,
    pub max_violation: f64,
    pub dynamics_residual: f64,
    /// ‖w_k − w_{k+1}‖₂
    pub governing_step: f64,
    /// ‖d_k − d_{k−1}‖∞, absent at `k = 0`.
    pub primal_step: Option<f64>,
    pub projection_converged: bool,
}

/// Outcome of [`solve`].
#[derive(Debug, Clone)]
pub struct SolveResult<T> {
    pub status: Status,
    /// Safeguarded primal iterate.
    pub d: OccupancyMeasure<T>,
    pub z: Vec<T>,
    pub nu: Vec<T>,
    /// Regularized value and dual occupancy of the final inner solve.
    pub value: Vec<T>,
    pub phi: Vec<T>,
    /// Estimate of the minimal displacement vector, `(w_k − w_{k+1})/ω`.
    pub v_estimate: Vec<T>,
    /// Last governing iterate fed to the inner solver.
    pub w: Vec<T>,
    pub objective: T,
    pub violation: Vec<T>,
    pub dynamics_residual: T,
    /// Outer iterations performed.
    pub iterations: usize,
    pub trace: Vec<TraceRecord>,
    /// Projections that stopped at their iteration cap.
    pub projection_warnings: usize,
    pub safeguard_converged: bool,
    /// Fixed-point residual ‖d_k − z_k‖∞ before the safeguard.
    pub fixed_point_residual: T,
    pub setup_time: Duration,
    pub solve_time: Duration,
}

impl<T: Scalar> SolveResult<T> {
    pub fn max_violation(&self) -> T {
        max_violation(&self.violation)
    }
}

/// ‖d − z‖∞ ≤ ε_opt and every violation ≤ ε_con(1 + |b_i|).
pub fn check_optimal<T: Scalar>(d: &[T], z: &[T], violation: &[T], bounds: &[T], cfg: &SolverConfig) -> bool {
    dist_inf(d, z) <= T::lit(cfg.eps_opt) && violations_within(violation, bounds, T::lit(cfg.eps_con))
}

/// ‖d_curr − d_prev‖∞ ≤ ε_inf and at least one violation of `d_curr` exceeds
/// ε_con(1 + |b_i|).
pub fn check_infeasible<T: Scalar>(
    d_prev: &[T],
    d_curr: &[T],
    violation: &[T],
    bounds: &[T],
    cfg: &SolverConfig,
) -> bool {
    dist_inf(d_curr, d_prev) <= T::lit(cfg.eps_inf)
        && !violations_within(violation, bounds, T::lit(cfg.eps_con))
}

/// `(w_prev − w_curr)/ω`, the unrelaxed step `d_k − z_k`.
pub fn minimal_displacement<T: Scalar>(w_prev: &[T], w_curr: &[T], omega: T) -> Vec<T> {
    w_prev
        .iter()
        .zip(w_curr)
        .map(|(&a, &b)| (a - b) / omega)
        .collect()
}

/// Optional starting point for warm-started re-solves.
#[derive(Debug, Clone, Default)]
pub struct WarmStart<T> {
    pub w: Option<Vec<T>>,
    pub phi: Option<Vec<T>>,
}

/// Douglas-Rachford solver bound to one MDP and its factorized evaluation
/// system.
#[derive(Debug, Clone)]
pub struct Solver<'a, T> {
    mdp: &'a Mdp<T>,
    backend: RegEvalBackend<T>,
    cfg: SolverConfig,
    setup_time: Duration,
}

impl<'a, T: Scalar> Solver<'a, T> {
    pub fn new(mdp: &'a Mdp<T>, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let start = Instant::now();
        let backend = RegEvalBackend::build(mdp, cfg.eval_mode())?;
        Ok(Self {
            mdp,
            backend,
            cfg,
            setup_time: start.elapsed(),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn backend(&self) -> &RegEvalBackend<T> {
        &self.backend
    }

    pub fn setup_time(&self) -> Duration {
        self.setup_time
    }

    pub fn solve<C: ConvexSet<T>>(&self, cset: &C) -> Result<SolveResult<T>> {
        self.solve_warm(cset, WarmStart::default())
    }

    pub fn solve_warm<C: ConvexSet<T>>(&self, cset: &C, warm: WarmStart<T>) -> Result<SolveResult<T>> {
        let mdp = self.mdp;
        let cfg = &self.cfg;
        let n = mdp.num_pairs();
        check_len("constraint set dimension", n, cset.dim())?;
        let sigma = T::lit(cfg.sigma);
        let omega = T::lit(cfg.omega);
        let bounds = cset.bounds();
        let stop = cfg.inner_stop();
        let start = Instant::now();

        let mut w = warm.w.unwrap_or_else(|| vec![T::zero(); n]);
        let mut phi = warm.phi.unwrap_or_else(|| vec![T::zero(); n]);
        check_len("warm-start w", n, w.len())?;
        check_len("warm-start phi", n, phi.len())?;
        let mut value: Option<Vec<T>> = None;
        let mut d_prev: Option<Vec<T>> = None;
        let mut trace = Vec::new();
        let mut projection_warnings = 0;
        let mut status = Status::MaxIters;
        let mut iterations = 0;
        let mut last: Option<LastIterate<T>> = None;
        let mut v_estimate = vec![T::zero(); n];

        for k in 0..cfg.max_outer_iters {
            let inner = solve_reg_mdp(&w, sigma, &phi, value.as_deref(), stop, &self.backend, mdp)?;
            let d = inner.state.d;
            phi = inner.state.phi;
            value = Some(inner.state.v);

            let nu: Vec<T> = w.iter().zip(&d).map(|(&wi, &di)| (wi - di) / sigma).collect();
            let reflected: Vec<T> = d.iter().zip(&w).map(|(&di, &wi)| di + di - wi).collect();
            let proj = cset.project(&reflected);
            if !proj.converged {
                projection_warnings += 1;
            }
            let z = proj.point;
            let w_next: Vec<T> = w
                .iter()
                .zip(&z)
                .zip(&d)
                .map(|((&wi, &zi), &di)| wi + omega * (zi - di))
                .collect();
            v_estimate = minimal_displacement(&w, &w_next, omega);
            iterations = k + 1;

            let violation = cset.violation(&d);
            let optimal = check_optimal(&d, &z, &violation, &bounds, cfg);
            let infeasible = !optimal
                && d_prev
                    .as_deref()
                    .is_some_and(|dp| check_infeasible(dp, &d, &violation, &bounds, cfg));
            let done = optimal || infeasible || iterations == cfg.max_outer_iters;

            if k % cfg.trace_every == 0 || done {
                let step: Vec<T> = w.iter().zip(&w_next).map(|(&a, &b)| a - b).collect();
                trace.push(TraceRecord {
                    k,
                    objective: crate::linalg::dot(&d, mdp.cost()).as_f64(),
                    fixed_point_residual: dist_inf(&d, &z).as_f64(),
                    max_violation: max_violation(&violation).as_f64(),
                    dynamics_residual: dynamics_residual(&d, mdp)?.as_f64(),
                    governing_step: norm2(&step).as_f64(),
                    primal_step: d_prev.as_deref().map(|dp| dist_inf(&d, dp).as_f64()),
                    projection_converged: proj.converged,
                });
            }

            if optimal {
                status = Status::Optimal;
            } else if infeasible {
                status = Status::Infeasible;
            }
            if done {
                last = Some((d, z, nu, std::mem::take(&mut w)));
                break;
            }
            d_prev = Some(d);
            w = w_next;
        }

        let (d_loop, z, nu, w_final) = match last {
            Some(l) => l,
            // Zero outer iterations requested.
            None => (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], w),
        };
        let fixed_point_residual = dist_inf(&d_loop, &z);

        let guard = safeguard(&w_final, &phi, value.as_deref(), &self.backend, mdp, cfg)?;
        let d = OccupancyMeasure::new(guard.state.d)?;
        let violation = cset.violation(d.as_slice());
        let dyn_res = dynamics_residual(d.as_slice(), mdp)?;
        Ok(SolveResult {
            status,
            objective: d.objective(mdp.cost()),
            d,
            z,
            nu,
            value: guard.state.v,
            phi: guard.state.phi,
            v_estimate,
            w: w_final,
            violation,
            dynamics_residual: dyn_res,
            iterations,
            trace,
            projection_warnings,
            safeguard_converged: guard.converged,
            fixed_point_residual,
            setup_time: self.setup_time,
            solve_time: start.elapsed(),
        })
    }
}

/// Final inner solve, continued until `d` satisfies the flow constraint to
/// `safeguard_tol`.
pub fn safeguard<T: Scalar>(
    w: &[T],
    phi: &[T],
    v_guess: Option<&[T]>,
    backend: &RegEvalBackend<T>,
    mdp: &Mdp<T>,
    cfg: &SolverConfig,
) -> Result<crate::qrpi::QrpiOutcome<T>> {
    let stop = InnerStop::Feasible {
        tol: cfg.safeguard_tol,
        max_iters: cfg.safeguard_max_iters,
    };
    let out = solve_reg_mdp(w, T::lit(cfg.sigma), phi, v_guess, stop, backend, mdp)?;
    if !out.converged {
        log::warn!("safeguard did not reach tolerance {}", cfg.safeguard_tol);
    }
    Ok(out)
}

/// Builds the solver and runs it once.
pub fn solve<T: Scalar, C: ConvexSet<T>>(
    mdp: &Mdp<T>,
    cset: &C,
    cfg: SolverConfig,
) -> Result<SolveResult<T>> {
    Solver::new(mdp, cfg)?.solve(cset)
}

/// Cosine similarity, used when comparing displacement directions.
pub fn cosine_similarity<T: Scalar>(x: &[T], y: &[T]) -> T {
    let nx = norm2(x);
    let ny = norm2(y);
    if nx == T::zero() || ny == T::zero() {
        return T::zero();
    }
    crate::linalg::dot(x, y) / (nx * ny)
}

/// ‖x‖∞ of the last governing step, exposed for diagnostics.
pub fn step_norm<T: Scalar>(v: &[T]) -> T {
    norm_inf(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn optimality_test_cases() {
        let c = cfg();
        let d = [0.5, 0.5];
        assert!(check_optimal(&d, &d, &[0.0], &[1.0], &c));
        let z = [0.5 + 2.0 * c.eps_opt, 0.5];
        assert!(!check_optimal(&d, &z, &[0.0], &[1.0], &c));
        // Violation exactly at ε_con(1 + |b|) passes.
        assert!(check_optimal(&d, &d, &[c.eps_con * 3.0], &[-2.0], &c));
    }

    #[test]
    fn infeasibility_test_cases() {
        let c = cfg();
        let d = [0.5, 0.5];
        assert!(!check_infeasible(&d, &d, &[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], &c));
        assert!(check_infeasible(&d, &d, &[0.0, 0.5, 0.0], &[1.0, 1.0, 1.0], &c));
        let moved = [0.5 + 10.0 * c.eps_inf, 0.5];
        assert!(!check_infeasible(&d, &moved, &[0.0, 0.5, 0.0], &[1.0, 1.0, 1.0], &c));
    }

    #[test]
    fn displacement_without_relaxation_is_difference() {
        let v = minimal_displacement(&[1.0, 2.0], &[0.5, 2.5], 1.0);
        assert_eq!(v, vec![0.5, -0.5]);
        let v: Vec<f64> = minimal_displacement(&[1.0, 2.0], &[0.25, 2.75], 1.5);
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let bad = SolverConfig { omega: 2.0, ..cfg() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { sigma: 0.0, ..cfg() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { inner_iters: 0, ..cfg() };
        assert!(bad.validate().is_err());
    }
}
