//! Convex constraint sets on the occupancy measure.
//!
//! Every set is written as `{d : C_i(d) ≤ b_i, i = 1..n_c}` so the solver can
//! report per-constraint violations `max(C_i(d) − b_i, 0)` next to the
//! Euclidean projection it needs for the splitting step.

use std::sync::Mutex;

use crate::error::{check_len, Error, Result};
use crate::linalg::{
    axpy, dist2, dot, norm2, power_iteration, symmetric_eigen, Cholesky, DenseMatrix,
};
use crate::scalar::Scalar;

/// A projection together with how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T> {
    pub point: Vec<T>,
    /// False when an iterative projection stopped at its iteration cap.
    pub converged: bool,
    pub iterations: usize,
}

impl<T> Projection<T> {
    fn exact(point: Vec<T>) -> Self {
        Self {
            point,
            converged: true,
            iterations: 0,
        }
    }
}

/// Nonempty closed convex set with a Euclidean projection.
pub trait ConvexSet<T: Scalar> {
    /// Ambient dimension.
    fn dim(&self) -> usize;

    /// Number of constraint functionals.
    fn num_constraints(&self) -> usize;

    fn project(&self, y: &[T]) -> Projection<T>;

    /// Per-constraint positive parts `max(C_i(d) − b_i, 0)`.
    fn violation(&self, d: &[T]) -> Vec<T>;

    /// Right-hand sides `b_i`, used to scale violation tolerances.
    fn bounds(&self) -> Vec<T>;

    /// The set `𝒞 − v`.
    fn translate(&self, v: &[T]) -> Self
    where
        Self: Sized;

    /// Whether `project` is closed form.
    fn closed_form(&self) -> bool {
        true
    }

    /// Forgets any warm-start information kept between projections.
    fn reset_warm_start(&self) {}
}

/// True iff every violation is within `eps·(1 + |b_i|)`; comparisons are
/// inclusive.
pub fn violations_within<T: Scalar>(viol: &[T], bounds: &[T], eps: T) -> bool {
    viol.iter()
        .zip(bounds)
        .all(|(&v, &b)| v <= eps * (T::one() + b.abs()))
}

/// Largest violation, unscaled.
pub fn max_violation<T: Scalar>(viol: &[T]) -> T {
    viol.iter().fold(T::zero(), |acc, &v| acc.max(v))
}

/// Halfspace `{d : aᵀd ≤ β}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace<T> {
    normal: Vec<T>,
    offset: T,
    norm_sq: T,
}

impl<T: Scalar> Halfspace<T> {
    pub fn new(normal: Vec<T>, offset: T) -> Result<Self> {
        let norm_sq = dot(&normal, &normal);
        if !(norm_sq > T::zero()) {
            return Err(Error::Invalid("halfspace normal must be nonzero".into()));
        }
        Ok(Self {
            normal,
            offset,
            norm_sq,
        })
    }

    pub fn normal(&self) -> &[T] {
        &self.normal
    }

    pub fn offset(&self) -> T {
        self.offset
    }
}

impl<T: Scalar> ConvexSet<T> for Halfspace<T> {
    fn dim(&self) -> usize {
        self.normal.len()
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn project(&self, y: &[T]) -> Projection<T> {
        let excess = dot(&self.normal, y) - self.offset;
        let mut x = y.to_vec();
        if excess > T::zero() {
            axpy(-excess / self.norm_sq, &self.normal, &mut x);
        }
        Projection::exact(x)
    }

    fn violation(&self, d: &[T]) -> Vec<T> {
        vec![(dot(&self.normal, d) - self.offset).max(T::zero())]
    }

    fn bounds(&self) -> Vec<T> {
        vec![self.offset]
    }

    fn translate(&self, v: &[T]) -> Self {
        Self {
            offset: self.offset - dot(&self.normal, v),
            ..self.clone()
        }
    }
}

/// Euclidean ball `{d : ‖d − center‖₂ ≤ radius}`.
#[derive(Debug, Clone, PartialEq)]
pub struct L2Ball<T> {
    center: Vec<T>,
    radius: T,
}

impl<T: Scalar> L2Ball<T> {
    pub fn new(center: Vec<T>, radius: T) -> Result<Self> {
        if !(radius > T::zero()) {
            return Err(Error::Invalid(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &[T] {
        &self.center
    }

    pub fn radius(&self) -> T {
        self.radius
    }
}

impl<T: Scalar> ConvexSet<T> for L2Ball<T> {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn project(&self, y: &[T]) -> Projection<T> {
        let dist = dist2(y, &self.center);
        if dist <= self.radius {
            return Projection::exact(y.to_vec());
        }
        let f = self.radius / dist;
        Projection::exact(
            self.center
                .iter()
                .zip(y)
                .map(|(&c, &yi)| c + f * (yi - c))
                .collect(),
        )
    }

    fn violation(&self, d: &[T]) -> Vec<T> {
        vec![(dist2(d, &self.center) - self.radius).max(T::zero())]
    }

    fn bounds(&self) -> Vec<T> {
        vec![self.radius]
    }

    fn translate(&self, v: &[T]) -> Self {
        Self {
            center: self.center.iter().zip(v).map(|(&c, &vi)| c - vi).collect(),
            radius: self.radius,
        }
    }
}

/// Settings for the dual projection solver of [`Polyhedron`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQpConfig {
    /// KKT tolerance on the recovered point.
    pub tol: f64,
    /// Iteration cap; `None` means `50·n_c + 1000`.
    pub max_iters: Option<usize>,
    pub warm_start: bool,
}

impl Default for DualQpConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: None,
            warm_start: true,
        }
    }
}

/// Largest number of rows for which the constructor checks nonemptiness.
pub const EMPTINESS_CHECK_MAX_ROWS: usize = 8;

/// Polyhedron `{d : E·d ≤ b}`, projected through its `n_c`-dimensional dual
///
/// ```text
/// max_{λ ≥ 0}  −¼ λᵀ(EEᵀ)λ + (Ey − b)ᵀλ,      proj(y) = y − ½Eᵀλ*
/// ```
///
/// solved by accelerated projected gradient with step `2/L_E`
/// (`L_E = λ_max(EEᵀ)`) and restarts whenever the dual objective decreases.
/// The final active set is then re-solved exactly.
///
/// The last multiplier is cached to warm-start the next projection. The cache
/// sits behind a mutex, so concurrent projections are safe but racing callers
/// warm-start each other; give each thread its own clone when that matters.
#[derive(Debug)]
pub struct Polyhedron<T> {
    e: DenseMatrix<T>,
    b: Vec<T>,
    eet: DenseMatrix<T>,
    lipschitz: T,
    cfg: DualQpConfig,
    warm: Mutex<Option<Vec<T>>>,
}

impl<T: Clone> Clone for Polyhedron<T> {
    fn clone(&self) -> Self {
        Self {
            e: self.e.clone(),
            b: self.b.clone(),
            eet: self.eet.clone(),
            lipschitz: self.lipschitz.clone(),
            cfg: self.cfg,
            warm: Mutex::new(self.warm.lock().map(|w| w.clone()).unwrap_or(None)),
        }
    }
}

impl<T: PartialEq> PartialEq for Polyhedron<T> {
    fn eq(&self, other: &Self) -> bool {
        self.e == other.e && self.b == other.b
    }
}

/// Dual projection details, exposed for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct DualProjection<T> {
    pub projection: Projection<T>,
    pub multipliers: Vec<T>,
}

impl<T: Scalar> Polyhedron<T> {
    /// Builds the set. With at most [`EMPTINESS_CHECK_MAX_ROWS`] rows an
    /// empty polyhedron is rejected; beyond that nonemptiness is the
    /// caller's responsibility.
    pub fn new(e: DenseMatrix<T>, b: Vec<T>) -> Result<Self> {
        if e.nrows() == 0 {
            return Err(Error::Invalid("polyhedron needs at least one row".into()));
        }
        check_len("polyhedron rhs", e.nrows(), b.len())?;
        if e.as_slice().iter().chain(&b).any(|x| !x.is_finite()) {
            return Err(Error::Invalid("polyhedron data must be finite".into()));
        }
        let eet = e.gram_rows();
        let (rayleigh, converged) = power_iteration(&eet, T::lit(1e-10), 10_000);
        // The trace bounds λ_max of a PSD matrix from above.
        let lipschitz = if converged { rayleigh } else { eet.trace() };
        if !(lipschitz > T::zero()) {
            return Err(Error::Invalid("polyhedron matrix is zero".into()));
        }
        let poly = Self {
            e,
            b,
            eet,
            lipschitz,
            cfg: DualQpConfig::default(),
            warm: Mutex::new(None),
        };
        if poly.num_rows() <= EMPTINESS_CHECK_MAX_ROWS && poly.is_empty_by_farkas() {
            return Err(Error::Invalid("polyhedron {x : Ex <= b} is empty".into()));
        }
        Ok(poly)
    }

    pub fn with_config(mut self, cfg: DualQpConfig) -> Self {
        self.cfg = cfg;
        self
    }

    pub fn config(&self) -> DualQpConfig {
        self.cfg
    }

    pub fn matrix(&self) -> &DenseMatrix<T> {
        &self.e
    }

    pub fn rhs(&self) -> &[T] {
        &self.b
    }

    pub fn num_rows(&self) -> usize {
        self.e.nrows()
    }

    /// λ_max(EEᵀ) as used for the step size.
    pub fn lipschitz(&self) -> T {
        self.lipschitz
    }

    /// Looks for a Farkas certificate `λ ≥ 0, Eᵀλ = 0, bᵀλ < 0`. A minimal
    /// one has support `J` on which the rows of `E` carry exactly one linear
    /// dependency, with a strictly positive coefficient vector.
    fn is_empty_by_farkas(&self) -> bool {
        let n = self.num_rows();
        let scale = T::one().max(self.eet.trace());
        let zero_tol = T::lit(1e-10) * scale;
        for mask in 1u32..(1u32 << n) {
            let idx: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
            let k = idx.len();
            let mut sub = DenseMatrix::zeros(k, k);
            for (a, &i) in idx.iter().enumerate() {
                for (c, &j) in idx.iter().enumerate() {
                    sub[(a, c)] = self.eet[(i, j)];
                }
            }
            let (vals, vecs) = symmetric_eigen(&sub);
            if vals[0] > zero_tol || (k > 1 && vals[1] <= zero_tol) {
                continue;
            }
            let mut u = vecs[0].clone();
            if u.iter().copied().sum::<T>() < T::zero() {
                u.iter_mut().for_each(|x| *x = -*x);
            }
            let umax = u.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
            if u.iter().any(|&x| x <= T::lit(1e-8) * umax) {
                continue;
            }
            let bu: T = idx.iter().zip(&u).map(|(&i, &ui)| self.b[i] * ui).sum();
            let bscale = T::one().max(idx.iter().map(|&i| self.b[i].abs()).sum());
            if bu < -T::lit(1e-10) * bscale * umax {
                return true;
            }
        }
        false
    }

    /// `y − ½Eᵀλ`.
    fn recover(&self, y: &[T], lambda: &[T]) -> Vec<T> {
        let mut x = y.to_vec();
        for (i, &l) in lambda.iter().enumerate() {
            if l != T::zero() {
                axpy(-l / T::lit(2.0), self.e.row(i), &mut x);
            }
        }
        x
    }

    /// Dual gradient `q − ½(EEᵀ)λ`, which equals `E·x(λ) − b`.
    fn dual_grad(&self, q: &[T], lambda: &[T]) -> Vec<T> {
        let m = self.eet.matvec(lambda);
        q.iter()
            .zip(m)
            .map(|(&qi, mi)| qi - mi / T::lit(2.0))
            .collect()
    }

    fn dual_value(&self, q: &[T], lambda: &[T]) -> T {
        let m = self.eet.matvec(lambda);
        -dot(lambda, &m) / T::lit(4.0) + dot(q, lambda)
    }

    fn kkt_ok(&self, lambda: &[T], grad: &[T], tol: T) -> bool {
        lambda
            .iter()
            .zip(grad)
            .zip(&self.b)
            .all(|((&l, &g), &b)| {
                let scale = tol * (T::one() + b.abs());
                g <= scale && (l * g).abs() <= scale
            })
    }

    /// Solves the equality-constrained dual on the support of `lambda`.
    fn polish(&self, q: &[T], lambda: &[T], tol: T) -> Option<Vec<T>> {
        let active: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > T::zero()).collect();
        if active.is_empty() {
            return None;
        }
        let k = active.len();
        let mut m = DenseMatrix::zeros(k, k);
        for (a, &i) in active.iter().enumerate() {
            for (c, &j) in active.iter().enumerate() {
                m[(a, c)] = self.eet[(i, j)];
            }
        }
        let chol = Cholesky::factor(&m).ok()?;
        let rhs: Vec<T> = active.iter().map(|&i| T::lit(2.0) * q[i]).collect();
        let sol = chol.solve(&rhs);
        if sol.iter().any(|&l| l < T::zero()) {
            return None;
        }
        let mut polished = vec![T::zero(); lambda.len()];
        for (&i, &l) in active.iter().zip(&sol) {
            polished[i] = l;
        }
        let grad = self.dual_grad(q, &polished);
        self.kkt_ok(&polished, &grad, tol).then_some(polished)
    }

    /// Projection with an explicit KKT tolerance, returning the multipliers.
    pub fn project_dual(&self, y: &[T], tol: T) -> DualProjection<T> {
        let n = self.num_rows();
        let q: Vec<T> = self
            .e
            .matvec(y)
            .into_iter()
            .zip(&self.b)
            .map(|(ey, &b)| ey - b)
            .collect();

        // Interior point: λ = 0 is optimal.
        if self.kkt_ok(&vec![T::zero(); n], &q, tol) && q.iter().all(|&g| g <= T::zero()) {
            self.store_warm(vec![T::zero(); n]);
            return DualProjection {
                projection: Projection::exact(y.to_vec()),
                multipliers: vec![T::zero(); n],
            };
        }

        let cap = self.cfg.max_iters.unwrap_or(50 * n + 1000);
        let mut step = T::lit(2.0) / self.lipschitz;
        let mut lambda = self
            .cfg
            .warm_start
            .then(|| self.warm.lock().ok().and_then(|w| w.clone()))
            .flatten()
            .filter(|w| w.len() == n)
            .unwrap_or_else(|| vec![T::zero(); n]);
        let mut extrap = lambda.clone();
        let mut theta = T::one();
        let mut value = self.dual_value(&q, &lambda);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < cap {
            let grad = self.dual_grad(&q, &lambda);
            if self.kkt_ok(&lambda, &grad, tol) {
                converged = true;
                break;
            }
            let g_ex = self.dual_grad(&q, &extrap);
            let next: Vec<T> = extrap
                .iter()
                .zip(&g_ex)
                .map(|(&m, &g)| (m + step * g).max(T::zero()))
                .collect();
            let next_value = self.dual_value(&q, &next);
            iterations += 1;
            if next_value < value {
                // Non-monotone step: restart momentum from the last iterate.
                // A failing plain step means L_E was underestimated.
                if theta == T::one() {
                    step /= T::lit(2.0);
                }
                theta = T::one();
                extrap = lambda.clone();
                continue;
            }
            let theta_next =
                (T::one() + (T::one() + T::lit(4.0) * theta * theta).sqrt()) / T::lit(2.0);
            let beta = (theta - T::one()) / theta_next;
            extrap = next
                .iter()
                .zip(&lambda)
                .map(|(&nx, &l)| nx + beta * (nx - l))
                .collect();
            lambda = next;
            value = next_value;
            theta = theta_next;
        }
        if let Some(polished) = self.polish(&q, &lambda, tol) {
            lambda = polished;
            converged = true;
        }
        if !converged {
            log::warn!("polyhedral projection stopped at its cap of {cap} iterations");
        }
        self.store_warm(lambda.clone());
        DualProjection {
            projection: Projection {
                point: self.recover(y, &lambda),
                converged,
                iterations,
            },
            multipliers: lambda,
        }
    }

    fn store_warm(&self, lambda: Vec<T>) {
        if self.cfg.warm_start {
            if let Ok(mut w) = self.warm.lock() {
                *w = Some(lambda);
            }
        }
    }
}

impl<T: Scalar> ConvexSet<T> for Polyhedron<T> {
    fn dim(&self) -> usize {
        self.e.ncols()
    }

    fn num_constraints(&self) -> usize {
        self.num_rows()
    }

    fn project(&self, y: &[T]) -> Projection<T> {
        self.project_dual(y, T::lit(self.cfg.tol)).projection
    }

    fn violation(&self, d: &[T]) -> Vec<T> {
        self.e
            .matvec(d)
            .into_iter()
            .zip(&self.b)
            .map(|(ed, &b)| (ed - b).max(T::zero()))
            .collect()
    }

    fn bounds(&self) -> Vec<T> {
        self.b.clone()
    }

    fn translate(&self, v: &[T]) -> Self {
        let ev = self.e.matvec(v);
        Self {
            b: self.b.iter().zip(ev).map(|(&b, e)| b - e).collect(),
            warm: Mutex::new(None),
            ..self.clone()
        }
    }

    fn closed_form(&self) -> bool {
        false
    }

    fn reset_warm_start(&self) {
        if let Ok(mut w) = self.warm.lock() {
            *w = None;
        }
    }
}

/// Any of the supported constraint sets.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet<T> {
    Polyhedron(Polyhedron<T>),
    L2Ball(L2Ball<T>),
    Halfspace(Halfspace<T>),
}

impl<T: Scalar> ConstraintSet<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            ConstraintSet::Polyhedron(_) => "polyhedron",
            ConstraintSet::L2Ball(_) => "l2ball",
            ConstraintSet::Halfspace(_) => "halfspace",
        }
    }

    /// The set as a polyhedron `{Ed ≤ b}`, when it is linear.
    pub fn as_linear(&self) -> Option<(DenseMatrix<T>, Vec<T>)> {
        match self {
            ConstraintSet::Polyhedron(p) => Some((p.matrix().clone(), p.rhs().to_vec())),
            ConstraintSet::Halfspace(h) => Some((
                DenseMatrix::from_row_major(1, h.normal().len(), h.normal().to_vec()).ok()?,
                vec![h.offset()],
            )),
            ConstraintSet::L2Ball(_) => None,
        }
    }
}

macro_rules! dispatch {
    ($self:ident, $s:ident => $e:expr) => {
        match $self {
            ConstraintSet::Polyhedron($s) => $e,
            ConstraintSet::L2Ball($s) => $e,
            ConstraintSet::Halfspace($s) => $e,
        }
    };
}

impl<T: Scalar> ConvexSet<T> for ConstraintSet<T> {
    fn dim(&self) -> usize {
        dispatch!(self, s => s.dim())
    }

    fn num_constraints(&self) -> usize {
        dispatch!(self, s => s.num_constraints())
    }

    fn project(&self, y: &[T]) -> Projection<T> {
        dispatch!(self, s => s.project(y))
    }

    fn violation(&self, d: &[T]) -> Vec<T> {
        dispatch!(self, s => s.violation(d))
    }

    fn bounds(&self) -> Vec<T> {
        dispatch!(self, s => s.bounds())
    }

    fn translate(&self, v: &[T]) -> Self {
        match self {
            ConstraintSet::Polyhedron(s) => ConstraintSet::Polyhedron(s.translate(v)),
            ConstraintSet::L2Ball(s) => ConstraintSet::L2Ball(s.translate(v)),
            ConstraintSet::Halfspace(s) => ConstraintSet::Halfspace(s.translate(v)),
        }
    }

    fn closed_form(&self) -> bool {
        dispatch!(self, s => s.closed_form())
    }

    fn reset_warm_start(&self) {
        dispatch!(self, s => s.reset_warm_start())
    }
}

impl<T: Scalar> From<Polyhedron<T>> for ConstraintSet<T> {
    fn from(p: Polyhedron<T>) -> Self {
        ConstraintSet::Polyhedron(p)
    }
}

impl<T: Scalar> From<L2Ball<T>> for ConstraintSet<T> {
    fn from(b: L2Ball<T>) -> Self {
        ConstraintSet::L2Ball(b)
    }
}

impl<T: Scalar> From<Halfspace<T>> for ConstraintSet<T> {
    fn from(h: Halfspace<T>) -> Self {
        ConstraintSet::Halfspace(h)
    }
}

/// Distance-style sanity helper: ‖y − proj(y)‖₂.
pub fn distance_to<T: Scalar, C: ConvexSet<T>>(set: &C, y: &[T]) -> T {
    let p = set.project(y).point;
    norm2(&crate::linalg::sub(y, &p))
}
