//! JSON file formats for MDPs, constraint sets and solver results.
//!
//! MDP file:
//!
//! ```json
//! { "S": 2, "A": 1, "gamma": 0.9, "rho": [1, 0], "cost": [1, 0],
//!   "P": { "rows": [0, 1], "cols": [1, 1], "vals": [1, 1] } }
//! ```
//!
//! Kernel rows are state-major pair indices `s·A + a`.
//!
//! Constraint file, one of:
//!
//! ```json
//! { "type": "polyhedron", "E": [[1, 0], [0, 1]], "b": [0.5, 0.5] }
//! { "type": "l2ball", "center": [0.5, 0.5], "radius": 0.1 }
//! { "type": "halfspace", "normal": [1, 1], "offset": 2 }
//! ```
//!
//! `E` may also be given flat in row-major order.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::constraints::{ConstraintSet, ConvexSet, Halfspace, L2Ball, Polyhedron};
use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, DenseMatrix};
use crate::mdp::{policy_from_occupancy, xi_apply, Mdp};
use crate::oscmdp::{SolveResult, SolverConfig, TraceRecord};
use crate::scalar::Scalar;

/// Entries of the marginal and occupancy above which a cell or arrow is drawn.
pub const DISPLAY_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplets {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    pub gamma: f64,
    pub rho: Vec<f64>,
    pub cost: Vec<f64>,
    #[serde(rename = "P")]
    pub kernel: Triplets,
}

impl MdpFile {
    pub fn from_mdp<T: Scalar>(mdp: &Mdp<T>) -> Self {
        let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
        for (r, c, v) in mdp.kernel().triplets() {
            rows.push(r);
            cols.push(c);
            vals.push(v.as_f64());
        }
        Self {
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            gamma: mdp.gamma().as_f64(),
            rho: to_f64(mdp.initial()),
            cost: to_f64(mdp.cost()),
            kernel: Triplets { rows, cols, vals },
        }
    }

    /// Validates every MDP invariant.
    pub fn into_mdp<T: Scalar>(self) -> Result<Mdp<T>> {
        let k = &self.kernel;
        if k.rows.len() != k.cols.len() || k.rows.len() != k.vals.len() {
            return Err(Error::Invalid(format!(
                "kernel triplet arrays differ in length: {}, {}, {}",
                k.rows.len(),
                k.cols.len(),
                k.vals.len()
            )));
        }
        let sa = self.num_states * self.num_actions;
        let kernel = CsrMatrix::from_triplets(sa, self.num_states, &k.rows, &k.cols, &from_f64(&k.vals))?;
        Mdp::new(
            self.num_states,
            self.num_actions,
            kernel,
            from_f64(&self.cost),
            T::lit(self.gamma),
            from_f64(&self.rho),
        )
    }
}

/// Dense matrix given either as nested rows or flat row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixRepr {
    Nested(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ConstraintFile {
    Polyhedron {
        #[serde(rename = "E")]
        e: MatrixRepr,
        b: Vec<f64>,
    },
    L2ball {
        center: Vec<f64>,
        radius: f64,
    },
    Halfspace {
        normal: Vec<f64>,
        offset: f64,
    },
}

impl ConstraintFile {
    pub fn from_set<T: Scalar>(set: &ConstraintSet<T>) -> Self {
        match set {
            ConstraintSet::Polyhedron(p) => ConstraintFile::Polyhedron {
                e: MatrixRepr::Nested(p.matrix().rows().map(to_f64).collect()),
                b: to_f64(p.rhs()),
            },
            ConstraintSet::L2Ball(ball) => ConstraintFile::L2ball {
                center: to_f64(ball.center()),
                radius: ball.radius().as_f64(),
            },
            ConstraintSet::Halfspace(h) => ConstraintFile::Halfspace {
                normal: to_f64(h.normal()),
                offset: h.offset().as_f64(),
            },
        }
    }

    pub fn into_set<T: Scalar>(self) -> Result<ConstraintSet<T>> {
        Ok(match self {
            ConstraintFile::Polyhedron { e, b } => {
                let m = match e {
                    MatrixRepr::Nested(rows) => {
                        let rows: Vec<Vec<T>> = rows.iter().map(|r| from_f64(r)).collect();
                        DenseMatrix::from_rows(&rows)?
                    }
                    MatrixRepr::Flat(data) => {
                        if b.is_empty() || data.len() % b.len() != 0 {
                            return Err(Error::Invalid(format!(
                                "flat E of length {} does not split into {} rows",
                                data.len(),
                                b.len()
                            )));
                        }
                        DenseMatrix::from_row_major(b.len(), data.len() / b.len(), from_f64(&data))?
                    }
                };
                Polyhedron::new(m, from_f64(&b))?.into()
            }
            ConstraintFile::L2ball { center, radius } => {
                L2Ball::new(from_f64(&center), T::lit(radius))?.into()
            }
            ConstraintFile::Halfspace { normal, offset } => {
                Halfspace::new(from_f64(&normal), T::lit(offset))?.into()
            }
        })
    }
}

/// Solver output as written to disk, including the data needed to draw the
/// occupancy on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub status: String,
    pub objective: f64,
    pub iterations: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub d: Vec<f64>,
    pub z: Vec<f64>,
    pub nu: Vec<f64>,
    pub v_estimate: Vec<f64>,
    pub value: Vec<f64>,
    pub phi: Vec<f64>,
    pub violation: Vec<f64>,
    pub max_violation: f64,
    pub dynamics_residual: f64,
    pub fixed_point_residual: f64,
    pub projection_warnings: usize,
    pub safeguard_converged: bool,
    /// `Σₐ d(s, a)` per state.
    pub state_marginal: Vec<f64>,
    /// Row-major `S × A` policy extracted from `d`.
    pub policy: Vec<f64>,
    /// `d(s, a) > DISPLAY_THRESHOLD`, state-major.
    pub arrow_mask: Vec<bool>,
    pub display_threshold: f64,
    pub config: SolverConfig,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    pub trace: Vec<TraceRecord>,
}

impl ResultFile {
    pub fn from_result<T: Scalar>(res: &SolveResult<T>, mdp: &Mdp<T>, cfg: &SolverConfig) -> Result<Self> {
        let (s_n, a_n) = (mdp.num_states(), mdp.num_actions());
        let d = res.d.as_slice();
        let marginal = xi_apply(d, s_n, a_n)?;
        let policy = policy_from_occupancy(&res.d, s_n, a_n)?;
        let thresh = T::lit(DISPLAY_THRESHOLD);
        Ok(Self {
            status: res.status.as_str().to_string(),
            objective: res.objective.as_f64(),
            iterations: res.iterations,
            num_states: s_n,
            num_actions: a_n,
            d: to_f64(d),
            z: to_f64(&res.z),
            nu: to_f64(&res.nu),
            v_estimate: to_f64(&res.v_estimate),
            value: to_f64(&res.value),
            phi: to_f64(&res.phi),
            violation: to_f64(&res.violation),
            max_violation: res.max_violation().as_f64(),
            dynamics_residual: res.dynamics_residual.as_f64(),
            fixed_point_residual: res.fixed_point_residual.as_f64(),
            projection_warnings: res.projection_warnings,
            safeguard_converged: res.safeguard_converged,
            state_marginal: to_f64(&marginal),
            policy: to_f64(policy.as_slice()),
            arrow_mask: d.iter().map(|&x| x > thresh).collect(),
            display_threshold: DISPLAY_THRESHOLD,
            config: cfg.clone(),
            setup_seconds: res.setup_time.as_secs_f64(),
            solve_seconds: res.solve_time.as_secs_f64(),
            trace: res.trace.clone(),
        })
    }
}

pub fn read_json<D: DeserializeOwned>(path: impl AsRef<Path>) -> Result<D> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<S: Serialize>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_mdp<T: Scalar>(path: impl AsRef<Path>) -> Result<Mdp<T>> {
    read_json::<MdpFile>(path)?.into_mdp()
}

pub fn write_mdp<T: Scalar>(path: impl AsRef<Path>, mdp: &Mdp<T>) -> Result<()> {
    write_json(path, &MdpFile::from_mdp(mdp))
}

pub fn read_constraints<T: Scalar>(path: impl AsRef<Path>) -> Result<ConstraintSet<T>> {
    read_json::<ConstraintFile>(path)?.into_set()
}

pub fn write_constraints<T: Scalar>(path: impl AsRef<Path>, set: &ConstraintSet<T>) -> Result<()> {
    write_json(path, &ConstraintFile::from_set(set))
}

/// Reads a constraint file and checks it against an MDP.
pub fn read_constraints_for<T: Scalar>(path: impl AsRef<Path>, mdp: &Mdp<T>) -> Result<ConstraintSet<T>> {
    let set: ConstraintSet<T> = read_constraints(path)?;
    crate::error::check_len("constraint dimension", mdp.num_pairs(), set.dim())?;
    Ok(set)
}

fn to_f64<T: Scalar>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| v.as_f64()).collect()
}

fn from_f64<T: Scalar>(x: &[f64]) -> Vec<T> {
    x.iter().map(|&v| T::lit(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_and_nested_matrices_agree() {
        let nested: ConstraintFile =
            serde_json::from_str(r#"{"type":"polyhedron","E":[[1,0],[0,1]],"b":[1,2]}"#).unwrap();
        let flat: ConstraintFile =
            serde_json::from_str(r#"{"type":"polyhedron","E":[1,0,0,1],"b":[1,2]}"#).unwrap();
        let a: ConstraintSet<f64> = nested.into_set().unwrap();
        let b: ConstraintSet<f64> = flat.into_set().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_kernel() {
        let text = r#"{"S":1,"A":1,"gamma":0.9,"rho":[1],"cost":[0],
                       "P":{"rows":[0],"cols":[0],"vals":[0.5]}}"#;
        let file: MdpFile = serde_json::from_str(text).unwrap();
        assert!(file.into_mdp::<f64>().is_err());
    }

    #[test]
    fn unknown_constraint_type() {
        let r: std::result::Result<ConstraintFile, _> =
            serde_json::from_str(r#"{"type":"entropy","beta":1}"#);
        assert!(r.is_err());
    }
}
