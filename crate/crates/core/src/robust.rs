//! Robust refinement by iteratively reweighted least squares in the tangent space.
//!
//! Each outer iteration linearizes every edge residual
//! `w_ij = log(R_j^T R_ij R_i)` under right increments `R_i <- R_i exp(d_i)`,
//! giving `w_ij + d_i - d_j`, reweights the edges with the Geman-McClure kernel
//! and solves the resulting sparse block normal equations with `d_0 = 0`.
//!
//! In anisotropic mode an edge residual is whitened by `D_ij R_j`, where
//! `D_ij^T D_ij` is the Hessian scaled to unit mean eigenvalue. The factor `R_j`
//! maps the right-frame residual into the left frame the Hessian lives in
//! (see [`crate::view_graph`]).

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{exp_so3, log_so3, Rotation, TangentVector};
use crate::solver::{SolveResult, SolveStatus, SweepRecord};
use crate::stack::RotationStack;
use crate::view_graph::{EdgeMeasurement, ViewGraph, WeightMode};

/// Step halvings attempted before the refinement gives up on an iteration.
pub const MAX_HALVINGS: u32 = 10;

/// Relative eigenvalue floor applied to Hessians before factoring.
pub const HESSIAN_CLAMP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    pub tau_deg: f64,
    pub max_outer_iters: usize,
    /// Stop once the largest camera increment is below this many degrees.
    pub step_tol_deg: f64,
    pub mode: WeightMode,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            tau_deg: 5.0,
            max_outer_iters: 50,
            step_tol_deg: 1e-6,
            mode: WeightMode::Aniso,
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_deg > 0.0) || !self.tau_deg.is_finite() {
            return Err(Error::Config(format!("tau_deg must be positive, got {}", self.tau_deg)));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::Config("max_outer_iters must be at least 1".into()));
        }
        if !(self.step_tol_deg > 0.0) {
            return Err(Error::Config("step_tol_deg must be positive".into()));
        }
        Ok(())
    }
}

/// `x^2 / (x^2 + tau^2)`.
pub fn geman_mcclure(x: f64, tau: f64) -> f64 {
    let x2 = x * x;
    x2 / (x2 + tau * tau)
}

/// IRLS weight `(tau^2 / (x^2 + tau^2))^2`, equal to 1 at the origin.
pub fn irls_weight(x: f64, tau: f64) -> f64 {
    let t2 = tau * tau;
    let q = t2 / (x * x + t2);
    q * q
}

/// `log(R_j^T R_ij R_i)`: zero iff the measurement is exactly consistent.
pub fn residual_tangent(e: &EdgeMeasurement, r_i: &Rotation, r_j: &Rotation) -> TangentVector {
    log_so3(&Rotation::from_matrix_unchecked(
        r_j.matrix().transpose() * e.rel().matrix() * r_i.matrix(),
    ))
}

/// Upper-triangular `D` with `D^T D` equal to `h` after clamping its
/// eigenvalues from below at `1e-9 tr(h) / 3`.
pub fn hessian_factor(h: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let sym = (h + h.transpose()) * 0.5;
    let floor = (HESSIAN_CLAMP * sym.trace() / 3.0).max(f64::MIN_POSITIVE);
    let eig = SymmetricEigen::new(sym);
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let repaired = eig.eigenvectors * Matrix3::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    let repaired = (repaired + repaired.transpose()) * 0.5;
    let chol = repaired
        .cholesky()
        .ok_or_else(|| Error::Singular("Hessian is not positive definite after clamping".into()))?;
    Ok(chol.l().transpose())
}

/// Per-edge data frozen for one outer iteration.
#[derive(Clone, Debug)]
pub struct EdgeResidual {
    pub edge: usize,
    pub omega_tilde: TangentVector,
    /// Normalized Hessian factor; `None` in isotropic mode.
    pub d_factor: Option<Matrix3<f64>>,
}

/// Whitening factors, one per edge, scaled so that `D^T D` has unit mean eigenvalue.
fn whitening_factors(g: &ViewGraph, mode: WeightMode) -> Result<Vec<Option<Matrix3<f64>>>> {
    match mode {
        WeightMode::Iso => Ok(vec![None; g.edges().len()]),
        WeightMode::Aniso => g
            .edges()
            .iter()
            .map(|e| {
                let h = e.hessian().ok_or_else(|| {
                    Error::Config(format!(
                        "anisotropic refinement needs a Hessian on edge ({}, {})",
                        e.i(),
                        e.j()
                    ))
                })?;
                let scale = (h.trace() / 3.0).sqrt();
                if !(scale > 0.0) {
                    return Err(Error::Config(format!(
                        "edge ({}, {}) has a zero Hessian",
                        e.i(),
                        e.j()
                    )));
                }
                Ok(Some(hessian_factor(h)? / scale))
            })
            .collect(),
    }
}

/// Linear map from a right-frame residual to the whitened residual.
fn whitening(d: &Option<Matrix3<f64>>, r_j: &Matrix3<f64>) -> Matrix3<f64> {
    match d {
        Some(d) => d * r_j,
        None => Matrix3::identity(),
    }
}

fn residuals(g: &ViewGraph, r: &[Rotation], factors: &[Option<Matrix3<f64>>]) -> Vec<EdgeResidual> {
    g.edges()
        .iter()
        .zip(factors)
        .enumerate()
        .map(|(k, (e, d))| EdgeResidual {
            edge: k,
            omega_tilde: residual_tangent(e, &r[e.i()], &r[e.j()]),
            d_factor: *d,
        })
        .collect()
}

fn whitened_norm(g: &ViewGraph, res: &EdgeResidual, r: &[Rotation]) -> f64 {
    let j = g.edges()[res.edge].j();
    (whitening(&res.d_factor, r[j].matrix()) * res.omega_tilde).norm()
}

/// `sum rho(|s_ij|)` at the given rotations.
pub fn robust_cost(g: &ViewGraph, r: &RotationStack, cfg: &RobustConfig) -> Result<f64> {
    let rots = r.to_rotations()?;
    let factors = whitening_factors(g, cfg.mode)?;
    Ok(cost_of(g, &rots, &factors, cfg.tau_deg.to_radians()))
}

fn cost_of(g: &ViewGraph, r: &[Rotation], factors: &[Option<Matrix3<f64>>], tau: f64) -> f64 {
    residuals(g, r, factors)
        .iter()
        .map(|res| geman_mcclure(whitened_norm(g, res, r), tau))
        .sum()
}

/// Solves `min sum_e w_e |W_e (w_e + d_i - d_j)|^2` with `d_0 = 0`.
///
/// Returns one increment per camera.
pub fn weighted_gauss_newton_step(
    g: &ViewGraph,
    r: &[Rotation],
    res: &[EdgeResidual],
    weights: &[f64],
) -> Result<Vec<Vector3<f64>>> {
    let n = g.n();
    if n <= 1 {
        return Ok(vec![Vector3::zeros(); n]);
    }
    // Camera c > 0 occupies rows 3(c-1)..3c; camera 0 is pinned.
    let slot = |c: usize| if c == 0 { None } else { Some(3 * (c - 1)) };
    let dim = 3 * (n - 1);
    let mut coo = CooMatrix::<f64>::new(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);

    for (res, &w) in res.iter().zip(weights) {
        let e = &g.edges()[res.edge];
        let a = whitening(&res.d_factor, r[e.j()].matrix());
        let lambda = (a.transpose() * a) * w;
        let lw = lambda * res.omega_tilde;
        // d/dd_i = +1, d/dd_j = -1.
        for (c, sign) in [(e.i(), 1.0), (e.j(), -1.0)] {
            if let Some(sc) = slot(c) {
                coo.push_matrix(sc, sc, &lambda);
                let mut seg = rhs.fixed_rows_mut::<3>(sc);
                seg -= lw * sign;
            }
        }
        if let (Some(si), Some(sj)) = (slot(e.i()), slot(e.j())) {
            coo.push_matrix(si, sj, &(-lambda));
            coo.push_matrix(sj, si, &(-lambda));
        }
    }

    let csc = CscMatrix::from(&coo);
    let chol = CscCholesky::factor(&csc).map_err(|_| singular_error(g, weights))?;
    let sol: DMatrix<f64> = chol.solve(&rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(singular_error(g, weights));
    }
    let mut out = vec![Vector3::zeros(); n];
    for (c, d) in out.iter_mut().enumerate().skip(1) {
        *d = Vector3::new(sol[(3 * (c - 1), 0)], sol[(3 * (c - 1) + 1, 0)], sol[(3 * (c - 1) + 2, 0)]);
    }
    Ok(out)
}

/// Weights this small are treated as cut edges when diagnosing a singular system.
const NEGLIGIBLE_WEIGHT: f64 = 1e-12;

fn singular_error(g: &ViewGraph, weights: &[f64]) -> Error {
    let mut uf = UnionFind::<usize>::new(g.n());
    for (e, &w) in g.edges().iter().zip(weights) {
        if w > NEGLIGIBLE_WEIGHT {
            uf.union(e.i(), e.j());
        }
    }
    let labels = uf.into_labeling();
    let mut sizes = std::collections::BTreeMap::<usize, usize>::new();
    for l in labels {
        *sizes.entry(l).or_default() += 1;
    }
    let mut sizes: Vec<usize> = sizes.into_values().collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    Error::Singular(format!(
        "normal equations are singular; edges with non-negligible weight split the cameras into components of sizes {sizes:?}"
    ))
}

fn apply_step(r: &[Rotation], delta: &[Vector3<f64>], alpha: f64) -> Vec<Rotation> {
    r.iter()
        .zip(delta)
        .map(|(ri, d)| {
            let m = ri.matrix() * exp_so3(&(d * alpha)).matrix();
            // Re-orthonormalize to keep round-off from accumulating.
            crate::so3::project_so3_finite(&m)
        })
        .collect()
}

/// IRLS refinement of `r0` against the Geman-McClure cost.
///
/// The trace has one row per iteration starting with the initial cost at
/// iteration 0; `max_step_deg` is the largest accepted camera increment.
pub fn robust_refine(g: &ViewGraph, r0: &RotationStack, cfg: &RobustConfig) -> Result<SolveResult> {
    cfg.validate()?;
    if r0.len() != g.n() {
        return Err(Error::InvalidArgument(format!(
            "initial stack has {} blocks, graph has {} vertices",
            r0.len(),
            g.n()
        )));
    }
    g.ensure_connected()?;
    let factors = whitening_factors(g, cfg.mode)?;
    let tau = cfg.tau_deg.to_radians();
    let mut r = r0.to_rotations()?;
    let mut cost = cost_of(g, &r, &factors, tau);
    let mut trace = vec![SweepRecord {
        sweep: 0,
        objective: cost,
        max_step_deg: 0.0,
        halvings: 0,
    }];
    let mut warnings = Vec::new();
    let mut status = SolveStatus::MaxSweepsReached;

    for iter in 1..=cfg.max_outer_iters {
        let res = residuals(g, &r, &factors);
        let weights: Vec<f64> = res
            .iter()
            .map(|e| irls_weight(whitened_norm(g, e, &r), tau))
            .collect();
        let delta = weighted_gauss_newton_step(g, &r, &res, &weights)?;

        let mut alpha = 1.0;
        let mut halvings = 0;
        let accepted = loop {
            let cand = apply_step(&r, &delta, alpha);
            let c = cost_of(g, &cand, &factors, tau);
            if c <= cost {
                break Some((cand, c));
            }
            if halvings == MAX_HALVINGS {
                break None;
            }
            alpha *= 0.5;
            halvings += 1;
        };
        let Some((cand, c)) = accepted else {
            let msg = format!("robust cost did not decrease after {MAX_HALVINGS} halvings; stopping");
            log::warn!("{msg}");
            warnings.push(msg);
            status = SolveStatus::Converged;
            break;
        };
        let max_step = delta
            .iter()
            .map(|d| (d.norm() * alpha).to_degrees())
            .fold(0.0, f64::max);
        r = cand;
        cost = c;
        trace.push(SweepRecord {
            sweep: iter,
            objective: cost,
            max_step_deg: max_step,
            halvings,
        });
        if max_step < cfg.step_tol_deg {
            status = SolveStatus::Converged;
            break;
        }
    }

    Ok(SolveResult {
        rotations: RotationStack::from_rotations(&r),
        sweeps_run: trace.len() - 1,
        trace,
        status,
        warnings,
    })
}

/// `iter,robust_cost,max_step_deg,halvings` with one row per iteration.
pub fn robust_trace_csv(result: &SolveResult) -> String {
    let mut out = String::from("iter,robust_cost,max_step_deg,halvings\n");
    for r in &result.trace {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{}\n",
            r.sweep, r.objective, r.max_step_deg, r.halvings
        ));
    }
    out
}
