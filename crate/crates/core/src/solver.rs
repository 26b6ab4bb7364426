//! Anisotropic coordinate descent (ACD).
//!
//! The objective is `-<N, R R^T>` over stacks of rotations. Fixing every
//! camera except `k`, the objective is linear in `R_k` and its exact
//! minimizer over SO(3) is the projection of `N_k^T R`. Sweeps visit the
//! cameras in a fresh random order and update in place.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix3};
use petgraph::unionfind::UnionFind;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{self, project_so3_finite, random_rotation, Rotation};
use crate::stack::RotationStack;
use crate::view_graph::{ConnectionBlocks, WeightMode};

/// Starting point of a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Zeros,
    Identity,
    Random,
    /// Minimum spanning tree followed by rotation chaining.
    Mst,
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::Zeros => "zeros",
            InitKind::Identity => "identity",
            InitKind::Random => "random",
            InitKind::Mst => "mst",
        })
    }
}

impl FromStr for InitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(InitKind::Zeros),
            "identity" => Ok(InitKind::Identity),
            "random" => Ok(InitKind::Random),
            "mst" => Ok(InitKind::Mst),
            other => Err(Error::InvalidArgument(format!(
                "unknown initialization {other:?} (expected zeros, identity, random or mst)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub init: InitKind,
    pub max_sweeps: usize,
    /// Stop when the relative objective decrease over a sweep falls below this...
    pub objective_tol: f64,
    /// ...and no camera moved by more than this many degrees.
    pub step_tol_deg: f64,
    pub shuffle_seed: u64,
    pub mode: WeightMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            init: InitKind::Zeros,
            max_sweeps: 1000,
            objective_tol: 1e-12,
            step_tol_deg: 1e-7,
            shuffle_seed: 0,
            mode: WeightMode::Aniso,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 {
            return Err(Error::Config("max_sweeps must be at least 1".into()));
        }
        if !(self.objective_tol > 0.0) || !(self.step_tol_deg > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxSweepsReached,
}

/// One row of a solver or refinement trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub objective: f64,
    pub max_step_deg: f64,
    /// Step halvings taken (robust refinement only).
    pub halvings: u32,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub rotations: RotationStack,
    pub trace: Vec<SweepRecord>,
    pub sweeps_run: usize,
    pub status: SolveStatus,
    pub warnings: Vec<String>,
}

impl SolveResult {
    pub fn objective_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.objective).collect()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.trace.last().map(|r| r.objective)
    }

    /// `sweep,objective,max_step_deg` with one row per sweep.
    pub fn sweep_trace_csv(&self) -> String {
        let mut out = String::from("sweep,objective,max_step_deg\n");
        for r in &self.trace {
            out.push_str(&format!(
                "{},{:.16e},{:.16e}\n",
                r.sweep, r.objective, r.max_step_deg
            ));
        }
        out
    }
}

/// `-<N, R R^T>` evaluated edge by edge.
pub fn objective(nb: &ConnectionBlocks, r: &RotationStack) -> f64 {
    let mut sum = 0.0;
    for (i, j, block) in nb.edge_blocks() {
        let rel = r.block(*j) * r.block(*i).transpose();
        sum += block.dot(&rel);
    }
    -2.0 * sum
}

/// `N_k^T R`, the linear coefficient of `R_k` in the objective.
#[inline]
pub fn update_coefficient(nb: &ConnectionBlocks, r: &RotationStack, k: usize) -> Matrix3<f64> {
    let mut g = Matrix3::zeros();
    for (j, c) in nb.neighbors(k) {
        g += c * r.block(*j);
    }
    g
}

/// Exact minimizer over `R_k` with the other cameras fixed.
///
/// A camera without edges (or whose neighbors are all still zero) gets the identity.
pub fn coordinate_update(nb: &ConnectionBlocks, r: &RotationStack, k: usize) -> Rotation {
    project_so3_finite(&update_coefficient(nb, r, k))
}

/// Random permutation of `0..n` for a given sweep.
pub fn sweep_order(seed: u64, sweep: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sweep as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn ensure_connected(nb: &ConnectionBlocks) -> Result<()> {
    let n = nb.n();
    let mut uf = UnionFind::<usize>::new(n);
    for (i, j, _) in nb.edge_blocks() {
        uf.union(*i, *j);
    }
    let mut sizes = std::collections::BTreeMap::new();
    for v in 0..n {
        *sizes.entry(uf.find(v)).or_insert(0usize) += 1;
    }
    if sizes.len() <= 1 {
        Ok(())
    } else {
        Err(Error::Disconnected {
            component_sizes: sizes.into_values().collect(),
        })
    }
}

fn step_angle_deg(old: &Matrix3<f64>, new: &Rotation) -> f64 {
    if Rotation::is_valid(old, 1e-6) {
        so3::rotation_angle(&Rotation::from_matrix_unchecked(old.transpose() * new.matrix()))
            .to_degrees()
    } else {
        // First placement of a camera that started as a zero block.
        180.0
    }
}

/// Runs coordinate descent sweeps from `init` until the stopping rule holds.
pub fn acd_solve(
    nb: &ConnectionBlocks,
    cfg: &SolverConfig,
    init: RotationStack,
) -> Result<SolveResult> {
    cfg.validate()?;
    let n = nb.n();
    if init.len() != n {
        return Err(Error::InvalidArgument(format!(
            "initial stack has {} blocks, graph has {n} vertices",
            init.len()
        )));
    }
    ensure_connected(nb)?;

    let mut warnings = Vec::new();
    for k in (0..n).filter(|&k| nb.neighbors(k).is_empty()) {
        let msg = format!("camera {k} has no edges; fixed to the identity");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut r = init;
    let mut prev = objective(nb, &r);
    let mut trace = Vec::new();
    let mut status = SolveStatus::MaxSweepsReached;

    for sweep in 1..=cfg.max_sweeps {
        let mut max_step: f64 = 0.0;
        for k in sweep_order(cfg.shuffle_seed, sweep, n) {
            let updated = coordinate_update(nb, &r, k);
            max_step = max_step.max(step_angle_deg(r.block(k), &updated));
            r.set_block(k, updated.into_inner());
        }
        let obj = objective(nb, &r);
        trace.push(SweepRecord {
            sweep,
            objective: obj,
            max_step_deg: max_step,
            halvings: 0,
        });
        let rel_decrease = (prev - obj) / obj.abs().max(f64::MIN_POSITIVE);
        prev = obj;
        if rel_decrease < cfg.objective_tol && max_step < cfg.step_tol_deg {
            status = SolveStatus::Converged;
            break;
        }
    }

    Ok(SolveResult {
        rotations: r,
        sweeps_run: trace.len(),
        trace,
        status,
        warnings,
    })
}

/// Zero, identity or Haar-random starting stacks.
///
/// The spanning-tree start needs the graph; see [`crate::view_graph::chain_init`].
pub fn make_init(kind: InitKind, n: usize, seed: u64) -> Result<RotationStack> {
    match kind {
        InitKind::Zeros => Ok(RotationStack::zeros(n)),
        InitKind::Identity => Ok(RotationStack::identity(n)),
        InitKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rots: Vec<_> = (0..n).map(|_| random_rotation(&mut rng)).collect();
            Ok(RotationStack::from_rotations(&rots))
        }
        InitKind::Mst => Err(Error::InvalidArgument(
            "the mst initialization is built from the graph by chain_init".into(),
        )),
    }
}

/// Closed-form block update of the semidefinite relaxation restricted to
/// camera `k`, used to cross-check [`coordinate_update`].
///
/// With `W` the k-th block column of the isotropic `N` (k-th block row
/// removed) and `B = R_~k R_~k^T`, the candidate is
/// `S = s B W ((W^T B W)^{1/2})^+` for `s = +1` or `s = -1`; the sign with the
/// larger `<W, S>` is returned. The result is `3(n-1) x 3`, rows ordered by
/// camera index skipping `k`.
pub fn bcd_oracle_update(nb_iso: &ConnectionBlocks, r: &RotationStack, k: usize) -> DMatrix<f64> {
    let n = nb_iso.n();
    let others: Vec<usize> = (0..n).filter(|&j| j != k).collect();
    let m = 3 * others.len();

    let mut w = DMatrix::<f64>::zeros(m, 3);
    let mut rk = DMatrix::<f64>::zeros(m, 3);
    for (row, &j) in others.iter().enumerate() {
        if let Some(b) = nb_iso.block(j, k) {
            w.view_mut((3 * row, 0), (3, 3)).copy_from(&b);
        }
        rk.view_mut((3 * row, 0), (3, 3)).copy_from(r.block(j));
    }
    let b = &rk * rk.transpose();
    let bw = &b * &w;
    let x = w.transpose() * &bw;
    let x = (&x + x.transpose()) * 0.5;

    let eig = x.symmetric_eigen();
    let tol = eig.eigenvalues.amax().max(0.0) * 1e-12;
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| {
        if l > tol {
            1.0 / l.sqrt()
        } else {
            0.0
        }
    }));
    let pinv_sqrt = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();

    let plus = &bw * pinv_sqrt;
    let minus = -&plus;
    if w.dot(&plus) >= w.dot(&minus) {
        plus
    } else {
        minus
    }
}
