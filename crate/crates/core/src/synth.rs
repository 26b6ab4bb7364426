//! Synthetic view graphs with known ground truth.
//!
//! Measurements follow the crate's Hessian convention:
//! `R_ij = exp(s d) R_j R_i^T` with `d ~ N(0, H^-1)`, so the Hessian attached
//! to an edge is the precision of the noise that produced it (before any
//! deliberate Hessian perturbation).

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{exp_so3, random_rotation, random_unit_vector, Rotation};
use crate::stack::RotationStack;
use crate::view_graph::{EdgeMeasurement, ViewGraph};

/// Edge-set redraws attempted before a general scene is declared disconnected.
pub const MAX_REDRAWS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Loop,
    General,
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneKind::Loop => "loop",
            SceneKind::General => "general",
        })
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loop" => Ok(SceneKind::Loop),
            "general" => Ok(SceneKind::General),
            _ => Err(Error::InvalidArgument(format!("unknown scene kind '{s}'"))),
        }
    }
}

/// Everything needed to regenerate a scene bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub n: usize,
    /// Edge probability for general scenes; drawn from U(0.1, 1) when unset.
    pub p: Option<f64>,
    pub noise_scale: f64,
    /// Bounds of `a ~ U(a_lo, a_hi)`.
    pub a_lo: f64,
    pub a_hi: f64,
    /// `b ~ U(b_lo_mult a, b_hi_mult a)`.
    pub b_lo_mult: f64,
    pub b_hi_mult: f64,
    /// Std. dev. in degrees of the eigenvector rotation applied to reported Hessians.
    pub perturb_sigma_deg: f64,
    /// Eigenvalues of reported Hessians gain `U(0, gamma * mean eigenvalue)`.
    pub perturb_gamma: f64,
    /// Fraction of edges whose measurement is replaced by a Haar-random rotation.
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            kind: SceneKind::General,
            n: 100,
            p: None,
            noise_scale: 1.0,
            a_lo: 10.0,
            a_hi: 100.0,
            b_lo_mult: 2.0,
            b_hi_mult: 100.0,
            perturb_sigma_deg: 0.0,
            perturb_gamma: 0.0,
            outlier_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 2 {
            return bad(format!("a scene needs at least 2 cameras, got {}", self.n));
        }
        if let Some(p) = self.p {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("edge probability must be in (0, 1], got {p}"));
            }
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return bad("noise_scale must be finite and non-negative".into());
        }
        if !(self.a_lo > 0.0 && self.a_lo <= self.a_hi) {
            return bad("Hessian bounds need 0 < a_lo <= a_hi".into());
        }
        if !(self.b_lo_mult >= 1.0 && self.b_lo_mult <= self.b_hi_mult) {
            return bad("Hessian multipliers need 1 <= b_lo_mult <= b_hi_mult".into());
        }
        if !(self.perturb_sigma_deg >= 0.0 && self.perturb_gamma >= 0.0) {
            return bad("perturbation parameters must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return bad("outlier_fraction must be in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub graph: ViewGraph,
    pub ground_truth: RotationStack,
    /// Edge probability actually used (general scenes).
    pub p: Option<f64>,
    /// Indices into `graph.edges()` of the corrupted measurements.
    pub outlier_edges: Vec<usize>,
}

/// Draws `V diag(l) V^T` with `a ~ U(a_lo, a_hi)`, `b ~ U(2a, 100a)` and `l_k ~ U(a, b)`.
pub fn sample_hessian<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    sample_hessian_with(rng, &SceneSpec::default())
}

pub fn sample_hessian_with<R: Rng + ?Sized>(rng: &mut R, spec: &SceneSpec) -> Matrix3<f64> {
    let a = uniform(rng, spec.a_lo, spec.a_hi);
    let b = uniform(rng, spec.b_lo_mult * a, spec.b_hi_mult * a);
    let l = Vector3::from_fn(|_, _| uniform(rng, a, b));
    let v = random_rotation(rng).into_inner();
    symmetrize(&(v * Matrix3::from_diagonal(&l) * v.transpose()))
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Rotates the eigenvectors of `h` by `N(0, sigma)` degrees about a random
/// axis and raises each eigenvalue by `U(0, gamma * mean eigenvalue)`.
pub fn perturb_hessian<R: Rng + ?Sized>(
    h: &Matrix3<f64>,
    sigma_deg: f64,
    gamma: f64,
    rng: &mut R,
) -> Matrix3<f64> {
    if sigma_deg == 0.0 && gamma == 0.0 {
        return *h;
    }
    let eig = SymmetricEigen::new(symmetrize(h));
    let axis = random_unit_vector(rng);
    let theta = if sigma_deg > 0.0 {
        Normal::new(0.0, sigma_deg).expect("positive sigma").sample(rng).to_radians()
    } else {
        0.0
    };
    let v = exp_so3(&(axis * theta)).matrix() * eig.eigenvectors;
    let mean = eig.eigenvalues.mean();
    let l = eig.eigenvalues.map(|l| l + uniform(rng, 0.0, gamma * mean));
    symmetrize(&(v * Matrix3::from_diagonal(&l) * v.transpose()))
}

/// `exp(s d) R` with `d ~ N(0, h^-1)`, drawn as `d = L^-T z` for `h = L L^T`.
pub fn apply_noise<R: Rng + ?Sized>(
    r_true_rel: &Rotation,
    h: &Matrix3<f64>,
    noise_scale: f64,
    rng: &mut R,
) -> Result<Rotation> {
    let z = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
    if noise_scale == 0.0 {
        return Ok(*r_true_rel);
    }
    let chol = symmetrize(h)
        .cholesky()
        .ok_or_else(|| Error::Generation("noise Hessian is not positive definite".into()))?;
    let d = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor has a positive diagonal");
    Ok(exp_so3(&(d * noise_scale)) * *r_true_rel)
}

/// Builds one edge: Hessian, noisy measurement, reported (possibly perturbed) Hessian.
fn make_edge<R: Rng + ?Sized>(
    spec: &SceneSpec,
    gt: &[Rotation],
    i: usize,
    j: usize,
    rng: &mut R,
) -> Result<EdgeMeasurement> {
    let h = sample_hessian_with(rng, spec);
    let rel = gt[j] * gt[i].transpose();
    let noisy = apply_noise(&rel, &h, spec.noise_scale, rng)?;
    let reported = perturb_hessian(&h, spec.perturb_sigma_deg, spec.perturb_gamma, rng);
    EdgeMeasurement::new(i, j, noisy, Some(reported))
}

/// Cameras on a circle linked to their two neighbours.
///
/// All cameras share one Haar-random orientation. Orientations that turn with
/// the circle make coordinate descent from zeros crawl: each sweep seeds
/// several chained segments at the identity and the seams between them only
/// diffuse around the loop.
pub fn gen_loop_scene<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<SyntheticScene> {
    spec.validate()?;
    if spec.kind != SceneKind::Loop {
        return Err(Error::Config("gen_loop_scene needs kind = loop".into()));
    }
    let n = spec.n;
    let base = random_rotation(rng);
    let gt = vec![base; n];
    let mut g = ViewGraph::new(n);
    for k in 0..n {
        let next = (k + 1) % n;
        if n == 2 && k == 1 {
            break;
        }
        g.add_edge(make_edge(spec, &gt, k, next, rng)?)?;
    }
    finish(spec, g, gt, None, rng)
}

/// Haar-random cameras with each pair observed independently with probability `p`.
pub fn gen_general_scene<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<SyntheticScene> {
    spec.validate()?;
    if spec.kind != SceneKind::General {
        return Err(Error::Config("gen_general_scene needs kind = general".into()));
    }
    let n = spec.n;
    let p = match spec.p {
        Some(p) => p,
        None => rng.random_range(0.1..1.0),
    };
    let gt: Vec<Rotation> = (0..n).map(|_| random_rotation(rng)).collect();

    let mut pairs = Vec::new();
    let mut connected = false;
    for _ in 0..MAX_REDRAWS {
        pairs.clear();
        let mut probe = ViewGraph::new(n);
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(p) {
                    pairs.push((i, j));
                    probe.add_edge(EdgeMeasurement::new(i, j, Rotation::identity(), None)?)?;
                }
            }
        }
        if probe.is_connected() {
            connected = true;
            break;
        }
    }
    if !connected {
        return Err(Error::Generation(format!(
            "no connected edge set for n = {n}, p = {p} after {MAX_REDRAWS} draws"
        )));
    }

    let mut g = ViewGraph::new(n);
    for &(i, j) in &pairs {
        g.add_edge(make_edge(spec, &gt, i, j, rng)?)?;
    }
    finish(spec, g, gt, Some(p), rng)
}

/// Replaces the requested fraction of measurements with Haar-random rotations.
fn finish<R: Rng + ?Sized>(
    spec: &SceneSpec,
    g: ViewGraph,
    gt: Vec<Rotation>,
    p: Option<f64>,
    rng: &mut R,
) -> Result<SyntheticScene> {
    let m = g.edges().len();
    let count = (spec.outlier_fraction * m as f64).round() as usize;
    let mut outliers: Vec<usize> = if count > 0 {
        index::sample(rng, m, count).into_vec()
    } else {
        Vec::new()
    };
    outliers.sort_unstable();
    let graph = if outliers.is_empty() {
        g
    } else {
        let mut edges = g.edges().to_vec();
        for &k in &outliers {
            let e = &edges[k];
            edges[k] = EdgeMeasurement::new(e.i(), e.j(), random_rotation(rng), e.hessian().copied())?;
        }
        ViewGraph::from_edges(g.n(), edges)?
    };
    Ok(SyntheticScene {
        graph,
        ground_truth: RotationStack::from_rotations(&gt),
        p,
        outlier_edges: outliers,
    })
}

/// Generates the scene described by `spec` from its own seed.
pub fn generate(spec: &SceneSpec) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        SceneKind::Loop => gen_loop_scene(spec, &mut rng),
        SceneKind::General => gen_general_scene(spec, &mut rng),
    }
}

/// Record written next to generated scene files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub spec: SceneSpec,
    pub resolved_p: Option<f64>,
    pub edges: usize,
    pub outlier_edges: Vec<usize>,
    pub version: String,
}

impl SceneManifest {
    pub fn new(spec: &SceneSpec, scene: &SyntheticScene) -> Self {
        SceneManifest {
            spec: spec.clone(),
            resolved_p: scene.p,
            edges: scene.graph.edges().len(),
            outlier_edges: scene.outlier_edges.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}
