//! View graph data model and the symmetric connection-block matrix built from it.
//!
//! Conventions used throughout the crate:
//!
//! * an edge `(i, j)` with `i < j` carries the relative rotation `R_ij ~ R_j R_i^T`;
//! * the optional Hessian is the precision of a *left* perturbation of the
//!   measurement, `R_ij <- exp(d) R_ij` with `d ~ N(0, H^-1)`. This is the frame
//!   in which `-<(tr(H)/2 I - H) R_ij, R_j R_i^T>` is, to second order,
//!   `d^T H d / 2` plus a constant.

mod io;
mod tree;

pub use io::{
    format_rotations, format_view_graph, load_rotations, load_view_graph, parse_rotations,
    parse_view_graph, rotations_to_stack, save_rotations, save_view_graph,
};
pub use tree::{chain_init, spanning_tree, SpanningTree};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::Rotation;

/// Tolerance on Hessian symmetry and negative eigenvalues, relative to `max(1, |H|)`.
pub const HESSIAN_TOL: f64 = 1e-9;

/// Whether edge weights come from the Hessians or are all the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Iso,
    Aniso,
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightMode::Iso => "iso",
            WeightMode::Aniso => "aniso",
        })
    }
}

impl FromStr for WeightMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iso" => Ok(WeightMode::Iso),
            "aniso" => Ok(WeightMode::Aniso),
            other => Err(Error::InvalidArgument(format!(
                "unknown weight mode {other:?} (expected iso or aniso)"
            ))),
        }
    }
}

/// A measured relative rotation between two cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMeasurement {
    i: usize,
    j: usize,
    rel: Rotation,
    hessian: Option<Matrix3<f64>>,
}

impl EdgeMeasurement {
    /// Builds an edge measuring `rel ~ R_j R_i^T`.
    ///
    /// If `i > j` the edge is stored reversed: the rotation is transposed and
    /// the Hessian is moved into the frame of the reversed measurement.
    pub fn new(i: usize, j: usize, rel: Rotation, hessian: Option<Matrix3<f64>>) -> Result<Self> {
        if i == j {
            return Err(Error::InvalidArgument(format!(
                "self-loop edge ({i}, {i}) is not allowed"
            )));
        }
        let hessian = hessian.map(validate_hessian).transpose()?;
        if i < j {
            Ok(EdgeMeasurement { i, j, rel, hessian })
        } else {
            let rev = rel.transpose();
            let hessian = hessian.map(|h| rev.matrix() * h * rev.matrix().transpose());
            Ok(EdgeMeasurement {
                i: j,
                j: i,
                rel: rev,
                hessian: hessian.map(symmetrize),
            })
        }
    }

    #[inline]
    pub fn i(&self) -> usize {
        self.i
    }

    #[inline]
    pub fn j(&self) -> usize {
        self.j
    }

    #[inline]
    pub fn rel(&self) -> &Rotation {
        &self.rel
    }

    #[inline]
    pub fn hessian(&self) -> Option<&Matrix3<f64>> {
        self.hessian.as_ref()
    }

    pub fn without_hessian(&self) -> Self {
        EdgeMeasurement {
            hessian: None,
            ..self.clone()
        }
    }
}

fn symmetrize(h: Matrix3<f64>) -> Matrix3<f64> {
    (h + h.transpose()) * 0.5
}

fn validate_hessian(h: Matrix3<f64>) -> Result<Matrix3<f64>> {
    if !h.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("Hessian has non-finite entries".into()));
    }
    let scale = h.norm().max(1.0);
    let asym = (h - h.transpose()).amax();
    if asym > HESSIAN_TOL * scale {
        return Err(Error::InvalidArgument(format!(
            "Hessian is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let h = symmetrize(h);
    let min_eig = h.symmetric_eigenvalues().min();
    if min_eig < -HESSIAN_TOL * scale {
        return Err(Error::InvalidArgument(format!(
            "Hessian is not positive semidefinite (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(h)
}

/// Cameras plus undirected relative-rotation measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewGraph {
    n: usize,
    edges: Vec<EdgeMeasurement>,
    pairs: HashSet<(usize, usize)>,
}

impl ViewGraph {
    pub fn new(n: usize) -> Self {
        ViewGraph {
            n,
            edges: Vec::new(),
            pairs: HashSet::new(),
        }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = EdgeMeasurement>) -> Result<Self> {
        let mut g = ViewGraph::new(n);
        for e in edges {
            g.add_edge(e)?;
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, e: EdgeMeasurement) -> Result<()> {
        if e.j >= self.n {
            return Err(Error::InvalidArgument(format!(
                "edge ({}, {}) references a vertex outside [0, {})",
                e.i, e.j, self.n
            )));
        }
        if !self.pairs.insert((e.i, e.j)) {
            return Err(Error::InvalidArgument(format!(
                "duplicate edge ({}, {})",
                e.i, e.j
            )));
        }
        self.edges.push(e);
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn edges(&self) -> &[EdgeMeasurement] {
        &self.edges
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.pairs.contains(&(a.min(b), a.max(b)))
    }

    /// True when every edge carries a Hessian.
    pub fn has_all_hessians(&self) -> bool {
        self.edges.iter().all(|e| e.hessian.is_some())
    }

    /// Copy of the graph with every Hessian dropped.
    pub fn without_hessians(&self) -> Self {
        ViewGraph {
            n: self.n,
            edges: self.edges.iter().map(|e| e.without_hessian()).collect(),
            pairs: self.pairs.clone(),
        }
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|e| e.i == v || e.j == v).count()
    }

    /// Component label per vertex, labels numbered in order of first appearance.
    pub fn component_labels(&self) -> Vec<usize> {
        let mut uf = UnionFind::<usize>::new(self.n);
        for e in &self.edges {
            uf.union(e.i, e.j);
        }
        let mut label_of_root = vec![usize::MAX; self.n];
        let mut next = 0;
        (0..self.n)
            .map(|v| {
                let root = uf.find(v);
                if label_of_root[root] == usize::MAX {
                    label_of_root[root] = next;
                    next += 1;
                }
                label_of_root[root]
            })
            .collect()
    }

    /// Vertex lists of the connected components, ordered by smallest vertex.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let labels = self.component_labels();
        let count = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut comps = vec![Vec::new(); count];
        for (v, &l) in labels.iter().enumerate() {
            comps[l].push(v);
        }
        comps
    }

    pub fn is_connected(&self) -> bool {
        self.n > 0 && self.components().len() == 1
    }

    /// Errors with the component sizes unless the graph is connected.
    pub fn ensure_connected(&self) -> Result<()> {
        let comps = self.components();
        if comps.len() == 1 {
            Ok(())
        } else {
            Err(Error::Disconnected {
                component_sizes: comps.iter().map(Vec::len).collect(),
            })
        }
    }

    /// Subgraph induced by `vertices`, renumbered `0..vertices.len()` in the given order.
    pub fn induced_subgraph(&self, vertices: &[usize]) -> Result<ViewGraph> {
        let mut index = vec![usize::MAX; self.n];
        for (k, &v) in vertices.iter().enumerate() {
            index[v] = k;
        }
        let mut sub = ViewGraph::new(vertices.len());
        for e in &self.edges {
            let (a, b) = (index[e.i], index[e.j]);
            if a != usize::MAX && b != usize::MAX {
                // `new` re-canonicalizes if the renumbering flipped the order.
                sub.add_edge(EdgeMeasurement::new(a, b, e.rel, e.hessian)?)?;
            }
        }
        Ok(sub)
    }
}

/// `tr(H)/2 I - H`, the anisotropic weight of an edge.
pub fn anisotropic_weight(h: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let scale = h.norm().max(1.0);
    if (h - h.transpose()).amax() > HESSIAN_TOL * scale {
        return Err(Error::InvalidArgument(
            "anisotropic weight needs a symmetric Hessian".into(),
        ));
    }
    Ok(Matrix3::identity() * (0.5 * h.trace()) - h)
}

/// Sparse storage of the symmetric block matrix `N` with `N_ji = M_ij R_ij`
/// and `N_ij = (M_ij R_ij)^T` for each edge `i < j`. Diagonal blocks are zero.
#[derive(Clone, Debug)]
pub struct ConnectionBlocks {
    n: usize,
    // (i, j, N_ji) per canonical edge
    edge_blocks: Vec<(usize, usize, Matrix3<f64>)>,
    // adjacency[k] = (j, N_jk^T): the coordinate update for k is sum_j N_jk^T R_j
    adjacency: Vec<Vec<(usize, Matrix3<f64>)>>,
}

impl ConnectionBlocks {
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edge_blocks.len()
    }

    /// `(i, j, N_ji)` for every canonical edge `i < j`.
    pub fn edge_blocks(&self) -> &[(usize, usize, Matrix3<f64>)] {
        &self.edge_blocks
    }

    /// Neighbors of `k` with the coefficient `N_jk^T` applied to `R_j` in the update of `k`.
    #[inline]
    pub fn neighbors(&self, k: usize) -> &[(usize, Matrix3<f64>)] {
        &self.adjacency[k]
    }

    /// Block `N_ab`, or `None` when `(a, b)` is not an edge.
    pub fn block(&self, a: usize, b: usize) -> Option<Matrix3<f64>> {
        // adjacency[b] holds (a, N_ab^T)
        self.adjacency
            .get(b)?
            .iter()
            .find(|(j, _)| *j == a)
            .map(|(_, c)| c.transpose())
    }

    /// All stored directed blocks `(a, b, N_ab)`: two per edge, none on the diagonal.
    pub fn directed_blocks(&self) -> impl Iterator<Item = (usize, usize, Matrix3<f64>)> + '_ {
        self.edge_blocks
            .iter()
            .flat_map(|&(i, j, b)| [(j, i, b), (i, j, b.transpose())])
    }
}

/// Builds the connection blocks of `g`.
///
/// In [`WeightMode::Iso`] the Hessians are ignored and the blocks are exactly
/// the relative rotations.
pub fn assemble_blocks(g: &ViewGraph, mode: WeightMode) -> Result<ConnectionBlocks> {
    let mut edge_blocks = Vec::with_capacity(g.edges.len());
    let mut adjacency = vec![Vec::new(); g.n];
    for e in &g.edges {
        let block = match mode {
            WeightMode::Iso => *e.rel.matrix(),
            WeightMode::Aniso => {
                let h = e.hessian.as_ref().ok_or_else(|| {
                    Error::Config(format!(
                        "anisotropic mode needs a Hessian on every edge; edge ({}, {}) has none",
                        e.i, e.j
                    ))
                })?;
                anisotropic_weight(h)? * e.rel.matrix()
            }
        };
        edge_blocks.push((e.i, e.j, block));
        // G_i += N_ji^T R_j ; G_j += N_ij^T R_i = N_ji R_i
        adjacency[e.i].push((e.j, block.transpose()));
        adjacency[e.j].push((e.i, block));
    }
    Ok(ConnectionBlocks {
        n: g.n,
        edge_blocks,
        adjacency,
    })
}
