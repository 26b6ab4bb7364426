use std::collections::VecDeque;

use petgraph::unionfind::UnionFind;

use super::ViewGraph;
use crate::error::{Error, Result};
use crate::stack::RotationStack;

/// A spanning tree as indices into `ViewGraph::edges`, rooted at `root`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanningTree {
    pub root: usize,
    pub edges: Vec<usize>,
}

/// Minimum spanning tree by Kruskal's algorithm.
///
/// With Hessians on every edge the weight is `-tr(H)` so the most certain
/// measurements are preferred; otherwise all weights are 1. Ties are broken by
/// the `(i, j)` pair, so the result is deterministic.
pub fn spanning_tree(g: &ViewGraph) -> Result<SpanningTree> {
    g.ensure_connected()?;
    let use_hessian = g.has_all_hessians();
    let mut order: Vec<(f64, usize, usize, usize)> = g
        .edges()
        .iter()
        .enumerate()
        .map(|(idx, e)| {
            let w = match (use_hessian, e.hessian()) {
                (true, Some(h)) => -h.trace(),
                _ => 1.0,
            };
            (w, e.i(), e.j(), idx)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut uf = UnionFind::<usize>::new(g.n());
    let mut edges = Vec::with_capacity(g.n().saturating_sub(1));
    for (_, i, j, idx) in order {
        if uf.union(i, j) {
            edges.push(idx);
            if edges.len() + 1 == g.n() {
                break;
            }
        }
    }
    Ok(SpanningTree { root: 0, edges })
}

/// Propagates rotations from the root along the tree so that every tree edge
/// is satisfied exactly: `R_j = R_ij R_i`, or `R_i = R_ij^T R_j` when the edge
/// is walked against its orientation. The root gets the identity.
pub fn chain_init(g: &ViewGraph, tree: &SpanningTree) -> Result<RotationStack> {
    let n = g.n();
    if tree.root >= n {
        return Err(Error::InvalidArgument(format!(
            "tree root {} outside [0, {n})",
            tree.root
        )));
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &idx in &tree.edges {
        let e = g.edges().get(idx).ok_or_else(|| {
            Error::InvalidArgument(format!("tree references missing edge index {idx}"))
        })?;
        adj[e.i()].push(idx);
        adj[e.j()].push(idx);
    }

    let mut stack = RotationStack::zeros(n);
    let mut visited = vec![false; n];
    let mut queue = VecDeque::new();
    stack.set_block(tree.root, nalgebra::Matrix3::identity());
    visited[tree.root] = true;
    queue.push_back(tree.root);
    while let Some(v) = queue.pop_front() {
        for &idx in &adj[v] {
            let e = &g.edges()[idx];
            let (child, r) = if e.i() == v {
                (e.j(), e.rel().matrix() * stack.block(v))
            } else {
                (e.i(), e.rel().matrix().transpose() * stack.block(v))
            };
            if !visited[child] {
                visited[child] = true;
                stack.set_block(child, r);
                queue.push_back(child);
            }
        }
    }
    if let Some(missing) = visited.iter().position(|v| !v) {
        return Err(Error::InvalidArgument(format!(
            "spanning tree does not reach vertex {missing}"
        )));
    }
    Ok(stack)
}
