//! Text formats for view graphs and absolute rotations.
//!
//! ```text
//! VGRAPH 1 <n>
//! EDGE <i> <j> <r11 r12 r13 r21 ... r33> [H <h11 ... h33>]
//! ```
//!
//! Rotation files hold one `ROT <i> <r11 ... r33>` line per camera. Matrices
//! are row-major, `#` starts a comment and floats are written with 17
//! significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix3;

use super::{EdgeMeasurement, ViewGraph};
use crate::error::{Error, Result};
use crate::so3::{project_so3, Rotation};
use crate::stack::RotationStack;

/// Rotations farther than this from SO(3) are rejected instead of re-projected.
pub const ROTATION_REPAIR_TOL: f64 = 1e-6;

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_view_graph(path: impl AsRef<Path>) -> Result<ViewGraph> {
    let path = path.as_ref();
    parse_view_graph(&read(path)?, path)
}

pub fn save_view_graph(g: &ViewGraph, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &format_view_graph(g))
}

pub fn load_rotations(path: impl AsRef<Path>) -> Result<BTreeMap<usize, Rotation>> {
    let path = path.as_ref();
    parse_rotations(&read(path)?, path)
}

pub fn save_rotations(stack: &RotationStack, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &format_rotations(stack))
}

fn push_matrix(out: &mut String, m: &Matrix3<f64>) {
    for r in 0..3 {
        for c in 0..3 {
            let _ = write!(out, " {:.16e}", m[(r, c)]);
        }
    }
}

pub fn format_view_graph(g: &ViewGraph) -> String {
    let mut out = format!("VGRAPH 1 {}\n", g.n());
    for e in g.edges() {
        let _ = write!(out, "EDGE {} {}", e.i(), e.j());
        push_matrix(&mut out, e.rel().matrix());
        if let Some(h) = e.hessian() {
            out.push_str(" H");
            push_matrix(&mut out, h);
        }
        out.push('\n');
    }
    out
}

pub fn format_rotations(stack: &RotationStack) -> String {
    let mut out = String::new();
    for (i, b) in stack.blocks().iter().enumerate() {
        let _ = write!(out, "ROT {i}");
        push_matrix(&mut out, b);
        out.push('\n');
    }
    out
}

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(k, line)| {
        let line = line.split('#').next().unwrap_or("");
        let toks: Vec<&str> = line.split_whitespace().collect();
        (!toks.is_empty()).then_some((k + 1, toks))
    })
}

struct LineCtx<'a> {
    path: &'a Path,
    line: usize,
}

impl LineCtx<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn usize(&self, tok: &str, what: &str) -> Result<usize> {
        tok.parse()
            .map_err(|_| self.err(format!("invalid {what} {tok:?}")))
    }

    fn matrix(&self, toks: &[&str], what: &str) -> Result<Matrix3<f64>> {
        if toks.len() != 9 {
            return Err(self.err(format!("{what} needs 9 values, found {}", toks.len())));
        }
        let mut vals = [0.0; 9];
        for (v, t) in vals.iter_mut().zip(toks) {
            *v = t
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| self.err(format!("invalid number {t:?} in {what}")))?;
        }
        Ok(Matrix3::from_row_slice(&vals))
    }

    fn rotation(&self, toks: &[&str]) -> Result<Rotation> {
        let m = self.matrix(toks, "rotation")?;
        if Rotation::is_valid(&m, 1e-12) {
            return Ok(Rotation::from_matrix_unchecked(m));
        }
        if !Rotation::is_valid(&m, ROTATION_REPAIR_TOL) {
            return Err(self.err("rotation is off SO(3) by more than 1e-6"));
        }
        project_so3(&m).map_err(|e| self.err(e.to_string()))
    }
}

pub fn parse_view_graph(text: &str, path: &Path) -> Result<ViewGraph> {
    let mut lines = content_lines(text);
    let (line, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "empty view graph file".into(),
    })?;
    let ctx = LineCtx { path, line };
    if header.len() != 3 || header[0] != "VGRAPH" {
        return Err(ctx.err("expected header `VGRAPH 1 <n>`"));
    }
    if header[1] != "1" {
        return Err(ctx.err(format!("unsupported format version {}", header[1])));
    }
    let n = ctx.usize(header[2], "vertex count")?;
    let mut g = ViewGraph::new(n);

    for (line, toks) in lines {
        let ctx = LineCtx { path, line };
        if toks[0] != "EDGE" {
            return Err(ctx.err(format!("unknown record {:?}", toks[0])));
        }
        if toks.len() != 12 && toks.len() != 22 {
            return Err(ctx.err(format!(
                "EDGE line needs 11 or 21 fields after the tag, found {}",
                toks.len() - 1
            )));
        }
        let i = ctx.usize(toks[1], "vertex id")?;
        let j = ctx.usize(toks[2], "vertex id")?;
        if i >= n || j >= n {
            return Err(ctx.err(format!("vertex id out of range for n = {n}")));
        }
        let rel = ctx.rotation(&toks[3..12])?;
        let hessian = if toks.len() == 22 {
            if toks[12] != "H" {
                return Err(ctx.err(format!("expected `H`, found {:?}", toks[12])));
            }
            Some(ctx.matrix(&toks[13..22], "Hessian")?)
        } else {
            None
        };
        let e = EdgeMeasurement::new(i, j, rel, hessian).map_err(|e| ctx.err(e.to_string()))?;
        g.add_edge(e).map_err(|e| ctx.err(e.to_string()))?;
    }
    Ok(g)
}

pub fn parse_rotations(text: &str, path: &Path) -> Result<BTreeMap<usize, Rotation>> {
    let mut out = BTreeMap::new();
    for (line, toks) in content_lines(text) {
        let ctx = LineCtx { path, line };
        if toks[0] != "ROT" || toks.len() != 11 {
            return Err(ctx.err("expected `ROT <i> <9 values>`"));
        }
        let i = ctx.usize(toks[1], "camera id")?;
        let r = ctx.rotation(&toks[2..11])?;
        if out.insert(i, r).is_some() {
            return Err(ctx.err(format!("duplicate camera id {i}")));
        }
    }
    Ok(out)
}

/// Orders a rotation map into a stack, requiring ids exactly `0..n`.
pub fn rotations_to_stack(map: &BTreeMap<usize, Rotation>, n: usize) -> Result<RotationStack> {
    if let Some(missing) = (0..n).find(|i| !map.contains_key(i)) {
        return Err(Error::InvalidArgument(format!("missing camera id {missing}")));
    }
    if map.len() != n {
        return Err(Error::InvalidArgument(format!(
            "expected {n} cameras, found {}",
            map.len()
        )));
    }
    Ok(RotationStack::from_rotations(&map.values().copied().collect::<Vec<_>>()))
}
