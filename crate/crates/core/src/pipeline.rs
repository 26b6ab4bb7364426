//! End-to-end pipelines: ACD alone, or ACD followed by isotropic or
//! anisotropic IRLS.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robust::{robust_refine, RobustConfig};
use crate::solver::{acd_solve, make_init, InitKind, SolveResult, SolverConfig};
use crate::stack::RotationStack;
use crate::view_graph::{assemble_blocks, chain_init, spanning_tree, ViewGraph, WeightMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobustKind {
    None,
    Irls,
    Airls,
}

impl RobustKind {
    /// Weighting used by the refinement stage, if any.
    pub fn mode(self) -> Option<WeightMode> {
        match self {
            RobustKind::None => None,
            RobustKind::Irls => Some(WeightMode::Iso),
            RobustKind::Airls => Some(WeightMode::Aniso),
        }
    }
}

impl fmt::Display for RobustKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RobustKind::None => "none",
            RobustKind::Irls => "irls",
            RobustKind::Airls => "airls",
        })
    }
}

impl FromStr for RobustKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RobustKind::None),
            "irls" => Ok(RobustKind::Irls),
            "airls" => Ok(RobustKind::Airls),
            _ => Err(Error::InvalidArgument(format!(
                "unknown robust stage '{s}' (expected none, irls or airls)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub solver: SolverConfig,
    pub robust: RobustKind,
    pub tau_deg: f64,
    pub max_outer_iters: usize,
    pub robust_step_tol_deg: f64,
    /// Solve each connected component on its own instead of failing.
    pub per_component: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let r = RobustConfig::default();
        PipelineConfig {
            solver: SolverConfig::default(),
            robust: RobustKind::None,
            tau_deg: r.tau_deg,
            max_outer_iters: r.max_outer_iters,
            robust_step_tol_deg: r.step_tol_deg,
            per_component: false,
        }
    }
}

impl PipelineConfig {
    pub fn robust_config(&self) -> Option<RobustConfig> {
        self.robust.mode().map(|mode| RobustConfig {
            tau_deg: self.tau_deg,
            max_outer_iters: self.max_outer_iters,
            step_tol_deg: self.robust_step_tol_deg,
            mode,
        })
    }
}

/// Wall-clock milliseconds per compute stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub assemble_ms: f64,
    pub init_ms: f64,
    pub solve_ms: f64,
    pub refine_ms: f64,
}

impl StageTimings {
    fn add(&mut self, other: &StageTimings) {
        self.assemble_ms += other.assemble_ms;
        self.init_ms += other.init_ms;
        self.solve_ms += other.solve_ms;
        self.refine_ms += other.refine_ms;
    }
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub rotations: RotationStack,
    /// One entry per solved component (a single entry for connected input).
    pub solves: Vec<SolveResult>,
    pub refinements: Vec<SolveResult>,
    pub timings: StageTimings,
    pub warnings: Vec<String>,
}

fn millis(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Starting stack for `kind`; the spanning-tree start is built from `g`.
pub fn initial_stack(g: &ViewGraph, kind: InitKind, seed: u64) -> Result<RotationStack> {
    match kind {
        InitKind::Mst => chain_init(g, &spanning_tree(g)?),
        other => make_init(other, g.n(), seed),
    }
}

/// Runs the configured pipeline on a connected graph.
pub fn run_connected(g: &ViewGraph, cfg: &PipelineConfig) -> Result<PipelineResult> {
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let nb = assemble_blocks(g, cfg.solver.mode)?;
    timings.assemble_ms = millis(t);

    let t = Instant::now();
    let init = initial_stack(g, cfg.solver.init, cfg.solver.shuffle_seed)?;
    timings.init_ms = millis(t);

    let t = Instant::now();
    let solve = acd_solve(&nb, &cfg.solver, init)?;
    timings.solve_ms = millis(t);

    let mut warnings = solve.warnings.clone();
    let mut rotations = solve.rotations.clone();
    let mut refinements = Vec::new();
    if let Some(rcfg) = cfg.robust_config() {
        let t = Instant::now();
        let refined = robust_refine(g, &rotations, &rcfg)?;
        timings.refine_ms = millis(t);
        warnings.extend(refined.warnings.iter().cloned());
        rotations = refined.rotations.clone();
        refinements.push(refined);
    }
    Ok(PipelineResult {
        rotations,
        solves: vec![solve],
        refinements,
        timings,
        warnings,
    })
}

/// Runs the pipeline, splitting into components when `per_component` is set.
///
/// Each component keeps its own gauge; cameras of different components are
/// not related by the output.
pub fn run_pipeline(g: &ViewGraph, cfg: &PipelineConfig) -> Result<PipelineResult> {
    // Fail on a missing Hessian before anything else.
    if (cfg.solver.mode == WeightMode::Aniso || cfg.robust == RobustKind::Airls) && !g.has_all_hessians() {
        let e = g.edges().iter().find(|e| e.hessian().is_none()).expect("some edge lacks a Hessian");
        return Err(Error::Config(format!(
            "anisotropic weighting needs a Hessian on every edge; edge ({}, {}) has none",
            e.i(),
            e.j()
        )));
    }
    let comps = g.components();
    if comps.len() <= 1 {
        return run_connected(g, cfg);
    }
    if !cfg.per_component {
        g.ensure_connected()?;
    }

    let mut blocks = vec![nalgebra::Matrix3::identity(); g.n()];
    let mut out = PipelineResult {
        rotations: RotationStack::identity(0),
        solves: Vec::new(),
        refinements: Vec::new(),
        timings: StageTimings::default(),
        warnings: Vec::new(),
    };
    let msg = format!("graph has {} components; each was solved separately", comps.len());
    log::warn!("{msg}");
    out.warnings.push(msg);
    for comp in &comps {
        let sub = g.induced_subgraph(comp)?;
        let res = run_connected(&sub, cfg)?;
        for (local, &v) in comp.iter().enumerate() {
            blocks[v] = *res.rotations.block(local);
        }
        out.timings.add(&res.timings);
        out.warnings.extend(res.warnings);
        out.solves.extend(res.solves);
        out.refinements.extend(res.refinements);
    }
    out.rotations = RotationStack::from_blocks(blocks);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{gauge_align, rms_error};
    use crate::so3::Rotation;
    use crate::synth::{generate, SceneKind, SceneSpec};
    use crate::view_graph::EdgeMeasurement;

    fn scene(seed: u64) -> crate::synth::SyntheticScene {
        generate(&SceneSpec { n: 30, p: Some(0.4), seed, ..Default::default() }).unwrap()
    }

    #[test]
    fn robust_pipelines_compose() {
        let s = scene(1);
        for (kind, mode) in [(RobustKind::Irls, WeightMode::Iso), (RobustKind::Airls, WeightMode::Aniso)] {
            let cfg = PipelineConfig { robust: kind, ..Default::default() };
            let full = run_pipeline(&s.graph, &cfg).unwrap();
            let plain = run_pipeline(&s.graph, &PipelineConfig::default()).unwrap();
            let rcfg = RobustConfig { mode, ..Default::default() };
            let refined = robust_refine(&s.graph, &plain.rotations, &rcfg).unwrap();
            assert_eq!(full.rotations, refined.rotations);
        }
    }

    #[test]
    fn every_init_reaches_the_same_objective() {
        let s = scene(2);
        let mut finals = Vec::new();
        for init in [InitKind::Zeros, InitKind::Identity, InitKind::Random, InitKind::Mst] {
            let cfg = PipelineConfig {
                solver: SolverConfig { init, ..Default::default() },
                ..Default::default()
            };
            let r = run_pipeline(&s.graph, &cfg).unwrap();
            finals.push(r.solves[0].final_objective().unwrap());
        }
        for f in &finals {
            assert!((f - finals[0]).abs() <= 1e-6 * finals[0].abs());
        }
    }

    #[test]
    fn missing_hessian_is_rejected_up_front() {
        let s = scene(3);
        let g = s.graph.without_hessians();
        let err = run_pipeline(&g, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let iso = PipelineConfig {
            solver: SolverConfig { mode: WeightMode::Iso, ..Default::default() },
            robust: RobustKind::Airls,
            ..Default::default()
        };
        assert!(matches!(run_pipeline(&g, &iso), Err(Error::Config(_))));
    }

    #[test]
    fn components_are_solved_separately_on_request() {
        let a = generate(&SceneSpec { kind: SceneKind::Loop, n: 6, noise_scale: 0.0, seed: 4, ..Default::default() })
            .unwrap();
        let mut edges = a.graph.edges().to_vec();
        for e in a.graph.edges() {
            edges.push(EdgeMeasurement::new(e.i() + 6, e.j() + 6, *e.rel(), e.hessian().copied()).unwrap());
        }
        let g = ViewGraph::from_edges(12, edges).unwrap();
        assert!(matches!(
            run_pipeline(&g, &PipelineConfig::default()),
            Err(Error::Disconnected { .. })
        ));
        let cfg = PipelineConfig { per_component: true, ..Default::default() };
        let out = run_pipeline(&g, &cfg).unwrap();
        assert_eq!(out.solves.len(), 2);
        let first = RotationStack::from_blocks(out.rotations.blocks()[..6].to_vec());
        let second = RotationStack::from_blocks(out.rotations.blocks()[6..].to_vec());
        for half in [first, second] {
            let aligned = gauge_align(&half, &a.ground_truth).unwrap();
            assert!(rms_error(&aligned, &a.ground_truth).unwrap() < 1e-6);
        }
        assert!(out.rotations.blocks().iter().all(|m| Rotation::is_valid(m, 1e-9)));
    }
}
