//! `acd`: generate, solve, refine, evaluate and benchmark rotation averaging problems.

mod bench;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use acd_core::metrics::MetricsReport;
use acd_core::pipeline::{run_pipeline, PipelineConfig, RobustKind};
use acd_core::robust::{robust_refine, robust_trace_csv, RobustConfig};
use acd_core::synth::{generate, SceneKind, SceneManifest, SceneSpec};
use acd_core::view_graph::{
    format_rotations, format_view_graph, load_rotations, load_view_graph, rotations_to_stack,
};
use acd_core::{Error, InitKind, Result, SolverConfig, WeightMode};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "acd", version, about = "Anisotropic rotation averaging toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene.
    Synth(SynthArgs),
    /// Solve a view graph with ACD and optional robust refinement.
    Solve(SolveArgs),
    /// Robustly refine existing rotations.
    Refine(RefineArgs),
    /// Compare estimated rotations with ground truth.
    Eval(EvalArgs),
    /// Time the pipeline stages on synthetic scenes.
    Bench(bench::BenchArgs),
}

fn parse_via<T>(s: &str) -> std::result::Result<T, String>
where
    T: FromStr<Err = Error>,
{
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_via::<SceneKind>)]
    kind: SceneKind,
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Edge probability of general scenes; drawn from U(0.1, 1) when omitted.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    perturb_sigma_deg: f64,
    #[arg(long, default_value_t = 0.0)]
    perturb_gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// View-graph output file.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth rotation output file.
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "zeros", value_parser = parse_via::<InitKind>)]
    init: InitKind,
    #[arg(long, default_value = "aniso", value_parser = parse_via::<WeightMode>)]
    mode: WeightMode,
    #[arg(long, default_value = "none", value_parser = parse_via::<RobustKind>)]
    robust: RobustKind,
    #[arg(long, default_value_t = 5.0)]
    tau_deg: f64,
    #[arg(long, default_value_t = 50)]
    max_outer_iters: usize,
    #[arg(long, default_value_t = 1000)]
    max_sweeps: usize,
    #[arg(long, default_value_t = 1e-12)]
    obj_tol: f64,
    /// Largest per-camera step, in degrees, that still counts as converged.
    #[arg(long, default_value_t = 1e-7)]
    step_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Solve each connected component separately instead of failing.
    #[arg(long)]
    per_component: bool,
    #[arg(long)]
    out: PathBuf,
    /// Per-sweep objective trace (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Robust cost trace (CSV); only written when a robust stage runs.
    #[arg(long)]
    robust_trace: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Starting rotations.
    #[arg(long)]
    init_rot: PathBuf,
    #[arg(long, default_value = "iso", value_parser = parse_via::<WeightMode>)]
    mode: WeightMode,
    #[arg(long, default_value_t = 5.0)]
    tau_deg: f64,
    #[arg(long, default_value_t = 50)]
    max_outer_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    step_tol_deg: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// AUC thresholds in degrees.
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    auc: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = SceneSpec {
        kind: a.kind,
        n: a.n,
        p: a.p,
        noise_scale: a.noise_scale,
        perturb_sigma_deg: a.perturb_sigma_deg,
        perturb_gamma: a.perturb_gamma,
        outlier_fraction: a.outlier_fraction,
        seed: a.seed,
        ..Default::default()
    };
    let t = Instant::now();
    let scene = generate(&spec)?;
    let gen_ms = t.elapsed().as_secs_f64() * 1e3;
    write_file(&a.out, &format_view_graph(&scene.graph))?;
    write_file(&a.gt, &format_rotations(&scene.ground_truth))?;

    let mut m = RunManifest::new("synth", serde_json::to_value(SceneManifest::new(&spec, &scene)).unwrap());
    m.seeds.insert("seed".into(), a.seed);
    m.outputs = vec![a.out.clone(), a.gt.clone()];
    m.timings_ms.insert("generate".into(), gen_ms);
    m.write_next_to(&a.out)
}

fn cmd_solve(a: &SolveArgs) -> Result<()> {
    let g = load_view_graph(&a.input)?;
    let cfg = PipelineConfig {
        solver: SolverConfig {
            init: a.init,
            max_sweeps: a.max_sweeps,
            objective_tol: a.obj_tol,
            step_tol_deg: a.step_tol,
            shuffle_seed: a.seed,
            mode: a.mode,
        },
        robust: a.robust,
        tau_deg: a.tau_deg,
        max_outer_iters: a.max_outer_iters,
        per_component: a.per_component,
        ..Default::default()
    };
    let res = run_pipeline(&g, &cfg)?;
    write_file(&a.out, &format_rotations(&res.rotations))?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.trace {
        let csv: String = res
            .solves
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let csv = s.sweep_trace_csv();
                // One header even when several components were solved.
                if k == 0 { csv } else { csv.lines().skip(1).map(|l| format!("{l}\n")).collect() }
            })
            .collect();
        write_file(path, &csv)?;
        outputs.push(path.clone());
    }
    if let (Some(path), false) = (&a.robust_trace, res.refinements.is_empty()) {
        let csv: String = res
            .refinements
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let csv = robust_trace_csv(r);
                if k == 0 { csv } else { csv.lines().skip(1).map(|l| format!("{l}\n")).collect() }
            })
            .collect();
        write_file(path, &csv)?;
        outputs.push(path.clone());
    }
    let mut m = RunManifest::new("solve", serde_json::to_value(&cfg).unwrap());
    m.seeds.insert("seed".into(), a.seed);
    m.inputs = vec![a.input.clone()];
    m.outputs = outputs;
    m.timings_ms.insert("assemble".into(), res.timings.assemble_ms);
    m.timings_ms.insert("init".into(), res.timings.init_ms);
    m.timings_ms.insert("solve".into(), res.timings.solve_ms);
    m.timings_ms.insert("refine".into(), res.timings.refine_ms);
    m.extra = json!({
        "sweeps_run": res.solves.iter().map(|s| s.sweeps_run).collect::<Vec<_>>(),
        "status": res.solves.iter().map(|s| s.status).collect::<Vec<_>>(),
        "final_objective": res.solves.iter().map(|s| s.final_objective()).collect::<Vec<_>>(),
        "warnings": res.warnings,
    });
    m.write_next_to(&a.out)
}

fn cmd_refine(a: &RefineArgs) -> Result<()> {
    let g = load_view_graph(&a.input)?;
    let init = rotations_to_stack(&load_rotations(&a.init_rot)?, g.n())?;
    let cfg = RobustConfig {
        tau_deg: a.tau_deg,
        max_outer_iters: a.max_outer_iters,
        step_tol_deg: a.step_tol_deg,
        mode: a.mode,
    };
    let t = Instant::now();
    let res = robust_refine(&g, &init, &cfg)?;
    let ms = t.elapsed().as_secs_f64() * 1e3;
    write_file(&a.out, &format_rotations(&res.rotations))?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.trace {
        write_file(path, &robust_trace_csv(&res))?;
        outputs.push(path.clone());
    }
    let mut m = RunManifest::new("refine", serde_json::to_value(&cfg).unwrap());
    m.inputs = vec![a.input.clone(), a.init_rot.clone()];
    m.outputs = outputs;
    m.timings_ms.insert("refine".into(), ms);
    m.extra = json!({ "iterations": res.sweeps_run, "status": res.status, "warnings": res.warnings });
    m.write_next_to(&a.out)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let gt = load_rotations(&a.gt)?;
    let est = load_rotations(&a.est)?;
    if est.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "{} has {} cameras but {} has {}",
            a.est.display(),
            est.len(),
            a.gt.display(),
            gt.len()
        )));
    }
    let n = gt.len();
    let gt = rotations_to_stack(&gt, n)?;
    let est = rotations_to_stack(&est, n)?;
    let t = Instant::now();
    let report = MetricsReport::evaluate(&est, &gt, &a.auc)?;
    let ms = t.elapsed().as_secs_f64() * 1e3;
    write_file(&a.out, &(report.to_json() + "\n"))?;

    let mut m = RunManifest::new("eval", json!({ "auc_thresholds_deg": a.auc }));
    m.inputs = vec![a.est.clone(), a.gt.clone()];
    m.outputs = vec![a.out.clone()];
    m.timings_ms.insert("evaluate".into(), ms);
    m.write_next_to(&a.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => bench::cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
