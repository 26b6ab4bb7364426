//! `acd bench`: per-stage wall-clock timings on synthetic scenes.

use std::path::PathBuf;
use std::time::Instant;

use acd_core::pipeline::{initial_stack, RobustKind};
use acd_core::robust::robust_refine;
use acd_core::synth::{generate, SceneSpec};
use acd_core::{acd_solve, assemble_blocks, Error, InitKind, Result, SolverConfig, WeightMode};
use clap::Args;
use rayon::prelude::*;
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{parse_via, write_file};

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Camera counts, one scene per (n, p) pair.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub n: Vec<usize>,
    /// Edge probabilities.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub p: Vec<f64>,
    /// Fixed number of sweeps per solve; the stopping rule is disabled.
    #[arg(long, default_value_t = 100)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value = "aniso", value_parser = parse_via::<WeightMode>)]
    pub mode: WeightMode,
    #[arg(long, default_value = "none", value_parser = parse_via::<RobustKind>)]
    pub robust: RobustKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Repetitions run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

struct Row {
    config: usize,
    stage: &'static str,
    rep: usize,
    millis: f64,
}

fn time_ms<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64() * 1e3))
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    if a.reps == 0 || a.sweeps == 0 || a.jobs == 0 {
        return Err(Error::Config("--reps, --sweeps and --jobs must be positive".into()));
    }
    let mut scenes = Vec::new();
    let mut labels = Vec::new();
    for &n in &a.n {
        for &p in &a.p {
            let spec = SceneSpec { n, p: Some(p), seed: a.seed, ..Default::default() };
            let scene = generate(&spec)?;
            labels.push(format!(
                "n{n}-p{p}-e{}-{}-{}",
                scene.graph.edges().len(),
                a.mode,
                a.robust
            ));
            scenes.push(scene);
        }
    }
    let solver = SolverConfig {
        init: InitKind::Zeros,
        max_sweeps: a.sweeps,
        objective_tol: f64::MIN_POSITIVE,
        step_tol_deg: f64::MIN_POSITIVE,
        shuffle_seed: a.seed,
        mode: a.mode,
    };
    let robust = acd_core::pipeline::PipelineConfig { robust: a.robust, ..Default::default() }.robust_config();

    let jobs: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|c| (0..a.reps).map(move |r| (c, r)))
        .collect();
    let run = |&(c, rep): &(usize, usize)| -> Result<Vec<Row>> {
        let g = &scenes[c].graph;
        let (nb, assemble) = time_ms(|| assemble_blocks(g, a.mode))?;
        let init = initial_stack(g, InitKind::Zeros, a.seed)?;
        let (solved, solve) = time_ms(|| acd_solve(&nb, &solver, init))?;
        let mut rows = vec![
            Row { config: c, stage: "assemble", rep, millis: assemble },
            Row { config: c, stage: "solve", rep, millis: solve },
        ];
        if let Some(rc) = &robust {
            let (_, refine) = time_ms(|| robust_refine(g, &solved.rotations, rc))?;
            rows.push(Row { config: c, stage: "refine", rep, millis: refine });
        }
        Ok(rows)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", a.jobs)))?;
    let results: Vec<Result<Vec<Row>>> = pool.install(|| jobs.par_iter().map(run).collect());
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by_key(|r| (r.config, stage_rank(r.stage), r.rep));

    let mut csv = String::from("config,stage,rep,millis\n");
    let mut medians = serde_json::Map::new();
    let mut start = 0;
    while start < rows.len() {
        let key = (rows[start].config, rows[start].stage);
        let end = start + rows[start..].iter().take_while(|r| (r.config, r.stage) == key).count();
        let label = &labels[key.0];
        for r in &rows[start..end] {
            csv.push_str(&format!("{label},{},{},{:.6}\n", r.stage, r.rep, r.millis));
        }
        let ms: Vec<f64> = rows[start..end].iter().map(|r| r.millis).collect();
        let med = acd_core::metrics::spread(&ms).expect("at least one rep").median;
        csv.push_str(&format!("{label},{},median,{med:.6}\n", key.1));
        medians.insert(format!("{label}/{}", key.1), json!(med));
        start = end;
    }
    write_file(&a.out, &csv)?;

    let mut m = RunManifest::new(
        "bench",
        json!({
            "n": a.n, "p": a.p, "sweeps": a.sweeps, "reps": a.reps,
            "mode": a.mode, "robust": a.robust, "jobs": a.jobs, "solver": solver,
        }),
    );
    m.seeds.insert("seed".into(), a.seed);
    m.outputs = vec![a.out.clone()];
    m.extra = json!({ "median_ms": medians });
    m.write_next_to(&a.out)
}

fn stage_rank(stage: &str) -> u8 {
    match stage {
        "assemble" => 0,
        "solve" => 1,
        _ => 2,
    }
}
