//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p acd-core --test acceptance`. Timing criteria run
//! first and alone; the statistical ones fan out over scenes with rayon.

use std::time::Instant;

use acd_core::metrics::{
    auc, average_accuracy, gauge_align, per_camera_errors, rms_error, spread, MetricsReport,
};
use acd_core::pipeline::{initial_stack, run_pipeline, PipelineConfig, RobustKind};
use acd_core::so3::{exp_so3, log_so3, random_rotation, Rotation};
use acd_core::solver::{bcd_oracle_update, coordinate_update, sweep_order, update_coefficient};
use acd_core::synth::{apply_noise, generate, sample_hessian, SceneKind, SceneSpec, SyntheticScene};
use acd_core::view_graph::{chain_init, spanning_tree};
use acd_core::{
    acd_solve, assemble_blocks, EdgeMeasurement, InitKind, RotationStack, SolverConfig, ViewGraph,
    WeightMode,
};
use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn median(v: &[f64]) -> f64 {
    spread(v).expect("non-empty").median
}

fn rms_vs_gt(est: &RotationStack, gt: &RotationStack) -> f64 {
    rms_error(&gauge_align(est, gt).unwrap(), gt).unwrap()
}

fn cfg(mode: WeightMode) -> SolverConfig {
    SolverConfig { mode, ..Default::default() }
}

fn solve(s: &SyntheticScene, c: &SolverConfig, init: RotationStack) -> acd_core::SolveResult {
    let nb = assemble_blocks(&s.graph, c.mode).unwrap();
    acd_solve(&nb, c, init).unwrap()
}

fn exact_recovery() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, kind, p) in [("loop", SceneKind::Loop, None), ("general", SceneKind::General, Some(0.5))] {
        let s = generate(&SceneSpec { kind, n: 100, p, noise_scale: 0.0, seed: 1, ..Default::default() })
            .unwrap();
        let t = Instant::now();
        let out = solve(&s, &SolverConfig::default(), RotationStack::zeros(100));
        let secs = t.elapsed().as_secs_f64();
        let err = rms_vs_gt(&out.rotations, &s.ground_truth);
        pass &= err <= 1e-6 && out.sweeps_run <= 50 && secs < 1.0;
        parts.push(format!("{label}: rms {err:.1e} deg, {} sweeps, {secs:.3} s", out.sweeps_run));
    }
    Outcome { id: 1, name: "exact recovery from zeros", pass, detail: parts.join("; ") }
}

/// Same check on a loop whose orientations turn once about the circle normal.
fn turning_loop_info() -> String {
    let n = 100;
    let gt: Vec<Rotation> = (0..n)
        .map(|k| Rotation::from_axis_angle(&Vector3::z(), std::f64::consts::TAU * k as f64 / n as f64))
        .collect();
    let edges = (0..n).map(|k| {
        let next = (k + 1) % n;
        EdgeMeasurement::new(k, next, gt[next] * gt[k].transpose(), Some(Matrix3::identity() * 50.0)).unwrap()
    });
    let g = ViewGraph::from_edges(n, edges).unwrap();
    let nb = assemble_blocks(&g, WeightMode::Aniso).unwrap();
    let c = SolverConfig { max_sweeps: 50, ..Default::default() };
    let out = acd_solve(&nb, &c, RotationStack::zeros(n)).unwrap();
    format!(
        "noiseless loop with orientations turning about the normal, 50 sweeps from zeros: rms {:.1} deg",
        rms_vs_gt(&out.rotations, &RotationStack::from_rotations(&gt))
    )
}

fn runtime() -> Outcome {
    let forced = |sweeps| SolverConfig {
        max_sweeps: sweeps,
        objective_tol: f64::MIN_POSITIVE,
        step_tol_deg: f64::MIN_POSITIVE,
        ..Default::default()
    };
    let s = generate(&SceneSpec { n: 100, p: Some(1.0), seed: 3, ..Default::default() }).unwrap();
    let nb = assemble_blocks(&s.graph, WeightMode::Aniso).unwrap();
    let mut times: Vec<f64> = (0..5)
        .map(|_| {
            let t = Instant::now();
            let out = acd_solve(&nb, &forced(100), RotationStack::zeros(100)).unwrap();
            assert_eq!(out.sweeps_run, 100);
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let med = times[2];

    // Mean degree 20 at every size so only |E| changes the work per sweep.
    let mut per_edge = Vec::new();
    for edges in [1000usize, 5000, 20000] {
        let n = edges / 10;
        let p = 20.0 / (n - 1) as f64;
        let s = generate(&SceneSpec { n, p: Some(p), seed: 4, ..Default::default() }).unwrap();
        let m = s.graph.edges().len() as f64;
        let nb = assemble_blocks(&s.graph, WeightMode::Aniso).unwrap();
        let mut reps: Vec<f64> = (0..7)
            .map(|_| {
                let t = Instant::now();
                acd_solve(&nb, &forced(20), RotationStack::zeros(n)).unwrap();
                t.elapsed().as_secs_f64() / 20.0
            })
            .collect();
        reps.sort_by(f64::total_cmp);
        per_edge.push((edges, reps[3] / m));
    }
    let lo = per_edge.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let hi = per_edge.iter().map(|x| x.1).fold(0.0, f64::max);
    let ratio = hi / lo;
    let detail = format!(
        "100 sweeps on |E| = {}: median {:.1} ms; per-edge sweep cost {}; max/min {ratio:.2}",
        s.graph.edges().len(),
        med * 1e3,
        per_edge
            .iter()
            .map(|(e, c)| format!("{e}: {:.1} ns", c * 1e9))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Outcome { id: 11, name: "runtime sanity", pass: med < 1.0 && ratio <= 1.5, detail }
}

fn anisotropic_advantage() -> Outcome {
    let sigmas = [0.0, 5.0, 10.0, 20.0];
    let medians: Vec<f64> = sigmas
        .iter()
        .map(|&sigma| {
            let red: Vec<f64> = (0..50u64)
                .into_par_iter()
                .map(|seed| {
                    let s = generate(&SceneSpec { perturb_sigma_deg: sigma, seed: 1000 + seed, ..Default::default() })
                        .unwrap();
                    let a = solve(&s, &cfg(WeightMode::Aniso), RotationStack::zeros(s.graph.n()));
                    let i = solve(&s, &cfg(WeightMode::Iso), RotationStack::zeros(s.graph.n()));
                    1.0 - rms_vs_gt(&a.rotations, &s.ground_truth) / rms_vs_gt(&i.rotations, &s.ground_truth)
                })
                .collect();
            100.0 * median(&red)
        })
        .collect();
    let monotone = medians.windows(2).all(|w| w[1] <= w[0] + 5.0);
    let pass = medians[0] >= 10.0 && monotone && medians[3] > 0.0;
    let detail = sigmas
        .iter()
        .zip(&medians)
        .map(|(s, m)| format!("sigma {s}: {m:.1}%"))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome { id: 2, name: "anisotropic advantage", pass, detail: format!("median RMS reduction {detail}") }
}

fn loop_ordering() -> Outcome {
    let rows: Vec<(f64, f64, f64, bool)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let s = generate(&SceneSpec { kind: SceneKind::Loop, n: 100, seed: 2000 + seed, ..Default::default() })
                .unwrap();
            let a = solve(&s, &cfg(WeightMode::Aniso), RotationStack::zeros(100));
            let i = solve(&s, &cfg(WeightMode::Iso), RotationStack::zeros(100));
            let chained = chain_init(&s.graph, &spanning_tree(&s.graph).unwrap()).unwrap();
            let fin = a.final_objective().unwrap();
            let at20 = a.trace[a.trace.len().min(20) - 1].objective;
            let fast = (at20 - fin).abs() <= 0.01 * fin.abs();
            (
                rms_vs_gt(&a.rotations, &s.ground_truth),
                rms_vs_gt(&i.rotations, &s.ground_truth),
                rms_vs_gt(&chained, &s.ground_truth),
                fast,
            )
        })
        .collect();
    let ma = median(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let mi = median(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let mc = median(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
    let fast = rows.iter().filter(|r| r.3).count();
    Outcome {
        id: 3,
        name: "loop convergence ordering",
        pass: ma < mi && mi < mc && fast >= 90,
        detail: format!(
            "median rms aniso {ma:.2} < iso {mi:.2} < chaining {mc:.2} deg; within 1% of final objective by sweep 20 on {fast}/100"
        ),
    }
}

fn monotonicity() -> Outcome {
    let mut updates = 0;
    let mut worst_increase = f64::NEG_INFINITY;
    let mut all_valid = true;
    for seed in 0..20u64 {
        let s = generate(&SceneSpec { n: 10, p: Some(0.5), seed: 3000 + seed, ..Default::default() }).unwrap();
        let nb = assemble_blocks(&s.graph, WeightMode::Aniso).unwrap();
        let init = if seed % 2 == 0 { InitKind::Random } else { InitKind::Zeros };
        let mut r = initial_stack(&s.graph, init, seed).unwrap();
        for sweep in 1..=5 {
            for k in sweep_order(seed, sweep, 10) {
                // Only the terms touching camera k change: -2 <G_k, R_k>.
                let g = update_coefficient(&nb, &r, k);
                let before = -2.0 * g.dot(r.block(k));
                let up = coordinate_update(&nb, &r, k);
                let after = -2.0 * g.dot(up.matrix());
                worst_increase = worst_increase.max(after - before);
                r.set_block(k, up.into_inner());
                updates += 1;
            }
            all_valid &= r.all_valid(1e-9);
        }
    }
    Outcome {
        id: 4,
        name: "monotonicity suite",
        pass: updates == 1000 && worst_increase <= 1e-9 && all_valid,
        detail: format!("{updates} updates, largest objective increase {worst_increase:.2e}, post-sweep blocks valid: {all_valid}"),
    }
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4000);
    let mut worst: f64 = 0.0;
    let mut reflected = 0;
    for _ in 0..100 {
        let n = rng.random_range(4..=8);
        let gt: Vec<Rotation> = (0..n).map(|_| random_rotation(&mut rng)).collect();
        let mut g = ViewGraph::new(n);
        for i in 0..n {
            for j in i + 1..n {
                if j == i + 1 || rng.random_bool(0.5) {
                    let noise = exp_so3(&Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2)));
                    g.add_edge(EdgeMeasurement::new(i, j, noise * gt[j] * gt[i].transpose(), None).unwrap())
                        .unwrap();
                }
            }
        }
        let nb = assemble_blocks(&g, WeightMode::Iso).unwrap();
        // Iterates of the solver itself: a random start followed by one or two sweeps.
        let seed = rng.random();
        let c = SolverConfig { mode: WeightMode::Iso, max_sweeps: rng.random_range(1..=2), shuffle_seed: seed, ..Default::default() };
        let start = initial_stack(&g, InitKind::Random, seed).unwrap();
        let stack = acd_solve(&nb, &c, start).unwrap().rotations;
        let k = rng.random_range(0..n);
        // The closed form ranges over O(3); it meets SO(3) when this determinant is positive.
        if update_coefficient(&nb, &stack, k).determinant() <= 0.0 {
            reflected += 1;
        }
        let s = bcd_oracle_update(&nb, &stack, k);
        let rk = coordinate_update(&nb, &stack, k);
        let mut expected = DMatrix::<f64>::zeros(3 * (n - 1), 3);
        for (row, j) in (0..n).filter(|&j| j != k).enumerate() {
            let b = stack.block(j) * rk.matrix().transpose();
            expected.view_mut((3 * row, 0), (3, 3)).copy_from(&b);
        }
        worst = worst.max((s - expected).norm());
    }
    Outcome {
        id: 5,
        name: "oracle equivalence",
        pass: worst <= 1e-8,
        detail: format!(
            "100 solver iterates, largest Frobenius discrepancy {worst:.2e}; instances with det(N_k^T R) <= 0: {reflected}"
        ),
    }
}

fn isotropic_reduction() -> Outcome {
    let mut identical = true;
    let mut runs = 0;
    for seed in 0..5u64 {
        let s = generate(&SceneSpec { n: 40, seed: 5000 + seed, ..Default::default() }).unwrap();
        let edges = s.graph.edges().iter().map(|e| {
            EdgeMeasurement::new(e.i(), e.j(), *e.rel(), Some(Matrix3::identity() * 2.0)).unwrap()
        });
        let g2 = ViewGraph::from_edges(s.graph.n(), edges).unwrap();
        let na = assemble_blocks(&g2, WeightMode::Aniso).unwrap();
        let ni = assemble_blocks(&s.graph, WeightMode::Iso).unwrap();
        for sweeps in 1..=8 {
            let c = SolverConfig { max_sweeps: sweeps, shuffle_seed: seed, ..Default::default() };
            let init = initial_stack(&s.graph, InitKind::Random, seed).unwrap();
            let a = acd_solve(&na, &SolverConfig { mode: WeightMode::Aniso, ..c.clone() }, init.clone()).unwrap();
            let i = acd_solve(&ni, &SolverConfig { mode: WeightMode::Iso, ..c }, init).unwrap();
            identical &= a.rotations == i.rotations && a.trace == i.trace;
            runs += 1;
        }
    }
    Outcome {
        id: 6,
        name: "isotropic reduction",
        pass: identical,
        detail: format!("{runs} truncated solves compared bit for bit: identical = {identical}"),
    }
}

fn init_robustness() -> Outcome {
    let agree: Vec<bool> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let s = generate(&SceneSpec { seed: 6000 + seed, ..Default::default() }).unwrap();
            let finals: Vec<f64> = [InitKind::Zeros, InitKind::Identity, InitKind::Random, InitKind::Mst]
                .into_iter()
                .map(|init| {
                    let c = SolverConfig { init, shuffle_seed: seed, ..Default::default() };
                    let start = initial_stack(&s.graph, init, seed).unwrap();
                    solve(&s, &c, start).final_objective().unwrap()
                })
                .collect();
            let best = finals.iter().copied().fold(f64::INFINITY, f64::min);
            finals.iter().all(|f| (f - best).abs() <= 1e-6 * best.abs())
        })
        .collect();
    let ok = agree.iter().filter(|&&a| a).count();
    Outcome {
        id: 7,
        name: "initialization robustness",
        pass: ok >= 95,
        detail: format!("zeros/identity/random/mst final objectives agree within 1e-6 relative on {ok}/100 scenes"),
    }
}

fn robust_refinement() -> Outcome {
    let rows: Vec<(f64, f64, f64, bool)> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let s = generate(&SceneSpec { outlier_fraction: 0.2, seed: 7000 + seed, ..Default::default() }).unwrap();
            let run = |robust| run_pipeline(&s.graph, &PipelineConfig { robust, ..Default::default() }).unwrap();
            let plain = run(RobustKind::None);
            let irls = run(RobustKind::Irls);
            let airls = run(RobustKind::Airls);
            let monotone = irls.refinements.iter().chain(&airls.refinements).all(|r| {
                r.trace.windows(2).all(|w| w[1].objective <= w[0].objective + 1e-8)
            });
            (
                rms_vs_gt(&plain.rotations, &s.ground_truth),
                rms_vs_gt(&irls.rotations, &s.ground_truth),
                rms_vs_gt(&airls.rotations, &s.ground_truth),
                monotone,
            )
        })
        .collect();
    let mp = median(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let mi = median(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let ma = median(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
    let monotone = rows.iter().all(|r| r.3);
    Outcome {
        id: 8,
        name: "robust refinement",
        pass: mi <= 0.5 * mp && ma <= mi && monotone,
        detail: format!(
            "median rms ACD {mp:.2}, ACD_IRLS {mi:.2}, ACD_AIRLS {ma:.2} deg; cost traces monotone: {monotone}"
        ),
    }
}

fn noise_model() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8000);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let h = sample_hessian(&mut rng);
        let r = random_rotation(&mut rng);
        let samples = 100_000;
        let mut cov = Matrix3::zeros();
        for _ in 0..samples {
            let noisy = apply_noise(&r, &h, 1.0, &mut rng).unwrap();
            let d = log_so3(&(noisy * r.transpose()));
            cov += d * d.transpose();
        }
        cov /= samples as f64;
        let expected = h.try_inverse().unwrap();
        worst = worst.max((cov - expected).norm() / expected.norm());
    }
    Outcome {
        id: 9,
        name: "noise-model self-consistency",
        pass: worst <= 0.05,
        detail: format!("5 Hessians x 1e5 draws, largest relative Frobenius error {:.2}%", 100.0 * worst),
    }
}

fn metrics_checks() -> Outcome {
    let mut ok = true;
    ok &= auc(&[0.0, 0.0], 5.0).unwrap() == 100.0;
    ok &= auc(&[5.0, 7.0], 5.0).unwrap() == 0.0;
    ok &= auc(&[0.0, 5.0], 5.0).unwrap() == 50.0;
    ok &= average_accuracy(&[0.0; 4]).unwrap() == 100.0;
    ok &= average_accuracy(&[20.5, 30.0]).unwrap() == 0.0;
    ok &= average_accuracy(&[10.05; 3]).unwrap() == 50.0;
    let sp = spread(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    ok &= sp.median == 3.0 && sp.iqr == 2.0;

    let mut rng = ChaCha8Rng::seed_from_u64(9000);
    let gt: Vec<Rotation> = (0..20).map(|_| random_rotation(&mut rng)).collect();
    let gt = RotationStack::from_rotations(&gt);
    let g = random_rotation(&mut rng);
    let shifted = gt.right_multiplied(g.matrix());
    let errs = per_camera_errors(&gauge_align(&shifted, &gt).unwrap(), &gt).unwrap();
    ok &= errs.iter().all(|&e| e < 1e-6);

    let est: Vec<Rotation> = gt
        .blocks()
        .iter()
        .map(|b| Rotation::from_matrix_unchecked(b * exp_so3(&Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1))).matrix()))
        .collect();
    let est = RotationStack::from_rotations(&est);
    let base = MetricsReport::evaluate(&est, &gt, &[1.0, 5.0]).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let q = random_rotation(&mut rng);
        let m = MetricsReport::evaluate(&est.right_multiplied(q.matrix()), &gt, &[1.0, 5.0]).unwrap();
        worst = worst.max((m.rms_deg - base.rms_deg).abs()).max((m.aa - base.aa).abs());
        for (a, b) in m.auc.values().zip(base.auc.values()) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in m.per_camera_errors_deg.iter().zip(&base.per_camera_errors_deg) {
            worst = worst.max((a - b).abs());
        }
    }
    Outcome {
        id: 10,
        name: "metrics unit checks",
        pass: ok && worst <= 1e-8,
        detail: format!("worked examples exact: {ok}; largest change under a common gauge {worst:.1e}"),
    }
}

fn main() {
    // Wall-clock criteria first, before the thread pool is busy.
    let mut outcomes = vec![exact_recovery(), runtime()];
    let info = turning_loop_info();
    outcomes.extend([
        anisotropic_advantage(),
        loop_ordering(),
        monotonicity(),
        oracle_equivalence(),
        isotropic_reduction(),
        init_robustness(),
        robust_refinement(),
        noise_model(),
        metrics_checks(),
    ]);
    outcomes.sort_by_key(|o| o.id);

    let mut failed = 0;
    for o in &outcomes {
        println!(
            "[{}] criterion {:>2} {}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("[INFO] {info}");
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
