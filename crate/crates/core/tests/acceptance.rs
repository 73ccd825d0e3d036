//! Acceptance criteria. Every test prints one `criterion N: PASS|FAIL` line
//! and then asserts the outcome.
//!
//! The toy end-to-end runs behind criteria 4, 5 and 8 take roughly ten
//! minutes each on one CPU core and are shared between those tests.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use coevo::data::{make_toy_dataset, perturb_brightness, Dataset, PerturbSpec, ToySpec, TrainingSet};
use coevo::evaluation::{evaluate_model, iou3d, sphere_baseline, voxelize, Bounds, EvalOptions, VoxelGrid, VOXEL_RESOLUTION};
use coevo::geometry::primitives::{self, Shape};
use coevo::geometry::vec3::{cross, dot, sub};
use coevo::geometry::{icosphere, make_sphere_template, Mesh};
use coevo::img::{GrayMap, ImageRGB};
use coevo::losses::{
    huber, loss_discriminator, loss_jaccard, loss_style, mean_huber_grad, relaxed_jaccard, rendering_score,
};
use coevo::nn::Module;
use coevo::renderer::{gradcheck, RenderSettings, Renderer, ViewSpec};
use coevo::training::{run_training, Checkpoint, CycleReport, LogRow, TrainConfig, Trainer};

fn verdict(n: u32, pass: bool, detail: impl std::fmt::Display) {
    println!("criterion {n}: {} - {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

// ---------------------------------------------------------------- criterion 1

/// Icosahedron with jittered vertices: 20 faces, no symmetric degeneracies.
fn twenty_face_mesh(seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = icosphere(0).scaled(0.8);
    for v in &mut m.vertices {
        for x in v.iter_mut() {
            *x += rng.random_range(-0.15..0.15);
        }
    }
    m
}

#[test]
fn criterion_1_renderer_gradients() {
    let start = Instant::now();
    let renderer = Renderer::new(RenderSettings {
        smoothing: 1e-2,
        depth_gamma: 1e-2,
        ..Default::default()
    });
    let mesh = twenty_face_mesh(11);
    assert_eq!(mesh.faces.len(), 20);
    let view = ViewSpec::new(30.0, 30.0, 16);
    let report = gradcheck::check_vertex_gradients(&renderer, &mesh, &view, 1e-3, 1e-3);
    let elapsed = start.elapsed();
    verdict(
        1,
        report.all_verified() && elapsed < Duration::from_secs(120),
        format!(
            "{} of {} pixel/vertex derivatives within 1e-3 ({} after step refinement, {} mismatched), {:.1}s",
            report.matched + report.refined,
            report.entries,
            report.refined,
            report.mismatched,
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_2_loss_oracles() {
    let mut failures = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-9 {
            failures.push(format!("{name}: {got} != {want}"));
        }
    };
    let half = vec![0.5f64; 256];
    check("jaccard of constant 0.5 maps", relaxed_jaccard(&half, &half).unwrap(), 1.0 / 3.0);

    // one shared pixel out of twenty covered ones: J = 0.05
    let mut a = vec![0.0f64; 64];
    let mut b = vec![0.0f64; 64];
    a[..11].iter_mut().for_each(|v| *v = 1.0);
    b[10..20].iter_mut().for_each(|v| *v = 1.0);
    check("jaccard of 1/20 overlap", relaxed_jaccard(&a, &b).unwrap(), 0.05);
    check("hinge at J = 0.05", loss_jaccard(&[&a[..]], &[&b[..]], 0.25).unwrap(), 0.20);
    check("hinge inactive above delta", loss_jaccard(&[&a[..]], &[&a[..]], 0.25).unwrap(), 0.0);

    check("huber quadratic branch", huber(0.5, 1.0), 0.125);
    check("huber linear branch", huber(2.0, 1.0), 1.5);
    check("mean huber", mean_huber_grad(&[0.0f64, 0.0], &[0.5f64, 2.0], 1.0).unwrap().0, (0.125 + 1.5) / 2.0);
    check("discriminator at 0.5", loss_discriminator(&[0.5f64], &[0.5]).unwrap(), 2.0 * 2f64.ln());
    check("style at 0.5", loss_style(&[0.5f64]), 0.5f64.ln());
    check("rendering score", rendering_score(0.25), 0.75);

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut exact = 0;
    for _ in 0..100 {
        let fill = rng.random_range(0.05..0.95);
        let x: Vec<bool> = (0..1024).map(|_| rng.random_bool(fill)).collect();
        let y: Vec<bool> = (0..1024).map(|_| rng.random_bool(fill)).collect();
        let inter = x.iter().zip(&y).filter(|(p, q)| **p && **q).count();
        let union = x.iter().zip(&y).filter(|(p, q)| **p || **q).count();
        let iou = inter as f64 / union as f64;
        let fx: Vec<f32> = x.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        let fy: Vec<f32> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        if relaxed_jaccard(&fx, &fy).unwrap() == iou {
            exact += 1;
        }
    }
    if exact != 100 {
        failures.push(format!("jaccard equals binary IoU on only {exact}/100 masks"));
    }
    verdict(
        2,
        failures.is_empty(),
        if failures.is_empty() {
            "hand-derived loss values reproduced to 1e-9; Jaccard equals binary IoU on 100/100 masks".to_string()
        } else {
            failures.join("; ")
        },
    );
}

// ---------------------------------------------------------------- criterion 3

/// Inside test for convex meshes: behind every outward face plane.
fn convex_planes(mesh: &Mesh) -> Vec<([f64; 3], f64)> {
    let n = mesh.vertices.len() as f64;
    let mut centroid = [0.0; 3];
    for v in &mesh.vertices {
        for k in 0..3 {
            centroid[k] += v[k] / n;
        }
    }
    mesh.faces
        .iter()
        .map(|f| {
            let [a, b, c] = f.map(|i| mesh.vertices[i as usize]);
            let mut normal = cross(sub(b, a), sub(c, a));
            if dot(normal, sub(a, centroid)) < 0.0 {
                normal = normal.map(|x| -x);
            }
            (normal, dot(normal, a))
        })
        .collect()
}

/// Dense sub-sampling oracle: a cell is occupied when most of its 5^3
/// sub-sample points are inside. Cells with all corners inside, or all
/// corners beyond one face plane, are decided without sub-sampling.
fn oracle_occupancy(mesh: &Mesh, bounds: Bounds, r: usize) -> Vec<bool> {
    let planes = convex_planes(mesh);
    let inside = |p: [f64; 3]| planes.iter().all(|(n, o)| dot(*n, p) <= *o);
    let h = bounds.cell_size(r);
    let mut out = Vec::with_capacity(r * r * r);
    for x in 0..r {
        for y in 0..r {
            for z in 0..r {
                let lo = [x, y, z].map(|i| bounds.min + i as f64 * h);
                let corners: Vec<[f64; 3]> = (0..8)
                    .map(|k| [0, 1, 2].map(|d| lo[d] + if (k >> d) & 1 == 1 { h } else { 0.0 }))
                    .collect();
                if corners.iter().all(|&c| inside(c)) {
                    out.push(true);
                } else if planes.iter().any(|(n, o)| corners.iter().all(|&c| dot(*n, c) > *o)) {
                    out.push(false);
                } else {
                    let mut count = 0;
                    for a in 0..5 {
                        for b in 0..5 {
                            for c in 0..5 {
                                let p = [a, b, c];
                                let q = [0, 1, 2].map(|d| lo[d] + (p[d] as f64 + 0.5) * h / 5.0);
                                count += usize::from(inside(q));
                            }
                        }
                    }
                    out.push(count * 2 > 125);
                }
            }
        }
    }
    out
}

fn agreement(mesh: &Mesh) -> f64 {
    let bounds = Bounds::default();
    let grid = voxelize(mesh, bounds);
    let oracle = oracle_occupancy(mesh, bounds, VOXEL_RESOLUTION);
    let r = VOXEL_RESOLUTION;
    let mut same = 0;
    for x in 0..r {
        for y in 0..r {
            for z in 0..r {
                same += usize::from(grid.get(x, y, z) == oracle[(x * r + y) * r + z]);
            }
        }
    }
    same as f64 / (r * r * r) as f64
}

#[test]
fn criterion_3_voxelizer() {
    let sphere = make_sphere_template();
    let cube = primitives::cube(0.61);
    let (a_sphere, a_cube) = (agreement(&sphere), agreement(&cube));

    let bounds = Bounds::default();
    let vs: VoxelGrid = voxelize(&sphere, bounds);
    let vc = voxelize(&cube, bounds);
    let pyramid = voxelize(&primitives::pyramid(0.6, 1.1), bounds);
    let symmetric = iou3d(&vs, &vc).unwrap() == iou3d(&vc, &vs).unwrap()
        && iou3d(&vs, &pyramid).unwrap() == iou3d(&pyramid, &vs).unwrap();
    let self_one = [&vs, &vc, &pyramid].iter().all(|g| iou3d(g, g).unwrap() == 1.0);
    // [-0.5, 0.5]^3 against its x < 0 half; both faces lie on grid planes
    let whole = voxelize(&primitives::cube(0.5), bounds);
    let half = voxelize(&primitives::cuboid([0.25, 0.5, 0.5]).translated([-0.25, 0.0, 0.0]), bounds);
    let nested = iou3d(&whole, &half).unwrap();

    let pass = a_sphere >= 0.99 && a_cube >= 0.99 && symmetric && self_one && nested == 0.5;
    verdict(
        3,
        pass,
        format!(
            "oracle agreement sphere {:.4}, cube {:.4}; symmetry {symmetric}, self-IoU 1 {self_one}, nested half {nested}",
            a_sphere, a_cube
        ),
    );
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_6_brightness_perturbation() {
    let size = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = ImageRGB {
        size,
        data: (0..3 * size * size).map(|_| rng.random_range(0.0..1.0)).collect(),
    };
    let mut sil = GrayMap::zeros(size);
    for (i, v) in sil.data.iter_mut().enumerate() {
        *v = if (i / size) % 3 == 0 { 1.0 } else { 0.0 };
    }

    let unchanged = perturb_brightness(&img, &sil, 0.0, &mut rng).unwrap().data == img.data;

    let ones = GrayMap::filled(size, 1.0);
    let sigma = 0.7;
    let mut reduction = true;
    for seed in 0..20 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, sigma).unwrap().sample(&mut r.clone()) as f32;
        let out = perturb_brightness(&img, &ones, sigma, &mut r).unwrap();
        reduction &= out.data.iter().zip(&img.data).all(|(&o, &v)| o == v * (1.0 + n1));
    }

    let bright = ImageRGB::filled(size, 0.95);
    let mut max = f32::MIN;
    for seed in 0..20 {
        let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
        let out = perturb_brightness(&bright, &sil, 4.0, &mut r).unwrap();
        max = max.max(out.data.iter().copied().fold(f32::MIN, f32::max));
    }
    verdict(
        6,
        unchanged && reduction && max > 1.0,
        format!("sigma 0 identity {unchanged}, Sil=1 reduction exact {reduction}, max value at sigma 4 {max:.3}"),
    );
}

// ---------------------------------------------------------------- criterion 7

fn tiny_set() -> TrainingSet {
    let ds = make_toy_dataset(&ToySpec {
        counts: vec![(Shape::Cube, 2), (Shape::Sphere, 2), (Shape::Pyramid, 2)],
        image_size: 32,
        seed: 3,
        ..ToySpec::default()
    })
    .unwrap();
    TrainingSet::new(ds, PerturbSpec::default()).unwrap()
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        cycles: 2,
        da_iters_per_cycle: 3,
        recon_iters_per_cycle: 3,
        batch_size: 2,
        image_size: 32,
        seed: 21,
        ..TrainConfig::default()
    }
}

fn correlation(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&x| x as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&x| x as f64).sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64 - ma, y as f64 - mb);
        cov += x * y;
        va += x * x;
        vb += y * y;
    }
    cov / (va * vb).sqrt()
}

fn conv_weights(state: &[(String, Vec<f32>)]) -> Vec<f32> {
    state
        .iter()
        .filter(|(name, v)| name.ends_with("weight") && v.len() > 1000)
        .flat_map(|(_, v)| v.iter().copied())
        .collect()
}

#[test]
fn criterion_7_training_loop_audits() {
    let set = tiny_set();
    let mut tr = Trainer::new(tiny_config(), &set).unwrap();

    // freeze contracts
    tr.begin_cycle().unwrap();
    let recon_before = tr.state.recon.state();
    let i2r_before = tr.state.da.i2r.state();
    tr.train_da_phase(3).unwrap();
    let r_frozen = tr.state.recon.state() == recon_before;
    let da_moved = tr.state.da.i2r.state() != i2r_before;
    let da_before = (tr.state.da.i2r.state(), tr.state.da.r2i.state(), tr.state.da.d.state());
    tr.train_recon_phase(3).unwrap();
    let da_frozen = (tr.state.da.i2r.state(), tr.state.da.r2i.state(), tr.state.da.d.state()) == da_before;
    let r_moved = tr.state.recon.state() != recon_before;
    tr.state.cycle_index += 1;

    // re-initialization: the next cycle's networks are independent draws
    let trained = tr.state.da.i2r.state();
    tr.begin_cycle().unwrap();
    let fresh = tr.state.da.i2r.state();
    let first = Trainer::new(tiny_config(), &set).unwrap().state.da.i2r.state();
    let corr_trained = correlation(&conv_weights(&trained), &conv_weights(&fresh)).abs();
    let corr_init = correlation(&conv_weights(&first), &conv_weights(&fresh)).abs();
    let reinit = fresh != trained && corr_trained < 0.05 && corr_init < 0.05;

    // resume through a serialized checkpoint
    let config = tiny_config();
    let straight = run_training(&config, &set, None, None, |_, _| Ok(())).unwrap();
    let one = run_training(&TrainConfig { cycles: 1, ..config.clone() }, &set, None, None, |_, _| Ok(())).unwrap();
    let bytes = one.final_checkpoint.to_bytes().unwrap();
    let restored = Checkpoint::from_bytes(&bytes).unwrap();
    let resumed = run_training(&config, &set, None, Some(&restored), |_, _| Ok(())).unwrap();
    let mut worst = 0.0f32;
    let same_keys = straight.final_checkpoint.tensors.keys().eq(resumed.final_checkpoint.tensors.keys());
    for (name, a) in &straight.final_checkpoint.tensors {
        let b = &resumed.final_checkpoint.tensors[name];
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    }
    let logs_match = straight.log[one.log.len()..] == resumed.log[..];
    let resume_ok = same_keys && worst <= 1e-5 && logs_match;

    verdict(
        7,
        r_frozen && da_frozen && r_moved && da_moved && reinit && resume_ok,
        format!(
            "R frozen during DA {r_frozen}, DA frozen during recon {da_frozen}, \
             reinit |corr| {corr_trained:.4}/{corr_init:.4}, resume max diff {worst:e}, logs match {logs_match}"
        ),
    );
}

// ------------------------------------------------------- toy end-to-end runs

const TOY_SEED: u64 = 1;
const TRAIN_SEED: u64 = 7;
const PERTURB_SEED: u64 = 11;
/// Sphere-baseline mean IoU on the toy dataset, computed once with the
/// voxelizer and frozen as a regression value.
const FROZEN_SPHERE_BASELINE: f64 = 0.1252895148669787;

fn toy_dataset() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| {
        make_toy_dataset(&ToySpec {
            counts: vec![(Shape::Cube, 10), (Shape::Sphere, 10), (Shape::Pyramid, 10)],
            image_size: 32,
            seed: TOY_SEED,
            ..ToySpec::default()
        })
        .unwrap()
    })
}

fn toy_config() -> TrainConfig {
    TrainConfig {
        cycles: 3,
        da_iters_per_cycle: 300,
        recon_iters_per_cycle: 400,
        batch_size: 8,
        image_size: 32,
        seed: TRAIN_SEED,
        ..TrainConfig::default()
    }
}

struct ToyRun {
    log: Vec<LogRow>,
    reports: Vec<CycleReport>,
    checkpoint_digest: u64,
    /// Digest with the perturbation stream's state left out. That stream is
    /// seeded from the perturbation seed and stored even when it never draws.
    behaviour_digest: u64,
    mean_iou: f64,
    per_class: Vec<(String, f64)>,
    duration: Duration,
}

fn digest(ck: &Checkpoint, with_perturb_stream: bool) -> u64 {
    let mut header = ck.header.clone();
    if !with_perturb_stream {
        header.rngs.perturb = ChaCha8Rng::seed_from_u64(0);
    }
    let mut h = DefaultHasher::new();
    serde_json::to_string(&header).unwrap().hash(&mut h);
    for (name, values) in &ck.tensors {
        name.hash(&mut h);
        for v in values {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn toy_run(perturb: PerturbSpec) -> ToyRun {
    let ds = toy_dataset();
    let set = TrainingSet::new(ds.clone(), perturb).unwrap();
    let start = Instant::now();
    let mut out = run_training(&toy_config(), &set, None, None, |_, _| Ok(())).unwrap();
    let duration = start.elapsed();
    let report = evaluate_model(&mut out.state.recon, ds, &EvalOptions::default()).unwrap();
    ToyRun {
        log: out.log,
        reports: out.reports,
        checkpoint_digest: digest(&out.final_checkpoint, true),
        behaviour_digest: digest(&out.final_checkpoint, false),
        mean_iou: report.summary.mean_iou,
        per_class: report.summary.per_class.into_iter().collect(),
        duration,
    }
}

struct ToyRuns {
    a: ToyRun,
    a_repeat: ToyRun,
    a_sigma0: ToyRun,
    b_sigma5: ToyRun,
}

fn toy_runs() -> &'static ToyRuns {
    static RUNS: OnceLock<ToyRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let az = |sigma| PerturbSpec {
            azimuth_sigma: sigma,
            brightness_sigma: 0.0,
            seed: PERTURB_SEED,
        };
        ToyRuns {
            a: toy_run(PerturbSpec::default()),
            a_repeat: toy_run(PerturbSpec::default()),
            a_sigma0: toy_run(az(0.0)),
            b_sigma5: toy_run(az(5.0)),
        }
    })
}

fn fmt_classes(run: &ToyRun) -> String {
    run.per_class.iter().map(|(c, v)| format!("{c} {v:.4}")).collect::<Vec<_>>().join(", ")
}

#[test]
fn criterion_4_coevolution_smoke_test() {
    let baseline = sphere_baseline(toy_dataset(), &EvalOptions::default()).unwrap().summary.mean_iou;
    let frozen_ok = baseline == FROZEN_SPHERE_BASELINE;
    let run = &toy_runs().a;
    let target = 1.2 * baseline;
    let iou_ok = run.mean_iou >= target && run.mean_iou > baseline;
    let content_ok = run.reports.iter().all(|r| r.content_last < r.content_first);
    let time_ok = run.duration < Duration::from_secs(4 * 3600);
    let content: Vec<String> = run
        .reports
        .iter()
        .map(|r| format!("{:.4}->{:.4}", r.content_first, r.content_last))
        .collect();
    verdict(
        4,
        frozen_ok && iou_ok && content_ok && time_ok,
        format!(
            "final mean IoU {:.4} ({}) vs sphere baseline {baseline:.4} (frozen match {frozen_ok}), \
             needs >= {target:.4}; content loss per cycle {}; {:.0}s",
            run.mean_iou,
            fmt_classes(run),
            content.join(", "),
            run.duration.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_5_azimuth_robustness() {
    let runs = toy_runs();
    let (a, b) = (&runs.a, &runs.b_sigma5);
    let rel = (b.mean_iou - a.mean_iou).abs() / a.mean_iou;
    let identical = runs.a_sigma0.log == a.log && runs.a_sigma0.behaviour_digest == a.behaviour_digest;
    verdict(
        5,
        rel <= 0.25 && identical,
        format!(
            "IoU at sigma 0 {:.4}, at sigma 5 {:.4} (relative difference {:.3}); sigma 0 run bitwise equal to unperturbed in log, weights and optimizer state {identical}",
            a.mean_iou, b.mean_iou, rel
        ),
    );
}

#[test]
fn criterion_8_determinism() {
    let runs = toy_runs();
    let logs = runs.a.log == runs.a_repeat.log;
    let checkpoints = runs.a.checkpoint_digest == runs.a_repeat.checkpoint_digest;
    verdict(
        8,
        logs && checkpoints,
        format!(
            "{} log rows identical {logs}; final checkpoints identical {checkpoints}",
            runs.a.log.len()
        ),
    );
}
