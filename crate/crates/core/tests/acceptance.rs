//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! ```bash
//! cargo test --release --test acceptance            # all criteria
//! cargo test --release --test acceptance -- 3 5     # a subset
//! ```

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use relpose::camera::{build_frustum, frustums_overlap, overlapping_pairs, separation_margin, CameraIntrinsics, Frustum};
use relpose::epipolar::{decompose_essential, estimate_essential, estimate_relative_pose, normalize_points, RansacConfig};
use relpose::eval::{default_bin_edges, pair_errors, render_svg, ErrorReport, Metric};
use relpose::geom::{relative_pose, roe, rte, AbsolutePose, Quaternion, RelativePose, Rotation3};
use relpose::nn::{grad_check, graph_objective, ConvSpec, GradCheckConfig, Graph, PoolSpec, SppSpec, Tensor, Var};
use relpose::regressor::{
    build_model, load_samples, load_weights, median_errors, pose_loss, save_weights, train, write_train_log,
    ModelConfig, Preset, SiameseModel, TrainConfig,
};
use relpose::synth::{build_dataset, make_box_correspondences, sample_box_pose, BoxScene, DatasetConfig, MatchNoise};

type Outcome = Result<String, String>;
type Criterion<'a> = (usize, &'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

fn random_unit_quat(r: &mut ChaCha8Rng) -> Quaternion {
    let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(r));
    Quaternion::new(v[0], v[1], v[2], v[3]).normalize().unwrap()
}

// ---------------------------------------------------------------- 1

type OpBuilder = fn(&mut Graph<'_>, &[Var]) -> Result<Var, relpose::nn::NnError>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpBuilder)> {
    vec![
        ("conv", vec![vec![1, 2, 7, 7], vec![3, 2, 3, 3], vec![3], vec![1, 3, 4, 4]], |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], ConvSpec::new(3, 3, 2, 1)?)?;
            g.euclidean_loss(y, v[3])
        }),
        ("maxpool", vec![vec![1, 2, 7, 7], vec![1, 2, 3, 3]], |g, v| {
            let y = g.maxpool2d(v[0], PoolSpec::new(3, 2)?)?;
            g.euclidean_loss(y, v[1])
        }),
        ("relu", vec![vec![2, 15], vec![2, 15]], |g, v| {
            let y = g.relu(v[0]);
            g.euclidean_loss(y, v[1])
        }),
        ("linear", vec![vec![2, 5], vec![3, 5], vec![3], vec![2, 3]], |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            g.euclidean_loss(y, v[3])
        }),
        ("concat", vec![vec![1, 4], vec![1, 3], vec![1, 7]], |g, v| {
            let y = g.concat(&[v[0], v[1]])?;
            g.euclidean_loss(y, v[2])
        }),
        ("spp", vec![vec![1, 2, 9, 9], vec![1, 2 * 21]], |g, v| {
            let y = g.spp(v[0], &SppSpec::new(vec![1, 2, 4])?)?;
            g.euclidean_loss(y, v[1])
        }),
        ("euclidean", vec![vec![1, 7], vec![1, 7]], |g, v| g.euclidean_loss(v[0], v[1])),
    ]
}

fn criterion_1() -> Outcome {
    const SEEDS: u64 = 20;
    let start = Instant::now();
    let mut worst: Vec<(String, f64)> = Vec::new();
    for (name, shapes, build) in op_cases() {
        let mut w: f64 = 0.0;
        for seed in 0..SEEDS {
            let mut r = rng(seed);
            let inputs: Vec<Tensor> = shapes.iter().map(|s| random_tensor(&mut r, s, 1.0)).collect();
            let report = grad_check(&inputs, graph_objective(build), GradCheckConfig::default()).map_err(|e| e.to_string())?;
            w = w.max(report.max_rel_error());
        }
        worst.push((name.to_string(), w));
    }

    // the full tiny Siamese pipeline, every parameter tensor, 32x32 inputs
    let cfg = ModelConfig::preset(Preset::Tiny);
    let check_cfg = GradCheckConfig { max_per_input: Some(40), ..GradCheckConfig::default() };
    let mut w: f64 = 0.0;
    for seed in 0..SEEDS {
        let model = build_model(&cfg, seed).map_err(|e| e.to_string())?;
        let mut r = rng(1000 + seed);
        let a = random_tensor(&mut r, &[1, 3, 32, 32], 0.5);
        let b = random_tensor(&mut r, &[1, 3, 32, 32], 0.5);
        let q = random_unit_quat(&mut r);
        let gt = RelativePose::new(q, Vector3::new(r.random(), r.random(), 1.0)).unwrap();
        let f = |params: &[Tensor]| {
            let m = SiameseModel::from_parameters(&cfg, params.to_vec()).map_err(|e| relpose::nn::NnError::InvalidSpec(e.to_string()))?;
            m.loss_and_gradients(&a, &b, &gt, 10.0).map_err(|e| relpose::nn::NnError::InvalidSpec(e.to_string()))
        };
        let report = grad_check(model.parameters(), f, check_cfg).map_err(|e| e.to_string())?;
        w = w.max(report.max_rel_error());
    }
    worst.push(("siamese".to_string(), w));

    let elapsed = start.elapsed();
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let list: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    check(
        max < 1e-4 && within(elapsed, 60.0),
        format!("{SEEDS} seeds, max rel error {max:.2e} < 1e-4 [{}], {:.1}s < 60s", list.join(", "), elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let a = ModelConfig::preset(Preset::CnnA).feature_map(227);
    let b = ModelConfig::preset(Preset::CnnB).feature_map(227);
    let bspp = ModelConfig::preset(Preset::CnnBSpp);
    let spec = bspp.spp.clone().unwrap();
    let mut dims = Vec::new();
    for size in [227, 323] {
        let (c, h, w) = bspp.feature_map(size).ok_or(format!("cnnBspp rejects {size}"))?;
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, c, h, w]));
        let y = g.spp(x, &spec).map_err(|e| e.to_string())?;
        dims.push(g.value(y).len());
    }
    check(
        a == Some((256, 6, 6)) && b == Some((256, 13, 13)) && dims == [219 * 256, 219 * 256],
        format!("cnnA {a:?}, cnnB {b:?}, cnnBspp output {dims:?} (expected 56064 for both)"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let level_sets = [vec![1, 2, 3, 6], vec![1, 2, 3, 6, 13], vec![1, 2, 4]];
    let mut cases = 0usize;
    for levels in &level_sets {
        let spec = SppSpec::new(levels.clone()).unwrap();
        let max = *levels.last().unwrap();
        for a in max..=256 {
            for &n in levels {
                let (w, s) = SppSpec::window(a, n);
                let (w_ref, s_ref) = (a.div_ceil(n), a / n);
                if (w, s) != (w_ref, s_ref) {
                    return Err(format!("a={a} n={n}: window {w}/{s}, expected {w_ref}/{s_ref}"));
                }
                if (n - 1) * s + w > a || s == 0 || w < s {
                    return Err(format!("a={a} n={n}: windows leave the map or have gaps"));
                }
            }
            // pooled values equal the maximum over the formula windows
            let mut r = rng(a as u64);
            let x = random_tensor(&mut r, &[1, 1, a, a], 1.0);
            let mut g = Graph::new();
            let v = g.input(x.clone());
            let y = g.spp(v, &spec).map_err(|e| e.to_string())?;
            let out = g.value(y).data();
            let mut k = 0;
            for &n in levels {
                let (w, s) = (a.div_ceil(n), a / n);
                for bi in 0..n {
                    for bj in 0..n {
                        let mut m = f64::NEG_INFINITY;
                        for i in bi * s..bi * s + w {
                            for j in bj * s..bj * s + w {
                                m = m.max(x.data()[i * a + j]);
                            }
                        }
                        if out[k] != m {
                            return Err(format!("a={a} n={n} bin ({bi},{bj}): {} vs {m}", out[k]));
                        }
                        k += 1;
                    }
                }
            }
            cases += 1;
        }
    }
    let elapsed = start.elapsed();
    check(within(elapsed, 5.0), format!("{cases} (levels, size) cases exact, {:.2}s < 5s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let gt = RelativePose::new(Quaternion::IDENTITY, Vector3::z()).unwrap();
    let v = gt.to_vector();
    let zero = pose_loss(&v, &gt, 10.0);
    let mut p = v;
    p[3] += 0.1;
    let one = pose_loss(&p, &gt, 10.0);
    let linear = [0.5, 1.0, 10.0, 37.0].iter().all(|&b| pose_loss(&p, &gt, b) == b * pose_loss(&p, &gt, 1.0));
    check(zero == 0.0 && one == 1.0 && linear, format!("L(gt) = {zero}, L(|dq err| = 0.1, beta 10) = {one}, linear in beta: {linear}"))
}

// ---------------------------------------------------------------- 5

fn rotation_matrix(q: &Quaternion) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let q = Quaternion::from_axis_angle(&Vector3::new(0.3, -0.2, 0.9), 1.1);
    let z90 = Quaternion::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
    let t = Vector3::new(0.2, -0.5, 0.8);
    let ids = [
        roe(&q, &q).unwrap(),
        roe(&q, &q.neg()).unwrap(),
        roe(&Quaternion::IDENTITY, &z90).unwrap() - 90.0,
        rte(&t, &t).unwrap(),
        rte(&t, &-t).unwrap() - 180.0,
    ];
    let ids_ok = ids.iter().all(|e| e.abs() <= 1e-9);

    let mut r = rng(5);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let (a, b) = (random_unit_quat(&mut r), random_unit_quat(&mut r));
        let tr = (rotation_matrix(&a).transpose() * rotation_matrix(&b)).trace();
        let oracle = ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees();
        worst = worst.max((roe(&a, &b).unwrap() - oracle).abs());
    }
    let elapsed = start.elapsed();
    check(
        ids_ok && worst < 1e-6 && within(elapsed, 10.0),
        format!(
            "identities max dev {:.1e}, trace oracle max diff {worst:.1e} deg over 1e4 pairs, {:.2}s",
            ids.iter().map(|e| e.abs()).fold(0.0, f64::max),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let k = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0, 640, 480).unwrap();
    let scene = BoxScene::default();
    let identity = AbsolutePose::identity();

    let mut closed = 0;
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let pose2 = sample_box_pose(seed, &scene, 20.0, 1.5);
        let gt = relative_pose(&identity, &pose2).unwrap();
        let (set, _) = make_box_correspondences(&scene, &pose2, &k, 20, &MatchNoise::NONE, seed).map_err(|e| e.to_string())?;
        let m = normalize_points(&set);
        let est = estimate_essential(&m).and_then(|e| decompose_essential(&e, &m));
        if let Ok(p) = est {
            let (eo, et) = (roe(&p.dq, &gt.dq).unwrap(), rte(&p.dt, &gt.dt).unwrap());
            worst = (worst.0.max(eo), worst.1.max(et));
            if eo < 0.1 && et < 0.1 {
                closed += 1;
            }
        }
    }

    let noise = MatchNoise { noise_px: 0.5, outlier_ratio: 0.3 };
    let (mut kept, mut total) = (0usize, 0usize);
    let (mut roes, mut rtes) = (Vec::new(), Vec::new());
    for seed in 0..100 {
        let pose2 = sample_box_pose(seed, &scene, 20.0, 1.5);
        let gt = relative_pose(&identity, &pose2).unwrap();
        let (set, _) = make_box_correspondences(&scene, &pose2, &k, 100, &noise, 1000 + seed).map_err(|e| e.to_string())?;
        let truth = set.inlier_mask.clone().unwrap();
        total += truth.iter().filter(|&&b| b).count();
        let cfg = RansacConfig { threshold: 2.5e-3, seed, ..RansacConfig::default() };
        match estimate_relative_pose(&set, &cfg) {
            Ok(est) => {
                kept += est.inliers.iter().zip(&truth).filter(|(&a, &b)| a && b).count();
                roes.push(roe(&est.pose.dq, &gt.dq).unwrap());
                rtes.push(rte(&est.pose.dt, &gt.dt).unwrap());
            }
            Err(_) => {
                roes.push(180.0);
                rtes.push(180.0);
            }
        }
    }
    let recovered = kept as f64 / total as f64;
    let med = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (v[49] + v[50]) / 2.0
    };
    let (mroe, mrte) = (med(&mut roes), med(&mut rtes));
    let elapsed = start.elapsed();
    check(
        closed == 100 && recovered >= 0.95 && mroe < 2.0 && mrte < 5.0 && within(elapsed, 120.0),
        format!(
            "noiseless {closed}/100 within 0.1 deg (worst ROE {:.1e}, RTE {:.1e}); noisy: {:.1}% inliers recovered, \
             median ROE {mroe:.3} deg, RTE {mrte:.3} deg; {:.1}s",
            worst.0,
            worst.1,
            100.0 * recovered,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn look_along(center: Vector3<f64>, yaw: f64, pitch: f64, roll: f64) -> AbsolutePose {
    let q = Quaternion::from_axis_angle(&Vector3::z(), roll)
        .mul(&Quaternion::from_axis_angle(&Vector3::x(), pitch))
        .mul(&Quaternion::from_axis_angle(&Vector3::y(), yaw));
    let r = Rotation3::from_quaternion(&q).unwrap();
    AbsolutePose::new(r, -r.apply(&center))
}

fn colocated(n: usize) -> usize {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
    let mut r = rng(n as u64);
    let cams: Vec<_> = (0..n)
        .map(|_| {
            let a = |r: &mut ChaCha8Rng| r.random_range(-10f64..10.0).to_radians();
            (k, look_along(Vector3::new(1.0, 2.0, 3.0), a(&mut r), a(&mut r), a(&mut r)))
        })
        .collect();
    overlapping_pairs(&cams, 0.1, 10.0).unwrap().len()
}

/// Overlap by sampling the intersection of the two bounding boxes.
fn monte_carlo_overlap(f1: &Frustum, f2: &Frustum, samples: usize, r: &mut ChaCha8Rng) -> bool {
    let (lo1, hi1) = f1.bounds();
    let (lo2, hi2) = f2.bounds();
    let (lo, hi) = (lo1.sup(&lo2), hi1.inf(&hi2));
    if (0..3).any(|i| lo[i] > hi[i]) {
        return false;
    }
    (0..samples).any(|_| {
        let p = Vector3::new(r.random_range(lo.x..=hi.x), r.random_range(lo.y..=hi.y), r.random_range(lo.z..=hi.z));
        f1.contains(&p, 0.0) && f2.contains(&p, 0.0)
    })
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let (n49, n64) = (colocated(49), colocated(64));

    let k = CameraIntrinsics::new(400.0, 400.0, 320.0, 240.0, 640, 480).unwrap();
    let (mut agree, mut borderline, mut hard, mut overlapping) = (0, 0, 0, 0);
    for scene in 0..50u64 {
        let mut r = rng(7000 + scene);
        let mut pose = || {
            let c = Vector3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
            let a = std::f64::consts::PI;
            look_along(c, r.random_range(-a..a), r.random_range(-a / 2.0..a / 2.0), r.random_range(-a..a))
        };
        let poses = [pose(), pose()];
        let f1 = build_frustum(&k, &poses[0], 0.1, 4.0).unwrap();
        let f2 = build_frustum(&k, &poses[1], 0.1, 4.0).unwrap();
        let sat = frustums_overlap(&f1, &f2);
        let mc = monte_carlo_overlap(&f1, &f2, 100_000, &mut r);
        overlapping += sat as usize;
        if sat == mc {
            agree += 1;
        } else if separation_margin(&f1, &f2).abs() < 0.02 {
            borderline += 1;
        } else {
            hard += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        n49 == 1176 && n64 == 2016 && hard == 0 && within(elapsed, 120.0),
        format!(
            "49 -> {n49} pairs, 64 -> {n64}; SAT vs 1e5-sample oracle on 50 scenes ({overlapping} overlapping): \
             {agree} agree, {borderline} borderline, {hard} disagreements; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8(dir: &Path) -> Outcome {
    const SEED: u64 = 0;
    let start = Instant::now();
    let (n_train, n_val) = (2000, 200);
    let cfg = DatasetConfig::default();
    let ratio = n_train as f64 / (n_train + n_val) as f64;
    let (tr, va) = build_dataset(n_train + n_val, ratio, &cfg, SEED, dir).map_err(|e| e.to_string())?;
    if tr.len() != n_train || cfg.image_size != 64 || cfg.max_rotation_deg != 30.0 {
        return Err(format!("dataset setup: {} train pairs, {} px", tr.len(), cfg.image_size));
    }
    let (train_set, val_set) = (load_samples(&tr).map_err(|e| e.to_string())?, load_samples(&va).map_err(|e| e.to_string())?);

    let mut model = build_model(&ModelConfig::preset(Preset::Tiny), SEED).map_err(|e| e.to_string())?;
    let (untrained, _) = median_errors(&model, &val_set).map_err(|e| e.to_string())?;
    let mut gt_angles: Vec<f64> = val_set.iter().map(|s| roe(&Quaternion::IDENTITY, &s.gt.dq).unwrap()).collect();
    gt_angles.sort_by(f64::total_cmp);
    let chance = (gt_angles[99] + gt_angles[100]) / 2.0;

    let tc = TrainConfig { lr: 1e-4, weight_decay: 1e-5, batch_size: 32, epochs: 10, seed: SEED, ..TrainConfig::default() };
    let log = train(&mut model, &train_set, &val_set, &tc, |_| {}).map_err(|e| e.to_string())?;
    let (first, last) = (log[0].train_loss, log[log.len() - 1].train_loss);
    let trained = log[log.len() - 1].val_median_roe_deg;
    let elapsed = start.elapsed();
    check(
        last <= 0.5 * first && trained < untrained && trained < chance && within(elapsed, 1200.0),
        format!(
            "loss {first:.4} -> {last:.4} (ratio {:.3}, need <= 0.5); val median ROE {trained:.2} deg vs untrained \
             {untrained:.2}, identity {chance:.2}; {:.0}s",
            last / first,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn files_equal(a: &Path, b: &Path) -> bool {
    std::fs::read(a).ok().is_some_and(|x| std::fs::read(b).ok().is_some_and(|y| x == y))
}

fn train_run(data: &Path, out: &Path) -> Result<SiameseModel, String> {
    let e = |e: relpose::regressor::RegressorError| e.to_string();
    let train_set = relpose::regressor::load_samples_from(&data.join("train.jsonl")).map_err(e)?;
    let val_set = relpose::regressor::load_samples_from(&data.join("val.jsonl")).map_err(e)?;
    let mut model = build_model(&ModelConfig::preset(Preset::Tiny), 9).map_err(e)?;
    let tc = TrainConfig { batch_size: 4, epochs: 2, seed: 9, ..TrainConfig::default() };
    let log = train(&mut model, &train_set, &val_set, &tc, |_| {}).map_err(e)?;
    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    write_train_log(&mut buf, &log).map_err(|e| e.to_string())?;
    std::fs::write(out.join("train_log.csv"), buf).map_err(|e| e.to_string())?;
    save_weights(&model, &out.join("weights.rpw")).map_err(e)?;
    Ok(model)
}

fn criterion_9(dir: &Path) -> Outcome {
    let cfg = DatasetConfig::default();
    let (a, b) = (dir.join("data_a"), dir.join("data_b"));
    build_dataset(16, 0.75, &cfg, 21, &a).map_err(|e| e.to_string())?;
    build_dataset(16, 0.75, &cfg, 21, &b).map_err(|e| e.to_string())?;
    let mut files = vec!["train.jsonl".to_string(), "val.jsonl".into(), "poses.txt".into(), "dataset.json".into()];
    for i in 0..16 {
        files.push(format!("images/{i:06}_1.ppm"));
        files.push(format!("images/{i:06}_2.ppm"));
    }
    let data_same = files.iter().all(|f| files_equal(&a.join(f), &b.join(f)));

    let model = train_run(&a, &dir.join("run_a"))?;
    train_run(&b, &dir.join("run_b"))?;
    let log_same = files_equal(&dir.join("run_a/train_log.csv"), &dir.join("run_b/train_log.csv"));
    let weights_same = files_equal(&dir.join("run_a/weights.rpw"), &dir.join("run_b/weights.rpw"));

    let loaded = load_weights(&dir.join("run_a/weights.rpw"), model.config()).map_err(|e| e.to_string())?;
    let val = relpose::regressor::load_samples_from(&a.join("val.jsonl")).map_err(|e| e.to_string())?;
    let mut bit_exact = true;
    for s in &val {
        let (x, y) = (s.img1.to_tensor(), s.img2.to_tensor());
        let (p, q) = (model.forward_pair(&x, &y).unwrap(), loaded.forward_pair(&x, &y).unwrap());
        bit_exact &= p.iter().zip(&q).all(|(u, v)| u.to_bits() == v.to_bits());
    }
    check(
        data_same && log_same && weights_same && bit_exact,
        format!(
            "dataset files identical: {data_same} ({} files), train log: {log_same}, weights: {weights_same}, \
             reload predictions bit-exact: {bit_exact}",
            files.len()
        ),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let mut r = rng(10);
    let gts: Vec<RelativePose> = (0..101)
        .map(|_| RelativePose::new(random_unit_quat(&mut r), Vector3::new(r.random(), r.random(), r.random())).unwrap())
        .collect();
    let noisy = |r: &mut ChaCha8Rng, spread: f64| -> Vec<RelativePose> {
        gts.iter()
            .map(|g| {
                let d = Quaternion::from_axis_angle(&Vector3::new(r.random(), r.random(), 1.0), r.random_range(0.0..spread));
                RelativePose::new(g.dq.mul(&d), g.dt + Vector3::new(r.random(), 0.0, 0.0) * spread / 90.0).unwrap()
            })
            .collect()
    };
    let (p1, p2) = (noisy(&mut r, 0.3), noisy(&mut r, 3.0));
    let build = || {
        let mut recs = pair_errors("a", &p1, &gts).unwrap();
        recs.extend(pair_errors("b", &p2, &gts).unwrap());
        ErrorReport::new(recs, default_bin_edges()).unwrap()
    };
    let report = build();
    let mut problems = Vec::new();
    for m in &report.methods {
        for (name, cum) in [("roe", &m.roe_cumulative), ("rte", &m.rte_cumulative)] {
            if cum.windows(2).any(|w| w[1] < w[0]) || *cum.last().unwrap() != 1.0 {
                problems.push(format!("{} {name} histogram", m.method));
            }
        }
        let mine: Vec<_> = report.records.iter().filter(|e| e.method == m.method).collect();
        let median = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
        };
        let (ro, rt) = (median(mine.iter().map(|e| e.roe_deg).collect()), median(mine.iter().map(|e| e.rte_deg).collect()));
        if ro != m.median_roe_deg || rt != m.median_rte_deg {
            problems.push(format!("{} medians {ro}/{rt} vs {}/{}", m.method, m.median_roe_deg, m.median_rte_deg));
        }
    }
    let svg = render_svg(&report, Metric::Roe);
    let again = render_svg(&build(), Metric::Roe);
    let reloaded = render_svg(&ErrorReport::from_json(&report.to_json()).unwrap(), Metric::Roe);
    if svg != again || svg != reloaded {
        problems.push("svg not deterministic".into());
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} methods: histograms monotone ending at 1, medians match, svg stable ({} bytes)", report.methods.len(), svg.len())
        } else {
            problems.join("; ")
        },
    )
}

// ----------------------------------------------------------------

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let tmp = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<Criterion> = vec![
        (1, "gradient integrity", Box::new(criterion_1)),
        (2, "architecture shapes", Box::new(criterion_2)),
        (3, "spp window math", Box::new(criterion_3)),
        (4, "loss semantics", Box::new(criterion_4)),
        (5, "metric identities", Box::new(criterion_5)),
        (6, "baseline closure", Box::new(criterion_6)),
        (7, "frustum enumeration", Box::new(criterion_7)),
        (8, "learning beats chance", Box::new(|| criterion_8(&tmp.path().join("c8")))),
        (9, "determinism and persistence", Box::new(|| criterion_9(&tmp.path().join("c9")))),
        (10, "report integrity", Box::new(criterion_10)),
    ];
    let mut failed = 0;
    for (id, name, run) in &criteria {
        if !selected.is_empty() && !selected.contains(id) {
            continue;
        }
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(d) => println!("PASS  {id:>2} {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {id:>2} {name}: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
