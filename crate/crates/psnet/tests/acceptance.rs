//! Acceptance run: one PASS/FAIL/SKIP line per criterion and a count of
//! failures. Set `PSNET_ACCEPTANCE_STRICT` to exit nonzero when any fail.
//!
//! Criterion 6 needs the DiLiGenT objects converted to dataset directories
//! with a `normal_gt.pfm` ground truth; point `PSNET_DILIGENT` at the parent
//! directory (the one holding `ballPNG`, `bearPNG`, ...). Without it the
//! criterion is skipped.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use psnet::baseline::solve_map;
use psnet::eval::{angular_error, infer_with, score, EvalReport, InferOptions};
use psnet::io::{read_dataset, ReadOptions};
use psnet::nn::{gradcheck_suite, sepconv4d, Network, NetworkConfig, Tensor};
use psnet::pipeline::{train, AugmentConfig, TrainConfig};
use psnet::projection::{decode_heatmap, encode_heatmap, project_direction, unproject, DEFAULT_SIGMA};
use psnet::render::{render_scene, sample_hemisphere_lights, SceneSpec, Surface};
use psnet::{NormalMap, RenderedSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn geometry_round_trip() -> Outcome {
    let w = 48;
    let dirs = sample_hemisphere_lights(10_000, 80.0, 17).unwrap();
    let mut worst = 0.0f64;
    let mut decode_sum = 0.0;
    for l in &dirs {
        let d = l.direction();
        let back = unproject(&project_direction(&d, w).unwrap(), w);
        for (a, b) in back.to_array().iter().zip(d.to_array()) {
            worst = worst.max((a - b).abs());
        }
        let decoded = decode_heatmap(&encode_heatmap(&d, w, DEFAULT_SIGMA).unwrap()).unwrap();
        decode_sum += angular_error(&decoded, &d);
    }
    let mean = decode_sum / dirs.len() as f64;
    check(
        worst < 1e-9 && mean < 0.2,
        format!("max unproject∘project deviation {worst:.1e} (< 1e-9), mean decode error {mean:.4}° (< 0.2°)"),
    )
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let results = gradcheck_suite(0).unwrap();
    let elapsed = t.elapsed();
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).map(|r| r.name.clone()).collect();
    let worst = results.iter().map(|r| r.error / r.tolerance).fold(0.0, f64::max);
    check(
        failed.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{} checks, worst error/tolerance {worst:.2}, {:.1}s{}",
            results.len(),
            elapsed.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!(", failed: {failed:?}") }
        ),
    )
}

fn scale_equivariance() -> Outcome {
    let net: Network<f64> = Network::<f32>::new(NetworkConfig::default(), 3).unwrap().cast();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut shape = vec![2];
    shape.extend_from_slice(&net.config().patch_shape());
    let x = Tensor::from_fn(&shape, |_| rng.random_range(0.0..1.0));
    let base = net.forward(&x).unwrap();
    let mut worst = 0.0f64;
    for alpha in [0.1, 1.0, 10.0, 1000.0] {
        let y = net.forward(&x.scale(alpha)).unwrap();
        let expected = base.scale(alpha);
        let peak = expected.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(y.max_abs_diff(&expected) / peak);
    }
    check(worst < 1e-6, format!("max relative deviation {worst:.1e} (< 1e-6)"))
}

/// Dense 4D convolution whose kernel is the outer product of the two 2D
/// kernels: valid over the patch axes, zero-padded over the map axes.
fn dense_4d(x: &Tensor<f64>, ph: &Tensor<f64>, sp: &Tensor<f64>) -> Vec<f64> {
    let [b, _, w, _, cin] = <[usize; 5]>::try_from(x.shape()).unwrap();
    let k = ph.shape()[0];
    let cmid = ph.shape()[3];
    let cout = sp.shape()[3];
    let bo = b - k + 1;
    let half = (k / 2) as i64;
    let xi = |i: usize, j: usize, u: usize, v: usize, c: usize| (((i * b + j) * w + u) * w + v) * cin + c;
    let phi = |p: usize, q: usize, c: usize, m: usize| ((p * k + q) * cin + c) * cmid + m;
    let spi = |p: usize, q: usize, m: usize, o: usize| ((p * k + q) * cmid + m) * cout + o;
    let mut kernel = vec![0.0; k * k * k * k * cin * cout];
    let ki = |s0: usize, s1: usize, p0: usize, p1: usize, c: usize, o: usize| {
        ((((s0 * k + s1) * k + p0) * k + p1) * cin + c) * cout + o
    };
    for s0 in 0..k {
        for s1 in 0..k {
            for p0 in 0..k {
                for p1 in 0..k {
                    for c in 0..cin {
                        for o in 0..cout {
                            kernel[ki(s0, s1, p0, p1, c, o)] = (0..cmid)
                                .map(|m| ph.data()[phi(p0, p1, c, m)] * sp.data()[spi(s0, s1, m, o)])
                                .sum();
                        }
                    }
                }
            }
        }
    }
    let mut out = vec![0.0; bo * bo * w * w * cout];
    for i in 0..bo {
        for j in 0..bo {
            for u in 0..w {
                for v in 0..w {
                    for o in 0..cout {
                        let mut acc = 0.0;
                        for s0 in 0..k {
                            for s1 in 0..k {
                                for p0 in 0..k {
                                    for p1 in 0..k {
                                        let uu = u as i64 + p0 as i64 - half;
                                        let vv = v as i64 + p1 as i64 - half;
                                        if uu < 0 || vv < 0 || uu >= w as i64 || vv >= w as i64 {
                                            continue;
                                        }
                                        for c in 0..cin {
                                            acc += x.data()[xi(i + s0, j + s1, uu as usize, vv as usize, c)]
                                                * kernel[ki(s0, s1, p0, p1, c, o)];
                                        }
                                    }
                                }
                            }
                        }
                        out[(((i * bo + j) * w + u) * w + v) * cout + o] = acc;
                    }
                }
            }
        }
    }
    out
}

fn separable_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for (b, w, cin, cmid, cout, k) in [(3, 4, 1, 2, 1, 3), (5, 6, 2, 3, 2, 3), (5, 8, 2, 3, 2, 3), (5, 8, 2, 2, 3, 5)] {
        let mut r = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
        let x: Tensor<f64> = r(&[b, b, w, w, cin]);
        let ph = r(&[k, k, cin, cmid]);
        let sp = r(&[k, k, cmid, cout]);
        let fast = sepconv4d(&x, &ph, &sp).unwrap();
        for (a, e) in fast.data().iter().zip(dense_4d(&x, &ph, &sp)) {
            worst = worst.max((a - e).abs());
        }
    }
    check(worst < 1e-10, format!("max abs difference to the dense 4D oracle {worst:.1e} (< 1e-10)"))
}

fn sphere_region(sample: &RenderedSample, max_incl_deg: f64) -> NormalMap {
    let mut gt = sample.normals.clone();
    let keep: Vec<bool> = (0..gt.len())
        .map(|i| {
            gt.get(i / gt.width(), i % gt.width())
                .is_some_and(|n| n.inclination().to_degrees() <= max_incl_deg)
        })
        .collect();
    gt.restrict_to(&keep);
    gt
}

fn baseline_exactness() -> Outcome {
    let lights = sample_hemisphere_lights(96, 90.0, 4).unwrap();
    let sample = render_scene(&SceneSpec::sphere(128, 128), &lights).unwrap();
    let pred = solve_map(&sample, 0.0).unwrap();
    let s = score("sphere", &pred, &sphere_region(&sample, 70.0)).unwrap();
    check(
        s.mean < 0.1,
        format!("MAE {:.2e}° over {} pixels (< 0.1°)", s.mean, s.pixels),
    )
}

const DILIGENT: [&str; 10] = [
    "ballPNG", "bearPNG", "buddhaPNG", "catPNG", "cowPNG", "gobletPNG", "harvestPNG", "pot1PNG", "pot2PNG", "readingPNG",
];

fn baseline_diligent() -> Outcome {
    let Some(root) = std::env::var_os("PSNET_DILIGENT").map(PathBuf::from) else {
        return Outcome::Skip("PSNET_DILIGENT not set".into());
    };
    let mut objects = Vec::new();
    for name in DILIGENT {
        let dir = root.join(name);
        let sample = match read_dataset(&dir, &ReadOptions::for_object(name)) {
            Ok(s) => s,
            Err(e) => return Outcome::Fail(format!("{}: {e}", dir.display())),
        };
        let pred = solve_map(&sample, psnet::baseline::DEFAULT_SHADOW_THRESHOLD).unwrap();
        objects.push(score(name, &pred, &sample.normals).unwrap());
    }
    let report = EvalReport::new(objects);
    let ball = report.objects[0].mean;
    let avg = report.average();
    check(
        (ball - 4.10).abs() <= 1.0 && (avg - 15.39).abs() <= 1.0,
        format!("Ball {ball:.2}° (4.10 ± 1.0), average {avg:.2}° (15.39 ± 1.0)"),
    )
}

struct Toy {
    val_mae: f64,
    steps: u64,
    elapsed: Duration,
    test_k1: f64,
    test_k12: f64,
    baseline: f64,
}

const TOY_SIZE: usize = 128;
const TOY_SPECULAR: (f64, f64) = (0.5, 20.0);

fn toy_scene(seed: u64, lights: &[psnet::LightSource]) -> RenderedSample {
    let spec = SceneSpec::new(Surface::random_bumps(TOY_SIZE, TOY_SIZE, 12, seed), TOY_SIZE, TOY_SIZE)
        .with_specular(TOY_SPECULAR.0, TOY_SPECULAR.1);
    render_scene(&spec, lights).unwrap()
}

/// Trains the reduced network on eight scenes, then scores rotation-averaged
/// inference on two further scenes against the better of the unthresholded
/// and the default-thresholded least-squares baseline.
fn toy_training() -> Toy {
    let lights = sample_hemisphere_lights(64, 70.0, 1).unwrap();
    let data: Vec<_> = (0..8).map(|s| toy_scene(100 + s, &lights)).collect();
    let test: Vec<_> = (0..2).map(|s| toy_scene(200 + s, &lights)).collect();
    let cfg = NetworkConfig {
        blocks: 2,
        base_features: 8,
        patch_size: 3,
        map_size: 32,
        kernel: 3,
    };
    let tcfg = TrainConfig {
        epochs: 100,
        max_steps: Some(2400),
        log_every: 200,
        validation_pixels: 512,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let out = train(&data, &AugmentConfig::default(), &tcfg, Network::new(cfg, 0).unwrap()).unwrap();
    let elapsed = t.elapsed();

    let (mut k1, mut k12, mut base) = (0.0, 0.0, 0.0);
    for (i, scene) in test.iter().enumerate() {
        let pixels: Vec<usize> = (0..scene.mask().len()).filter(|&p| scene.mask()[p]).step_by(16).collect();
        let run = |k: usize| {
            let opts = InferOptions {
                rotations: k,
                pixels: Some(pixels.clone()),
                ..InferOptions::default()
            };
            infer_with(&out.best, scene, &opts).unwrap()
        };
        let (p1, p12) = (run(1), run(12));
        let mut gt = scene.normals.clone();
        gt.restrict_to(p1.mask());
        gt.restrict_to(p12.mask());
        let name = format!("test{i}");
        k1 += score(&name, &p1, &gt).unwrap().mean / test.len() as f64;
        k12 += score(&name, &p12, &gt).unwrap().mean / test.len() as f64;
        let best_baseline = [0.0, psnet::baseline::DEFAULT_SHADOW_THRESHOLD]
            .iter()
            .map(|&t| score(&name, &solve_map(scene, t).unwrap(), &gt).unwrap().mean)
            .fold(f64::INFINITY, f64::min);
        base += best_baseline / test.len() as f64;
    }
    Toy {
        val_mae: out.best_val_mae,
        steps: out.steps,
        elapsed,
        test_k1: k1,
        test_k12: k12,
        baseline: base,
    }
}

fn toy_criterion(toy: &Toy) -> Outcome {
    check(
        toy.val_mae < 10.0 && toy.test_k12 < toy.baseline && toy.elapsed < Duration::from_secs(1800),
        format!(
            "{} steps in {:.0}s; validation MAE {:.2}° (< 10°); test MAE {:.2}° vs Lambertian baseline {:.2}°",
            toy.steps,
            toy.elapsed.as_secs_f64(),
            toy.val_mae,
            toy.test_k12,
            toy.baseline
        ),
    )
}

fn k_test_benefit(toy: &Toy) -> Outcome {
    check(
        toy.test_k12 <= toy.test_k1 + 0.05,
        format!("K_test=12 {:.3}° vs K_test=1 {:.3}° (ties within 0.05°)", toy.test_k12, toy.test_k1),
    )
}

fn parameter_budget() -> Outcome {
    let n = Network::<f32>::new(NetworkConfig::default(), 0).unwrap().param_count();
    check(
        (300_000..=800_000).contains(&n),
        format!("{n} parameters in [3e5, 8e5]"),
    )
}

fn cli(args: &[&std::ffi::OsStr]) -> i32 {
    let mut argv = vec![std::ffi::OsStr::new("psnet")];
    argv.extend_from_slice(args);
    psnet::cli::run(argv)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let os = |s: &'static str| std::ffi::OsStr::new(s);
    let mut data = Vec::new();
    for (i, spec) in ["surface=sphere,height=24,seed=1", "surface=bumps,height=24,bumps=4,seed=2,specular_strength=0.5"]
        .iter()
        .enumerate()
    {
        let out = dir.path().join(format!("scene{i}"));
        let code = cli(&[
            os("render"),
            os("--spec"),
            std::ffi::OsStr::new(spec),
            os("--lights"),
            os("64"),
            os("--out"),
            out.as_os_str(),
        ]);
        if code != 0 {
            return Outcome::Fail(format!("render exited with {code}"));
        }
        data.push(out);
    }
    let config = dir.path().join("train.cfg");
    std::fs::write(
        &config,
        "blocks = 2\nbase_features = 4\npatch_size = 3\nmap_size = 16\nbatch_size = 8\nlog_every = 5\nvalidation_pixels = 64\nvalidation_fraction = 0.5\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let ckpt = dir.path().join(format!("run{run}.ckpt"));
        let mut args = vec![os("--threads"), os("1"), os("train"), os("--data")];
        args.extend(data.iter().map(|d| d.as_os_str()));
        args.extend([os("--config"), config.as_os_str(), os("--seed"), os("7"), os("--max-steps"), os("25")]);
        args.extend([os("--out"), ckpt.as_os_str()]);
        let code = cli(&args);
        if code != 0 {
            return Outcome::Fail(format!("train exited with {code}"));
        }
        let metrics = psnet::cli::with_suffix(&ckpt, ".metrics.csv");
        outputs.push((std::fs::read(&ckpt).unwrap(), std::fs::read(&metrics).unwrap()));
    }
    check(
        outputs[0] == outputs[1],
        format!(
            "checkpoints {} bytes, metric logs {} bytes, identical: {}",
            outputs[0].0.len(),
            outputs[0].1.len(),
            outputs[0] == outputs[1]
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters from other targets must not trigger
    // the full run.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }

    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (status, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {n:2} {name}: {status} ({detail})");
    };
    report(1, "geometry round trip", geometry_round_trip());
    report(2, "gradient correctness", gradient_correctness());
    report(3, "scale equivariance", scale_equivariance());
    report(4, "separable 4D equivalence", separable_equivalence());
    report(5, "baseline exactness", baseline_exactness());
    report(6, "baseline on DiLiGenT", baseline_diligent());
    let toy = toy_training();
    report(7, "toy training", toy_criterion(&toy));
    report(8, "K_test benefit", k_test_benefit(&toy));
    report(9, "parameter budget", parameter_budget());
    report(10, "determinism", determinism());
    println!("{failed} criteria failed");
    // Failing criteria are reported, not fatal, so that the rest of the test
    // suite still runs; set PSNET_ACCEPTANCE_STRICT to turn them into a
    // failing exit status.
    if failed > 0 && std::env::var_os("PSNET_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
