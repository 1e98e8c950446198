//! Trains a small network on synthetic bumpy scenes for a few hundred steps,
//! round-trips the checkpoint and compares test-time rotation counts against
//! the least-squares baseline on a held-out scene.

use psnet::baseline::solve_map;
use psnet::eval::{infer_with, score, InferOptions};
use psnet::nn::{load_checkpoint, save_checkpoint, Network, NetworkConfig};
use psnet::pipeline::{train, AugmentConfig, TrainConfig};
use psnet::render::{render_scene, sample_hemisphere_lights, Surface};
use psnet::{RenderedSample, SceneSpec};

fn scene(seed: u64) -> RenderedSample {
    let lights = sample_hemisphere_lights(64, 70.0, 1).expect("valid cap");
    let spec = SceneSpec::new(Surface::random_bumps(48, 48, 6, seed), 48, 48).with_specular(0.5, 20.0);
    render_scene(&spec, &lights).expect("valid scene")
}

pub fn main() {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    run(steps);
}

pub fn run(steps: u64) {
    let data: Vec<RenderedSample> = (0..4).map(|s| scene(100 + s)).collect();
    let cfg = NetworkConfig { blocks: 2, base_features: 8, patch_size: 3, map_size: 32, kernel: 3 };
    let acfg = AugmentConfig { min_lights: 32, max_lights: 64, min_angle_deg: 40.0, max_angle_deg: 70.0, ..AugmentConfig::default() };
    let tcfg = TrainConfig {
        epochs: 10,
        validation_fraction: 0.25,
        log_every: (steps / 3).max(1),
        validation_pixels: 128,
        max_steps: Some(steps),
        ..TrainConfig::default()
    };
    let out = train(&data, &acfg, &tcfg, Network::new(cfg, 0).expect("valid config")).expect("training runs");
    for r in &out.log {
        println!("step {:>5} loss {:.4} validation {:.2} deg", r.step, r.loss, r.val_mae);
    }

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("best.ckpt");
    save_checkpoint(&path, &out.best).expect("writable");
    let net: Network<f32> = load_checkpoint(&path).expect("readable");

    let test = scene(200);
    let pixels: Vec<usize> = (0..test.mask().len()).filter(|i| test.mask()[*i]).step_by(8).collect();
    for k in [1, 4] {
        let opts = InferOptions { rotations: k, pixels: Some(pixels.clone()), ..InferOptions::default() };
        let pred = infer_with(&net, &test, &opts).expect("inference runs");
        println!("network, {k} rotations: {:.2} deg", score("test", &pred, &test.normals).expect("overlap").mean);
    }
    let mut lsq = solve_map(&test, 0.0).expect("well-posed");
    let keep: Vec<bool> = (0..test.mask().len()).map(|i| pixels.binary_search(&i).is_ok()).collect();
    lsq.restrict_to(&keep);
    println!("least squares: {:.2} deg", score("test", &lsq, &test.normals).expect("overlap").mean);
}
