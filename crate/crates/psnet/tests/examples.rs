//! Runs every example so that they keep compiling and working.

#[path = "../examples/baseline.rs"]
mod baseline;
#[path = "../examples/gradcheck.rs"]
mod gradcheck;
#[path = "../examples/heatmap.rs"]
mod heatmap;
#[path = "../examples/network.rs"]
mod network;
#[path = "../examples/observation_map.rs"]
mod observation_map;
#[path = "../examples/render_dataset.rs"]
mod render_dataset;
#[path = "../examples/train_and_infer.rs"]
#[allow(dead_code)]
mod train_and_infer;

#[test]
fn heatmap_example() {
    heatmap::main();
}

#[test]
fn observation_map_example() {
    observation_map::main();
}

#[test]
fn render_dataset_example() {
    render_dataset::main();
}

#[test]
fn baseline_example() {
    baseline::main();
}

#[test]
fn network_example() {
    network::main();
}

#[test]
fn gradcheck_example() {
    gradcheck::main();
}

#[test]
fn train_and_infer_example() {
    train_and_infer::run(10);
}
