//! Builds the default network, reports its size and checks that scaling the
//! input scales the output.

use psnet::nn::{Network, NetworkConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn main() {
    let cfg = NetworkConfig::default();
    let net = Network::<f32>::new(cfg, 0).expect("valid config");
    println!("config {cfg:?}");
    println!("{} parameters, {} multiply-adds per patch", net.param_count(), net.macs());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut shape = vec![1];
    shape.extend_from_slice(&cfg.patch_shape());
    let x = Tensor::from_fn(&shape, |_| rng.random_range(0.0..1.0));
    let net64: Network<f64> = net.cast();
    let y = net64.forward(&x).expect("patch shape");
    println!("input {:?} -> output {:?}", x.shape(), y.shape());
    for alpha in [0.5, 7.0] {
        let diff = net64.forward(&x.scale(alpha)).expect("patch shape").max_abs_diff(&y.scale(alpha));
        let peak = y.data().iter().fold(0.0f64, |m, v| m.max(v.abs())) * alpha;
        println!("alpha {alpha}: relative deviation {:.1e}", diff / peak);
    }
}
