//! Finite-difference and dot-product checks of every backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::*;
use super::loss::batch_loss;
use super::network::{Network, NetworkConfig};
use super::tensor::Tensor;
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const ADJOINT_TOLERANCE: f64 = 1e-10;
/// Minimum distance from any kink for the whole-network check point.
pub const KINK_MARGIN: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    FiniteDifference,
    Adjoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub kind: CheckKind,
    /// Relative error, see [`finite_difference`] and [`adjoint_gap`].
    pub error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error < self.tolerance
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Largest deviation between `analytic` and central differences of `f`
/// around `theta`, relative to the largest numeric component. Checks at most
/// `max_probes` entries picked by `rng` (all when the tensor is smaller).
pub fn finite_difference(
    theta: &Tensor<f64>,
    analytic: &Tensor<f64>,
    max_probes: usize,
    rng: &mut ChaCha8Rng,
    f: impl Fn(&Tensor<f64>) -> f64,
) -> f64 {
    let n = theta.len();
    let probes: Vec<usize> = if n <= max_probes {
        (0..n).collect()
    } else {
        rand::seq::index::sample(rng, n, max_probes).into_vec()
    };
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    let mut t = theta.clone();
    for i in probes {
        let orig = t.data()[i];
        t.data_mut()[i] = orig + FD_STEP;
        let plus = f(&t);
        t.data_mut()[i] = orig - FD_STEP;
        let minus = f(&t);
        t.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max((numeric - analytic.data()[i]).abs());
        scale = scale.max(numeric.abs()).max(analytic.data()[i].abs());
    }
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

/// `|⟨A x, y⟩ − ⟨x, Aᵀ y⟩| / (‖A x‖‖y‖ + ‖x‖‖Aᵀ y‖)`.
pub fn adjoint_gap(x: &Tensor<f64>, ax: &Tensor<f64>, y: &Tensor<f64>, aty: &Tensor<f64>) -> f64 {
    let lhs = ax.dot(y);
    let rhs = x.dot(aty);
    let norm = |t: &Tensor<f64>| t.dot(t).sqrt();
    let scale = norm(ax) * norm(y) + norm(x) * norm(aty);
    if scale == 0.0 {
        (lhs - rhs).abs()
    } else {
        (lhs - rhs).abs() / scale
    }
}

struct Suite {
    rng: ChaCha8Rng,
    results: Vec<CheckResult>,
}

impl Suite {
    fn fd(&mut self, name: &str, theta: &Tensor<f64>, analytic: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) {
        let error = finite_difference(theta, analytic, 64, &mut self.rng, f);
        self.results.push(CheckResult {
            name: name.to_string(),
            kind: CheckKind::FiniteDifference,
            error,
            tolerance: FD_TOLERANCE,
        });
    }

    fn adjoint(&mut self, name: &str, x: &Tensor<f64>, ax: &Tensor<f64>, y: &Tensor<f64>, aty: &Tensor<f64>) {
        self.results.push(CheckResult {
            name: name.to_string(),
            kind: CheckKind::Adjoint,
            error: adjoint_gap(x, ax, y, aty),
            tolerance: ADJOINT_TOLERANCE,
        });
    }

    fn conv(&mut self, name: &str, in_shape: &[usize], k: usize, cout: usize, padding: Padding, axes: (usize, usize)) -> Result<()> {
        let cin = *in_shape.last().unwrap();
        let x = random(&mut self.rng, in_shape);
        let w = random(&mut self.rng, &[k, k, cin, cout]);
        let out = conv2d(&x, &w, padding, axes)?;
        let r = random(&mut self.rng, out.shape());
        let (gx, gw) = conv2d_backward(&x, &w, &r, padding, axes)?;
        self.fd(&format!("{name} d/input"), &x, &gx, |t| conv2d(t, &w, padding, axes).unwrap().dot(&r));
        self.fd(&format!("{name} d/weights"), &w, &gw, |t| conv2d(&x, t, padding, axes).unwrap().dot(&r));
        self.adjoint(&format!("{name} input"), &x, &out, &r, &gx);
        self.adjoint(&format!("{name} weights"), &w, &out, &r, &gw);
        Ok(())
    }

    fn sepconv(&mut self) -> Result<()> {
        let x = random(&mut self.rng, &[2, 5, 5, 6, 6, 2]);
        let ph = random(&mut self.rng, &[3, 3, 2, 3]);
        let sp = random(&mut self.rng, &[3, 3, 3, 2]);
        let out = sepconv4d(&x, &ph, &sp)?;
        let r = random(&mut self.rng, out.shape());
        let (gx, gph, gsp) = sepconv4d_backward(&x, &ph, &sp, &r)?;
        self.fd("sepconv4d d/input", &x, &gx, |t| sepconv4d(t, &ph, &sp).unwrap().dot(&r));
        self.fd("sepconv4d d/photometric", &ph, &gph, |t| sepconv4d(&x, t, &sp).unwrap().dot(&r));
        self.fd("sepconv4d d/spatial", &sp, &gsp, |t| sepconv4d(&x, &ph, t).unwrap().dot(&r));
        self.adjoint("sepconv4d input", &x, &out, &r, &gx);
        Ok(())
    }

    fn tconv(&mut self) -> Result<()> {
        let axes = (1, 2);
        let x = random(&mut self.rng, &[2, 3, 4, 3]);
        let w = random(&mut self.rng, &[2, 2, 3, 2]);
        let out = transposed_conv2(&x, &w, axes)?;
        let r = random(&mut self.rng, out.shape());
        let (gx, gw) = transposed_conv2_backward(&x, &w, &r, axes)?;
        self.fd("transposed_conv2 d/input", &x, &gx, |t| transposed_conv2(t, &w, axes).unwrap().dot(&r));
        self.fd("transposed_conv2 d/weights", &w, &gw, |t| transposed_conv2(&x, t, axes).unwrap().dot(&r));
        self.adjoint("transposed_conv2 input", &x, &out, &r, &gx);
        self.adjoint("transposed_conv2 weights", &w, &out, &r, &gw);
        Ok(())
    }

    fn pool(&mut self) -> Result<()> {
        let axes = (1, 2);
        let x = random(&mut self.rng, &[2, 4, 6, 3]);
        let (out, idx) = maxpool2(&x, axes)?;
        let r = random(&mut self.rng, out.shape());
        let gx = maxpool2_backward(x.shape(), &idx, &r)?;
        self.fd("maxpool2 d/input", &x, &gx, |t| maxpool2(t, axes).unwrap().0.dot(&r));
        // With the selection frozen, pooling is a linear gather.
        self.adjoint("maxpool2 selection", &x, &out, &r, &gx);
        Ok(())
    }

    fn pointwise(&mut self) -> Result<()> {
        // Keep entries away from the kink so the difference quotient is smooth.
        let x = Tensor::from_fn(&[3, 4, 5], |i| {
            let v: f64 = self.rng.random_range(0.1..1.0);
            if i % 2 == 0 {
                v
            } else {
                -v
            }
        });
        let out = relu(&x);
        let r = random(&mut self.rng, out.shape());
        let gx = relu_backward(&out, &r);
        self.fd("relu d/input", &x, &gx, |t| relu(t).dot(&r));

        let a = random(&mut self.rng, &[2, 3, 3, 2]);
        let b = random(&mut self.rng, &[2, 3, 3, 3]);
        let out = concat_channels(&a, &b)?;
        let r = random(&mut self.rng, out.shape());
        let (ga, gb) = concat_channels_backward(&r, 2)?;
        self.fd("concat d/encoder", &a, &ga, |t| concat_channels(t, &b).unwrap().dot(&r));
        self.fd("concat d/decoder", &b, &gb, |t| concat_channels(&a, t).unwrap().dot(&r));
        Ok(())
    }

    fn network(&mut self) -> Result<()> {
        let cfg = NetworkConfig {
            blocks: 2,
            base_features: 2,
            patch_size: 3,
            map_size: 4,
            kernel: 3,
        };
        let n = 2;
        let mut shape = vec![n];
        shape.extend_from_slice(&cfg.patch_shape());
        // Resample until no activation sits near a ReLU kink or a max-pool tie.
        let mut attempt = 0;
        let (net, x, tape) = loop {
            let net = Network::<f64>::new(cfg, self.rng.random())?;
            // Observation maps are non-negative with empty cells.
            let x = Tensor::from_fn(&shape, |_| {
                let v: f64 = self.rng.random_range(0.0..1.0);
                if v < 0.3 {
                    0.0
                } else {
                    v
                }
            });
            let tape = net.forward_tape(&x)?;
            attempt += 1;
            if net.kink_margin(&tape) > KINK_MARGIN || attempt == 1000 {
                break (net, x, tape);
            }
        };
        let targets: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..16).map(|_| self.rng.random_range(0.0..2.0)).collect())
            .collect();
        let loss_of = |net: &Network<f64>, x: &Tensor<f64>| batch_loss(&net.forward(x).unwrap(), &targets).unwrap().0;
        let pred = tape.output().clone().reshape(&[n, 4, 4])?;
        let (_, g) = batch_loss(&pred, &targets)?;
        let (grads, gx) = net.backward_full(&tape, &g)?;
        for (i, spec) in net.param_specs().iter().enumerate() {
            let theta = &net.params()[i];
            self.fd(&format!("network d/{}", spec.name), theta, &grads[i], |t| {
                let mut probe = net.clone();
                probe.params_mut()[i] = t.clone();
                loss_of(&probe, &x)
            });
        }
        self.fd("network d/input", &x, &gx, |t| loss_of(&net, t));
        Ok(())
    }
}

/// Runs every check; deterministic in `seed`.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        results: Vec::new(),
    };
    s.conv("conv2d same", &[2, 5, 4, 3], 3, 2, Padding::Same, (1, 2))?;
    s.conv("conv2d valid", &[2, 5, 4, 3], 3, 2, Padding::Valid, (1, 2))?;
    s.conv("conv2d 1x1", &[1, 3, 3, 2], 1, 4, Padding::Same, (1, 2))?;
    s.conv("conv2d split axes", &[3, 2, 4, 2], 3, 2, Padding::Same, (0, 2))?;
    s.sepconv()?;
    s.tconv()?;
    s.pool()?;
    s.pointwise()?;
    s.network()?;
    Ok(s.results)
}
