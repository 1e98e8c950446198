//! The heat-map network: separable 4D convolutions that collapse the `b × b`
//! spatial context, followed by a bias-free U-Net over the `w × w`
//! photometric plane.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{
    concat_channels, concat_channels_backward, conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu,
    relu_backward, transposed_conv2, transposed_conv2_backward, Padding,
};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::projection::HeatMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Number of down-sampling blocks.
    pub blocks: usize,
    /// Feature maps on the first level; doubled per block.
    pub base_features: usize,
    /// Spatial context `b` (odd).
    pub patch_size: usize,
    /// Observation-map size `w`; must be divisible by `2^blocks`.
    pub map_size: usize,
    /// Convolution kernel size (odd).
    pub kernel: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            blocks: 3,
            base_features: 16,
            patch_size: 5,
            map_size: 48,
            kernel: 3,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.blocks == 0 || self.base_features == 0 || self.map_size == 0 {
            return bad("blocks, base_features and map_size must be positive".into());
        }
        if self.patch_size % 2 == 0 {
            return bad(format!("patch size must be odd, got {}", self.patch_size));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.blocks >= usize::BITS as usize || self.map_size % (1usize << self.blocks) != 0 {
            return bad(format!(
                "map size {} must be divisible by 2^{}",
                self.map_size, self.blocks
            ));
        }
        if self.patch_size > 1 && (self.kernel == 1 || (self.patch_size - 1) % (self.kernel - 1) != 0) {
            return bad(format!(
                "patch size {} cannot be reduced to 1x1 with kernel {}",
                self.patch_size, self.kernel
            ));
        }
        Ok(())
    }

    /// Number of separable 4D stages needed to collapse the spatial context.
    pub fn separable_stages(&self) -> usize {
        if self.patch_size == 1 {
            0
        } else {
            (self.patch_size - 1) / (self.kernel - 1)
        }
    }

    /// Per-sample input shape `[b, b, w, w, 1]`.
    pub fn patch_shape(&self) -> [usize; 5] {
        [self.patch_size, self.patch_size, self.map_size, self.map_size, 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Input,
    Conv {
        input: usize,
        param: usize,
        padding: Padding,
        axes: (usize, usize),
    },
    Relu {
        input: usize,
    },
    Pool {
        input: usize,
    },
    TConv {
        input: usize,
        param: usize,
    },
    Concat {
        a: usize,
        b: usize,
    },
    /// Drops the two unit spatial axes of `[N, 1, 1, w, w, C]`.
    Squeeze {
        input: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    fan_in: usize,
    gain: f64,
}

#[derive(Default)]
struct Builder {
    ops: Vec<Op>,
    /// Per-sample shapes with a unit batch axis.
    shapes: Vec<Vec<usize>>,
    params: Vec<ParamSpec>,
    macs: u64,
}

const PLANE: (usize, usize) = (1, 2);
const PATCH_SPATIAL: (usize, usize) = (1, 2);
const PATCH_PHOTOMETRIC: (usize, usize) = (3, 4);

impl Builder {
    fn push(&mut self, op: Op, shape: Vec<usize>) -> usize {
        self.ops.push(op);
        self.shapes.push(shape);
        self.ops.len() - 1
    }

    fn channels(&self, node: usize) -> usize {
        *self.shapes[node].last().unwrap()
    }

    fn conv(&mut self, name: &str, input: usize, cout: usize, k: usize, padding: Padding, axes: (usize, usize), gain: f64) -> usize {
        let cin = self.channels(input);
        let mut shape = self.shapes[input].clone();
        if padding == Padding::Valid {
            shape[axes.0] -= k - 1;
            shape[axes.1] -= k - 1;
        }
        *shape.last_mut().unwrap() = cout;
        let positions: usize = shape[..shape.len() - 1].iter().product();
        self.macs += (positions * k * k * cin * cout) as u64;
        self.params.push(ParamSpec {
            name: name.to_string(),
            shape: vec![k, k, cin, cout],
            fan_in: k * k * cin,
            gain,
        });
        let param = self.params.len() - 1;
        self.push(
            Op::Conv {
                input,
                param,
                padding,
                axes,
            },
            shape,
        )
    }

    fn relu(&mut self, input: usize) -> usize {
        let shape = self.shapes[input].clone();
        self.push(Op::Relu { input }, shape)
    }

    fn conv_relu(&mut self, name: &str, input: usize, cout: usize, k: usize) -> usize {
        let c = self.conv(name, input, cout, k, Padding::Same, PLANE, 2.0);
        self.relu(c)
    }

    fn pool(&mut self, input: usize) -> usize {
        let mut shape = self.shapes[input].clone();
        shape[1] /= 2;
        shape[2] /= 2;
        self.push(Op::Pool { input }, shape)
    }

    fn tconv(&mut self, name: &str, input: usize, cout: usize) -> usize {
        let cin = self.channels(input);
        let mut shape = self.shapes[input].clone();
        let positions: usize = shape[..shape.len() - 1].iter().product();
        self.macs += (positions * 4 * cin * cout) as u64;
        shape[1] *= 2;
        shape[2] *= 2;
        *shape.last_mut().unwrap() = cout;
        self.params.push(ParamSpec {
            name: name.to_string(),
            shape: vec![2, 2, cin, cout],
            fan_in: cin,
            gain: 2.0,
        });
        let param = self.params.len() - 1;
        self.push(Op::TConv { input, param }, shape)
    }

    fn concat(&mut self, a: usize, b: usize) -> usize {
        let mut shape = self.shapes[a].clone();
        *shape.last_mut().unwrap() += self.channels(b);
        self.push(Op::Concat { a, b }, shape)
    }
}

/// Layer graph shared by every network with the same configuration.
#[derive(Debug, Clone, PartialEq)]
struct Graph {
    ops: Vec<Op>,
    params: Vec<ParamSpec>,
    output_shape: Vec<usize>,
    macs: u64,
}

fn build_graph(cfg: &NetworkConfig) -> Graph {
    let (f, k) = (cfg.base_features, cfg.kernel);
    let mut g = Builder::default();
    let [b, _, w, _, c] = cfg.patch_shape();
    let mut x = g.push(Op::Input, vec![1, b, b, w, w, c]);

    let stages = cfg.separable_stages();
    if stages == 0 {
        let p = g.conv("stem.photometric", x, f, k, Padding::Same, PATCH_PHOTOMETRIC, 2.0);
        x = g.relu(p);
    }
    for s in 0..stages {
        // The two halves of a separable convolution are one linear map: no
        // activation in between.
        let p = g.conv(&format!("sep{s}.photometric"), x, f, k, Padding::Same, PATCH_PHOTOMETRIC, 1.0);
        let q = g.conv(&format!("sep{s}.spatial"), p, f, k, Padding::Valid, PATCH_SPATIAL, 2.0);
        x = g.relu(q);
    }
    let squeezed = vec![1, w, w, f];
    x = g.push(Op::Squeeze { input: x }, squeezed);

    let mut skips = Vec::with_capacity(cfg.blocks);
    for level in 0..cfg.blocks {
        let out = f << level;
        x = g.conv_relu(&format!("enc{level}.conv1"), x, out, k);
        x = g.conv_relu(&format!("enc{level}.conv2"), x, out, k);
        skips.push(x);
        x = g.pool(x);
    }
    let out = f << cfg.blocks;
    x = g.conv_relu("bottleneck.conv1", x, out, k);
    x = g.conv_relu("bottleneck.conv2", x, out, k);
    for level in (0..cfg.blocks).rev() {
        let out = f << level;
        let up = g.tconv(&format!("dec{level}.up"), x, out);
        let up = g.relu(up);
        x = g.concat(skips[level], up);
        x = g.conv_relu(&format!("dec{level}.conv1"), x, out, k);
        x = g.conv_relu(&format!("dec{level}.conv2"), x, out, k);
    }
    let head = g.conv("head", x, 1, k, Padding::Same, PLANE, 1.0);
    let output_shape = g.shapes[head].clone();
    Graph {
        ops: g.ops,
        params: g.params,
        output_shape,
        macs: g.macs,
    }
}

/// Activations recorded by [`Network::forward_tape`].
pub struct Tape<T: Real> {
    values: Vec<Tensor<T>>,
    pool_argmax: Vec<Option<Vec<usize>>>,
}

impl<T: Real> Tape<T> {
    /// Network output `[N, w, w, 1]`.
    pub fn output(&self) -> &Tensor<T> {
        self.values.last().expect("non-empty tape")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Real = f32> {
    config: NetworkConfig,
    graph: Graph,
    params: Vec<Tensor<T>>,
}

impl<T: Real> Network<T> {
    /// Fan-in variance-scaling initialization.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let graph = build_graph(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = graph
            .params
            .iter()
            .map(|p| {
                let std = (p.gain / p.fan_in as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("finite std");
                Tensor::from_fn(&p.shape, |_| T::from_f64_lossy(dist.sample(&mut rng)))
            })
            .collect();
        Ok(Network { config, graph, params })
    }

    /// Network with the given parameters, checked against the layer layout.
    pub fn from_params(config: NetworkConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let graph = build_graph(&config);
        if params.len() != graph.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameter tensors, got {}",
                graph.params.len(),
                params.len()
            )));
        }
        for (spec, p) in graph.params.iter().zip(&params) {
            if p.shape() != spec.shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    p.shape(),
                    spec.shape
                )));
            }
        }
        Ok(Network { config, graph, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.graph.params
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Multiply-accumulate operations for one patch.
    pub fn macs(&self) -> u64 {
        self.graph.macs
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config,
            graph: self.graph.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<usize> {
        let expected = self.config.patch_shape();
        let s = input.shape();
        if s.len() != 6 || s[1..] != expected {
            return Err(Error::ShapeMismatch(format!(
                "network expects [N, {}, {}, {}, {}, {}], got {s:?}",
                expected[0], expected[1], expected[2], expected[3], expected[4]
            )));
        }
        Ok(s[0])
    }

    /// Runs a batch `[N, b, b, w, w, 1]` and keeps every activation.
    pub fn forward_tape(&self, input: &Tensor<T>) -> Result<Tape<T>> {
        let n = self.check_input(input)?;
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.graph.ops.len());
        let mut pool_argmax = vec![None; self.graph.ops.len()];
        for (i, op) in self.graph.ops.iter().enumerate() {
            let v = match op {
                Op::Input => input.clone(),
                Op::Conv {
                    input,
                    param,
                    padding,
                    axes,
                } => conv2d(&values[*input], &self.params[*param], *padding, *axes)?,
                Op::Relu { input } => relu(&values[*input]),
                Op::Pool { input } => {
                    let (v, idx) = maxpool2(&values[*input], PLANE)?;
                    pool_argmax[i] = Some(idx);
                    v
                }
                Op::TConv { input, param } => transposed_conv2(&values[*input], &self.params[*param], PLANE)?,
                Op::Concat { a, b } => concat_channels(&values[*a], &values[*b])?,
                Op::Squeeze { input } => {
                    let s = values[*input].shape();
                    let shape = [n, s[3], s[4], s[5]];
                    values[*input].clone().reshape(&shape)?
                }
            };
            values.push(v);
        }
        Ok(Tape { values, pool_argmax })
    }

    /// Batch of heat-maps `[N, w, w]`.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check_input(input)?;
        let w = self.config.map_size;
        let mut tape = self.forward_tape(input)?;
        tape.values.pop().expect("output").reshape(&[n, w, w])
    }

    /// Heat-map of a single `[b, b, w, w, 1]` patch.
    pub fn predict(&self, patch: &Tensor<T>) -> Result<HeatMap> {
        let mut shape = vec![1];
        shape.extend_from_slice(patch.shape());
        let batch = patch.clone().reshape(&shape)?;
        let out = self.forward(&batch)?;
        HeatMap::new(self.config.map_size, out.data().iter().map(|v| v.as_f64()).collect())
    }

    /// Parameter gradients given the gradient of the output `[N, w, w]` (or
    /// `[N, w, w, 1]`). Linear in `grad_output`.
    pub fn backward(&self, tape: &Tape<T>, grad_output: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (grads, _) = self.backward_full(tape, grad_output)?;
        Ok(grads)
    }

    /// Parameter gradients plus the gradient with respect to the input.
    pub fn backward_full(&self, tape: &Tape<T>, grad_output: &Tensor<T>) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        let out_shape = tape.output().shape().to_vec();
        if grad_output.len() != tape.output().len() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient shape {:?} vs output {out_shape:?}",
                grad_output.shape()
            )));
        }
        let nodes = self.graph.ops.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes];
        grads[nodes - 1] = Some(grad_output.clone().reshape(&out_shape)?);
        let mut param_grads: Vec<Tensor<T>> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();

        fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
            match slot {
                Some(existing) => existing.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for i in (1..nodes).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.graph.ops[i] {
                Op::Input => {}
                Op::Conv {
                    input,
                    param,
                    padding,
                    axes,
                } => {
                    let (gi, gw) = conv2d_backward(&tape.values[*input], &self.params[*param], &g, *padding, *axes)?;
                    param_grads[*param].add_assign(&gw);
                    accumulate(&mut grads[*input], gi);
                }
                Op::Relu { input } => {
                    let gi = relu_backward(&tape.values[i], &g);
                    accumulate(&mut grads[*input], gi);
                }
                Op::Pool { input } => {
                    let idx = tape.pool_argmax[i].as_ref().expect("recorded argmax");
                    let gi = maxpool2_backward(tape.values[*input].shape(), idx, &g)?;
                    accumulate(&mut grads[*input], gi);
                }
                Op::TConv { input, param } => {
                    let (gi, gw) = transposed_conv2_backward(&tape.values[*input], &self.params[*param], &g, PLANE)?;
                    param_grads[*param].add_assign(&gw);
                    accumulate(&mut grads[*input], gi);
                }
                Op::Concat { a, b } => {
                    let ca = *tape.values[*a].shape().last().unwrap();
                    let (ga, gb) = concat_channels_backward(&g, ca)?;
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::Squeeze { input } => {
                    let gi = g.reshape(tape.values[*input].shape())?;
                    accumulate(&mut grads[*input], gi);
                }
            }
        }
        let grad_input = grads[0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(tape.values[0].shape()));
        Ok((param_grads, grad_input))
    }

    /// Distance of the recorded activations from the nearest non-smooth point:
    /// the smallest `|x|` entering a ReLU and the smallest gap between the
    /// winner and runner-up of a max-pool window with a positive maximum.
    /// Finite differences with steps well below this margin see a smooth
    /// function.
    pub fn kink_margin(&self, tape: &Tape<T>) -> f64 {
        let mut margin = f64::INFINITY;
        for (i, op) in self.graph.ops.iter().enumerate() {
            match op {
                Op::Relu { input } => {
                    for v in tape.values[*input].data() {
                        margin = margin.min(v.as_f64().abs());
                    }
                }
                Op::Pool { input } => {
                    let x = tape.values[*input].data();
                    let s = tape.values[*input].shape();
                    let (h, w, c) = (s[1], s[2], s[3]);
                    for (o, &win) in tape.pool_argmax[i].as_ref().expect("recorded argmax").iter().enumerate() {
                        let best = x[win].as_f64();
                        if best <= 0.0 {
                            continue;
                        }
                        let ch = o % c;
                        let pix = o / c;
                        let (n, r, q) = (pix / ((h / 2) * (w / 2)), (pix / (w / 2)) % (h / 2), pix % (w / 2));
                        for dr in 0..2 {
                            for dq in 0..2 {
                                let j = ((n * h + 2 * r + dr) * w + 2 * q + dq) * c + ch;
                                if j != win {
                                    margin = margin.min(best - x[j].as_f64());
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Declared output shape for one sample, `[1, w, w, 1]`.
    pub fn output_shape(&self) -> &[usize] {
        &self.graph.output_shape
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_budget() {
        let net = Network::<f32>::new(NetworkConfig::default(), 0).unwrap();
        let count = net.param_count();
        assert!((300_000..=800_000).contains(&count), "{count}");
        assert_eq!(net.output_shape(), &[1, 48, 48, 1]);
    }

    #[test]
    fn config_validation() {
        let ok = NetworkConfig::default();
        assert!(ok.validate().is_ok());
        assert!(NetworkConfig { map_size: 44, ..ok }.validate().is_err());
        assert!(NetworkConfig { patch_size: 4, ..ok }.validate().is_err());
        assert!(NetworkConfig { kernel: 1, ..ok }.validate().is_err());
        assert!(NetworkConfig { patch_size: 1, kernel: 1, ..ok }.validate().is_ok());
        assert!(NetworkConfig { patch_size: 7, ..ok }.validate().is_ok());
    }

    #[test]
    fn shape_contract() {
        let cfg = NetworkConfig {
            base_features: 2,
            ..NetworkConfig::default()
        };
        let net = Network::<f32>::new(cfg, 1).unwrap();
        let out = net.forward(&Tensor::zeros(&[2, 5, 5, 48, 48, 1])).unwrap();
        assert_eq!(out.shape(), &[2, 48, 48]);
        assert!(out.data().iter().all(|v| *v == 0.0));
        assert!(net.forward(&Tensor::zeros(&[1, 3, 3, 48, 48, 1])).is_err());
    }

    #[test]
    fn separable_stage_count() {
        let cfg = NetworkConfig::default();
        assert_eq!(cfg.separable_stages(), 2);
        assert_eq!(NetworkConfig { patch_size: 1, ..cfg }.separable_stages(), 0);
    }

    #[test]
    fn from_params_checks_layout() {
        let cfg = NetworkConfig {
            base_features: 2,
            map_size: 8,
            ..NetworkConfig::default()
        };
        let net = Network::<f64>::new(cfg, 3).unwrap();
        let params = net.params().to_vec();
        assert_eq!(Network::from_params(cfg, params.clone()).unwrap(), net);
        assert!(Network::from_params(cfg, params[1..].to_vec()).is_err());
    }
}
