use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    /// Multiplicative decay per `decay_samples` presented samples.
    pub decay_factor: f64,
    pub decay_samples: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            learning_rate: 1e-3,
            decay_factor: 0.985,
            decay_samples: 1e6,
            rho: 0.9,
            epsilon: 1e-8,
        }
    }
}

impl RmsPropConfig {
    /// Rate after `samples_seen` samples; the decay is applied continuously.
    pub fn rate_at(&self, samples_seen: u64) -> f64 {
        self.learning_rate * self.decay_factor.powf(samples_seen as f64 / self.decay_samples)
    }
}

/// RMSprop with one squared-gradient accumulator per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Real = f32> {
    pub config: RmsPropConfig,
    accumulators: Vec<Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: RmsPropConfig, params: &[Tensor<T>]) -> Self {
        OptimizerState {
            config,
            accumulators: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn accumulators(&self) -> &[Tensor<T>] {
        &self.accumulators
    }

    /// One update; returns the learning rate that was used.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], samples_seen: u64) -> Result<f64> {
        if params.len() != self.accumulators.len() || grads.len() != params.len() {
            return Err(Error::CountMismatch {
                what: "parameters vs gradients",
                left: params.len(),
                right: grads.len(),
            });
        }
        for ((p, g), a) in params.iter().zip(grads).zip(&self.accumulators) {
            if p.shape() != g.shape() || p.shape() != a.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        let lr = self.config.rate_at(samples_seen);
        let rho = T::from_f64_lossy(self.config.rho);
        let keep = T::one() - rho;
        let eps = T::from_f64_lossy(self.config.epsilon);
        let rate = T::from_f64_lossy(lr);
        for ((p, g), a) in params.iter_mut().zip(grads).zip(self.accumulators.iter_mut()) {
            for ((pv, gv), av) in p.data_mut().iter_mut().zip(g.data()).zip(a.data_mut()) {
                *av = rho * *av + keep * *gv * *gv;
                *pv = *pv - rate * *gv / (av.sqrt() + eps);
            }
        }
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_rule() {
        let c = RmsPropConfig::default();
        assert_eq!(c.rate_at(0), 1e-3);
        assert!((c.rate_at(1_000_000) - 0.000985).abs() < 1e-15);
        assert!(c.rate_at(10) < c.rate_at(9));
    }

    #[test]
    fn zero_gradient_only_decays_accumulators() {
        let mut params = vec![Tensor::<f64>::from_vec(&[2], vec![1.0, -2.0]).unwrap()];
        let mut opt = OptimizerState::new(RmsPropConfig::default(), &params);
        let g = vec![Tensor::from_vec(&[2], vec![0.5, 0.5]).unwrap()];
        opt.step(&mut params, &g, 0).unwrap();
        let before = params.clone();
        let acc = opt.accumulators()[0].clone();
        opt.step(&mut params, &[Tensor::zeros(&[2])], 0).unwrap();
        assert_eq!(params, before);
        for (a, b) in opt.accumulators()[0].data().iter().zip(acc.data()) {
            assert!((a - 0.9 * b).abs() < 1e-18);
        }
    }

    #[test]
    fn constant_gradient_steps_approach_rate() {
        // Accumulator fixed point is g², so each step tends to lr·|g|/(|g|+ε).
        let mut params = vec![Tensor::<f64>::zeros(&[1])];
        let cfg = RmsPropConfig {
            decay_factor: 1.0,
            ..RmsPropConfig::default()
        };
        let mut opt = OptimizerState::new(cfg, &params);
        let g = vec![Tensor::from_vec(&[1], vec![0.3]).unwrap()];
        let mut last = 0.0;
        for _ in 0..200 {
            let before = params[0].data()[0];
            opt.step(&mut params, &g, 0).unwrap();
            last = before - params[0].data()[0];
        }
        let expected = 1e-3 * 0.3 / (0.3 + 1e-8);
        assert!((last - expected).abs() < 1e-9, "{last}");
    }
}
