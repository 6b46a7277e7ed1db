use super::conv::LayerParams;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiplier applied to the learning rate every `decay_interval_epochs`.
    pub decay_factor: f64,
    pub decay_interval_epochs: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_factor: 0.2,
            decay_interval_epochs: 15,
        }
    }
}

impl AdamConfig {
    /// Step-decayed learning rate in effect during `epoch` (0-based).
    pub fn learning_rate_at_epoch(&self, epoch: usize) -> f64 {
        let steps = epoch / self.decay_interval_epochs.max(1);
        self.learning_rate * self.decay_factor.powi(steps as i32)
    }
}

/// Moment estimates for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: [Tensor; 2],
    pub second_moment: [Tensor; 2],
    pub config: AdamConfig,
    current_lr: f64,
}

impl AdamState {
    pub fn new(params: &LayerParams, config: AdamConfig) -> Self {
        assert!(config.learning_rate > 0.0, "learning rate must be positive");
        let z = || [Tensor::zeros(params.weights.shape()), Tensor::zeros(params.bias.shape())];
        AdamState {
            step_count: 0,
            first_moment: z(),
            second_moment: z(),
            config,
            current_lr: config.learning_rate,
        }
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.current_lr = self.config.learning_rate_at_epoch(epoch);
    }

    pub fn learning_rate(&self) -> f64 {
        self.current_lr
    }
}

/// One bias-corrected ADAM update from the accumulated gradients.
pub fn adam_step(params: &mut LayerParams, state: &mut AdamState) {
    state.step_count += 1;
    let t = state.step_count as i32;
    let c = state.config;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let lr = state.current_lr;
    let groups = [
        (&mut params.weights, &params.grad_weights),
        (&mut params.bias, &params.grad_bias),
    ];
    for (k, (p, g)) in groups.into_iter().enumerate() {
        let m = state.first_moment[k].data_mut();
        let v = state.second_moment[k].data_mut();
        for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
            *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *pv -= lr * mhat / (vhat.sqrt() + c.epsilon);
        }
    }
}

/// ADAM over an ordered set of layers.
#[derive(Clone, Debug)]
pub struct Adam {
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(layers: &[&LayerParams], config: AdamConfig) -> Self {
        Adam {
            states: layers.iter().map(|p| AdamState::new(p, config)).collect(),
        }
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.states.iter_mut().for_each(|s| s.set_epoch(epoch));
    }

    pub fn learning_rate(&self) -> f64 {
        self.states.first().map_or(0.0, AdamState::learning_rate)
    }

    pub fn step(&mut self, layers: &mut [&mut LayerParams]) {
        assert_eq!(layers.len(), self.states.len(), "layer count changed");
        for (p, s) in layers.iter_mut().zip(self.states.iter_mut()) {
            adam_step(p, s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer() -> LayerParams {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        LayerParams::kaiming(2, 3, 3, &mut rng)
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_moments() {
        let mut p = layer();
        let before = p.clone();
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &mut s);
        assert_eq!(p.weights, before.weights);
        assert_eq!(p.bias, before.bias);
        assert_eq!(s.step_count, 1);
        assert!(s.first_moment.iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
        assert!(s.second_moment.iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn first_step_moves_by_learning_rate_regardless_of_scale() {
        for g in [1e-4, 0.3, 250.0] {
            let mut p = layer();
            let before = p.clone();
            p.grad_weights.fill(g);
            p.grad_bias.fill(-g);
            let mut s = AdamState::new(&p, AdamConfig::default());
            adam_step(&mut p, &mut s);
            // Reference formula: m̂ = g, v̂ = g², step = lr·g/(|g| + ε).
            let expect = 1e-3 * g / (g.abs() + 1e-8);
            for (a, b) in p.weights.data().iter().zip(before.weights.data()) {
                assert!(((b - a) - expect).abs() < 1e-12);
            }
            for (a, b) in p.bias.data().iter().zip(before.bias.data()) {
                assert!(((a - b) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn learning_rate_decays_every_interval() {
        let c = AdamConfig::default();
        assert_eq!(c.learning_rate_at_epoch(0), 1e-3);
        assert_eq!(c.learning_rate_at_epoch(14), 1e-3);
        assert!((c.learning_rate_at_epoch(15) - 2e-4).abs() < 1e-18);
        assert!((c.learning_rate_at_epoch(30) - 4e-5).abs() < 1e-18);
    }

    #[test]
    fn step_decreases_convex_quadratic() {
        // f(w) = ½ Σ (w − t)², gradient w − t.
        let mut p = layer();
        let target: Vec<f64> = (0..p.weights.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let loss = |p: &LayerParams| -> f64 {
            p.weights
                .data()
                .iter()
                .zip(&target)
                .map(|(w, t)| 0.5 * (w - t).powi(2))
                .sum::<f64>()
                + 0.5 * p.bias.data().iter().map(|b| b * b).sum::<f64>()
        };
        let mut s = AdamState::new(&p, AdamConfig { learning_rate: 1e-3, ..Default::default() });
        let mut prev = loss(&p);
        for _ in 0..20 {
            for (g, (w, t)) in p.grad_weights.data_mut().iter_mut().zip(p.weights.data().iter().zip(&target)) {
                *g = w - t;
            }
            let b = p.bias.clone();
            p.grad_bias.data_mut().copy_from_slice(b.data());
            adam_step(&mut p, &mut s);
            let now = loss(&p);
            assert!(now < prev);
            prev = now;
        }
    }
}
