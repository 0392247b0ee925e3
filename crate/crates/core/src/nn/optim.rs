use serde::{Deserialize, Serialize};

use super::loss::{policy_value_loss, LossParts, Targets};
use super::network::Network;
use super::tensor::Scalar;
use super::NnError;
use crate::game::{ActionMask, ACTIONS, INPUT_LEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 1e-4, l2_lambda: 1e-4, batch_size: 32, momentum: 0.9 }
    }
}

/// A minibatch of flattened examples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch<F> {
    /// `len × 343`
    pub inputs: Vec<F>,
    /// `len × 294`
    pub policy: Vec<F>,
    pub value: Vec<F>,
    pub masks: Vec<ActionMask>,
}

impl<F: Scalar> Batch<F> {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn push(&mut self, input: &[F], policy: &[F], value: F, mask: ActionMask) {
        assert_eq!(input.len(), INPUT_LEN);
        assert_eq!(policy.len(), ACTIONS);
        self.inputs.extend_from_slice(input);
        self.policy.extend_from_slice(policy);
        self.value.push(value);
        self.masks.push(mask);
    }

    pub fn input_rows(&self) -> Vec<&[F]> {
        self.inputs.chunks(INPUT_LEN).collect()
    }
}

/// Loss of one batch, split by term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub policy: f64,
    pub value: f64,
    pub l2: f64,
}

impl LossReport {
    pub fn total(&self) -> f64 {
        self.policy + self.value + self.l2
    }
}

/// Zeroes and fills the gradients of the full regularized loss on `batch`.
pub fn compute_gradients<F: Scalar>(net: &mut Network<F>, batch: &Batch<F>, lambda: F) -> LossReport {
    net.zero_grad();
    let rows = batch.input_rows();
    let (out, trace) = net.forward_train(&rows);
    let targets = Targets { policy: &batch.policy, value: &batch.value, masks: &batch.masks };
    let (parts, dlogits, dvalue): (LossParts<F>, _, _) = policy_value_loss(&out, &targets);
    net.backward(&trace, &dlogits, &dvalue);
    net.add_l2_grad(lambda);
    LossReport {
        policy: parts.policy.to_f64().unwrap(),
        value: parts.value.to_f64().unwrap(),
        l2: (lambda * net.l2_norm_sq()).to_f64().unwrap(),
    }
}

/// Evaluation-mode loss without touching gradients or running statistics.
pub fn evaluate_loss<F: Scalar>(net: &Network<F>, batch: &Batch<F>) -> LossReport {
    let out = net.forward_eval(&batch.input_rows());
    let targets = Targets { policy: &batch.policy, value: &batch.value, masks: &batch.masks };
    let (parts, _, _) = policy_value_loss(&out, &targets);
    LossReport { policy: parts.policy.to_f64().unwrap(), value: parts.value.to_f64().unwrap(), l2: 0.0 }
}

/// Stochastic gradient descent with Nesterov momentum.
#[derive(Clone, Debug)]
pub struct Sgd<F> {
    pub learning_rate: F,
    pub momentum: F,
    velocity: Vec<Vec<F>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd { learning_rate: F::of(learning_rate), momentum: F::of(momentum), velocity: Vec::new() }
    }

    pub fn step(&mut self, net: &mut Network<F>) {
        let params: Vec<_> = net.params_mut().into_iter().filter(|p| p.trainable).collect();
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
        }
        let (lr, mu) = (self.learning_rate, self.momentum);
        for (p, vel) in params.into_iter().zip(&mut self.velocity) {
            for ((w, g), v) in p.value.iter_mut().zip(&p.grad).zip(vel.iter_mut()) {
                *v = mu * *v - lr * *g;
                *w += mu * *v - lr * *g;
            }
        }
    }
}

/// Network plus optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: Network<f32>,
    pub config: TrainConfig,
    opt: Sgd<f32>,
}

impl Trainer {
    pub fn new(net: Network<f32>, config: TrainConfig) -> Self {
        let opt = Sgd::new(config.learning_rate, config.momentum);
        Trainer { net, config, opt }
    }

    pub fn set_l2_lambda(&mut self, lambda: f64) {
        self.config.l2_lambda = lambda;
    }

    /// One optimizer step on the mean batch loss.
    pub fn step(&mut self, batch: &Batch<f32>) -> Result<LossReport, NnError> {
        let report = compute_gradients(&mut self.net, batch, self.config.l2_lambda as f32);
        if !report.total().is_finite() {
            return Err(NnError::Diverged);
        }
        self.opt.step(&mut self.net);
        if !self.net.is_finite() {
            return Err(NnError::Diverged);
        }
        Ok(report)
    }

    pub fn into_network(self) -> Network<f32> {
        self.net
    }
}
