use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{relu_backward, relu_in_place, BatchNorm, BnCache, Conv2d, ConvCache, Linear};
use super::tensor::{Act, Param, Scalar, HW};
use crate::game::{ActionMask, GameState, ACTIONS, INPUT_LEN, INPUT_PLANES};

/// Shape of the residual policy/value network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetArchitecture {
    pub num_blocks: usize,
    /// Filters of the three convolutions in each block; the last one is the trunk width.
    pub block_filters: [usize; 3],
    pub block_kernels: [usize; 3],
    pub stem_kernel: usize,
    pub use_batch_norm: bool,
    pub policy_filters: usize,
    /// Optional hidden fully connected width in the policy head.
    pub policy_hidden: Option<usize>,
    pub value_filters: usize,
    pub value_hidden: Option<usize>,
}

impl Default for NetArchitecture {
    fn default() -> Self {
        NetArchitecture::desk()
    }
}

impl NetArchitecture {
    /// Nine bottleneck blocks of (32, 32, 64) filters with batch norm: 247,386 trainable parameters.
    pub fn paper() -> Self {
        NetArchitecture {
            num_blocks: 9,
            block_filters: [32, 32, 64],
            block_kernels: [1, 3, 1],
            stem_kernel: 1,
            use_batch_norm: true,
            policy_filters: 2,
            policy_hidden: Some(183),
            value_filters: 32,
            value_hidden: Some(32),
        }
    }

    /// Three small blocks without batch norm, cheap enough for single-core training.
    pub fn desk() -> Self {
        NetArchitecture {
            num_blocks: 3,
            block_filters: [8, 8, 16],
            block_kernels: [1, 3, 1],
            stem_kernel: 3,
            use_batch_norm: false,
            policy_filters: 2,
            policy_hidden: None,
            value_filters: 1,
            value_hidden: None,
        }
    }

    /// Three wider blocks with a hidden value layer; the desk-scale pipeline net.
    pub fn compact() -> Self {
        NetArchitecture {
            num_blocks: 3,
            block_filters: [16, 16, 32],
            block_kernels: [1, 3, 1],
            stem_kernel: 3,
            use_batch_norm: false,
            policy_filters: 4,
            policy_hidden: None,
            value_filters: 2,
            value_hidden: Some(32),
        }
    }

    /// One small block; fast enough for per-step Q-learning updates.
    pub fn tiny() -> Self {
        NetArchitecture {
            num_blocks: 1,
            block_filters: [4, 4, 8],
            block_kernels: [1, 3, 1],
            stem_kernel: 1,
            use_batch_norm: false,
            policy_filters: 1,
            policy_hidden: None,
            value_filters: 1,
            value_hidden: None,
        }
    }

    pub fn trunk_width(&self) -> usize {
        self.block_filters[2]
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ConvUnit<F> {
    conv: Conv2d<F>,
    bn: Option<BatchNorm<F>>,
}

struct UnitCache<F> {
    conv: ConvCache<F>,
    bn: Option<BnCache<F>>,
}

impl<F: Scalar> ConvUnit<F> {
    fn new(name: &str, cin: usize, cout: usize, k: usize, bn: bool, rng: &mut ChaCha8Rng) -> Self {
        ConvUnit {
            conv: Conv2d::new(&format!("{name}.conv"), cin, cout, k, !bn, rng),
            bn: bn.then(|| BatchNorm::new(&format!("{name}.bn"), cout)),
        }
    }

    fn forward_train(&mut self, x: &Act<F>) -> (Act<F>, UnitCache<F>) {
        let (mut y, conv) = self.conv.forward(x);
        let bn = self.bn.as_mut().map(|bn| bn.forward_train(&mut y));
        (y, UnitCache { conv, bn })
    }

    fn forward_eval(&self, x: &Act<F>) -> Act<F> {
        let mut y = self.conv.infer(x);
        if let Some(bn) = &self.bn {
            bn.forward_eval(&mut y);
        }
        y
    }

    fn backward(&mut self, cache: &UnitCache<F>, mut dy: Act<F>) -> Act<F> {
        if let (Some(bn), Some(c)) = (&mut self.bn, &cache.bn) {
            bn.backward(c, &mut dy);
        }
        self.conv.backward(&cache.conv, &dy)
    }

    fn params(&self) -> Vec<&Param<F>> {
        let mut v = self.conv.params();
        if let Some(bn) = &self.bn {
            v.extend(bn.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut v = self.conv.params_mut();
        if let Some(bn) = &mut self.bn {
            v.extend(bn.params_mut());
        }
        v
    }

    fn cast<G: Scalar>(&self) -> ConvUnit<G> {
        ConvUnit { conv: self.conv.cast(), bn: self.bn.as_ref().map(BatchNorm::cast) }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ResBlock<F> {
    units: [ConvUnit<F>; 3],
}

struct BlockCache<F> {
    units: Vec<UnitCache<F>>,
    /// Post-ReLU outputs of the first two units and of the block.
    hidden: [Act<F>; 2],
    out: Act<F>,
}

impl<F: Scalar> ResBlock<F> {
    fn forward_train(&mut self, x: &Act<F>) -> (Act<F>, BlockCache<F>) {
        let (mut h1, c1) = self.units[0].forward_train(x);
        relu_in_place(&mut h1.data);
        let (mut h2, c2) = self.units[1].forward_train(&h1);
        relu_in_place(&mut h2.data);
        let (mut z, c3) = self.units[2].forward_train(&h2);
        for (a, b) in z.data.iter_mut().zip(&x.data) {
            *a += *b;
        }
        relu_in_place(&mut z.data);
        let cache = BlockCache { units: vec![c1, c2, c3], hidden: [h1, h2], out: z.clone() };
        (z, cache)
    }

    fn forward_eval(&self, x: &Act<F>) -> Act<F> {
        let mut h = self.units[0].forward_eval(x);
        relu_in_place(&mut h.data);
        let mut h = self.units[1].forward_eval(&h);
        relu_in_place(&mut h.data);
        let mut z = self.units[2].forward_eval(&h);
        for (a, b) in z.data.iter_mut().zip(&x.data) {
            *a += *b;
        }
        relu_in_place(&mut z.data);
        z
    }

    fn backward(&mut self, cache: &BlockCache<F>, mut dout: Act<F>) -> Act<F> {
        relu_backward(&cache.out.data, &mut dout.data);
        let skip = dout.data.clone();
        let mut dh2 = self.units[2].backward(&cache.units[2], dout);
        relu_backward(&cache.hidden[1].data, &mut dh2.data);
        let mut dh1 = self.units[1].backward(&cache.units[1], dh2);
        relu_backward(&cache.hidden[0].data, &mut dh1.data);
        let mut dx = self.units[0].backward(&cache.units[0], dh1);
        for (a, b) in dx.data.iter_mut().zip(&skip) {
            *a += *b;
        }
        dx
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Head<F> {
    unit: ConvUnit<F>,
    hidden: Option<Linear<F>>,
    out: Linear<F>,
}

struct HeadCache<F> {
    unit: UnitCache<F>,
    act: Act<F>,
    features: Vec<F>,
    hidden_out: Option<Vec<F>>,
}

impl<F: Scalar> Head<F> {
    fn new(
        name: &str,
        trunk: usize,
        filters: usize,
        hidden: Option<usize>,
        outputs: usize,
        bn: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let unit = ConvUnit::new(name, trunk, filters, 1, bn, rng);
        let flat = filters * HW;
        let hidden_layer = hidden.map(|h| Linear::new(&format!("{name}.fc_hidden"), flat, h, rng));
        let out = Linear::new(&format!("{name}.fc_out"), hidden.unwrap_or(flat), outputs, rng);
        Head { unit, hidden: hidden_layer, out }
    }

    fn forward_train(&mut self, x: &Act<F>) -> (Vec<F>, HeadCache<F>) {
        let batch = x.batch;
        let (mut act, unit) = self.unit.forward_train(x);
        relu_in_place(&mut act.data);
        let features = act.to_features();
        let hidden_out = self.hidden.as_ref().map(|l| {
            let mut h = l.forward(&features, batch);
            relu_in_place(&mut h);
            h
        });
        let y = self.out.forward(hidden_out.as_deref().unwrap_or(&features), batch);
        (y, HeadCache { unit, act, features, hidden_out })
    }

    fn forward_eval(&self, x: &Act<F>) -> Vec<F> {
        let batch = x.batch;
        let mut act = self.unit.forward_eval(x);
        relu_in_place(&mut act.data);
        let features = act.to_features();
        match &self.hidden {
            Some(l) => {
                let mut h = l.forward(&features, batch);
                relu_in_place(&mut h);
                self.out.forward(&h, batch)
            }
            None => self.out.forward(&features, batch),
        }
    }

    fn backward(&mut self, cache: &HeadCache<F>, dy: &[F]) -> Act<F> {
        let batch = cache.act.batch;
        let dfeat = match (&mut self.hidden, &cache.hidden_out) {
            (Some(hidden), Some(h)) => {
                let mut dh = self.out.backward(h, dy, batch);
                relu_backward(h, &mut dh);
                hidden.backward(&cache.features, &dh, batch)
            }
            _ => self.out.backward(&cache.features, dy, batch),
        };
        let mut dact = Act::from_features(&dfeat, cache.act.channels, batch);
        relu_backward(&cache.act.data, &mut dact.data);
        self.unit.backward(&cache.unit, dact)
    }

    fn params(&self) -> Vec<&Param<F>> {
        let mut v = self.unit.params();
        if let Some(h) = &self.hidden {
            v.extend(h.params());
        }
        v.extend(self.out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut v = self.unit.params_mut();
        if let Some(h) = &mut self.hidden {
            v.extend(h.params_mut());
        }
        v.extend(self.out.params_mut());
        v
    }

    fn cast<G: Scalar>(&self) -> Head<G> {
        Head { unit: self.unit.cast(), hidden: self.hidden.as_ref().map(Linear::cast), out: self.out.cast() }
    }
}

/// Raw network outputs for a batch: policy logits (`batch × 294`) and
/// pre-tanh value logits (`batch`).
#[derive(Clone, Debug, PartialEq)]
pub struct NetOutput<F> {
    pub logits: Vec<F>,
    pub value_logits: Vec<F>,
}

/// Saved activations from a training-mode forward pass.
pub struct Trace<F> {
    stem: UnitCache<F>,
    stem_out: Act<F>,
    blocks: Vec<BlockCache<F>>,
    policy: HeadCache<F>,
    value: HeadCache<F>,
}

/// Policy prior over the 294 actions (zero off the legal mask) and value in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutput {
    pub policy: Vec<f32>,
    pub value: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<F = f32> {
    arch: NetArchitecture,
    stem: ConvUnit<F>,
    blocks: Vec<ResBlock<F>>,
    policy: Head<F>,
    value: Head<F>,
}

impl<F: Scalar> Network<F> {
    /// Xavier-initialized network.
    pub fn new(arch: &NetArchitecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bn = arch.use_batch_norm;
        let trunk = arch.trunk_width();
        let stem = ConvUnit::new("stem", INPUT_PLANES, trunk, arch.stem_kernel, bn, &mut rng);
        let blocks = (0..arch.num_blocks)
            .map(|b| {
                let f = arch.block_filters;
                let k = arch.block_kernels;
                let name = |i: usize| format!("block{b}.{i}");
                ResBlock {
                    units: [
                        ConvUnit::new(&name(0), trunk, f[0], k[0], bn, &mut rng),
                        ConvUnit::new(&name(1), f[0], f[1], k[1], bn, &mut rng),
                        ConvUnit::new(&name(2), f[1], f[2], k[2], bn, &mut rng),
                    ],
                }
            })
            .collect();
        let policy = Head::new("policy", trunk, arch.policy_filters, arch.policy_hidden, ACTIONS, bn, &mut rng);
        let value = Head::new("value", trunk, arch.value_filters, arch.value_hidden, 1, bn, &mut rng);
        Network { arch: arch.clone(), stem, blocks, policy, value }
    }

    pub fn architecture(&self) -> &NetArchitecture {
        &self.arch
    }

    /// All tensors in a fixed order (the checkpoint order).
    pub fn params(&self) -> Vec<&Param<F>> {
        let mut v = self.stem.params();
        for b in &self.blocks {
            for u in &b.units {
                v.extend(u.params());
            }
        }
        v.extend(self.policy.params());
        v.extend(self.value.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut v = self.stem.params_mut();
        for b in &mut self.blocks {
            for u in &mut b.units {
                v.extend(u.params_mut());
            }
        }
        v.extend(self.policy.params_mut());
        v.extend(self.value.params_mut());
        v
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn num_parameters(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    pub fn l2_norm_sq(&self) -> F {
        self.params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.iter().map(|v| *v * *v).sum::<F>())
            .sum()
    }

    /// Adds the gradient of `lambda * ||theta||^2`.
    pub fn add_l2_grad(&mut self, lambda: F) {
        let two_l = lambda + lambda;
        for p in self.params_mut().into_iter().filter(|p| p.trainable) {
            for (g, v) in p.grad.iter_mut().zip(&p.value) {
                *g += two_l * *v;
            }
        }
    }

    fn check_inputs(inputs: &[&[F]]) {
        assert!(!inputs.is_empty(), "empty batch");
        for x in inputs {
            assert_eq!(x.len(), INPUT_LEN, "input must be 7×7×7");
        }
    }

    /// Training-mode pass: batch-norm uses batch statistics and updates its running averages.
    pub fn forward_train(&mut self, inputs: &[&[F]]) -> (NetOutput<F>, Trace<F>) {
        Self::check_inputs(inputs);
        let x = Act::from_samples(inputs, INPUT_PLANES);
        let (mut h, stem) = self.stem.forward_train(&x);
        relu_in_place(&mut h.data);
        let stem_out = h.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &mut self.blocks {
            let (next, cache) = b.forward_train(&h);
            blocks.push(cache);
            h = next;
        }
        let (logits, policy) = self.policy.forward_train(&h);
        let (value_logits, value) = self.value.forward_train(&h);
        (NetOutput { logits, value_logits }, Trace { stem, stem_out, blocks, policy, value })
    }

    /// Inference pass; read-only and deterministic.
    pub fn forward_eval(&self, inputs: &[&[F]]) -> NetOutput<F> {
        Self::check_inputs(inputs);
        let x = Act::from_samples(inputs, INPUT_PLANES);
        let mut h = self.stem.forward_eval(&x);
        relu_in_place(&mut h.data);
        for b in &self.blocks {
            h = b.forward_eval(&h);
        }
        NetOutput { logits: self.policy.forward_eval(&h), value_logits: self.value.forward_eval(&h) }
    }

    /// Accumulates parameter gradients given gradients w.r.t. the raw outputs.
    pub fn backward(&mut self, trace: &Trace<F>, dlogits: &[F], dvalue_logits: &[F]) {
        let mut dh = self.policy.backward(&trace.policy, dlogits);
        let dv = self.value.backward(&trace.value, dvalue_logits);
        for (a, b) in dh.data.iter_mut().zip(&dv.data) {
            *a += *b;
        }
        for (b, cache) in self.blocks.iter_mut().zip(&trace.blocks).rev() {
            dh = b.backward(cache, dh);
        }
        relu_backward(&trace.stem_out.data, &mut dh.data);
        self.stem.backward(&trace.stem, dh);
    }

    pub fn cast<G: Scalar>(&self) -> Network<G> {
        Network {
            arch: self.arch.clone(),
            stem: self.stem.cast(),
            blocks: self.blocks.iter().map(|b| ResBlock { units: b.units.each_ref().map(ConvUnit::cast) }).collect(),
            policy: self.policy.cast(),
            value: self.value.cast(),
        }
    }
}

impl Network<f32> {
    pub fn evaluate_input(&self, input: &[f32], mask: &ActionMask) -> EvalOutput {
        let out = self.forward_eval(&[input]);
        EvalOutput {
            policy: super::loss::masked_softmax(&out.logits, mask),
            value: out.value_logits[0].tanh(),
        }
    }

    /// Policy and value for the side to move.
    pub fn evaluate(&self, state: &GameState) -> EvalOutput {
        self.evaluate_input(&state.encode_input(), &state.legal_mask())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_architecture_parameter_count() {
        let net = Network::<f32>::new(&NetArchitecture::paper(), 0);
        assert_eq!(net.num_parameters(), 247_386);
        assert_eq!(Network::<f32>::new(&NetArchitecture::compact(), 0).num_parameters(), 73_541);
    }

    #[test]
    fn eval_output_is_a_distribution() {
        let net = Network::<f32>::new(&NetArchitecture::desk(), 7);
        let s = GameState::new();
        let out = net.evaluate(&s);
        let mask = s.legal_mask();
        let sum: f32 = out.policy.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        for (i, p) in out.policy.iter().enumerate() {
            if !mask.get(i) {
                assert_eq!(*p, 0.0);
            }
        }
        assert!(out.value.abs() <= 1.0);
        let again = net.evaluate(&s);
        assert_eq!(out, again);
    }

    #[test]
    fn all_true_mask_sums_to_one() {
        let net = Network::<f32>::new(&NetArchitecture::paper(), 3);
        let s = GameState::new();
        let out = net.evaluate_input(&s.encode_input(), &ActionMask::all());
        assert!((out.policy.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn eval_matches_train_without_batch_norm() {
        let mut net = Network::<f64>::new(&NetArchitecture::desk(), 5);
        let x: Vec<f64> = GameState::new().encode_input().iter().map(|v| *v as f64).collect();
        let a = net.forward_eval(&[&x]);
        let (b, _) = net.forward_train(&[&x]);
        assert_eq!(a, b);
    }
}
