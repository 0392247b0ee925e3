use super::network::NetOutput;
use super::tensor::Scalar;
use crate::game::{ActionMask, ACTIONS};

/// Softmax restricted to the legal entries of `mask`; illegal entries are exactly zero.
pub fn masked_softmax<F: Scalar>(logits: &[F], mask: &ActionMask) -> Vec<F> {
    assert_eq!(logits.len(), ACTIONS);
    let mut out = vec![F::zero(); ACTIONS];
    let Some(max) = mask.iter().map(|a| logits[a.index()]).reduce(F::max) else {
        return out;
    };
    let mut total = F::zero();
    for a in mask.iter() {
        let e = (logits[a.index()] - max).exp();
        out[a.index()] = e;
        total += e;
    }
    for a in mask.iter() {
        out[a.index()] = out[a.index()] / total;
    }
    out
}

/// Policy/value targets for a batch, row-aligned with the network inputs.
pub struct Targets<'a, F> {
    /// `batch × 294`
    pub policy: &'a [F],
    pub value: &'a [F],
    pub masks: &'a [ActionMask],
}

/// Data part of the training loss, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts<F> {
    pub policy: F,
    pub value: F,
}

impl<F: Scalar> LossParts<F> {
    pub fn total(&self) -> F {
        self.policy + self.value
    }
}

/// Mean cross-entropy plus squared value error, with gradients w.r.t. the raw outputs.
pub fn policy_value_loss<F: Scalar>(out: &NetOutput<F>, targets: &Targets<F>) -> (LossParts<F>, Vec<F>, Vec<F>) {
    let batch = targets.value.len();
    assert_eq!(targets.policy.len(), batch * ACTIONS);
    assert_eq!(targets.masks.len(), batch);
    assert_eq!(out.value_logits.len(), batch);
    let inv_b = F::one() / F::of(batch as f64);
    let mut parts = LossParts { policy: F::zero(), value: F::zero() };
    let mut dlogits = vec![F::zero(); batch * ACTIONS];
    let mut dvalue = vec![F::zero(); batch];
    for n in 0..batch {
        let row = n * ACTIONS..(n + 1) * ACTIONS;
        let p = masked_softmax(&out.logits[row.clone()], &targets.masks[n]);
        let tgt = &targets.policy[row.clone()];
        for a in targets.masks[n].iter() {
            let i = a.index();
            if tgt[i] > F::zero() {
                parts.policy -= tgt[i] * p[i].max(F::min_positive_value()).ln() * inv_b;
            }
            dlogits[n * ACTIONS + i] = (p[i] - tgt[i]) * inv_b;
        }
        let v = out.value_logits[n].tanh();
        let err = v - targets.value[n];
        parts.value += err * err * inv_b;
        dvalue[n] = F::of(2.0) * err * (F::one() - v * v) * inv_b;
    }
    (parts, dlogits, dvalue)
}

/// Huber loss of an error and its derivative.
pub fn huber<F: Scalar>(e: F) -> (F, F) {
    let half = F::of(0.5);
    if e.abs() <= F::one() {
        (half * e * e, e)
    } else {
        (e.abs() - half, e.signum())
    }
}
