//! Differentiable conditional sequence models p(z_t | z_{1:t-1}, x).
//!
//! Two backends share one interface: a tabular model whose gradients can be
//! enumerated exactly (the oracle backend), and a small GRU encoder-decoder
//! with hand-written backpropagation. All parameters live in one flat f64
//! vector so gradient buffers, Adagrad state, and finite differences address
//! coordinates uniformly.

mod checkpoint;
mod recurrent;
mod tabular;
mod vocab;

pub use checkpoint::{load_model, save_model, CheckpointError};
pub use recurrent::RecurrentModel;
pub use tabular::TabularModel;
pub use vocab::{Vocab, VocabError, EOS_ID, PAD_ID, UNK_ID};

use crate::reward::{Sequence, TokenId};

/// Decoder conditioning state after consuming some prefix.
#[derive(Clone, Debug)]
pub struct DecoderState {
    /// Number of decoder steps already taken.
    pub step: usize,
    kind: StateKind,
}

#[derive(Clone, Debug)]
enum StateKind {
    Tabular { context: usize },
    Recurrent { hidden: Vec<f64> },
}

impl DecoderState {
    fn tabular(context: usize) -> Self {
        DecoderState { step: 0, kind: StateKind::Tabular { context } }
    }

    fn recurrent(hidden: Vec<f64>) -> Self {
        DecoderState { step: 0, kind: StateKind::Recurrent { hidden } }
    }
}

/// Flat parameter-gradient accumulator plus the number of example gradients
/// merged into it.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer {
    grad: Vec<f64>,
    examples: usize,
}

impl GradientBuffer {
    pub fn zeros(len: usize) -> Self {
        GradientBuffer { grad: vec![0.0; len], examples: 0 }
    }

    pub fn len(&self) -> usize {
        self.grad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad.is_empty()
    }

    pub fn reset(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        self.examples = 0;
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub(crate) fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn examples(&self) -> usize {
        self.examples
    }

    pub fn note_example(&mut self) {
        self.examples += 1;
    }

    /// Ordered elementwise merge; example counts add.
    pub fn merge(&mut self, other: &GradientBuffer) {
        assert_eq!(self.grad.len(), other.grad.len(), "buffer shapes must match");
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            *a += b;
        }
        self.examples += other.examples;
    }

    /// Mean gradient over the accumulated examples.
    pub fn mean(&self) -> Vec<f64> {
        assert!(self.examples > 0, "no example gradients accumulated");
        let inv = 1.0 / self.examples as f64;
        self.grad.iter().map(|g| g * inv).collect()
    }

    /// Index of the first non-finite coordinate, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.grad.iter().position(|g| !g.is_finite())
    }
}

/// Conditional sequence model with log-likelihood gradients.
pub trait PolicyModel {
    fn vocab_size(&self) -> usize;

    /// Maximum decode length (EOS included).
    fn t_max(&self) -> usize;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn param_count(&self) -> usize {
        self.params().len()
    }

    /// Deterministic initial decoder state for input `x`.
    fn encode(&self, x: &Sequence) -> DecoderState;

    /// One decoder step: consumes the previous target token (`None` at the
    /// first step) and returns a normalized log-probability row over the
    /// vocabulary plus the advanced state.
    fn step(&self, state: &DecoderState, prev: Option<TokenId>) -> (Vec<f64>, DecoderState);

    /// Adds `weight * d/dtheta sum_{t: mask[t]} log p(z_t | x, z_{1:t-1})`
    /// into `buffer`. Conditioning always uses the full prefix, including
    /// steps the mask excludes.
    fn accumulate_masked_loglik_grad(
        &self,
        x: &Sequence,
        z: &Sequence,
        mask: &[bool],
        weight: f64,
        buffer: &mut GradientBuffer,
    );

    /// Masked log-likelihood along `z` via the step interface.
    fn masked_log_likelihood(&self, x: &Sequence, z: &Sequence, mask: &[bool]) -> f64 {
        assert_eq!(mask.len(), z.len(), "mask length must equal |z|");
        let mut state = self.encode(x);
        let mut prev = None;
        let mut total = 0.0;
        for (t, &tok) in z.tokens().iter().enumerate() {
            let (row, next) = self.step(&state, prev);
            if mask[t] {
                total += row[tok as usize];
            }
            prev = Some(tok);
            state = next;
        }
        total
    }

    fn sequence_log_likelihood(&self, x: &Sequence, z: &Sequence) -> f64 {
        self.masked_log_likelihood(x, z, &vec![true; z.len()])
    }
}

/// Absolute tolerance below which a gradient coordinate counts as zero in
/// the finite-difference comparison (relative error is undefined there, and
/// central-difference noise sits well under this floor).
pub const FD_ABSOLUTE_FLOOR: f64 = 1e-8;

/// Compares the analytic gradient of the masked log-likelihood against
/// central finite differences, coordinate by coordinate. Deviations within
/// [`FD_ABSOLUTE_FLOOR`] pass outright; anything larger contributes its
/// relative error, and the maximum over all coordinates is returned.
pub fn finite_difference_check<M: PolicyModel>(
    model: &mut M,
    x: &Sequence,
    z: &Sequence,
    mask: &[bool],
    epsilon: f64,
) -> f64 {
    assert!((1e-7..=1e-3).contains(&epsilon), "epsilon must lie in [1e-7, 1e-3]");
    let mut buffer = GradientBuffer::zeros(model.param_count());
    model.accumulate_masked_loglik_grad(x, z, mask, 1.0, &mut buffer);
    let mut max_rel: f64 = 0.0;
    for i in 0..model.param_count() {
        let original = model.params()[i];
        model.params_mut()[i] = original + epsilon;
        let f_plus = model.masked_log_likelihood(x, z, mask);
        model.params_mut()[i] = original - epsilon;
        let f_minus = model.masked_log_likelihood(x, z, mask);
        model.params_mut()[i] = original;
        let numeric = (f_plus - f_minus) / (2.0 * epsilon);
        let analytic = buffer.grad()[i];
        let diff = (analytic - numeric).abs();
        if diff <= FD_ABSOLUTE_FLOOR {
            continue;
        }
        max_rel = max_rel.max(diff / analytic.abs().max(numeric.abs()));
    }
    max_rel
}

/// Either backend behind one concrete type, for checkpointing and the CLI.
#[derive(Clone, Debug)]
pub enum ModelKind {
    Tabular(TabularModel),
    Recurrent(RecurrentModel),
}

macro_rules! dispatch {
    ($self:ident, $m:ident, $body:expr) => {
        match $self {
            ModelKind::Tabular($m) => $body,
            ModelKind::Recurrent($m) => $body,
        }
    };
}

impl PolicyModel for ModelKind {
    fn vocab_size(&self) -> usize {
        dispatch!(self, m, m.vocab_size())
    }

    fn t_max(&self) -> usize {
        dispatch!(self, m, m.t_max())
    }

    fn params(&self) -> &[f64] {
        dispatch!(self, m, m.params())
    }

    fn params_mut(&mut self) -> &mut [f64] {
        dispatch!(self, m, m.params_mut())
    }

    fn encode(&self, x: &Sequence) -> DecoderState {
        dispatch!(self, m, m.encode(x))
    }

    fn step(&self, state: &DecoderState, prev: Option<TokenId>) -> (Vec<f64>, DecoderState) {
        dispatch!(self, m, m.step(state, prev))
    }

    fn accumulate_masked_loglik_grad(
        &self,
        x: &Sequence,
        z: &Sequence,
        mask: &[bool],
        weight: f64,
        buffer: &mut GradientBuffer,
    ) {
        dispatch!(self, m, m.accumulate_masked_loglik_grad(x, z, mask, weight, buffer))
    }
}

/// Numerically stable log-softmax over a logit row.
pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

pub(crate) fn fnv1a_tokens(tokens: &[TokenId]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &t in tokens {
        for byte in t.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::Sequence;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn useq(tokens: &[TokenId]) -> Sequence {
        Sequence::unterminated(tokens.to_vec())
    }

    #[test]
    fn buffer_merge_is_elementwise() {
        let mut a = GradientBuffer::zeros(3);
        a.grad_mut()[0] = 1.0;
        a.note_example();
        let mut b = GradientBuffer::zeros(3);
        b.grad_mut()[2] = 2.0;
        b.note_example();
        a.merge(&b);
        assert_eq!(a.grad(), &[1.0, 0.0, 2.0]);
        assert_eq!(a.examples(), 2);
        assert_eq!(a.mean(), vec![0.5, 0.0, 1.0]);
    }

    #[test]
    fn log_softmax_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let row: Vec<f64> = (0..9).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let ls = log_softmax(&row);
            let total: f64 = ls.iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fnv_hash_is_order_sensitive() {
        assert_ne!(fnv1a_tokens(&[1, 2, 3]), fnv1a_tokens(&[3, 2, 1]));
        assert_eq!(fnv1a_tokens(&[1, 2, 3]), fnv1a_tokens(&[1, 2, 3]));
    }

    #[test]
    fn masked_loglik_default_sums_step_rows() {
        let model = TabularModel::random(2, 4, 6, 11, 0.5);
        let x = useq(&[0, 1]);
        let z = useq(&[2, 0, 3]);
        let full = model.sequence_log_likelihood(&x, &z);
        let mut by_steps = 0.0;
        let mut state = model.encode(&x);
        let mut prev = None;
        for &tok in z.tokens() {
            let (row, next) = model.step(&state, prev);
            by_steps += row[tok as usize];
            prev = Some(tok);
            state = next;
        }
        assert!((full - by_steps).abs() < 1e-12);
    }
}
