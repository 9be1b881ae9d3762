//! Tabular conditional model: one logit per (context class, previous token,
//! next token). Exact softmax gradients make it the enumeration backend for
//! the oracle module.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fnv1a_tokens, log_softmax, DecoderState, GradientBuffer, PolicyModel, StateKind};
use crate::reward::{Sequence, TokenId};

#[derive(Clone, Debug)]
pub struct TabularModel {
    num_contexts: usize,
    vocab_size: usize,
    t_max: usize,
    init_seed: u64,
    /// Row-major [context][prev][next]; the extra prev index `vocab_size`
    /// stands for the sequence start.
    logits: Vec<f64>,
}

impl TabularModel {
    pub fn zeros(num_contexts: usize, vocab_size: usize, t_max: usize) -> Self {
        assert!(num_contexts > 0 && vocab_size > 0);
        let len = num_contexts * (vocab_size + 1) * vocab_size;
        TabularModel { num_contexts, vocab_size, t_max, init_seed: 0, logits: vec![0.0; len] }
    }

    pub fn random(num_contexts: usize, vocab_size: usize, t_max: usize, seed: u64, scale: f64) -> Self {
        let mut model = Self::zeros(num_contexts, vocab_size, t_max);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut model.logits {
            *l = rng.gen_range(-scale..scale);
        }
        model.init_seed = seed;
        model
    }

    pub fn from_logits(num_contexts: usize, vocab_size: usize, t_max: usize, logits: Vec<f64>) -> Self {
        assert_eq!(logits.len(), num_contexts * (vocab_size + 1) * vocab_size);
        TabularModel { num_contexts, vocab_size, t_max, init_seed: 0, logits }
    }

    pub(crate) fn from_parts(
        num_contexts: usize,
        vocab_size: usize,
        t_max: usize,
        init_seed: u64,
        logits: Vec<f64>,
    ) -> Self {
        let mut m = Self::from_logits(num_contexts, vocab_size, t_max, logits);
        m.init_seed = init_seed;
        m
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn context_of(&self, x: &Sequence) -> usize {
        (fnv1a_tokens(x.tokens()) % self.num_contexts as u64) as usize
    }

    fn prev_index(&self, prev: Option<TokenId>) -> usize {
        match prev {
            Some(p) => {
                assert!((p as usize) < self.vocab_size, "prev token {p} out of vocabulary");
                p as usize
            }
            None => self.vocab_size,
        }
    }

    /// Flat parameter index of logit (context, prev, next).
    pub fn logit_index(&self, context: usize, prev: Option<TokenId>, next: TokenId) -> usize {
        let p = self.prev_index(prev);
        (context * (self.vocab_size + 1) + p) * self.vocab_size + next as usize
    }

    fn row(&self, context: usize, prev: Option<TokenId>) -> &[f64] {
        let base = self.logit_index(context, prev, 0);
        &self.logits[base..base + self.vocab_size]
    }

    fn softmax_row(&self, context: usize, prev: Option<TokenId>) -> Vec<f64> {
        log_softmax(self.row(context, prev)).iter().map(|l| l.exp()).collect()
    }
}

impl PolicyModel for TabularModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn t_max(&self) -> usize {
        self.t_max
    }

    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn encode(&self, x: &Sequence) -> DecoderState {
        for &t in x.tokens() {
            assert!((t as usize) < self.vocab_size, "input token {t} out of vocabulary");
        }
        DecoderState::tabular(self.context_of(x))
    }

    fn step(&self, state: &DecoderState, prev: Option<TokenId>) -> (Vec<f64>, DecoderState) {
        assert!(state.step < self.t_max, "decoder stepped past t_max");
        let context = match state.kind {
            StateKind::Tabular { context } => context,
            _ => panic!("tabular model fed a non-tabular state"),
        };
        let row = log_softmax(self.row(context, prev));
        let mut next = state.clone();
        next.step += 1;
        (row, next)
    }

    fn accumulate_masked_loglik_grad(
        &self,
        x: &Sequence,
        z: &Sequence,
        mask: &[bool],
        weight: f64,
        buffer: &mut GradientBuffer,
    ) {
        assert_eq!(mask.len(), z.len(), "mask length must equal |z|");
        assert_eq!(buffer.len(), self.logits.len(), "buffer shape mismatch");
        let context = self.context_of(x);
        let mut prev = None;
        for (t, &tok) in z.tokens().iter().enumerate() {
            if mask[t] {
                let probs = self.softmax_row(context, prev);
                let base = self.logit_index(context, prev, 0);
                let g = buffer.grad_mut();
                for (v, &p) in probs.iter().enumerate() {
                    let indicator = if v == tok as usize { 1.0 } else { 0.0 };
                    g[base + v] += weight * (indicator - p);
                }
            }
            prev = Some(tok);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::finite_difference_check;

    fn useq(tokens: &[TokenId]) -> Sequence {
        Sequence::unterminated(tokens.to_vec())
    }

    #[test]
    fn uniform_model_rows_are_log_v() {
        let model = TabularModel::zeros(1, 4, 8);
        let state = model.encode(&useq(&[0]));
        let (row, _) = model.step(&state, None);
        for &l in &row {
            assert!((l - (-(4.0f64).ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn single_raised_logit_matches_closed_form() {
        let mut model = TabularModel::zeros(1, 3, 8);
        let idx = model.logit_index(0, None, 0);
        model.params_mut()[idx] = 1.0;
        let state = model.encode(&useq(&[0]));
        let (row, _) = model.step(&state, None);
        let expected = 1.0 - (std::f64::consts::E + 2.0).ln();
        assert!((row[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn uniform_sequence_log_likelihood() {
        let model = TabularModel::zeros(1, 2, 8);
        let ll = model.sequence_log_likelihood(&useq(&[0]), &useq(&[0, 1]));
        assert!((ll - (-2.0 * (2.0f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn encode_is_deterministic_and_context_hashed() {
        let model = TabularModel::random(4, 5, 8, 3, 1.0);
        let a = model.context_of(&useq(&[1, 2, 3]));
        let b = model.context_of(&useq(&[1, 2, 3]));
        assert_eq!(a, b);
        assert!(a < 4);
    }

    #[test]
    fn all_false_mask_leaves_buffer_unchanged() {
        let model = TabularModel::random(1, 4, 8, 5, 1.0);
        let mut buf = GradientBuffer::zeros(model.param_count());
        model.accumulate_masked_loglik_grad(
            &useq(&[0]),
            &useq(&[1, 2]),
            &[false, false],
            1.0,
            &mut buf,
        );
        assert!(buf.grad().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn complementary_masks_sum_to_full_gradient() {
        let model = TabularModel::random(1, 4, 8, 9, 1.5);
        let x = useq(&[2]);
        let z = useq(&[1, 3, 0]);
        let mut full = GradientBuffer::zeros(model.param_count());
        model.accumulate_masked_loglik_grad(&x, &z, &[true, true, true], 1.0, &mut full);
        let mut parts = GradientBuffer::zeros(model.param_count());
        model.accumulate_masked_loglik_grad(&x, &z, &[true, false, true], 1.0, &mut parts);
        model.accumulate_masked_loglik_grad(&x, &z, &[false, true, false], 1.0, &mut parts);
        for (a, b) in full.grad().iter().zip(parts.grad()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_gradient_per_correct_token() {
        // d log p(y_t) / d logit(correct) = 1 - 1/V on a fresh uniform row.
        let model = TabularModel::zeros(1, 5, 8);
        let mut buf = GradientBuffer::zeros(model.param_count());
        model.accumulate_masked_loglik_grad(&useq(&[0]), &useq(&[3]), &[true], 1.0, &mut buf);
        let idx = model.logit_index(0, None, 3);
        assert!((buf.grad()[idx] - (1.0 - 0.2)).abs() < 1e-12);
        let off = model.logit_index(0, None, 1);
        assert!((buf.grad()[off] - (-0.2)).abs() < 1e-12);
    }

    #[test]
    fn finite_differences_agree() {
        let mut model = TabularModel::random(2, 4, 8, 17, 1.0);
        let x = useq(&[1, 2]);
        let z = useq(&[0, 3, 2]);
        let err = finite_difference_check(&mut model, &x, &z, &[true, false, true], 1e-5);
        assert!(err < 1e-7, "max relative error {err}");
    }
}
