//! GRU encoder-decoder with hand-written backpropagation through time.
//!
//! One unidirectional encoder layer summarizes the input into the initial
//! decoder state; a decoder layer with a shared embedding and an output
//! projection produces per-step log-probability rows. Forward caches carry
//! everything the reverse pass needs, and gradients are written straight
//! into a flat [`GradientBuffer`] congruent with the parameter vector.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{log_softmax, DecoderState, GradientBuffer, PolicyModel, StateKind};
use crate::reward::{Sequence, TokenId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct CellOffsets {
    wr: usize,
    wz: usize,
    wc: usize,
    ur: usize,
    uz: usize,
    uc: usize,
    br: usize,
    bz: usize,
    bc: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layout {
    vocab: usize,
    embed: usize,
    hidden: usize,
    embed_off: usize,
    start_off: usize,
    enc: CellOffsets,
    dec: CellOffsets,
    out_w: usize,
    out_b: usize,
    total: usize,
}

impl Layout {
    fn new(vocab: usize, embed: usize, hidden: usize) -> Self {
        let mut cursor = 0;
        let mut take = |n: usize| {
            let at = cursor;
            cursor += n;
            at
        };
        let embed_off = take(vocab * embed);
        let start_off = take(embed);
        let cell = |take: &mut dyn FnMut(usize) -> usize| CellOffsets {
            wr: take(hidden * embed),
            wz: take(hidden * embed),
            wc: take(hidden * embed),
            ur: take(hidden * hidden),
            uz: take(hidden * hidden),
            uc: take(hidden * hidden),
            br: take(hidden),
            bz: take(hidden),
            bc: take(hidden),
        };
        let enc = cell(&mut take);
        let dec = cell(&mut take);
        let out_w = take(vocab * hidden);
        let out_b = take(vocab);
        Layout { vocab, embed, hidden, embed_off, start_off, enc, dec, out_w, out_b, total: cursor }
    }

    fn embed_row(&self, token: TokenId) -> usize {
        assert!((token as usize) < self.vocab, "token {token} out of vocabulary");
        self.embed_off + token as usize * self.embed
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// out[r] += M x, with M row-major rows x cols.
fn addmv(out: &mut [f64], m: &[f64], rows: usize, cols: usize, x: &[f64]) {
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        let mut s = 0.0;
        for c in 0..cols {
            s += row[c] * x[c];
        }
        out[r] += s;
    }
}

// out[c] += M^T y.
fn addmv_t(out: &mut [f64], m: &[f64], rows: usize, cols: usize, y: &[f64]) {
    for r in 0..rows {
        let yr = y[r];
        if yr == 0.0 {
            continue;
        }
        let row = &m[r * cols..(r + 1) * cols];
        for c in 0..cols {
            out[c] += row[c] * yr;
        }
    }
}

// M[r,c] += y[r] * x[c].
fn add_outer(m: &mut [f64], rows: usize, cols: usize, y: &[f64], x: &[f64]) {
    for r in 0..rows {
        let yr = y[r];
        if yr == 0.0 {
            continue;
        }
        let row = &mut m[r * cols..(r + 1) * cols];
        for c in 0..cols {
            row[c] += yr * x[c];
        }
    }
}

/// Forward activations of one GRU step, kept for the reverse pass.
#[derive(Clone, Debug)]
struct CellCache {
    h_prev: Vec<f64>,
    reset: Vec<f64>,
    update: Vec<f64>,
    cand: Vec<f64>,
    h: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
enum DecoderInput {
    Start,
    Token(TokenId),
}

#[derive(Clone, Debug)]
pub struct RecurrentModel {
    t_max: usize,
    init_seed: u64,
    layout: Layout,
    params: Vec<f64>,
}

impl RecurrentModel {
    pub fn zeros(vocab: usize, embed: usize, hidden: usize, t_max: usize) -> Self {
        let layout = Layout::new(vocab, embed, hidden);
        RecurrentModel { t_max, init_seed: 0, layout, params: vec![0.0; layout.total] }
    }

    /// Uniform init in [-0.08, 0.08], seeded.
    pub fn random(vocab: usize, embed: usize, hidden: usize, t_max: usize, seed: u64) -> Self {
        let mut model = Self::zeros(vocab, embed, hidden, t_max);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut model.params {
            *p = rng.gen_range(-0.08..0.08);
        }
        model.init_seed = seed;
        model
    }

    pub(crate) fn from_parts(
        vocab: usize,
        embed: usize,
        hidden: usize,
        t_max: usize,
        init_seed: u64,
        params: Vec<f64>,
    ) -> Self {
        let layout = Layout::new(vocab, embed, hidden);
        assert_eq!(params.len(), layout.total, "parameter count does not match shapes");
        RecurrentModel { t_max, init_seed, layout, params }
    }

    pub fn embed_dim(&self) -> usize {
        self.layout.embed
    }

    pub fn hidden_dim(&self) -> usize {
        self.layout.hidden
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    fn input_vec(&self, input: DecoderInput) -> &[f64] {
        let off = match input {
            DecoderInput::Start => self.layout.start_off,
            DecoderInput::Token(t) => self.layout.embed_row(t),
        };
        &self.params[off..off + self.layout.embed]
    }

    fn cell_forward(&self, cell: &CellOffsets, x: &[f64], h_prev: &[f64]) -> CellCache {
        let (e, h) = (self.layout.embed, self.layout.hidden);
        let p = &self.params;
        let mut a_r = p[cell.br..cell.br + h].to_vec();
        let mut a_z = p[cell.bz..cell.bz + h].to_vec();
        addmv(&mut a_r, &p[cell.wr..], h, e, x);
        addmv(&mut a_r, &p[cell.ur..], h, h, h_prev);
        addmv(&mut a_z, &p[cell.wz..], h, e, x);
        addmv(&mut a_z, &p[cell.uz..], h, h, h_prev);
        let reset: Vec<f64> = a_r.iter().map(|&a| sigmoid(a)).collect();
        let update: Vec<f64> = a_z.iter().map(|&a| sigmoid(a)).collect();
        let gated: Vec<f64> = reset.iter().zip(h_prev).map(|(r, hp)| r * hp).collect();
        let mut a_c = p[cell.bc..cell.bc + h].to_vec();
        addmv(&mut a_c, &p[cell.wc..], h, e, x);
        addmv(&mut a_c, &p[cell.uc..], h, h, &gated);
        let cand: Vec<f64> = a_c.iter().map(|a| a.tanh()).collect();
        let h_new: Vec<f64> = update
            .iter()
            .zip(h_prev)
            .zip(&cand)
            .map(|((u, hp), c)| u * hp + (1.0 - u) * c)
            .collect();
        CellCache { h_prev: h_prev.to_vec(), reset, update, cand, h: h_new }
    }

    /// Reverse pass through one GRU step. `d_h` is the gradient arriving at
    /// the produced hidden state; returns (d_input, d_h_prev) and adds the
    /// cell-parameter gradients into `grad`.
    fn cell_backward(
        &self,
        cell: &CellOffsets,
        x: &[f64],
        cache: &CellCache,
        d_h: &[f64],
        grad: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let (e, h) = (self.layout.embed, self.layout.hidden);
        let p = &self.params;
        let mut d_x = vec![0.0; e];
        let mut d_h_prev = vec![0.0; h];
        let mut d_a_c = vec![0.0; h];
        let mut d_a_z = vec![0.0; h];
        let mut d_reset = vec![0.0; h];

        for i in 0..h {
            let u = cache.update[i];
            let c = cache.cand[i];
            let d_update = d_h[i] * (cache.h_prev[i] - c);
            let d_cand = d_h[i] * (1.0 - u);
            d_h_prev[i] += d_h[i] * u;
            d_a_c[i] = d_cand * (1.0 - c * c);
            d_a_z[i] = d_update * u * (1.0 - u);
        }

        let gated: Vec<f64> = cache.reset.iter().zip(&cache.h_prev).map(|(r, hp)| r * hp).collect();
        add_outer(&mut grad[cell.wc..], h, e, &d_a_c, x);
        add_outer(&mut grad[cell.uc..], h, h, &d_a_c, &gated);
        for i in 0..h {
            grad[cell.bc + i] += d_a_c[i];
        }
        addmv_t(&mut d_x, &p[cell.wc..], h, e, &d_a_c);
        let mut d_gated = vec![0.0; h];
        addmv_t(&mut d_gated, &p[cell.uc..], h, h, &d_a_c);
        let mut d_a_r = vec![0.0; h];
        for i in 0..h {
            d_reset[i] = d_gated[i] * cache.h_prev[i];
            d_h_prev[i] += d_gated[i] * cache.reset[i];
            let r = cache.reset[i];
            d_a_r[i] = d_reset[i] * r * (1.0 - r);
        }

        add_outer(&mut grad[cell.wz..], h, e, &d_a_z, x);
        add_outer(&mut grad[cell.uz..], h, h, &d_a_z, &cache.h_prev);
        for i in 0..h {
            grad[cell.bz + i] += d_a_z[i];
        }
        addmv_t(&mut d_x, &p[cell.wz..], h, e, &d_a_z);
        addmv_t(&mut d_h_prev, &p[cell.uz..], h, h, &d_a_z);

        add_outer(&mut grad[cell.wr..], h, e, &d_a_r, x);
        add_outer(&mut grad[cell.ur..], h, h, &d_a_r, &cache.h_prev);
        for i in 0..h {
            grad[cell.br + i] += d_a_r[i];
        }
        addmv_t(&mut d_x, &p[cell.wr..], h, e, &d_a_r);
        addmv_t(&mut d_h_prev, &p[cell.ur..], h, h, &d_a_r);

        (d_x, d_h_prev)
    }

    fn encode_with_caches(&self, x: &Sequence) -> (Vec<CellCache>, Vec<f64>) {
        assert!(!x.is_empty(), "encoder input must be non-empty");
        let h = self.layout.hidden;
        let mut hidden = vec![0.0; h];
        let mut caches = Vec::with_capacity(x.len());
        for &tok in x.tokens() {
            let emb = self.input_vec(DecoderInput::Token(tok)).to_vec();
            let cache = self.cell_forward(&self.layout.enc, &emb, &hidden);
            hidden = cache.h.clone();
            caches.push(cache);
        }
        (caches, hidden)
    }

    fn output_logits(&self, hidden: &[f64]) -> Vec<f64> {
        let (v, h) = (self.layout.vocab, self.layout.hidden);
        let mut logits = self.params[self.layout.out_b..self.layout.out_b + v].to_vec();
        addmv(&mut logits, &self.params[self.layout.out_w..], v, h, hidden);
        logits
    }

    fn decoder_input(&self, step: usize, z: &Sequence) -> DecoderInput {
        if step == 0 {
            DecoderInput::Start
        } else {
            DecoderInput::Token(z.tokens()[step - 1])
        }
    }
}

impl PolicyModel for RecurrentModel {
    fn vocab_size(&self) -> usize {
        self.layout.vocab
    }

    fn t_max(&self) -> usize {
        self.t_max
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn encode(&self, x: &Sequence) -> DecoderState {
        let (_, hidden) = self.encode_with_caches(x);
        DecoderState::recurrent(hidden)
    }

    fn step(&self, state: &DecoderState, prev: Option<TokenId>) -> (Vec<f64>, DecoderState) {
        assert!(state.step < self.t_max, "decoder stepped past t_max");
        let hidden = match &state.kind {
            StateKind::Recurrent { hidden } => hidden,
            _ => panic!("recurrent model fed a non-recurrent state"),
        };
        let input = match prev {
            Some(t) => DecoderInput::Token(t),
            None => DecoderInput::Start,
        };
        let x = self.input_vec(input).to_vec();
        let cache = self.cell_forward(&self.layout.dec, &x, hidden);
        let row = log_softmax(&self.output_logits(&cache.h));
        let mut next = DecoderState::recurrent(cache.h);
        next.step = state.step + 1;
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
        assert_eq!(buffer.len(), self.params.len(), "buffer shape mismatch");
        if z.is_empty() {
            return;
        }
        let (v, e, h) = (self.layout.vocab, self.layout.embed, self.layout.hidden);

        let (enc_caches, enc_final) = self.encode_with_caches(x);
        let mut hidden = enc_final;
        let mut dec_caches = Vec::with_capacity(z.len());
        let mut probs: Vec<Option<Vec<f64>>> = Vec::with_capacity(z.len());
        for (t, _) in z.tokens().iter().enumerate() {
            let input = self.decoder_input(t, z);
            let xv = self.input_vec(input).to_vec();
            let cache = self.cell_forward(&self.layout.dec, &xv, &hidden);
            hidden = cache.h.clone();
            probs.push(if mask[t] {
                Some(log_softmax(&self.output_logits(&cache.h)).iter().map(|l| l.exp()).collect())
            } else {
                None
            });
            dec_caches.push(cache);
        }

        let grad = buffer.grad_mut();
        let mut d_hidden = vec![0.0; h];
        for t in (0..z.len()).rev() {
            let cache = &dec_caches[t];
            if let Some(p) = &probs[t] {
                let tok = z.tokens()[t] as usize;
                let mut d_logits = vec![0.0; v];
                for (i, &pi) in p.iter().enumerate() {
                    let indicator = if i == tok { 1.0 } else { 0.0 };
                    d_logits[i] = weight * (indicator - pi);
                }
                add_outer(&mut grad[self.layout.out_w..], v, h, &d_logits, &cache.h);
                for (i, &dl) in d_logits.iter().enumerate() {
                    grad[self.layout.out_b + i] += dl;
                }
                addmv_t(&mut d_hidden, &self.params[self.layout.out_w..], v, h, &d_logits);
            }
            let input = self.decoder_input(t, z);
            let xv = self.input_vec(input).to_vec();
            let (d_x, d_h_prev) =
                self.cell_backward(&self.layout.dec, &xv, cache, &d_hidden, grad);
            let x_off = match input {
                DecoderInput::Start => self.layout.start_off,
                DecoderInput::Token(tok) => self.layout.embed_row(tok),
            };
            for i in 0..e {
                grad[x_off + i] += d_x[i];
            }
            d_hidden = d_h_prev;
        }

        // The decoder's initial state is the encoder's final state.
        for (t, cache) in enc_caches.iter().enumerate().rev() {
            let tok = x.tokens()[t];
            let xv = self.input_vec(DecoderInput::Token(tok)).to_vec();
            let (d_x, d_h_prev) = self.cell_backward(&self.layout.enc, &xv, cache, &d_hidden, grad);
            let x_off = self.layout.embed_row(tok);
            for i in 0..e {
                grad[x_off + i] += d_x[i];
            }
            d_hidden = d_h_prev;
        }
    }
}
