//! Reward engine: averaged ROUGE-1/2/3 F1 as the main reward, per-step
//! reward increments with the shared-increment optimization, and the DUP/EOS
//! auxiliary rewards.
//!
//! The increment for appending token `v` to a prefix only depends on whether
//! the n-grams ending in `v` occur in the reference, so every token type
//! absent from the reference shares one increment value. [`IncrementRow`]
//! materializes exactly the reference types (plus EOS and the prefix-final
//! token) and one shared default, which keeps the per-step cost at O(|y|)
//! instead of O(V).

use std::collections::HashMap;

use thiserror::Error;

pub type TokenId = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SequenceError {
    #[error("EOS id {eos} may only appear once, as the final token (found at position {pos})")]
    MisplacedEos { eos: TokenId, pos: usize },
}

/// Token sequence, optionally terminated by a designated EOS id.
///
/// The EOS token is a control symbol: it is excluded from n-gram profiles
/// (`content()`) but still participates in the DUP/EOS auxiliary terms.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sequence {
    tokens: Vec<TokenId>,
    terminated: bool,
}

impl Sequence {
    /// Builds a sequence, validating that `eos` (if given) appears at most
    /// once and only as the final token.
    pub fn new(tokens: Vec<TokenId>, eos: Option<TokenId>) -> Result<Self, SequenceError> {
        let terminated = match eos {
            Some(e) => {
                if let Some(pos) = tokens.iter().position(|&t| t == e) {
                    if pos + 1 != tokens.len() {
                        return Err(SequenceError::MisplacedEos { eos: e, pos });
                    }
                    true
                } else {
                    false
                }
            }
            None => false,
        };
        Ok(Sequence { tokens, terminated })
    }

    /// A sequence with no EOS marker at all.
    pub fn unterminated(tokens: Vec<TokenId>) -> Self {
        Sequence { tokens, terminated: false }
    }

    /// Appends `eos` to `content` and marks the sequence terminated.
    pub fn terminated_with(mut content: Vec<TokenId>, eos: TokenId) -> Self {
        content.push(eos);
        Sequence { tokens: content, terminated: true }
    }

    pub fn empty() -> Self {
        Sequence { tokens: Vec::new(), terminated: false }
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    /// Tokens that count toward n-gram profiles (everything but a final EOS).
    pub fn content(&self) -> &[TokenId] {
        if self.terminated {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }

    pub fn content_len(&self) -> usize {
        self.content().len()
    }
}

/// Reward configuration: bang-bang weight magnitude, drop probability, and
/// which auxiliary terms are folded into training increments.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardConfig {
    /// Bang-bang weight magnitude W.
    pub w: f64,
    /// Probability that a step weight is dropped to zero.
    pub p_drop: f64,
    pub use_dup: bool,
    pub use_eos: bool,
    /// The designated EOS id, if the task has one.
    pub eos_id: Option<TokenId>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { w: 10_000.0, p_drop: 0.4, use_dup: true, use_eos: true, eos_id: None }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.w > 0.0) {
            return Err(format!("W must be positive, got {}", self.w));
        }
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(format!("p_drop must lie in [0,1], got {}", self.p_drop));
        }
        Ok(())
    }
}

/// Multiset of 1/2/3-grams plus the token count they were built from. Keeps
/// the final two tokens so new grams can be formed incrementally.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NGramProfile {
    uni: HashMap<TokenId, u32>,
    bi: HashMap<(TokenId, TokenId), u32>,
    tri: HashMap<(TokenId, TokenId, TokenId), u32>,
    last1: Option<TokenId>,
    last2: Option<TokenId>,
    len: usize,
}

impl NGramProfile {
    pub fn of(seq: &Sequence) -> Self {
        Self::of_tokens(seq.content())
    }

    pub fn of_tokens(tokens: &[TokenId]) -> Self {
        let mut p = NGramProfile::default();
        for &t in tokens {
            p.push(t);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of n-grams of the given order: max(0, len - n + 1).
    pub fn ngram_count(&self, n: usize) -> usize {
        (self.len + 1).saturating_sub(n)
    }

    pub fn count_uni(&self, t: TokenId) -> u32 {
        self.uni.get(&t).copied().unwrap_or(0)
    }

    pub fn count_bi(&self, g: (TokenId, TokenId)) -> u32 {
        self.bi.get(&g).copied().unwrap_or(0)
    }

    pub fn count_tri(&self, g: (TokenId, TokenId, TokenId)) -> u32 {
        self.tri.get(&g).copied().unwrap_or(0)
    }

    pub fn distinct_unigrams(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.uni.keys().copied()
    }

    fn push(&mut self, t: TokenId) {
        *self.uni.entry(t).or_insert(0) += 1;
        if let Some(a) = self.last1 {
            *self.bi.entry((a, t)).or_insert(0) += 1;
            if let Some(b) = self.last2 {
                *self.tri.entry((b, a, t)).or_insert(0) += 1;
            }
        }
        self.last2 = self.last1;
        self.last1 = Some(t);
        self.len += 1;
    }
}

/// F1 from a clipped overlap count and the two n-gram totals. The stated
/// convention: zero whenever either side has no n-grams (this also covers the
/// 0/0 precision-recall case).
fn f1_from_counts(overlap: u32, z_ngrams: usize, y_ngrams: usize) -> f64 {
    if z_ngrams == 0 || y_ngrams == 0 || overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / z_ngrams as f64;
    let r = overlap as f64 / y_ngrams as f64;
    2.0 * p * r / (p + r)
}

#[inline]
fn mean3(a: f64, b: f64, c: f64) -> f64 {
    (a + b + c) / 3.0
}

/// Single place where a per-step increment is assembled; both the optimized
/// row and the naive recomputation go through this expression so the two
/// agree bit for bit.
#[inline]
fn combine_increment(w_t: f64, r_new: f64, r_old: f64, dup: f64, eos: f64) -> f64 {
    w_t * (r_new - r_old + dup + eos)
}

fn clipped_overlap<K: std::hash::Hash + Eq>(z: &HashMap<K, u32>, y: &HashMap<K, u32>) -> u32 {
    z.iter().map(|(g, &c)| c.min(y.get(g).copied().unwrap_or(0))).sum()
}

/// ROUGE-n F1 of `z` against reference `y` for n in {1,2,3}.
pub fn rouge_n_f1(z: &Sequence, y: &Sequence, n: usize) -> f64 {
    assert!((1..=3).contains(&n), "only ROUGE-1/2/3 are supported, got n={n}");
    let zp = NGramProfile::of(z);
    let yp = NGramProfile::of(y);
    let overlap = match n {
        1 => clipped_overlap(&zp.uni, &yp.uni),
        2 => clipped_overlap(&zp.bi, &yp.bi),
        _ => clipped_overlap(&zp.tri, &yp.tri),
    };
    f1_from_counts(overlap, zp.ngram_count(n), yp.ngram_count(n))
}

/// Main reward: unweighted mean of ROUGE-1/2/3 F1. Defined as 0 for an empty
/// candidate so prefix rewards telescope exactly from R(empty) = 0.
pub fn main_reward(z: &Sequence, y: &Sequence) -> f64 {
    let yp = NGramProfile::of(y);
    assert!(!yp.is_empty(), "reference must contain at least one content token");
    let mut scorer = PrefixScorer::new(&yp);
    for &t in z.content() {
        scorer.push(t);
    }
    scorer.reward()
}

/// ROUGE-L F1 (longest common subsequence). Evaluation-only metric.
pub fn rouge_l_f1(z: &Sequence, y: &Sequence) -> f64 {
    let a = z.content();
    let b = y.content();
    assert!(!b.is_empty(), "reference must contain at least one content token");
    if a.is_empty() {
        return 0.0;
    }
    let mut prev = vec![0u32; b.len() + 1];
    let mut cur = vec![0u32; b.len() + 1];
    for &ta in a {
        for (j, &tb) in b.iter().enumerate() {
            cur[j + 1] = if ta == tb { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    f1_from_counts(prev[b.len()], a.len(), b.len())
}

/// DUP auxiliary term: -1 iff `token` repeats the final prefix token.
pub fn dup_term(prefix: &Sequence, token: TokenId) -> f64 {
    match prefix.content().last() {
        Some(&last) if last == token => -1.0,
        _ => 0.0,
    }
}

/// EOS auxiliary term: -1 iff `token` is the EOS id and the step index `t`
/// (1-based) is still short of the reference length.
pub fn eos_term(token: TokenId, eos_id: TokenId, t: usize, ref_len: usize) -> f64 {
    if token == eos_id && t < ref_len {
        -1.0
    } else {
        0.0
    }
}

/// Decode-time increment: the reference is unavailable, so only the DUP term
/// survives, scaled by W.
pub fn test_time_increment(prefix: &Sequence, token: TokenId, cfg: &RewardConfig) -> f64 {
    cfg.w * dup_term(prefix, token)
}

/// From-scratch reward increment for appending `token` to `prefix`: the
/// definitional formulation the optimized [`IncrementRow`] must reproduce
/// exactly. The oracle module builds its exact distributions from this path.
pub fn naive_increment(
    prefix: &Sequence,
    token: TokenId,
    y: &Sequence,
    cfg: &RewardConfig,
    w_t: f64,
) -> f64 {
    let r_old = main_reward(prefix, y);
    let mut extended = prefix.content().to_vec();
    extended.push(token);
    let z_new = Sequence::new(extended, cfg.eos_id)
        .expect("prefix is EOS-free, so appending one token cannot misplace EOS");
    let r_new = main_reward(&z_new, y);
    let t = prefix.content_len() + 1;
    let dup = if cfg.use_dup { dup_term(prefix, token) } else { 0.0 };
    let eos = match (cfg.use_eos, cfg.eos_id) {
        (true, Some(e)) => eos_term(token, e, t, y.len()),
        _ => 0.0,
    };
    combine_increment(w_t, r_new, r_old, dup, eos)
}

/// Incremental prefix state: n-gram counts of the prefix plus its clipped
/// overlap with the reference, updated in O(1) per pushed token.
#[derive(Clone, Debug)]
pub struct PrefixScorer<'a> {
    y: &'a NGramProfile,
    z: NGramProfile,
    overlap: [u32; 3],
}

impl<'a> PrefixScorer<'a> {
    pub fn new(y: &'a NGramProfile) -> Self {
        PrefixScorer { y, z: NGramProfile::default(), overlap: [0; 3] }
    }

    pub fn from_prefix(prefix: &Sequence, y: &'a NGramProfile) -> Self {
        let mut s = Self::new(y);
        for &t in prefix.content() {
            s.push(t);
        }
        s
    }

    pub fn reference(&self) -> &NGramProfile {
        self.y
    }

    pub fn prefix_len(&self) -> usize {
        self.z.len()
    }

    pub fn last_token(&self) -> Option<TokenId> {
        self.z.last1
    }

    /// The new n-grams formed by appending `token`, as overlap deltas: 1 for
    /// order n iff the reference still has unmatched copies of that gram.
    fn overlap_delta(&self, token: TokenId) -> [u32; 3] {
        let mut d = [0u32; 3];
        if self.y.count_uni(token) > self.z.count_uni(token) {
            d[0] = 1;
        }
        if let Some(a) = self.z.last1 {
            let bg = (a, token);
            if self.y.count_bi(bg) > self.z.count_bi(bg) {
                d[1] = 1;
            }
            if let Some(b) = self.z.last2 {
                let tg = (b, a, token);
                if self.y.count_tri(tg) > self.z.count_tri(tg) {
                    d[2] = 1;
                }
            }
        }
        d
    }

    pub fn push(&mut self, token: TokenId) {
        let d = self.overlap_delta(token);
        for n in 0..3 {
            self.overlap[n] += d[n];
        }
        self.z.push(token);
    }

    /// Main reward of the current prefix.
    pub fn reward(&self) -> f64 {
        self.reward_at(self.overlap, self.z.len())
    }

    /// Main reward of the prefix extended by `token`, without mutating.
    pub fn reward_after(&self, token: TokenId) -> f64 {
        let d = self.overlap_delta(token);
        let o = [self.overlap[0] + d[0], self.overlap[1] + d[1], self.overlap[2] + d[2]];
        self.reward_at(o, self.z.len() + 1)
    }

    fn reward_at(&self, overlap: [u32; 3], len: usize) -> f64 {
        let f = |n: usize| {
            f1_from_counts(overlap[n - 1], (len + 1).saturating_sub(n), self.y.ngram_count(n))
        };
        mean3(f(1), f(2), f(3))
    }
}

/// Per-candidate-token reward increments for one decoding step.
///
/// Holds explicit entries only for reference token types, EOS, and the
/// prefix-final token; every other token shares `default_value`.
#[derive(Clone, Debug)]
pub struct IncrementRow {
    prefix_len: usize,
    per_token: HashMap<TokenId, f64>,
    default_value: f64,
    includes_aux: bool,
}

impl IncrementRow {
    /// Builds the row for the step following `scorer`'s prefix. `ref_len` is
    /// the total reference length (EOS included) used by the EOS term.
    pub fn from_scorer(
        scorer: &PrefixScorer<'_>,
        ref_len: usize,
        cfg: &RewardConfig,
        w_t: f64,
    ) -> Self {
        let t = scorer.prefix_len() + 1;
        let r_old = scorer.reward();
        let last = scorer.last_token();
        let dup_of = |v: TokenId| if cfg.use_dup && last == Some(v) { -1.0 } else { 0.0 };

        let mut per_token = HashMap::new();
        for v in scorer.reference().distinct_unigrams() {
            let r_new = scorer.reward_after(v);
            per_token.insert(v, combine_increment(w_t, r_new, r_old, dup_of(v), 0.0));
        }
        if let Some(e) = cfg.eos_id {
            // Appending EOS leaves the n-gram profile untouched, so its
            // ROUGE increment is exactly zero.
            let eos = if cfg.use_eos { eos_term(e, e, t, ref_len) } else { 0.0 };
            per_token.insert(e, combine_increment(w_t, r_old, r_old, dup_of(e), eos));
        }
        if cfg.use_dup {
            if let Some(lp) = last {
                per_token
                    .entry(lp)
                    .or_insert_with(|| combine_increment(w_t, scorer.reward_after(lp), r_old, -1.0, 0.0));
            }
        }
        // Any token forming no reference n-gram: overlap is unchanged, only
        // the candidate length grows.
        let default_value = combine_increment(w_t, scorer.reward_off_reference(), r_old, 0.0, 0.0);
        IncrementRow { prefix_len: scorer.prefix_len(), per_token, default_value, includes_aux: cfg.use_dup || cfg.use_eos }
    }

    pub fn value(&self, token: TokenId) -> f64 {
        self.per_token.get(&token).copied().unwrap_or(self.default_value)
    }

    pub fn entry_count(&self) -> usize {
        self.per_token.len()
    }

    pub fn default_value(&self) -> f64 {
        self.default_value
    }

    pub fn includes_aux(&self) -> bool {
        self.includes_aux
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    /// True when every increment (entries and default) equals zero.
    pub fn is_zero(&self) -> bool {
        self.default_value == 0.0 && self.per_token.values().all(|&v| v == 0.0)
    }
}

impl PrefixScorer<'_> {
    // Reward after appending a token that matches nothing in the reference.
    fn reward_off_reference(&self) -> f64 {
        self.reward_at(self.overlap, self.z.len() + 1)
    }
}

/// Reward increments for every candidate token at step `t` (1-based), given
/// the EOS-free `prefix` of length `t - 1`.
pub fn increment_row(
    prefix: &Sequence,
    y: &Sequence,
    t: usize,
    cfg: &RewardConfig,
    w_t: f64,
) -> IncrementRow {
    assert_eq!(prefix.len(), t - 1, "prefix length must be t - 1");
    assert!(!prefix.terminated(), "prefix must be EOS-free");
    let yp = NGramProfile::of(y);
    let scorer = PrefixScorer::from_prefix(prefix, &yp);
    IncrementRow::from_scorer(&scorer, y.len(), cfg, w_t)
}
