//! Stochastic gradients for the four objectives: MLE, RAML, naive policy
//! gradient, and bang-bang SPG. Every estimator writes through
//! `accumulate_masked_loglik_grad`, so gradient linearity and the
//! finite-difference guarantees carry over unchanged.

use std::str::FromStr;

use rand::Rng;

use crate::model::{GradientBuffer, PolicyModel};
use crate::reward::{main_reward, RewardConfig, Sequence, TokenId};
use crate::sampling::{
    mle_target, sample_pg_target, sample_raml_target, sample_spg_target, RamlConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Mle,
    Raml,
    Pg,
    Spg,
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mle" => Ok(Regime::Mle),
            "raml" => Ok(Regime::Raml),
            "pg" => Ok(Regime::Pg),
            "spg" => Ok(Regime::Spg),
            other => Err(format!("unknown regime {other:?} (expected mle|raml|pg|spg)")),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::Mle => "mle",
            Regime::Raml => "raml",
            Regime::Pg => "pg",
            Regime::Spg => "spg",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct EstimatorConfig {
    pub regime: Regime,
    /// Samples per example.
    pub j: usize,
    pub reward: RewardConfig,
    pub raml: RamlConfig,
    /// Weight each SPG target's loss by its main reward.
    pub reward_weighting: bool,
}

impl EstimatorConfig {
    pub fn new(regime: Regime) -> Self {
        EstimatorConfig {
            regime,
            j: 1,
            reward: RewardConfig::default(),
            raml: RamlConfig::default(),
            reward_weighting: false,
        }
    }
}

/// Per-example training telemetry.
#[derive(Clone, Debug)]
pub struct ExampleGradReport {
    pub targets: Vec<Sequence>,
    /// Multiplier applied to each target's log-likelihood gradient.
    pub weights: Vec<f64>,
    /// Steps whose log-likelihood entered the loss, over all targets.
    pub included_steps: usize,
    pub total_steps: usize,
    pub loss_proxy: f64,
}

/// Dispatches to the regime's estimator. `content_tokens` is the sampling
/// alphabet for RAML substitutions.
pub fn example_gradient<M: PolicyModel, R: Rng>(
    model: &M,
    x: &Sequence,
    y: &Sequence,
    content_tokens: &[TokenId],
    cfg: &EstimatorConfig,
    rng: &mut R,
    buffer: &mut GradientBuffer,
) -> ExampleGradReport {
    match cfg.regime {
        Regime::Mle => grad_mle(model, x, y, buffer),
        Regime::Raml => grad_raml(model, x, y, content_tokens, cfg, rng, buffer),
        Regime::Pg => grad_pg(model, x, y, cfg, rng, buffer),
        Regime::Spg => grad_bbspg(model, x, y, cfg, rng, buffer),
    }
}

/// Accumulates the MLE loss gradient: buffer -= d log p(y|x).
pub fn grad_mle<M: PolicyModel>(
    model: &M,
    x: &Sequence,
    y: &Sequence,
    buffer: &mut GradientBuffer,
) -> ExampleGradReport {
    let target = mle_target(y);
    let mask = vec![true; target.len()];
    model.accumulate_masked_loglik_grad(x, &target, &mask, -1.0, buffer);
    buffer.note_example();
    let loss = -model.sequence_log_likelihood(x, &target);
    ExampleGradReport {
        weights: vec![-1.0],
        included_steps: target.len(),
        total_steps: target.len(),
        targets: vec![target],
        loss_proxy: loss,
    }
}

/// Draws J reward-distribution targets and accumulates -(1/J) sum_j
/// d log p(z_j|x).
pub fn grad_raml<M: PolicyModel, R: Rng>(
    model: &M,
    x: &Sequence,
    y: &Sequence,
    content_tokens: &[TokenId],
    cfg: &EstimatorConfig,
    rng: &mut R,
    buffer: &mut GradientBuffer,
) -> ExampleGradReport {
    assert!(cfg.j >= 1);
    let weight = -1.0 / cfg.j as f64;
    let mut targets = Vec::with_capacity(cfg.j);
    let mut weights = Vec::with_capacity(cfg.j);
    let mut included = 0;
    let mut total = 0;
    let mut loss = 0.0;
    for _ in 0..cfg.j {
        let z = sample_raml_target(y, content_tokens, &cfg.raml, rng);
        let mask = vec![true; z.len()];
        model.accumulate_masked_loglik_grad(x, &z, &mask, weight, buffer);
        loss += -model.sequence_log_likelihood(x, &z) / cfg.j as f64;
        included += z.len();
        total += z.len();
        weights.push(weight);
        targets.push(z);
    }
    buffer.note_example();
    ExampleGradReport { targets, weights, included_steps: included, total_steps: total, loss_proxy: loss }
}

/// Naive policy gradient without variance reduction: draws J model samples
/// and accumulates -(1/J) sum_j R(z_j|y) d log p(z_j|x).
pub fn grad_pg<M: PolicyModel, R: Rng>(
    model: &M,
    x: &Sequence,
    y: &Sequence,
    cfg: &EstimatorConfig,
    rng: &mut R,
    buffer: &mut GradientBuffer,
) -> ExampleGradReport {
    assert!(cfg.j >= 1);
    let mut targets = Vec::with_capacity(cfg.j);
    let mut weights = Vec::with_capacity(cfg.j);
    let mut included = 0;
    let mut total = 0;
    let mut loss = 0.0;
    for _ in 0..cfg.j {
        let z = sample_pg_target(model, x, cfg.reward.eos_id, rng);
        let reward = if z.content_len() == 0 { 0.0 } else { main_reward(&z, y) };
        let weight = -reward / cfg.j as f64;
        if weight != 0.0 {
            let mask = vec![true; z.len()];
            model.accumulate_masked_loglik_grad(x, &z, &mask, weight, buffer);
            loss += weight * model.sequence_log_likelihood(x, &z);
            included += z.len();
        }
        total += z.len();
        weights.push(weight);
        targets.push(z);
    }
    buffer.note_example();
    ExampleGradReport { targets, weights, included_steps: included, total_steps: total, loss_proxy: loss }
}

/// Bang-bang SPG gradient: draws (z, w) jointly per sample and accumulates
/// the negative log-likelihood gradient over the steps with non-zero weight,
/// optionally scaled by the target's main reward.
pub fn grad_bbspg<M: PolicyModel, R: Rng>(
    model: &M,
    x: &Sequence,
    y: &Sequence,
    cfg: &EstimatorConfig,
    rng: &mut R,
    buffer: &mut GradientBuffer,
) -> ExampleGradReport {
    assert!(cfg.j >= 1);
    let mut targets = Vec::with_capacity(cfg.j);
    let mut weights = Vec::with_capacity(cfg.j);
    let mut included = 0;
    let mut total = 0;
    let mut loss = 0.0;
    for _ in 0..cfg.j {
        let outcome = sample_spg_target(model, x, y, &cfg.reward, rng);
        let mask = outcome.w.mask();
        let scale = if cfg.reward_weighting { main_reward(&outcome.z, y) } else { 1.0 };
        let weight = -scale / cfg.j as f64;
        let active = mask.iter().filter(|&&m| m).count();
        if active > 0 && weight != 0.0 {
            model.accumulate_masked_loglik_grad(x, &outcome.z, &mask, weight, buffer);
        }
        // The true bang-bang loss is intractable; report the negative masked
        // log-likelihood of the drawn target as a proxy.
        loss += -model.masked_log_likelihood(x, &outcome.z, &mask) / cfg.j as f64;
        included += active;
        total += outcome.z.len();
        weights.push(weight);
        targets.push(outcome.z);
    }
    buffer.note_example();
    ExampleGradReport { targets, weights, included_steps: included, total_steps: total, loss_proxy: loss }
}
