//! Optimization loop: per-example-accumulating Adagrad with global-norm
//! gradient clipping, periodic greedy-decode evaluation, best-checkpoint
//! selection on validation main reward, and CSV metrics emission.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use thiserror::Error;

use crate::data::Dataset;
use crate::estimator::{example_gradient, EstimatorConfig};
use crate::model::{GradientBuffer, PolicyModel};
use crate::reward::{main_reward, rouge_l_f1, RewardConfig};
use crate::sampling::{epoch_shuffle_rng, example_rng, greedy_decode};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("gradient coordinate {coord} became non-finite at step {step}")]
    NonFiniteGradient { step: usize, coord: usize },
    #[error("loss proxy became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("training split is empty")]
    EmptyDataset,
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub estimator: EstimatorConfig,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_interval: usize,
    pub seed: u64,
    /// Stop early once validation main reward reaches this value.
    pub stop_at_reward: Option<f64>,
}

impl TrainConfig {
    pub fn new(estimator: EstimatorConfig, seed: u64) -> Self {
        TrainConfig {
            estimator,
            learning_rate: 0.01,
            clip_norm: 4.0,
            batch_size: 32,
            max_steps: 2000,
            eval_interval: 100,
            seed,
            stop_at_reward: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 {
            return Err(TrainError::BadConfig("learning rate must be positive".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(TrainError::BadConfig("clip norm must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch size must be at least 1".into()));
        }
        self.estimator.reward.validate().map_err(TrainError::BadConfig)
    }
}

/// Adagrad accumulator state.
#[derive(Clone, Debug)]
pub struct AdagradState {
    accum: Vec<f64>,
}

impl AdagradState {
    pub fn new(len: usize) -> Self {
        AdagradState { accum: vec![0.0; len] }
    }
}

const ADAGRAD_EPS: f64 = 1e-8;

/// Clips `grad` to the global norm, folds it into the squared accumulator,
/// and applies `theta -= lr * g / sqrt(G + eps)` coordinate-wise.
pub fn adagrad_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdagradState,
    learning_rate: f64,
    clip_norm: f64,
) -> Result<(), TrainError> {
    assert_eq!(params.len(), grad.len());
    assert_eq!(params.len(), state.accum.len());
    if let Some(coord) = grad.iter().position(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient { step: 0, coord });
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    for i in 0..params.len() {
        let g = grad[i] * scale;
        state.accum[i] += g * g;
        params[i] -= learning_rate * g / (state.accum[i] + ADAGRAD_EPS).sqrt();
    }
    Ok(())
}

/// One evaluation row; `wall_ms` is excluded from determinism comparisons.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub loss_proxy: f64,
    pub rouge_l: f64,
    pub main_reward: f64,
    pub exact_match: f64,
    pub masked_frac: f64,
    pub wall_ms: u128,
}

pub const METRICS_HEADER: &str = "step,loss_proxy,rougeL,main_reward,exact_match,masked_frac,wall_ms";

impl MetricsRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.loss_proxy,
            self.rouge_l,
            self.main_reward,
            self.exact_match,
            self.masked_frac,
            self.wall_ms
        )
    }

    /// Everything but the wall clock, for determinism checks.
    pub fn deterministic_view(&self) -> (usize, u64, u64, u64, u64, u64) {
        (
            self.step,
            self.loss_proxy.to_bits(),
            self.rouge_l.to_bits(),
            self.main_reward.to_bits(),
            self.exact_match.to_bits(),
            self.masked_frac.to_bits(),
        )
    }
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<(), TrainError> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub rouge_l: f64,
    pub main_reward: f64,
    pub exact_match: f64,
}

/// Greedy-decodes every example and reports mean ROUGE-L F1, mean main
/// reward, and the exact-match rate.
pub fn evaluate<M: PolicyModel>(
    model: &M,
    split: &[crate::data::Example],
    cfg: &RewardConfig,
) -> EvalMetrics {
    if split.is_empty() {
        return EvalMetrics { rouge_l: 0.0, main_reward: 0.0, exact_match: 0.0 };
    }
    let mut rl = 0.0;
    let mut mr = 0.0;
    let mut exact = 0usize;
    for e in split {
        let z = greedy_decode(model, &e.x, cfg);
        rl += rouge_l_f1(&z, &e.y);
        mr += if z.content_len() == 0 { 0.0 } else { main_reward(&z, &e.y) };
        if z == e.y {
            exact += 1;
        }
    }
    let n = split.len() as f64;
    EvalMetrics { rouge_l: rl / n, main_reward: mr / n, exact_match: exact as f64 / n }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub best_model: M,
    pub best_metric: f64,
    pub best_step: usize,
    pub metrics: Vec<MetricsRecord>,
    pub steps_run: usize,
    /// Mean wall-clock per optimizer step, in milliseconds.
    pub mean_step_ms: f64,
}

impl<M> TrainOutcome<M> {
    /// First evaluation step whose validation main reward reached `target`.
    pub fn steps_to_reward(&self, target: f64) -> Option<usize> {
        self.metrics.iter().find(|r| r.main_reward >= target).map(|r| r.step)
    }
}

/// Runs the configured estimator over shuffled batches, evaluates on the
/// validation split at the configured interval, and retains the best
/// checkpoint by validation main reward.
pub fn train<M: PolicyModel + Clone>(
    model: &mut M,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M>, TrainError> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let content = dataset.vocab.content_ids();
    let mut buffer = GradientBuffer::zeros(model.param_count());
    let mut opt_state = AdagradState::new(model.param_count());
    let mut metrics = Vec::new();
    let mut best_model = model.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_step = 0usize;

    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut epoch = 0u64;
    let mut cursor = dataset.train.len();

    let mut window_loss = 0.0;
    let mut window_included = 0usize;
    let mut window_total = 0usize;
    let mut window_examples = 0usize;

    let started = Instant::now();
    let mut optimize_elapsed = 0.0f64;
    let mut steps_run = 0usize;

    for step in 1..=cfg.max_steps {
        let step_started = Instant::now();
        buffer.reset();
        for _ in 0..cfg.batch_size {
            if cursor >= order.len() {
                order.shuffle(&mut epoch_shuffle_rng(cfg.seed, epoch));
                cursor = 0;
                epoch += 1;
            }
            let idx = order[cursor];
            cursor += 1;
            let example = &dataset.train[idx];
            let mut rng = example_rng(cfg.seed, epoch, idx as u64);
            let report = example_gradient(
                model,
                &example.x,
                &example.y,
                &content,
                &cfg.estimator,
                &mut rng,
                &mut buffer,
            );
            window_loss += report.loss_proxy;
            window_included += report.included_steps;
            window_total += report.total_steps;
            window_examples += 1;
        }
        let grad = buffer.mean();
        adagrad_step(model.params_mut(), &grad, &mut opt_state, cfg.learning_rate, cfg.clip_norm)
            .map_err(|e| match e {
                TrainError::NonFiniteGradient { coord, .. } => {
                    TrainError::NonFiniteGradient { step, coord }
                }
                other => other,
            })?;
        optimize_elapsed += step_started.elapsed().as_secs_f64();
        steps_run = step;

        if step % cfg.eval_interval == 0 || step == cfg.max_steps {
            let loss_proxy = window_loss / window_examples.max(1) as f64;
            if !loss_proxy.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            let eval = evaluate(model, &dataset.valid, &cfg.estimator.reward);
            let record = MetricsRecord {
                step,
                loss_proxy,
                rouge_l: eval.rouge_l,
                main_reward: eval.main_reward,
                exact_match: eval.exact_match,
                masked_frac: if window_total == 0 {
                    0.0
                } else {
                    window_included as f64 / window_total as f64
                },
                wall_ms: started.elapsed().as_millis(),
            };
            metrics.push(record);
            window_loss = 0.0;
            window_included = 0;
            window_total = 0;
            window_examples = 0;
            if eval.main_reward > best_metric {
                best_metric = eval.main_reward;
                best_model = model.clone();
                best_step = step;
            }
            if let Some(target) = cfg.stop_at_reward {
                if eval.main_reward >= target {
                    break;
                }
            }
        }
    }

    Ok(TrainOutcome {
        best_model,
        best_metric,
        best_step,
        metrics,
        steps_run,
        mean_step_ms: 1000.0 * optimize_elapsed / steps_run.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_task, TaskKind, TaskSpec};
    use crate::estimator::{EstimatorConfig, Regime};
    use crate::model::{load_model, save_model, ModelKind, RecurrentModel, TabularModel};

    #[test]
    fn adagrad_zero_gradient_is_identity() {
        let mut params = vec![1.0, -2.0];
        let mut state = AdagradState::new(2);
        adagrad_step(&mut params, &[0.0, 0.0], &mut state, 0.01, 4.0).unwrap();
        assert_eq!(params, vec![1.0, -2.0]);
    }

    #[test]
    fn adagrad_single_coordinate_arithmetic() {
        let mut params = vec![0.0];
        let mut state = AdagradState::new(1);
        adagrad_step(&mut params, &[3.0], &mut state, 0.01, 4.0).unwrap();
        let expected = -0.01 * 3.0 / (9.0f64 + ADAGRAD_EPS).sqrt();
        assert!((params[0] - expected).abs() < 1e-15);
        assert!((params[0] - (-0.01)).abs() < 1e-6);
    }

    #[test]
    fn clipping_scales_before_accumulation() {
        // Gradient of norm 8 against clip 4: scaled by 0.5 first.
        let mut params = vec![0.0, 0.0];
        let mut state = AdagradState::new(2);
        let g = [8.0 / 2.0f64.sqrt(), 8.0 / 2.0f64.sqrt()];
        adagrad_step(&mut params, &g, &mut state, 1.0, 4.0).unwrap();
        let clipped = g[0] * 0.5;
        assert!((state.accum[0] - clipped * clipped).abs() < 1e-12);
        let expected = -clipped / (clipped * clipped + ADAGRAD_EPS).sqrt();
        assert!((params[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn clipping_preserves_direction() {
        let g = vec![3.0, -4.0, 12.0];
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = 4.0 / norm;
        let clipped: Vec<f64> = g.iter().map(|x| x * scale).collect();
        let dot: f64 = g.iter().zip(&clipped).map(|(a, b)| a * b).sum();
        let cn = clipped.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cosine = dot / (norm * cn);
        assert!((cosine - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut params = vec![0.0];
        let mut state = AdagradState::new(1);
        let err = adagrad_step(&mut params, &[f64::NAN], &mut state, 0.01, 4.0).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteGradient { .. }));
    }

    fn tiny_task() -> crate::data::Dataset {
        generate_task(&TaskSpec {
            kind: TaskKind::Copy,
            vocab_size: 10,
            len_min: 2,
            len_max: 3,
            train: 40,
            valid: 8,
            test: 8,
            seed: 5,
            distinct_tokens: true,
        })
        .unwrap()
    }

    fn tiny_config(regime: Regime, seed: u64) -> TrainConfig {
        let mut est = EstimatorConfig::new(regime);
        est.reward.eos_id = Some(1);
        let mut cfg = TrainConfig::new(est, seed);
        cfg.batch_size = 8;
        cfg.max_steps = 60;
        cfg.eval_interval = 20;
        cfg
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let ds = tiny_task();
        let cfg = tiny_config(Regime::Spg, 3);
        let mut m1 = RecurrentModel::random(ds.vocab.size(), 8, 8, ds.max_target_len() + 2, 1);
        let mut m2 = m1.clone();
        let o1 = train(&mut m1, &ds, &cfg).unwrap();
        let o2 = train(&mut m2, &ds, &cfg).unwrap();
        assert_eq!(m1.params(), m2.params());
        let v1: Vec<_> = o1.metrics.iter().map(|r| r.deterministic_view()).collect();
        let v2: Vec<_> = o2.metrics.iter().map(|r| r.deterministic_view()).collect();
        assert_eq!(v1, v2);
    }

    #[test]
    fn mle_training_improves_reward_on_tiny_copy_task() {
        let ds = tiny_task();
        let mut cfg = tiny_config(Regime::Mle, 7);
        cfg.learning_rate = 0.3;
        cfg.max_steps = 400;
        cfg.eval_interval = 50;
        let mut model = RecurrentModel::random(ds.vocab.size(), 12, 12, ds.max_target_len() + 2, 2);
        let before = evaluate(&model, &ds.valid, &cfg.estimator.reward);
        let outcome = train(&mut model, &ds, &cfg).unwrap();
        assert!(
            outcome.best_metric > before.main_reward + 0.2,
            "reward went from {} to {}",
            before.main_reward,
            outcome.best_metric
        );
    }

    #[test]
    fn checkpoint_round_trip_preserves_evaluation() {
        let ds = tiny_task();
        let cfg = tiny_config(Regime::Mle, 9);
        let mut model = RecurrentModel::random(ds.vocab.size(), 8, 8, ds.max_target_len() + 2, 3);
        let _ = train(&mut model, &ds, &cfg).unwrap();
        let live = evaluate(&model, &ds.valid, &cfg.estimator.reward);
        let path = std::env::temp_dir().join("spg_train_ckpt_test.ckpt");
        save_model(&ModelKind::Recurrent(model.clone()), &path).unwrap();
        let loaded = load_model(&path).unwrap();
        let reloaded = evaluate(&loaded, &ds.valid, &cfg.estimator.reward);
        assert_eq!(live, reloaded);
    }

    #[test]
    fn evaluation_is_order_independent() {
        let ds = tiny_task();
        let cfg = RewardConfig { eos_id: Some(1), ..RewardConfig::default() };
        let model = TabularModel::random(4, ds.vocab.size(), ds.max_target_len() + 2, 5, 0.5);
        let forward = evaluate(&model, &ds.valid, &cfg);
        let mut reversed: Vec<_> = ds.valid.clone();
        reversed.reverse();
        let backward = evaluate(&model, &reversed, &cfg);
        assert!((forward.main_reward - backward.main_reward).abs() < 1e-12);
        assert!((forward.rouge_l - backward.rouge_l).abs() < 1e-12);
        assert_eq!(forward.exact_match, backward.exact_match);
    }

    #[test]
    fn metrics_csv_schema() {
        let rec = MetricsRecord {
            step: 10,
            loss_proxy: 1.5,
            rouge_l: 0.5,
            main_reward: 0.4,
            exact_match: 0.25,
            masked_frac: 0.6,
            wall_ms: 12,
        };
        let dir = std::env::temp_dir().join("spg_metrics_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("metrics.csv");
        write_metrics_csv(&path, &[rec]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(METRICS_HEADER));
        assert_eq!(lines.next(), Some("10,1.5,0.5,0.4,0.25,0.6,12"));
    }
}
