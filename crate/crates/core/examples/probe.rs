use spg_core::data::{generate_task, TaskKind, TaskSpec};
use spg_core::estimator::{EstimatorConfig, Regime};
use spg_core::model::RecurrentModel;
use spg_core::train::{train, TrainConfig};

fn main() {
    let ds = generate_task(&TaskSpec {
        kind: TaskKind::Copy, vocab_size: 20, len_min: 4, len_max: 8,
        train: 2000, valid: 200, test: 200, seed: 7, distinct_tokens: true,
    }).unwrap();
    for (regime, lr) in [(Regime::Mle, 0.25), (Regime::Raml, 0.25), (Regime::Pg, 0.25)] {
        let mut est = EstimatorConfig::new(regime);
        est.reward.eos_id = Some(1);
        let mut cfg = TrainConfig::new(est, 1);
        cfg.learning_rate = lr;
        cfg.batch_size = 32;
        cfg.max_steps = 20_000;
        cfg.eval_interval = 500;
        if regime != Regime::Pg { cfg.stop_at_reward = Some(0.96); }
        let mut model = RecurrentModel::random(ds.vocab.size(), 32, 32, ds.max_target_len() + 2, 11);
        let t0 = std::time::Instant::now();
        let out = train(&mut model, &ds, &cfg).unwrap();
        println!("{regime} lr={lr}: best={:.3} steps={} to95={:?} ms/step={:.2} total={:.0}s",
            out.best_metric, out.steps_run, out.steps_to_reward(0.95), out.mean_step_ms,
            t0.elapsed().as_secs_f64());
    }
}
