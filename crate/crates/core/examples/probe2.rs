use spg_core::estimator::{grad_bbspg, grad_pg, grad_raml, EstimatorConfig, Regime};
use spg_core::model::{GradientBuffer, PolicyModel, TabularModel};
use spg_core::oracle::*;
use spg_core::reward::{main_reward, RewardConfig, Sequence, TokenId};
use spg_core::sampling::example_rng;

fn stats(dim: usize, draws: usize, mut f: impl FnMut(&mut GradientBuffer)) -> (Vec<f64>, f64) {
    let mut mean = vec![0.0; dim];
    let mut second = vec![0.0; dim];
    for _ in 0..draws {
        let mut buf = GradientBuffer::zeros(dim);
        f(&mut buf);
        for (i, &g) in buf.grad().iter().enumerate() { mean[i] += g; second[i] += g * g; }
    }
    let n = draws as f64;
    let sigma = (0..dim).map(|i| (second[i]/n - (mean[i]/n).powi(2)).sqrt()).fold(0.0f64, f64::max);
    for m in mean.iter_mut() { *m /= n; }
    (mean, sigma)
}

fn main() {
    let space = EnumerationSpace::new(4, 3, DEFAULT_BUDGET).unwrap();
    let model = TabularModel::random(1, 4, 3, 13, 1.0);
    let x = Sequence::unterminated(vec![0]);
    let y = Sequence::unterminated(vec![1, 2, 3]);
    let reward = |z: &[TokenId]| main_reward(&Sequence::unterminated(z.to_vec()), &y);

    let cfg = RewardConfig { w: 10_000.0, p_drop: 0.4, use_dup: false, use_eos: false, eos_id: None };
    let exact = exact_bbspg_gradient(&model, &x, &y, &cfg, &space);
    let gs = exact.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
    for j in [1usize, 4] {
        let mut est = EstimatorConfig::new(Regime::Spg);
        est.reward = cfg.clone(); est.j = j;
        let mut rng = example_rng(1, 0, 0);
        let (_, sigma) = stats(exact.len(), 20_000, |buf| { grad_bbspg(&model, &x, &y, &est, &mut rng, buf); });
        println!("bbspg j={j}: scale={gs:.4} 3sigma-rel@1e5={:.4}", 3.0*sigma/(1e5f64).sqrt()/gs);
    }

    let exact = exact_pg_gradient(&model, &x, &space, &reward);
    let gs = exact.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
    for j in [1usize, 8, 16] {
        let mut est = EstimatorConfig::new(Regime::Pg);
        est.reward.eos_id = None; est.j = j;
        let mut rng = example_rng(1, 1, 0);
        let (_, sigma) = stats(exact.len(), 20_000, |buf| { grad_pg(&model, &x, &y, &est, &mut rng, buf); });
        println!("pg j={j}: scale={gs:.4} 3sigma-rel@1e5={:.4}", 3.0*sigma/(1e5f64).sqrt()/gs);
    }

    let model3 = TabularModel::random(1, 3, 2, 7, 1.0);
    let y3 = Sequence::unterminated(vec![1, 2]);
    let space3 = EnumerationSpace::new(3, 2, DEFAULT_BUDGET).unwrap();
    let reward3 = |z: &[TokenId]| main_reward(&Sequence::unterminated(z.to_vec()), &y3);
    let exact = exact_raml_gradient(&model3, &x, &space3, 0.85, &reward3);
    let gs = exact.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
    let content: Vec<TokenId> = (0..3).collect();
    for j in [1usize, 4] {
        let mut est = EstimatorConfig::new(Regime::Raml);
        est.raml.tau = 0.85; est.raml.exact_threshold = 9; est.j = j;
        let mut rng = example_rng(1, 2, 0);
        let (_, sigma) = stats(exact.len(), 20_000, |buf| { grad_raml(&model3, &x, &y3, &content, &est, &mut rng, buf); });
        println!("raml j={j}: scale={gs:.4} 3sigma-rel@1e5={:.4}", 3.0*sigma/(1e5f64).sqrt()/gs);
    }
}
