//! Command-line driver: task generation, training, evaluation, sampling
//! inspection, and the enumeration-backed verification suite.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
//! failure. Every subcommand accepts `--config FILE` with `key = value`
//! lines mirroring the long flag names; explicit flags win over the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use spg_core::data::{
    corpus_stats, generate_task, load_dataset, save_dataset, Dataset, TaskKind, TaskSpec,
};
use spg_core::estimator::{EstimatorConfig, Regime};
use spg_core::model::{load_model, save_model, ModelKind, PolicyModel, RecurrentModel};
use spg_core::oracle::{run_suite, OracleError, SuiteOptions};
use spg_core::reward::{main_reward, RewardConfig};
use spg_core::sampling::{
    example_rng, greedy_decode, sample_pg_target, sample_raml_target, sample_spg_target,
    Provenance,
};
use spg_core::train::{evaluate, train, write_metrics_csv, TrainConfig};

enum Failure {
    Usage(String),
    Data(String),
    Verify(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Verify(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Verify(m) => m,
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn data_err(msg: impl std::fmt::Display) -> Failure {
    Failure::Data(msg.to_string())
}

#[derive(Parser)]
#[command(name = "spg", version, about = "Sequence-generation training with softmax policy gradient, bang-bang reward weighting, and MLE/RAML/PG baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic transduction dataset (copy, reverse, cipher).
    Gen(GenArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Inspect sampled training targets for a regime.
    Sample(SampleArgs),
    /// Run the enumeration-backed verification suite.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Config file with key = value lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task kind: copy, reverse, or cipher.
    #[arg(long)]
    task: Option<String>,
    /// Total vocabulary size, reserved ids included (>= 4).
    #[arg(long)]
    vocab: Option<usize>,
    /// Content length range as MIN:MAX.
    #[arg(long)]
    len: Option<String>,
    /// Training examples.
    #[arg(long)]
    train: Option<usize>,
    /// Validation examples.
    #[arg(long)]
    valid: Option<usize>,
    /// Test examples.
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for vocab.txt and the split TSVs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Sample example tokens with replacement instead of distinct draws.
    #[arg(long)]
    allow_repeats: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory produced by `spg gen`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training regime: mle, raml, pg, or spg.
    #[arg(long)]
    regime: Option<String>,
    /// Bang-bang drop probability (spg only).
    #[arg(long)]
    p_drop: Option<f64>,
    /// Bang-bang weight magnitude W.
    #[arg(long)]
    w: Option<f64>,
    /// RAML temperature (raml only).
    #[arg(long)]
    tau: Option<f64>,
    /// Samples per example.
    #[arg(long)]
    j: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Maximum decode length; defaults to the longest target plus 2.
    #[arg(long)]
    t_max: Option<usize>,
    /// Disable the DUP auxiliary reward.
    #[arg(long)]
    no_dup: bool,
    /// Disable the EOS auxiliary reward.
    #[arg(long)]
    no_eos: bool,
    /// Disable reward-weighted SPG losses.
    #[arg(long)]
    no_reward_weighting: bool,
    /// Stop once validation main reward reaches this value.
    #[arg(long)]
    stop_at: Option<f64>,
    /// RAML substitution cap.
    #[arg(long)]
    max_edits: Option<usize>,
    /// RAML exact-enumeration budget on V^|y|.
    #[arg(long)]
    exact_threshold: Option<u64>,
    /// Output directory for checkpoint.spg and metrics.csv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Split to evaluate: train, valid, or test.
    #[arg(long)]
    split: Option<String>,
    /// Print this many per-example decode comparisons.
    #[arg(long)]
    dump: Option<usize>,
    /// Bang-bang weight magnitude for the decode-time DUP term.
    #[arg(long)]
    w: Option<f64>,
    /// Disable the decode-time DUP term.
    #[arg(long)]
    no_dup: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to sample from; omitted means fresh random parameters.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    regime: Option<String>,
    /// Examples to inspect.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    p_drop: Option<f64>,
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Enumeration vocabulary size.
    #[arg(long)]
    v: Option<usize>,
    /// Enumeration sequence length.
    #[arg(long)]
    t: Option<usize>,
    /// Empirical sample count for fidelity checks.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also assert the all-zero-weight reductions.
    #[arg(long)]
    w_all_zero: bool,
    /// Enumeration budget on V^T.
    #[arg(long)]
    budget: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Oracle(args) => cmd_oracle(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

// ---------------------------------------------------------------------------
// Config files: key = value lines, '#' comments, keys mirror the long flags.

struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    fn load(path: Option<&Path>, known_keys: &[&str]) -> Result<Self, Failure> {
        let mut values = BTreeMap::new();
        let Some(path) = path else {
            return Ok(FileConfig { values });
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| data_err(format!("cannot read config {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(usage(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    i + 1
                )));
            };
            let key = key.trim().to_string();
            if !known_keys.contains(&key.as_str()) {
                return Err(usage(format!(
                    "{}:{}: unknown config key {key:?}",
                    path.display(),
                    i + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| usage(format!("config key {key:?}: {e}"))),
        }
    }

    fn get_bool(&self, key: &str) -> Result<Option<bool>, Failure> {
        self.get::<bool>(key)
    }

    fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }
}

fn parse_len_range(raw: &str) -> Result<(usize, usize), Failure> {
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() != 2 {
        return Err(usage(format!("length range must be MIN:MAX, got {raw:?}")));
    }
    let min = parts[0].parse().map_err(|_| usage(format!("bad length {:?}", parts[0])))?;
    let max = parts[1].parse().map_err(|_| usage(format!("bad length {:?}", parts[1])))?;
    Ok((min, max))
}

// ---------------------------------------------------------------------------

fn cmd_gen(args: GenArgs) -> Result<(), Failure> {
    const KEYS: &[&str] =
        &["task", "vocab", "len", "train", "valid", "test", "seed", "out", "force", "allow-repeats"];
    let file = FileConfig::load(args.config.as_deref(), KEYS)?;
    let task = args.task.or(file.get("task")?).ok_or_else(|| usage("missing --task"))?;
    let kind = TaskKind::from_str(&task).map_err(|e| usage(e.to_string()))?;
    let (len_min, len_max) = parse_len_range(
        &args.len.or(file.get("len")?).unwrap_or_else(|| "4:8".to_string()),
    )?;
    let spec = TaskSpec {
        kind,
        vocab_size: args.vocab.or(file.get("vocab")?).unwrap_or(20),
        len_min,
        len_max,
        train: args.train.or(file.get("train")?).unwrap_or(2000),
        valid: args.valid.or(file.get("valid")?).unwrap_or(200),
        test: args.test.or(file.get("test")?).unwrap_or(200),
        seed: args.seed.or(file.get("seed")?).unwrap_or(0),
        distinct_tokens: !(args.allow_repeats || file.get_bool("allow-repeats")?.unwrap_or(false)),
    };
    let out = args
        .out
        .or(file.get::<PathBuf>("out")?)
        .ok_or_else(|| usage("missing --out directory"))?;
    let force = args.force || file.get_bool("force")?.unwrap_or(false);

    let dataset = generate_task(&spec).map_err(data_err)?;
    save_dataset(&dataset, &out, force).map_err(data_err)?;
    let stats = corpus_stats(&dataset.train, &dataset.vocab);
    println!(
        "wrote {} ({} train / {} valid / {} test, vocab {}, mean target len {:.2})",
        out.display(),
        dataset.train.len(),
        dataset.valid.len(),
        dataset.test.len(),
        dataset.vocab.size(),
        stats.mean_target_len
    );
    Ok(())
}

struct TrainSetup {
    dataset: Dataset,
    train_cfg: TrainConfig,
    embed: usize,
    hidden: usize,
    t_max: usize,
    out_dir: PathBuf,
}

fn resolve_train(args: &TrainArgs) -> Result<TrainSetup, Failure> {
    const KEYS: &[&str] = &[
        "data", "regime", "p-drop", "w", "tau", "j", "lr", "clip", "batch", "steps",
        "eval-every", "seed", "embed", "hidden", "t-max", "use-dup", "use-eos",
        "reward-weighting", "stop-at", "max-edits", "exact-threshold", "out-dir",
    ];
    let file = FileConfig::load(args.config.as_deref(), KEYS)?;
    let data = args
        .data
        .clone()
        .or(file.get::<PathBuf>("data")?)
        .ok_or_else(|| usage("missing --data directory"))?;
    let regime_raw =
        args.regime.clone().or(file.get("regime")?).ok_or_else(|| usage("missing --regime"))?;
    let regime = Regime::from_str(&regime_raw).map_err(usage)?;

    let tau_set = args.tau.is_some() || file.has("tau");
    if tau_set && regime != Regime::Raml {
        return Err(usage(format!("--tau only applies to --regime raml (got {regime})")));
    }
    let p_drop_set = args.p_drop.is_some() || file.has("p-drop");
    if p_drop_set && regime != Regime::Spg {
        return Err(usage(format!("--p-drop only applies to --regime spg (got {regime})")));
    }

    let dataset = load_dataset(&data).map_err(data_err)?;
    if dataset.train.is_empty() {
        return Err(data_err("training split is empty"));
    }

    let mut estimator = EstimatorConfig::new(regime);
    estimator.j = args.j.or(file.get("j")?).unwrap_or(1);
    estimator.reward = RewardConfig {
        w: args.w.or(file.get("w")?).unwrap_or(10_000.0),
        p_drop: args.p_drop.or(file.get("p-drop")?).unwrap_or(0.4),
        use_dup: !args.no_dup && file.get_bool("use-dup")?.unwrap_or(true),
        use_eos: !args.no_eos && file.get_bool("use-eos")?.unwrap_or(true),
        eos_id: Some(dataset.vocab.eos_id),
    };
    estimator.reward.validate().map_err(usage)?;
    estimator.raml.tau = args.tau.or(file.get("tau")?).unwrap_or(0.85);
    if estimator.raml.tau <= 0.0 {
        return Err(usage("tau must be positive"));
    }
    estimator.raml.max_edits = args.max_edits.or(file.get("max-edits")?).unwrap_or(4);
    estimator.raml.exact_threshold =
        args.exact_threshold.or(file.get("exact-threshold")?).unwrap_or(4096);
    estimator.reward_weighting = regime == Regime::Spg
        && !args.no_reward_weighting
        && file.get_bool("reward-weighting")?.unwrap_or(true);

    let seed = args.seed.or(file.get("seed")?).unwrap_or(0);
    let mut train_cfg = TrainConfig::new(estimator, seed);
    train_cfg.learning_rate = args.lr.or(file.get("lr")?).unwrap_or(0.01);
    train_cfg.clip_norm = args.clip.or(file.get("clip")?).unwrap_or(4.0);
    train_cfg.batch_size = args.batch.or(file.get("batch")?).unwrap_or(32);
    train_cfg.max_steps = args.steps.or(file.get("steps")?).unwrap_or(2000);
    train_cfg.eval_interval = args.eval_every.or(file.get("eval-every")?).unwrap_or(100);
    train_cfg.stop_at_reward = match args.stop_at {
        Some(v) => Some(v),
        None => file.get("stop-at")?,
    };

    let t_max = args
        .t_max
        .or(file.get("t-max")?)
        .unwrap_or_else(|| dataset.max_target_len() + 2);
    if t_max < dataset.max_target_len() {
        return Err(usage(format!(
            "t-max {} is shorter than the longest target ({})",
            t_max,
            dataset.max_target_len()
        )));
    }
    let out_dir = args
        .out_dir
        .clone()
        .or(file.get::<PathBuf>("out-dir")?)
        .unwrap_or_else(|| data.join(format!("run-{regime}")));

    Ok(TrainSetup {
        dataset,
        train_cfg,
        embed: args.embed.or(file.get("embed")?).unwrap_or(32),
        hidden: args.hidden.or(file.get("hidden")?).unwrap_or(32),
        t_max,
        out_dir,
    })
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let setup = resolve_train(&args)?;
    let TrainSetup { dataset, train_cfg, embed, hidden, t_max, out_dir } = setup;
    let mut model = RecurrentModel::random(
        dataset.vocab.size(),
        embed,
        hidden,
        t_max,
        train_cfg.seed,
    );
    println!(
        "training {} on {} examples ({} params, t_max {})",
        train_cfg.estimator.regime,
        dataset.train.len(),
        model.param_count(),
        t_max
    );
    let outcome = train(&mut model, &dataset, &train_cfg).map_err(data_err)?;
    std::fs::create_dir_all(&out_dir).map_err(data_err)?;
    let ckpt = out_dir.join("checkpoint.spg");
    save_model(&ModelKind::Recurrent(outcome.best_model.clone()), &ckpt).map_err(data_err)?;
    let metrics_path = out_dir.join("metrics.csv");
    write_metrics_csv(&metrics_path, &outcome.metrics).map_err(data_err)?;
    for r in &outcome.metrics {
        println!(
            "step {:6}  loss {:9.4}  rougeL {:.4}  reward {:.4}  exact {:.4}  masked {:.2}",
            r.step, r.loss_proxy, r.rouge_l, r.main_reward, r.exact_match, r.masked_frac
        );
    }
    println!(
        "best validation main reward {:.4} at step {} ({} steps run, {:.2} ms/step)",
        outcome.best_metric, outcome.best_step, outcome.steps_run, outcome.mean_step_ms
    );
    println!("checkpoint: {}", ckpt.display());
    println!("metrics: {}", metrics_path.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    const KEYS: &[&str] = &["data", "ckpt", "split", "dump", "w", "use-dup"];
    let file = FileConfig::load(args.config.as_deref(), KEYS)?;
    let data = args
        .data
        .or(file.get::<PathBuf>("data")?)
        .ok_or_else(|| usage("missing --data directory"))?;
    let ckpt = args
        .ckpt
        .or(file.get::<PathBuf>("ckpt")?)
        .ok_or_else(|| usage("missing --ckpt file"))?;
    let split_name = args.split.or(file.get("split")?).unwrap_or_else(|| "valid".to_string());
    let dataset = load_dataset(&data).map_err(data_err)?;
    let split = dataset
        .split(&split_name)
        .ok_or_else(|| usage(format!("unknown split {split_name:?}")))?;
    let model = load_model(&ckpt).map_err(data_err)?;
    if model.vocab_size() != dataset.vocab.size() {
        return Err(data_err(format!(
            "checkpoint vocabulary ({}) does not match the dataset ({})",
            model.vocab_size(),
            dataset.vocab.size()
        )));
    }
    let cfg = RewardConfig {
        w: args.w.or(file.get("w")?).unwrap_or(10_000.0),
        use_dup: !args.no_dup && file.get_bool("use-dup")?.unwrap_or(true),
        eos_id: Some(dataset.vocab.eos_id),
        ..RewardConfig::default()
    };
    let metrics = evaluate(&model, split, &cfg);
    println!(
        "split={} examples={} rougeL={:.4} main_reward={:.4} exact_match={:.4}",
        split_name,
        split.len(),
        metrics.rouge_l,
        metrics.main_reward,
        metrics.exact_match
    );
    if let Some(n) = args.dump.or(file.get("dump")?) {
        let mut without = cfg.clone();
        without.use_dup = false;
        for e in split.iter().take(n) {
            let with_dup = greedy_decode(&model, &e.x, &cfg);
            let plain = greedy_decode(&model, &e.x, &without);
            println!("input:      {}", dataset.vocab.render(e.x.tokens()));
            println!("reference:  {}", dataset.vocab.render(e.y.tokens()));
            println!("decode:     {}", dataset.vocab.render(with_dup.tokens()));
            println!("no-dup:     {}", dataset.vocab.render(plain.tokens()));
        }
    }
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<(), Failure> {
    const KEYS: &[&str] = &["data", "ckpt", "regime", "n", "seed", "p-drop", "w", "tau"];
    let file = FileConfig::load(args.config.as_deref(), KEYS)?;
    let data = args
        .data
        .or(file.get::<PathBuf>("data")?)
        .ok_or_else(|| usage("missing --data directory"))?;
    let regime_raw =
        args.regime.or(file.get("regime")?).ok_or_else(|| usage("missing --regime"))?;
    let regime = Regime::from_str(&regime_raw).map_err(usage)?;
    let dataset = load_dataset(&data).map_err(data_err)?;
    let n = args.n.or(file.get("n")?).unwrap_or(5).min(dataset.valid.len());
    let seed = args.seed.or(file.get("seed")?).unwrap_or(0);
    let model = match args.ckpt.or(file.get::<PathBuf>("ckpt")?) {
        Some(path) => load_model(&path).map_err(data_err)?,
        None => ModelKind::Recurrent(RecurrentModel::random(
            dataset.vocab.size(),
            32,
            32,
            dataset.max_target_len() + 2,
            seed,
        )),
    };
    let cfg = RewardConfig {
        w: args.w.or(file.get("w")?).unwrap_or(10_000.0),
        p_drop: args.p_drop.or(file.get("p-drop")?).unwrap_or(0.4),
        use_dup: true,
        use_eos: true,
        eos_id: Some(dataset.vocab.eos_id),
    };
    let tau = args.tau.or(file.get("tau")?).unwrap_or(0.85);
    let raml = spg_core::sampling::RamlConfig { tau, ..Default::default() };
    let content = dataset.vocab.content_ids();

    for (i, e) in dataset.valid.iter().take(n).enumerate() {
        let mut rng = example_rng(seed, 0, i as u64);
        println!("# example {i}");
        println!("x: {}", dataset.vocab.render(e.x.tokens()));
        println!("y: {}", dataset.vocab.render(e.y.tokens()));
        match regime {
            Regime::Mle => {
                println!("z: {}", dataset.vocab.render(e.y.tokens()));
            }
            Regime::Raml => {
                let z = sample_raml_target(&e.y, &content, &raml, &mut rng);
                println!("z: {}  (R = {:.3})", dataset.vocab.render(z.tokens()), main_reward(&z, &e.y));
            }
            Regime::Pg => {
                let z = sample_pg_target(&model, &e.x, cfg.eos_id, &mut rng);
                let r = if z.content_len() == 0 { 0.0 } else { main_reward(&z, &e.y) };
                println!("z: {}  (R = {r:.3})", dataset.vocab.render(z.tokens()));
            }
            Regime::Spg => {
                let out = sample_spg_target(&model, &e.x, &e.y, &cfg, &mut rng);
                let mut line = String::new();
                for (t, &tok) in out.z.tokens().iter().enumerate() {
                    if t > 0 {
                        line.push(' ');
                    }
                    line.push_str(dataset.vocab.token(tok));
                    if out.provenance[t] == Provenance::RewardTilted {
                        line.push('*');
                    }
                }
                let r = if out.z.content_len() == 0 { 0.0 } else { main_reward(&out.z, &e.y) };
                println!("z: {line}  (* = reward-tilted; R = {r:.3}, log q = {:.2})", out.log_q_tilde);
            }
        }
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<(), Failure> {
    const KEYS: &[&str] = &["v", "t", "samples", "seed", "w-all-zero", "budget"];
    let file = FileConfig::load(args.config.as_deref(), KEYS)?;
    let defaults = SuiteOptions::default();
    let opts = SuiteOptions {
        vocab: args.v.or(file.get("v")?).unwrap_or(defaults.vocab),
        len: args.t.or(file.get("t")?).unwrap_or(defaults.len),
        samples: args.samples.or(file.get("samples")?).unwrap_or(defaults.samples),
        seed: args.seed.or(file.get("seed")?).unwrap_or(defaults.seed),
        w_all_zero: args.w_all_zero || file.get_bool("w-all-zero")?.unwrap_or(false),
        budget: args.budget.or(file.get("budget")?).unwrap_or(defaults.budget),
    };
    let records = run_suite(&opts).map_err(|e| match e {
        OracleError::BudgetExceeded { .. } => usage(e.to_string()),
        other => data_err(other),
    })?;
    let mut failures = 0usize;
    let mut summary = String::new();
    for r in &records {
        println!("{r}");
        if !r.pass {
            failures += 1;
            let _ = write!(summary, " {}", r.name);
        }
    }
    if failures > 0 {
        return Err(Failure::Verify(format!("{failures} check(s) failed:{summary}")));
    }
    println!("all {} checks passed", records.len());
    Ok(())
}
