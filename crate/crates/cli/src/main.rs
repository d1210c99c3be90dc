//! `fedmup` command-line front end.
//!
//! Exit codes: 0 success or all requests granted, 1 usage or configuration
//! error, 2 at least one request denied, 3 runtime failure.

mod config;

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedmup::checkpoint::Checkpoint;
use fedmup::dataset::{self, ClassLabel, GeneratorConfig, NUM_CLASSES, NUM_FEATURES};
use fedmup::fed;
use fedmup::gate::{self, AccessDecision};
use fedmup::knowledge::{self, KnowledgeBase, ScoredRequest};
use fedmup::model::Variant;
use fedmup::ube::{AccessRequest, Parameter, SecurityThresholds, TimeWindow};
use thiserror::Error;

use crate::config::ExperimentConfig;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] fedmup::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(fedmup::Error::Config(_)) => 1,
            CliError::Core(_) => 3,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fedmup", version, about = "Federated malicious-user prediction simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    Gen(GenArgs),
    /// Run a federated training experiment.
    Run(RunArgs),
    /// Decide access requests against a trained checkpoint.
    Score(ScoreArgs),
    /// Evaluate a checkpoint on a labeled dataset.
    Eval(EvalArgs),
}

fn parse_mix(s: &str) -> Result<[f64; NUM_CLASSES], String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected {NUM_CLASSES} comma-separated shares, got {}", v.len()))
}

fn parse_features(s: &str) -> Result<[f64; NUM_FEATURES], String> {
    let fields: Vec<&str> = s.split(',').map(str::trim).collect();
    dataset::parse_features(&fields)
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Number of records [default: 10000].
    #[arg(long)]
    n: Option<usize>,
    /// [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Class shares: malicious,non-malicious,unknown [default: 0.3,0.5,0.2].
    #[arg(long, value_parser = parse_mix)]
    mix: Option<[f64; NUM_CLASSES]>,
    /// Generator profile TOML; its `n`, `seed` and `mix` apply unless a flag
    /// is given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment TOML; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training share of the records.
    #[arg(long)]
    split: Option<f64>,
    /// Labeled CSV; without it a dataset is generated.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    gen_n: Option<usize>,
    #[arg(long)]
    gen_seed: Option<u64>,
    #[arg(long, value_parser = parse_mix)]
    gen_mix: Option<[f64; NUM_CLASSES]>,
    #[arg(long)]
    gen_config: Option<PathBuf>,
    /// Per-round results CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write the held-out split (raw values) here.
    #[arg(long)]
    test_out: Option<PathBuf>,
    /// Train selected clients in parallel.
    #[arg(long)]
    parallel: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Access history CSV; users without rows have an empty history.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Authorization CSV.
    #[arg(long)]
    auth: Option<PathBuf>,
    /// Request CSV (ids, timestamp and raw features).
    #[arg(long, conflicts_with_all = ["user", "data_id", "category", "timestamp", "features"])]
    requests: Option<PathBuf>,
    #[arg(long)]
    user: Option<String>,
    #[arg(long)]
    data_id: Option<String>,
    #[arg(long)]
    category: Option<String>,
    #[arg(long)]
    timestamp: Option<u64>,
    /// Twelve comma-separated raw feature values.
    #[arg(long, value_parser = parse_features, allow_hyphen_values = true)]
    features: Option<[f64; NUM_FEATURES]>,
    #[arg(long, default_value_t = 0)]
    window_start: u64,
    /// Defaults to each request's timestamp.
    #[arg(long)]
    window_end: Option<u64>,
    #[arg(long, default_value_t = SecurityThresholds::DEFAULT_ATTACK)]
    thr_attack: f64,
    #[arg(long, default_value_t = SecurityThresholds::DEFAULT_FREQ)]
    thr_freq: f64,
    /// Do not append denied requests to the history.
    #[arg(long)]
    no_record_denied: bool,
    /// Decision log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write the updated history CSV here.
    #[arg(long)]
    history_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled CSV with raw feature values.
    #[arg(long)]
    data: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn create(path: &PathBuf) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(fedmup::Error::from)?))
}

fn cmd_gen(a: GenArgs) -> CliResult<u8> {
    let profile = match &a.config {
        Some(p) => GeneratorConfig::load(p)?,
        None => GeneratorConfig::default(),
    };
    let n = a.n.or(profile.n).unwrap_or(10_000);
    let seed = a.seed.or(profile.seed).unwrap_or(42);
    let mix = a.mix.or(profile.mix).unwrap_or([0.3, 0.5, 0.2]);
    let data = dataset::synthesize_with(&profile, n, seed, mix).map_err(|e| CliError::Usage(e.to_string()))?;
    dataset::save_csv(&a.out, &data)?;
    let counts = data.class_counts();
    println!("wrote {} records to {}", data.len(), a.out.display());
    for label in ClassLabel::ALL {
        println!("  {label}: {}", counts[label.index()]);
    }
    Ok(0)
}

fn resolve_run_config(a: &RunArgs) -> CliResult<ExperimentConfig> {
    let mut c = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag.clone() { c.$field = v; })*
        };
    }
    set!(users => users, k => k, rounds => rounds, epochs => epochs, variant => variant,
         batch_size => batch_size, lr => learning_rate, seed => seed, split => split,
         gen_n => gen_n, gen_seed => gen_seed, gen_mix => gen_mix, out => results,
         checkpoint => checkpoint);
    if a.data.is_some() {
        c.data = a.data.clone();
    }
    if a.gen_config.is_some() {
        c.gen_config = a.gen_config.clone();
    }
    if a.test_out.is_some() {
        c.test_out = a.test_out.clone();
    }
    c.parallel |= a.parallel;
    c.validate()?;
    Ok(c)
}

fn cmd_run(a: RunArgs) -> CliResult<u8> {
    let c = resolve_run_config(&a)?;
    let raw = match &c.data {
        Some(path) => dataset::load_csv(path)?,
        None => dataset::synthesize_with(&c.generator()?, c.gen_n, c.gen_seed, c.gen_mix)?,
    };
    let round = c.round_config();
    let spec = c.network();
    let outcome = fed::run_experiment(&round, &spec, &raw)?;

    fed::write_results_csv(create(&c.results)?, &outcome.reports)?;
    Checkpoint {
        model: outcome.model.clone(),
        stats: Some(outcome.stats.clone()),
    }
    .save(&c.checkpoint)?;
    if let Some(path) = &c.test_out {
        if raw.is_normalized() {
            dataset::save_csv(path, &dataset::denormalize(&outcome.testset)?)?;
        } else {
            let (_, test) = dataset::split(&raw, &fed::split_spec(&round)?)?;
            dataset::save_csv(path, &test)?;
        }
    }

    let last = outcome.reports.last().expect("at least one round");
    println!(
        "{} records, n={} k={} T={} epochs={} variant={}",
        raw.len(),
        c.users,
        c.k,
        c.rounds,
        c.epochs,
        c.variant
    );
    println!(
        "initial: accuracy={} loss={}",
        outcome.initial.accuracy, outcome.initial.mean_global_loss
    );
    println!(
        "final: round={} accuracy={} precision={} recall={} f1={} loss={}",
        last.round_index, last.accuracy, last.precision, last.recall, last.f1, last.mean_global_loss
    );
    println!(
        "success rate {:.2}%, loss {:.4}",
        100.0 * last.accuracy,
        last.mean_global_loss
    );
    println!("results: {}", c.results.display());
    println!("checkpoint: {}", c.checkpoint.display());
    Ok(0)
}

fn score_requests(a: &ScoreArgs) -> CliResult<Vec<ScoredRequest>> {
    if let Some(path) = &a.requests {
        return knowledge::load_requests(path).map_err(|e| match e {
            e @ fedmup::Error::Io(_) => CliError::Core(e),
            other => CliError::Usage(other.to_string()),
        });
    }
    match (&a.user, &a.data_id, &a.category, a.timestamp, a.features) {
        (Some(user), Some(data), Some(cat), Some(timestamp), Some(features)) => Ok(vec![ScoredRequest {
            request: AccessRequest {
                user_id: user.clone(),
                data_id: data.clone(),
                category_id: cat.clone(),
                timestamp,
            },
            features,
        }]),
        _ => Err(CliError::Usage(
            "give --requests, or all of --user, --data-id, --category, --timestamp and --features".into(),
        )),
    }
}

fn describe(d: &AccessDecision, a: &fedmup::ube::SecurityAssessment) -> String {
    let flags: Vec<String> = [
        Parameter::History,
        Parameter::Authorization,
        Parameter::AttackFactor,
        Parameter::LeakFrequency,
    ]
    .iter()
    .map(|&p| format!("{}={}", p.name(), a.flag(p).map_or(0, |f| f.value())))
    .collect();
    format!(
        "{} {} {} reason={} predicted={} sigma={} {} kappa={:.4} freq={:.4}",
        d.request.user_id,
        d.request.data_id,
        d.verdict,
        d.reason,
        d.predicted_class,
        d.sigma_total,
        flags.join(" "),
        a.attack_factor,
        a.leak_frequency
    )
}

fn cmd_score(a: ScoreArgs) -> CliResult<u8> {
    let thresholds = SecurityThresholds::new(a.thr_attack, a.thr_freq).map_err(|e| CliError::Usage(e.to_string()))?;
    let requests = score_requests(&a)?;
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let mut kb = KnowledgeBase::new();
    if let Some(h) = &a.history {
        kb = KnowledgeBase::load(h, a.auth.as_deref())?;
    } else if let Some(auth) = &a.auth {
        kb.read_authorizations(File::open(auth).map_err(fedmup::Error::from)?, auth)?;
    }
    kb.record_denied = !a.no_record_denied;

    let mut decisions = Vec::with_capacity(requests.len());
    for r in &requests {
        let end = a.window_end.unwrap_or(r.request.timestamp);
        let window = TimeWindow::new(a.window_start, end).map_err(|e| CliError::Usage(e.to_string()))?;
        let assessment = kb.assess(&r.request, &window, &thresholds)?;
        let decision = gate::decide_raw(&r.request, &r.features, &assessment, &checkpoint)?;
        println!("{}", describe(&decision, &assessment));
        kb.record(&decision)?;
        decisions.push(decision);
    }

    if let Some(path) = &a.log {
        gate::write_decision_log(create(path)?, &decisions)?;
    }
    if let Some(path) = &a.history_out {
        kb.write_history(create(path)?)?;
    }
    let denied = decisions.iter().filter(|d| d.is_denied()).count();
    println!("{} granted, {denied} denied", decisions.len() - denied);
    Ok(if denied > 0 { 2 } else { 0 })
}

fn cmd_eval(a: EvalArgs) -> CliResult<u8> {
    let Checkpoint { model, stats } = Checkpoint::load(&a.checkpoint)?;
    let raw = dataset::load_csv(&a.data)?;
    if raw.is_empty() {
        return Err(fedmup::Error::Empty("evaluation dataset").into());
    }
    let stats = stats.ok_or_else(|| fedmup::Error::Normalization("checkpoint carries no normalization statistics".into()))?;
    let data = dataset::apply_stats(&raw, &stats)?;
    let (m, loss, cm) = model.evaluate(&data)?;
    println!(
        "records={} accuracy={} precision={} recall={} f1={} loss={}",
        data.len(),
        m.accuracy,
        m.precision,
        m.recall,
        m.f1,
        loss
    );
    for (label, row) in ClassLabel::ALL.iter().zip(cm.counts) {
        println!("  {label}: {row:?}");
    }
    Ok(0)
}
