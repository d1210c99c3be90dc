//! Federated rounds: participant selection, broadcast, local training,
//! shard-size weighted averaging and server-side evaluation.
//!
//! Everything is simulated in one process. Clients never see each other's
//! data; the server only sees parameter vectors and shard sizes.

use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Dataset, NormStats, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::{self, ConfusionMatrix, MetricsReport};
use crate::model::{self, NetworkSpec, ParameterVector, TrainingConfig};
use crate::seed::{derive_seed, rng_from, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    /// Total simulated users `n`.
    pub total_users: usize,
    /// Users taking part in each round `k`.
    pub participants_per_round: usize,
    /// Communication rounds `T`.
    pub rounds: usize,
    /// Local epochs per round; overrides `training.epochs`.
    pub local_epochs: usize,
    /// Optimizer settings; `training.seed` is replaced per client and round.
    pub training: TrainingConfig,
    /// Share of records used for training; the rest is the held-out set.
    pub train_fraction: f64,
    /// Master seed every sub-seed is derived from (see [`crate::seed`]).
    pub seed: u64,
    /// Train selected clients on the rayon pool. Results are bitwise identical
    /// either way.
    pub parallel: bool,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            total_users: 10,
            participants_per_round: 10,
            rounds: 50,
            local_epochs: 90,
            training: TrainingConfig::default(),
            train_fraction: SplitSpec::DEFAULT_TRAIN_FRACTION,
            seed: 42,
            parallel: false,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_users == 0 || self.participants_per_round == 0 {
            return Err(Error::Config("user counts must be positive".into()));
        }
        if self.participants_per_round > self.total_users {
            return Err(Error::Config(format!(
                "k = {} participants exceeds n = {} users",
                self.participants_per_round, self.total_users
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local epochs must be at least 1".into()));
        }
        self.training.validate()
    }

    pub fn selection_seed(&self) -> u64 {
        derive_seed(self.seed, Stream::Selection, 0)
    }

    /// Training seed of `client_id` in the round that starts from a global
    /// model with `round_index` completed rounds.
    pub fn client_seed(&self, round_index: usize, client_id: usize) -> u64 {
        let index = round_index as u64 * self.total_users as u64 + client_id as u64;
        derive_seed(self.seed, Stream::ClientTraining, index)
    }

    pub fn client_training(&self, round_index: usize, client_id: usize) -> TrainingConfig {
        TrainingConfig {
            epochs: self.local_epochs,
            seed: self.client_seed(round_index, client_id),
            ..self.training
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub client_id: usize,
    pub shard: Dataset,
    pub last_params: Option<ParameterVector>,
}

impl ClientState {
    pub fn new(client_id: usize, shard: Dataset) -> Self {
        Self {
            client_id,
            shard,
            last_params: None,
        }
    }

    pub fn shard_size(&self) -> usize {
        self.shard.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub params: ParameterVector,
    pub round_index: usize,
    pub spec: NetworkSpec,
}

impl GlobalModel {
    pub fn new(spec: NetworkSpec, params: ParameterVector) -> Result<Self> {
        params.check(&spec)?;
        Ok(Self {
            params,
            round_index: 0,
            spec,
        })
    }

    /// Accuracy, precision, recall, F1 and mean loss on a normalized dataset.
    pub fn evaluate(&self, data: &Dataset) -> Result<(MetricsReport, f64, ConfusionMatrix)> {
        if !data.is_normalized() {
            return Err(Error::Normalization("evaluation set is not normalized".into()));
        }
        let predicted = model::predict_all(&self.params, &self.spec, data.samples())?;
        let truth: Vec<_> = data.labels().collect();
        let cm = metrics::confusion(&truth, &predicted)?;
        let report = metrics::report(&cm)?;
        let loss = model::loss(&self.params, &self.spec, data.samples())?;
        Ok((report, loss, cm))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round_index: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mean_global_loss: f64,
    pub participant_ids: Vec<usize>,
}

impl RoundReport {
    fn new(round_index: usize, m: MetricsReport, loss: f64, participant_ids: Vec<usize>) -> Self {
        Self {
            round_index,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            mean_global_loss: loss,
            participant_ids,
        }
    }
}

/// `k` distinct client ids in ascending order. With `k = n` every client
/// participates; otherwise ids are sampled without replacement from a
/// generator keyed on `(seed, round)`.
pub fn select_participants(round: usize, n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::invalid(format!("cannot select {k} of {n} users")));
    }
    if k == n {
        return Ok((0..n).collect());
    }
    let mut rng = rng_from(derive_seed(seed, Stream::Selection, round as u64));
    let mut ids = index::sample(&mut rng, n, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Weights `n_k / sum(n_j)` for each local shard size.
pub fn aggregation_weights(sizes: &[usize]) -> Result<Vec<f64>> {
    if sizes.is_empty() {
        return Err(Error::Empty("local updates"));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid("shard sizes must be positive"));
    }
    let total: f64 = sizes.iter().map(|&s| s as f64).sum();
    Ok(sizes.iter().map(|&s| s as f64 / total).collect())
}

/// Shard-size weighted coordinate mean of local parameter vectors, summed in
/// the order given.
pub fn aggregate(locals: &[(ParameterVector, usize)]) -> Result<ParameterVector> {
    let sizes: Vec<usize> = locals.iter().map(|(_, n)| *n).collect();
    let weights = aggregation_weights(&sizes)?;
    let (first, _) = &locals[0];
    for (p, _) in &locals[1..] {
        if p.fingerprint() != first.fingerprint() || p.len() != first.len() {
            return Err(Error::LayoutMismatch(format!(
                "local update {:016x} does not match {:016x}",
                p.fingerprint(),
                first.fingerprint()
            )));
        }
    }
    let mut acc: Vec<f64> = first.values().iter().map(|v| weights[0] * v).collect();
    for ((p, _), w) in locals[1..].iter().zip(&weights[1..]) {
        for (a, v) in acc.iter_mut().zip(p.values()) {
            *a += w * v;
        }
    }
    Ok(first.with_values(acc))
}

/// One communication round: broadcast, local training on each selected
/// client, aggregation in ascending client-id order and evaluation of the new
/// global model on `testset`.
pub fn run_round(
    global: &GlobalModel,
    mut clients: Vec<&mut ClientState>,
    config: &RoundConfig,
    testset: &Dataset,
) -> Result<(GlobalModel, RoundReport)> {
    if clients.is_empty() {
        return Err(Error::Empty("selected clients"));
    }
    clients.sort_by_key(|c| c.client_id);
    if clients.windows(2).any(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::invalid("a client was selected twice"));
    }

    let train = |c: &mut &mut ClientState| -> Result<ParameterVector> {
        let cfg = config.client_training(global.round_index, c.client_id);
        let (params, _) = model::train_local(&global.params, &global.spec, &c.shard, &cfg)?;
        c.last_params = Some(params.clone());
        Ok(params)
    };
    let updates: Vec<ParameterVector> = if config.parallel {
        clients.par_iter_mut().map(train).collect::<Result<_>>()?
    } else {
        clients.iter_mut().map(train).collect::<Result<_>>()?
    };

    let locals: Vec<(ParameterVector, usize)> = updates
        .into_iter()
        .zip(&clients)
        .map(|(p, c)| (p, c.shard_size()))
        .collect();
    let next = GlobalModel {
        params: aggregate(&locals)?,
        round_index: global.round_index + 1,
        spec: global.spec.clone(),
    };
    let (m, loss, _) = next.evaluate(testset)?;
    let ids = clients.iter().map(|c| c.client_id).collect();
    let report = RoundReport::new(next.round_index, m, loss, ids);
    Ok((next, report))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    /// Evaluation of the initial parameters before any round.
    pub initial: RoundReport,
    pub reports: Vec<RoundReport>,
    pub model: GlobalModel,
    pub stats: NormStats,
    /// Normalized held-out split used for every report.
    pub testset: Dataset,
}

/// Seeds used by [`run_experiment`] for the split, sharding and
/// initialization.
pub fn split_spec(config: &RoundConfig) -> Result<SplitSpec> {
    SplitSpec::new(config.train_fraction, derive_seed(config.seed, Stream::Split, 0))
}

pub fn partition_seed(config: &RoundConfig) -> u64 {
    derive_seed(config.seed, Stream::Partition, 0)
}

pub fn init_seed(config: &RoundConfig) -> u64 {
    derive_seed(config.seed, Stream::Init, 0)
}

/// Normalize, split 80:20, shard the training part over `n` clients, then run
/// `T` rounds from seeded initial parameters.
pub fn run_experiment(config: &RoundConfig, spec: &NetworkSpec, data: &Dataset) -> Result<ExperimentOutcome> {
    config.validate()?;
    let normalized = if data.is_normalized() {
        data.clone()
    } else {
        dataset::normalize(data)?
    };
    let stats = normalized.stats().cloned().expect("normalized");
    let (train, testset) = dataset::split(&normalized, &split_spec(config)?)?;
    let shards = dataset::partition(&train, config.total_users, partition_seed(config))?;
    let mut clients: Vec<ClientState> = shards
        .into_iter()
        .enumerate()
        .map(|(id, shard)| ClientState::new(id, shard))
        .collect();

    let mut global = GlobalModel::new(spec.clone(), model::init_params(spec, init_seed(config)))?;
    let (m, loss, _) = global.evaluate(&testset)?;
    let initial = RoundReport::new(0, m, loss, Vec::new());

    let selection_seed = config.selection_seed();
    let mut reports = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let ids = select_participants(round, config.total_users, config.participants_per_round, selection_seed)?;
        let selected: Vec<&mut ClientState> = clients
            .iter_mut()
            .filter(|c| ids.binary_search(&c.client_id).is_ok())
            .collect();
        let (next, report) = run_round(&global, selected, config, &testset)?;
        global = next;
        reports.push(report);
    }

    Ok(ExperimentOutcome {
        initial,
        reports,
        model: global,
        stats,
        testset,
    })
}

pub const RESULTS_HEADER: &str = "round,accuracy,precision,recall,f1,loss,participants";

/// Writes one CSV row per report; participant ids are `;`-separated.
pub fn write_results_csv<W: Write>(out: W, reports: &[RoundReport]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RESULTS_HEADER.split(','))?;
    for r in reports {
        let ids = r
            .participant_ids
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            r.round_index.to_string(),
            r.accuracy.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string(),
            r.mean_global_loss.to_string(),
            ids,
        ])?;
    }
    w.flush()?;
    Ok(())
}
