//! Experiment configuration file.
//!
//! A flat TOML table; every key is optional and command-line flags override
//! whatever the file sets.
//!
//! | key             | default            | meaning                                   |
//! |-----------------|--------------------|-------------------------------------------|
//! | `users`         | 10                 | simulated users `n`                        |
//! | `k`             | 10                 | participants per round                     |
//! | `rounds`        | 50                 | communication rounds `T`                   |
//! | `epochs`        | 90                 | local epochs per round                     |
//! | `variant`       | `"afed"`           | `"afed"` (12-16-3) or `"dfed"` (12-32-16-3) |
//! | `batch_size`    | 32                 | minibatch size                             |
//! | `learning_rate` | 0.001              | Adam step size                             |
//! | `seed`          | 42                 | master seed                                |
//! | `split`         | 0.8                | training share of the records              |
//! | `thr_attack`    | 0.5                | attack-factor threshold                    |
//! | `thr_freq`      | 0.3                | leak-frequency threshold                   |
//! | `data`          | unset              | labeled CSV; unset means generate          |
//! | `gen_n`         | 10000              | generated record count                     |
//! | `gen_seed`      | 42                 | generator seed                             |
//! | `gen_mix`       | `[0.3, 0.5, 0.2]`  | class shares (malicious, non-malicious, unknown) |
//! | `gen_config`    | unset              | generator profile TOML                     |
//! | `results`       | `"results.csv"`    | per-round metrics output                   |
//! | `checkpoint`    | `"checkpoint.txt"` | final model output                         |
//! | `test_out`      | unset              | held-out split output (raw values)         |
//! | `parallel`      | false              | train clients on a thread pool             |

use std::path::{Path, PathBuf};

use fedmup::dataset::{GeneratorConfig, NUM_CLASSES};
use fedmup::fed::RoundConfig;
use fedmup::model::{NetworkSpec, TrainingConfig, Variant};
use fedmup::ube::SecurityThresholds;
use fedmup::Error;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub users: usize,
    pub k: usize,
    pub rounds: usize,
    pub epochs: usize,
    pub variant: Variant,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub split: f64,
    pub thr_attack: f64,
    pub thr_freq: f64,
    pub data: Option<PathBuf>,
    pub gen_n: usize,
    pub gen_seed: u64,
    pub gen_mix: [f64; NUM_CLASSES],
    pub gen_config: Option<PathBuf>,
    pub results: PathBuf,
    pub checkpoint: PathBuf,
    pub test_out: Option<PathBuf>,
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let round = RoundConfig::default();
        let training = TrainingConfig::default();
        let thresholds = SecurityThresholds::default();
        Self {
            users: round.total_users,
            k: round.participants_per_round,
            rounds: round.rounds,
            epochs: round.local_epochs,
            variant: Variant::AFed,
            batch_size: training.batch_size,
            learning_rate: training.learning_rate,
            seed: round.seed,
            split: round.train_fraction,
            thr_attack: thresholds.thr_attack(),
            thr_freq: thresholds.thr_freq(),
            data: None,
            gen_n: 10_000,
            gen_seed: 42,
            gen_mix: [0.3, 0.5, 0.2],
            gen_config: None,
            results: "results.csv".into(),
            checkpoint: "checkpoint.txt".into(),
            test_out: None,
            parallel: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn round_config(&self) -> RoundConfig {
        RoundConfig {
            total_users: self.users,
            participants_per_round: self.k,
            rounds: self.rounds,
            local_epochs: self.epochs,
            training: TrainingConfig {
                epochs: self.epochs,
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
                ..TrainingConfig::default()
            },
            train_fraction: self.split,
            seed: self.seed,
            parallel: self.parallel,
        }
    }

    pub fn network(&self) -> NetworkSpec {
        NetworkSpec::for_variant(self.variant)
    }

    pub fn thresholds(&self) -> Result<SecurityThresholds, Error> {
        SecurityThresholds::new(self.thr_attack, self.thr_freq).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn generator(&self) -> Result<GeneratorConfig, Error> {
        match &self.gen_config {
            Some(p) => GeneratorConfig::load(p),
            None => Ok(GeneratorConfig::default()),
        }
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<(), Error> {
        self.round_config().validate()?;
        self.thresholds()?;
        if self.data.is_none() && self.gen_n == 0 {
            return Err(Error::Config("gen_n must be positive".into()));
        }
        Ok(())
    }
}
