//! Class-conditional synthetic record generator.
//!
//! Each class draws every feature independently from its own distribution:
//! a normal distribution clipped to the feature's bounds (rounded to an
//! integer for integer columns, to one decimal for `leak_ratio`), or a
//! Bernoulli draw for 0/1 columns. Label counts are fixed up front by
//! largest-remainder rounding of `n * mix` and then shuffled, so marginals
//! match the mix exactly up to rounding.
//!
//! Parameters are read from a TOML file:
//!
//! ```toml
//! seed = 42                # optional defaults for the CLI
//! n = 10000
//! mix = [0.3, 0.5, 0.2]
//!
//! [malicious]
//! leak_count = { mean = 8.0, sd = 3.0 }
//! leaked_records = { p = 0.9 }
//! # ... one entry per feature column
//!
//! [non_malicious]
//! # ...
//!
//! [unknown]
//! # ...
//! ```

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClassLabel, Dataset, FeatureKind, Sample, FEATURE_BOUNDS, FEATURE_KINDS, NUM_CLASSES, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::seed::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum FeatureDist {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

impl FeatureDist {
    const fn normal(mean: f64, sd: f64) -> Self {
        FeatureDist::Normal { mean, sd }
    }

    const fn bernoulli(p: f64) -> Self {
        FeatureDist::Bernoulli { p }
    }

    fn validate(&self, what: &str) -> Result<()> {
        match *self {
            FeatureDist::Normal { mean, sd } if mean.is_finite() && sd.is_finite() && sd >= 0.0 => Ok(()),
            FeatureDist::Bernoulli { p } if (0.0..=1.0).contains(&p) => Ok(()),
            _ => Err(Error::Config(format!("{what}: invalid distribution {self:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    pub profession: FeatureDist,
    pub num_requests: FeatureDist,
    pub request_type: FeatureDist,
    pub data_limit: FeatureDist,
    pub historical_data: FeatureDist,
    pub leaked_records: FeatureDist,
    pub leak_count: FeatureDist,
    pub leak_frequency: FeatureDist,
    pub data_retention: FeatureDist,
    pub leak_ratio: FeatureDist,
    pub user_type: FeatureDist,
    pub leak_channel: FeatureDist,
}

impl ClassProfile {
    fn columns(&self) -> [FeatureDist; NUM_FEATURES] {
        [
            self.profession,
            self.num_requests,
            self.request_type,
            self.data_limit,
            self.historical_data,
            self.leaked_records,
            self.leak_count,
            self.leak_frequency,
            self.data_retention,
            self.leak_ratio,
            self.user_type,
            self.leak_channel,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<[f64; NUM_CLASSES]>,
    pub malicious: ClassProfile,
    pub non_malicious: ClassProfile,
    pub unknown: ClassProfile,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        use FeatureDist as F;
        Self {
            seed: None,
            n: None,
            mix: None,
            malicious: ClassProfile {
                profession: F::normal(4.5, 2.5),
                num_requests: F::normal(150.0, 70.0),
                request_type: F::normal(3.5, 1.2),
                data_limit: F::normal(28.0, 10.0),
                historical_data: F::bernoulli(0.9),
                leaked_records: F::bernoulli(0.9),
                leak_count: F::normal(8.0, 3.0),
                leak_frequency: F::normal(15.0, 6.0),
                data_retention: F::normal(10.0, 4.0),
                leak_ratio: F::normal(10.0, 5.0),
                user_type: F::normal(1.6, 0.6),
                leak_channel: F::normal(3.8, 1.2),
            },
            non_malicious: ClassProfile {
                profession: F::normal(4.5, 2.5),
                num_requests: F::normal(180.0, 80.0),
                request_type: F::normal(2.5, 1.2),
                data_limit: F::normal(20.0, 10.0),
                historical_data: F::bernoulli(0.9),
                leaked_records: F::bernoulli(0.1),
                leak_count: F::normal(1.0, 1.2),
                leak_frequency: F::normal(3.0, 3.0),
                data_retention: F::normal(4.0, 3.0),
                leak_ratio: F::normal(2.0, 1.5),
                user_type: F::normal(1.0, 0.7),
                leak_channel: F::normal(1.5, 1.2),
            },
            unknown: ClassProfile {
                profession: F::normal(4.5, 2.5),
                num_requests: F::normal(40.0, 30.0),
                request_type: F::normal(3.0, 1.2),
                data_limit: F::normal(10.0, 8.0),
                historical_data: F::bernoulli(0.05),
                leaked_records: F::bernoulli(0.3),
                leak_count: F::normal(3.0, 2.0),
                leak_frequency: F::normal(6.0, 4.0),
                data_retention: F::normal(1.5, 1.5),
                leak_ratio: F::normal(4.0, 3.0),
                user_type: F::normal(0.4, 0.5),
                leak_channel: F::normal(2.0, 1.5),
            },
        }
    }
}

impl GeneratorConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("generator config serializes")
    }

    pub fn profile(&self, label: ClassLabel) -> &ClassProfile {
        match label {
            ClassLabel::Malicious => &self.malicious,
            ClassLabel::NonMalicious => &self.non_malicious,
            ClassLabel::Unknown => &self.unknown,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for label in ClassLabel::ALL {
            for (dist, name) in self.profile(label).columns().iter().zip(super::FEATURE_NAMES) {
                dist.validate(&format!("{label}.{name}"))?;
            }
        }
        if let Some(mix) = self.mix {
            validate_mix(&mix)?;
        }
        Ok(())
    }
}

fn validate_mix(mix: &[f64; NUM_CLASSES]) -> Result<()> {
    if mix.iter().any(|m| !(m.is_finite() && *m >= 0.0)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("class mix {mix:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

/// Per-class counts summing to `n`, by largest remainder (ties to the lower
/// class index).
fn class_counts(n: usize, mix: &[f64; NUM_CLASSES]) -> [usize; NUM_CLASSES] {
    let exact: Vec<f64> = mix.iter().map(|m| m * n as f64).collect();
    let mut counts: [usize; NUM_CLASSES] = std::array::from_fn(|c| exact[c].floor() as usize);
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &c in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

fn draw<R: Rng>(rng: &mut R, dist: FeatureDist, column: usize) -> f64 {
    let (lo, hi) = FEATURE_BOUNDS[column];
    let raw = match dist {
        FeatureDist::Normal { mean, sd } => Normal::new(mean, sd).expect("validated sd").sample(rng),
        FeatureDist::Bernoulli { p } => f64::from(u8::from(rng.random_bool(p))),
    };
    let v = raw.clamp(lo, hi);
    match FEATURE_KINDS[column] {
        FeatureKind::Real => (v * 10.0).round() / 10.0,
        _ => v.round(),
    }
}

/// Generates `n` raw records using the built-in class profiles.
pub fn synthesize(n: usize, seed: u64, class_mix: [f64; NUM_CLASSES]) -> Result<Dataset> {
    synthesize_with(&GeneratorConfig::default(), n, seed, class_mix)
}

pub fn synthesize_with(
    config: &GeneratorConfig,
    n: usize,
    seed: u64,
    class_mix: [f64; NUM_CLASSES],
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("record count must be positive"));
    }
    validate_mix(&class_mix)?;
    config.validate()?;

    let mut rng = rng_from(seed);
    let counts = class_counts(n, &class_mix);
    let mut labels: Vec<ClassLabel> = ClassLabel::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&l, c)| std::iter::repeat_n(l, c))
        .collect();
    labels.shuffle(&mut rng);

    let samples = labels
        .into_iter()
        .map(|label| {
            let columns = config.profile(label).columns();
            let features = std::array::from_fn(|j| draw(&mut rng, columns[j], j));
            Sample { features, label }
        })
        .collect();
    Ok(Dataset::from_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::write_csv;

    #[test]
    fn label_histogram_matches_mix() {
        let d = synthesize(10_000, 42, [0.3, 0.5, 0.2]).unwrap();
        assert_eq!(d.len(), 10_000);
        let mut hist = [0usize; 3];
        for l in d.labels() {
            hist[l.index()] += 1;
        }
        assert_eq!(hist, [3000, 5000, 2000]);
    }

    #[test]
    fn degenerate_mix_gives_single_class() {
        let d = synthesize(3, 7, [1.0, 0.0, 0.0]).unwrap();
        assert!(d.labels().all(|l| l == ClassLabel::Malicious));
    }

    #[test]
    fn largest_remainder_counts() {
        assert_eq!(class_counts(7, &[1.0 / 3.0; 3]), [3, 2, 2]);
        assert_eq!(class_counts(1, &[0.3, 0.5, 0.2]), [0, 1, 0]);
        assert_eq!(class_counts(10, &[0.25, 0.25, 0.5]).iter().sum::<usize>(), 10);
    }

    #[test]
    fn output_is_byte_identical_per_seed() {
        let csv = |seed| {
            let mut buf = Vec::new();
            write_csv(&mut buf, &synthesize(500, seed, [0.3, 0.5, 0.2]).unwrap()).unwrap();
            buf
        };
        assert_eq!(csv(11), csv(11));
        assert_ne!(csv(11), csv(12));
    }

    #[test]
    fn records_are_valid() {
        let d = synthesize(2_000, 5, [0.3, 0.5, 0.2]).unwrap();
        // to_records validates every column domain
        let records = d.to_records().unwrap();
        for r in &records {
            let x = r.features();
            for j in 0..NUM_FEATURES {
                assert!(x[j] >= FEATURE_BOUNDS[j].0 && x[j] <= FEATURE_BOUNDS[j].1);
            }
        }
    }

    #[test]
    fn malicious_class_leaks_more() {
        let d = synthesize(3_000, 8, [0.5, 0.5, 0.0]).unwrap();
        let mean = |label: ClassLabel, j: usize| {
            let v: Vec<f64> = d
                .samples()
                .iter()
                .filter(|s| s.label == label)
                .map(|s| s.features[j])
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        for j in [6, 7, 9] {
            assert!(mean(ClassLabel::Malicious, j) > mean(ClassLabel::NonMalicious, j));
        }
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(synthesize(0, 1, [0.3, 0.5, 0.2]).is_err());
        assert!(synthesize(10, 1, [0.3, 0.5, 0.3]).is_err());
        assert!(synthesize(10, 1, [-0.1, 0.9, 0.2]).is_err());
    }

    #[test]
    fn toml_roundtrip_and_validation() {
        let cfg = GeneratorConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(GeneratorConfig::from_toml_str(&text).unwrap(), cfg);

        let bad = text.replacen("p = 0.9", "p = 1.9", 1);
        assert!(GeneratorConfig::from_toml_str(&bad).is_err());
        let typo = format!("sede = 3\n{text}");
        assert!(GeneratorConfig::from_toml_str(&typo).is_err());
    }
}
