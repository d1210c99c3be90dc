//! Tabular user-attribute records: schema, CSV persistence, min-max
//! normalization, train/test split and client sharding.

mod generator;

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from;

pub use generator::{synthesize, synthesize_with, ClassProfile, FeatureDist, GeneratorConfig};

pub const NUM_FEATURES: usize = 12;
pub const NUM_CLASSES: usize = 3;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "profession",
    "num_requests",
    "request_type",
    "data_limit",
    "historical_data",
    "leaked_records",
    "leak_count",
    "leak_frequency",
    "data_retention",
    "leak_ratio",
    "user_type",
    "leak_channel",
];

pub const CSV_HEADER: &str = "profession,num_requests,request_type,data_limit,historical_data,\
leaked_records,leak_count,leak_frequency,data_retention,leak_ratio,user_type,leak_channel,class";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Small categorical code.
    Code,
    /// Non-negative integer count or amount.
    Count,
    /// 0 or 1.
    Flag,
    /// Non-negative real.
    Real,
}

pub const FEATURE_KINDS: [FeatureKind; NUM_FEATURES] = {
    use FeatureKind::*;
    [Code, Count, Code, Count, Flag, Flag, Count, Count, Count, Real, Code, Code]
};

/// Value range the generator clips each feature to.
pub const FEATURE_BOUNDS: [(f64, f64); NUM_FEATURES] = [
    (0.0, 9.0),
    (0.0, 500.0),
    (1.0, 5.0),
    (0.0, 50.0),
    (0.0, 1.0),
    (0.0, 1.0),
    (0.0, 20.0),
    (0.0, 30.0),
    (0.0, 20.0),
    (0.0, 30.0),
    (0.0, 2.0),
    (0.0, 5.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    Malicious = 1,
    NonMalicious = 2,
    Unknown = 3,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] =
        [ClassLabel::Malicious, ClassLabel::NonMalicious, ClassLabel::Unknown];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(ClassLabel::Malicious),
            2 => Some(ClassLabel::NonMalicious),
            3 => Some(ClassLabel::Unknown),
            _ => None,
        }
    }

    /// Zero-based position in network outputs and confusion matrices.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassLabel::Malicious => "malicious",
            ClassLabel::NonMalicious => "non-malicious",
            ClassLabel::Unknown => "unknown",
        })
    }
}

/// One user-request row with its current and historical attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub profession: u32,
    pub num_requests: u32,
    pub request_type: u32,
    pub data_limit: u32,
    pub historical_data: u8,
    pub leaked_records: u8,
    pub leak_count: u32,
    pub leak_frequency: u32,
    pub data_retention: u32,
    pub leak_ratio: f64,
    pub user_type: u32,
    pub leak_channel: u32,
    pub class_label: ClassLabel,
}

impl FeatureRecord {
    pub fn features(&self) -> [f64; NUM_FEATURES] {
        [
            f64::from(self.profession),
            f64::from(self.num_requests),
            f64::from(self.request_type),
            f64::from(self.data_limit),
            f64::from(self.historical_data),
            f64::from(self.leaked_records),
            f64::from(self.leak_count),
            f64::from(self.leak_frequency),
            f64::from(self.data_retention),
            self.leak_ratio,
            f64::from(self.user_type),
            f64::from(self.leak_channel),
        ]
    }

    /// Rebuilds a typed record from raw feature values, checking each column's
    /// domain.
    pub fn from_features(x: &[f64; NUM_FEATURES], class_label: ClassLabel) -> Result<Self> {
        let int = |i: usize| -> Result<u32> {
            let v = x[i];
            if v.fract() != 0.0 || !(0.0..=f64::from(u32::MAX)).contains(&v) {
                return Err(Error::invalid(format!(
                    "{} must be a non-negative integer, got {v}",
                    FEATURE_NAMES[i]
                )));
            }
            Ok(v as u32)
        };
        let flag = |i: usize| -> Result<u8> {
            match x[i] {
                0.0 => Ok(0),
                1.0 => Ok(1),
                v => Err(Error::invalid(format!("{} must be 0 or 1, got {v}", FEATURE_NAMES[i]))),
            }
        };
        if !(x[9].is_finite() && x[9] >= 0.0) {
            return Err(Error::invalid(format!("leak_ratio must be non-negative, got {}", x[9])));
        }
        Ok(Self {
            profession: int(0)?,
            num_requests: int(1)?,
            request_type: int(2)?,
            data_limit: int(3)?,
            historical_data: flag(4)?,
            leaked_records: flag(5)?,
            leak_count: int(6)?,
            leak_frequency: int(7)?,
            data_retention: int(8)?,
            leak_ratio: x[9],
            user_type: int(10)?,
            leak_channel: int(11)?,
            class_label,
        })
    }
}

/// Feature vector plus label, raw or normalized depending on the owning
/// [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: [f64; NUM_FEATURES],
    pub label: ClassLabel,
}

impl From<&FeatureRecord> for Sample {
    fn from(r: &FeatureRecord) -> Self {
        Sample {
            features: r.features(),
            label: r.class_label,
        }
    }
}

/// Per-column minimum and maximum of the data the normalizer was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: [f64; NUM_FEATURES],
    pub max: [f64; NUM_FEATURES],
}

impl NormStats {
    pub fn fit(samples: &[Sample]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("dataset"))?;
        let mut min = first.features;
        let mut max = first.features;
        for s in &samples[1..] {
            for j in 0..NUM_FEATURES {
                min[j] = min[j].min(s.features[j]);
                max[j] = max[j].max(s.features[j]);
            }
        }
        Ok(Self { min, max })
    }

    /// Min-max scaling; constant columns map to 0.
    pub fn apply(&self, x: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|j| {
            let range = self.max[j] - self.min[j];
            if range == 0.0 {
                0.0
            } else {
                (x[j] - self.min[j]) / range
            }
        })
    }

    pub fn invert(&self, x: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|j| x[j] * (self.max[j] - self.min[j]) + self.min[j])
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
    stats: Option<NormStats>,
}

impl Dataset {
    pub fn from_records(records: &[FeatureRecord]) -> Self {
        Self {
            samples: records.iter().map(Sample::from).collect(),
            stats: None,
        }
    }

    /// Wraps raw (unnormalized) samples.
    pub fn from_samples(samples: Vec<Sample>) -> Self {
        Self { samples, stats: None }
    }

    /// Wraps samples already scaled with `stats`.
    pub fn from_normalized(samples: Vec<Sample>, stats: NormStats) -> Self {
        Self {
            samples,
            stats: Some(stats),
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn stats(&self) -> Option<&NormStats> {
        self.stats.as_ref()
    }

    pub fn is_normalized(&self) -> bool {
        self.stats.is_some()
    }

    pub fn labels(&self) -> impl Iterator<Item = ClassLabel> + '_ {
        self.samples.iter().map(|s| s.label)
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for s in &self.samples {
            counts[s.label.index()] += 1;
        }
        counts
    }

    /// Typed records; fails on a normalized dataset.
    pub fn to_records(&self) -> Result<Vec<FeatureRecord>> {
        if self.is_normalized() {
            return Err(Error::Normalization("cannot export normalized values as records".into()));
        }
        self.samples
            .iter()
            .map(|s| FeatureRecord::from_features(&s.features, s.label))
            .collect()
    }

    fn with_indices(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            stats: self.stats.clone(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    read_csv(File::open(path)?, path)
}

/// Parses dataset CSV from any reader; `origin` is used in error messages.
pub fn read_csv<R: Read>(reader: R, origin: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers()?;
    let expected: Vec<&str> = CSV_HEADER.split(',').collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Header {
            path: origin.to_path_buf(),
            expected: CSV_HEADER.into(),
        });
    }

    let mut samples = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let fields: Vec<&str> = row.iter().take(NUM_FEATURES).collect();
        let x = parse_features(&fields).map_err(parse_err)?;
        let class = &row[NUM_FEATURES];
        let label = class
            .parse::<u8>()
            .ok()
            .and_then(ClassLabel::from_code)
            .ok_or_else(|| parse_err(format!("class must be 1, 2 or 3, got `{class}`")))?;
        samples.push(Sample { features: x, label });
    }
    Ok(Dataset::from_samples(samples))
}

/// Parses the twelve feature columns of one row, checking each column's
/// domain. Errors are plain messages naming the column.
pub fn parse_features(fields: &[&str]) -> std::result::Result<[f64; NUM_FEATURES], String> {
    if fields.len() != NUM_FEATURES {
        return Err(format!("expected {NUM_FEATURES} feature columns, got {}", fields.len()));
    }
    let mut x = [0.0; NUM_FEATURES];
    for (j, kind) in FEATURE_KINDS.iter().enumerate() {
        let field = fields[j];
        x[j] = match kind {
            FeatureKind::Real => field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| format!("{}: expected non-negative real, got `{field}`", FEATURE_NAMES[j]))?,
            _ => f64::from(
                field
                    .parse::<u32>()
                    .map_err(|_| format!("{}: expected non-negative integer, got `{field}`", FEATURE_NAMES[j]))?,
            ),
        };
        if *kind == FeatureKind::Flag && x[j] > 1.0 {
            return Err(format!("{}: expected 0 or 1, got `{field}`", FEATURE_NAMES[j]));
        }
    }
    Ok(x)
}

pub fn save_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    write_csv(&mut out, data)?;
    out.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(out: W, data: &Dataset) -> Result<()> {
    let records = data.to_records()?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in &records {
        let ratio = if r.leak_ratio.fract() == 0.0 {
            format!("{:.1}", r.leak_ratio)
        } else {
            r.leak_ratio.to_string()
        };
        w.write_record([
            r.profession.to_string(),
            r.num_requests.to_string(),
            r.request_type.to_string(),
            r.data_limit.to_string(),
            r.historical_data.to_string(),
            r.leaked_records.to_string(),
            r.leak_count.to_string(),
            r.leak_frequency.to_string(),
            r.data_retention.to_string(),
            ratio,
            r.user_type.to_string(),
            r.leak_channel.to_string(),
            r.class_label.code().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fits min-max statistics on `data` and rescales every feature into [0, 1].
pub fn normalize(data: &Dataset) -> Result<Dataset> {
    if data.is_normalized() {
        return Err(Error::Normalization("dataset is already normalized".into()));
    }
    let stats = NormStats::fit(&data.samples)?;
    apply_stats(data, &stats)
}

/// Rescales a raw dataset with statistics fitted elsewhere (e.g. a checkpoint).
pub fn apply_stats(data: &Dataset, stats: &NormStats) -> Result<Dataset> {
    if data.is_normalized() {
        return Err(Error::Normalization("dataset is already normalized".into()));
    }
    let samples = data
        .samples
        .iter()
        .map(|s| Sample {
            features: stats.apply(&s.features),
            label: s.label,
        })
        .collect();
    Ok(Dataset::from_normalized(samples, stats.clone()))
}

pub fn denormalize(data: &Dataset) -> Result<Dataset> {
    let stats = data
        .stats
        .as_ref()
        .ok_or_else(|| Error::Normalization("dataset is not normalized".into()))?;
    let samples = data
        .samples
        .iter()
        .map(|s| Sample {
            features: stats.invert(&s.features),
            label: s.label,
        })
        .collect();
    Ok(Dataset::from_samples(samples))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    train_fraction: f64,
    seed: u64,
}

impl SplitSpec {
    pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
    pub const MIN_RECORDS: usize = 5;

    pub fn new(train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::invalid(format!("train fraction {train_fraction} outside (0, 1)")));
        }
        Ok(Self { train_fraction, seed })
    }

    pub fn with_seed(seed: u64) -> Self {
        Self {
            train_fraction: Self::DEFAULT_TRAIN_FRACTION,
            seed,
        }
    }

    pub fn train_fraction(&self) -> f64 {
        self.train_fraction
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn train_len(&self, n: usize) -> usize {
        (self.train_fraction * n as f64).round() as usize
    }
}

/// Seeded shuffle followed by a cut at `round(train_fraction * N)`.
///
/// The permutation depends only on `N` and the seed, so splitting a raw
/// dataset and its normalized copy with the same spec selects the same rows.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    if n < SplitSpec::MIN_RECORDS {
        return Err(Error::TooFewRecords {
            records: n,
            needed: SplitSpec::MIN_RECORDS,
        });
    }
    let cut = spec.train_len(n);
    if cut == 0 || cut == n {
        return Err(Error::invalid(format!(
            "train fraction {} leaves an empty side for {n} records",
            spec.train_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(spec.seed));
    Ok((data.with_indices(&idx[..cut]), data.with_indices(&idx[cut..])))
}

/// Deals records into `num_clients` shards whose sizes differ by at most one;
/// the first `N mod k` shards take the extra record. A single client gets the
/// whole dataset in its original order.
pub fn partition(data: &Dataset, num_clients: usize, seed: u64) -> Result<Vec<Dataset>> {
    if num_clients == 0 {
        return Err(Error::invalid("need at least one client"));
    }
    let n = data.len();
    if n < num_clients {
        return Err(Error::TooFewRecords {
            records: n,
            needed: num_clients,
        });
    }
    if num_clients == 1 {
        return Ok(vec![data.clone()]);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(seed));

    let base = n / num_clients;
    let extra = n % num_clients;
    let mut shards = Vec::with_capacity(num_clients);
    let mut start = 0;
    for c in 0..num_clients {
        let len = base + usize::from(c < extra);
        shards.push(data.with_indices(&idx[start..start + len]));
        start += len;
    }
    Ok(shards)
}
