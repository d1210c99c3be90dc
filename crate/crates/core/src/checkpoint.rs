//! Text checkpoint of a global model and the normalization it was trained
//! with.
//!
//! ```text
//! fedmup-checkpoint v1
//! fingerprint <16 hex digits>
//! variant afed
//! layers 12,16,3
//! round 50
//! norm_min <12 comma-separated reals>
//! norm_max <12 comma-separated reals>
//! params 259
//! <one parameter per line, flat layout order>
//! ```
//!
//! Reals use Rust's shortest round-trip formatting, so reading a checkpoint
//! reproduces every parameter bit for bit. The `norm_*` lines are optional
//! as a pair.

use std::fs;
use std::path::Path;

use crate::dataset::{NormStats, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::fed::GlobalModel;
use crate::model::{NetworkSpec, ParameterVector, Variant};

const MAGIC: &str = "fedmup-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: GlobalModel,
    pub stats: Option<NormStats>,
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let spec = &self.model.spec;
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        out.push_str(&format!("fingerprint {:016x}\n", spec.fingerprint()));
        out.push_str(&format!("variant {}\n", spec.variant()));
        let layers: Vec<String> = spec.layer_sizes().iter().map(usize::to_string).collect();
        out.push_str(&format!("layers {}\n", layers.join(",")));
        out.push_str(&format!("round {}\n", self.model.round_index));
        if let Some(stats) = &self.stats {
            out.push_str(&format!("norm_min {}\n", join(&stats.min)));
            out.push_str(&format!("norm_max {}\n", join(&stats.max)));
        }
        out.push_str(&format!("params {}\n", self.model.params.len()));
        for v in self.model.params.values() {
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path)?).map_err(|message| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }

    /// Parses checkpoint text; errors are plain messages.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate();
        let mut next = |key: &str| -> std::result::Result<(usize, String), String> {
            let (i, line) = lines.next().ok_or_else(|| format!("missing `{key}` line"))?;
            Ok((i + 1, line.to_string()))
        };
        let field = |(line_no, line): (usize, String), key: &str| -> std::result::Result<String, String> {
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| format!("line {line_no}: expected `{key} ...`, got `{line}`"))
        };

        let (_, magic) = next("header")?;
        if magic != MAGIC {
            return Err(format!("line 1: expected `{MAGIC}`"));
        }
        let fingerprint = field(next("fingerprint")?, "fingerprint")?;
        let fingerprint = u64::from_str_radix(&fingerprint, 16).map_err(|e| format!("fingerprint: {e}"))?;
        let variant: Variant = field(next("variant")?, "variant")?.parse().map_err(|e: Error| e.to_string())?;
        let layers = field(next("layers")?, "layers")?
            .split(',')
            .map(|s| s.parse::<usize>().map_err(|e| format!("layers: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let spec = NetworkSpec::new(layers, variant).map_err(|e| e.to_string())?;
        if spec.fingerprint() != fingerprint {
            return Err(format!(
                "fingerprint {fingerprint:016x} does not match layers (expected {:016x})",
                spec.fingerprint()
            ));
        }
        let round_index = field(next("round")?, "round")?
            .parse::<usize>()
            .map_err(|e| format!("round: {e}"))?;

        let reals = |s: &str, what: &str| -> std::result::Result<[f64; NUM_FEATURES], String> {
            let v = s
                .split(',')
                .map(|x| x.parse::<f64>().map_err(|e| format!("{what}: {e}")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            v.try_into().map_err(|v: Vec<f64>| format!("{what}: {} values, expected {NUM_FEATURES}", v.len()))
        };
        let mut line = next("params")?;
        let mut stats = None;
        if line.1.starts_with("norm_min ") {
            let min = reals(&field(line, "norm_min")?, "norm_min")?;
            let max = reals(&field(next("norm_max")?, "norm_max")?, "norm_max")?;
            stats = Some(NormStats { min, max });
            line = next("params")?;
        }
        let count = field(line, "params")?
            .parse::<usize>()
            .map_err(|e| format!("params: {e}"))?;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let (no, v) = next("parameter value")?;
            values.push(v.trim().parse::<f64>().map_err(|e| format!("line {no}: {e}"))?);
        }
        if let Ok((no, extra)) = next("") {
            if !extra.trim().is_empty() {
                return Err(format!("line {no}: trailing data"));
            }
        }
        let params = ParameterVector::from_values(&spec, values).map_err(|e| e.to_string())?;
        Ok(Self {
            model: GlobalModel {
                params,
                round_index,
                spec,
            },
            stats,
        })
    }
}
