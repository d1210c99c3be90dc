#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedmup::checkpoint::Checkpoint;
use fedmup::dataset::{NormStats, FEATURE_BOUNDS, FEATURE_NAMES};
use fedmup::fed::GlobalModel;
use fedmup::model::{NetworkSpec, ParameterVector};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fedmup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedmup"))
        .args(args)
        .output()
        .expect("spawn fedmup")
}

/// AFed network that predicts malicious exactly when the normalized
/// `leak_count` exceeds 0.5 and non-malicious otherwise. Normalization uses
/// the feature bounds, so the raw cut is 10 leaks.
pub fn leak_count_checkpoint() -> Checkpoint {
    let spec = NetworkSpec::afed();
    let col = FEATURE_NAMES.iter().position(|&n| n == "leak_count").unwrap();
    let (n_in, n_hidden, n_out) = (12, 16, 3);
    let mut v = vec![0.0; spec.param_count()];
    // hidden unit 0 copies the column
    v[col] = 1.0;
    let out = n_hidden * n_in + n_hidden;
    // malicious logit 10 h - 5, non-malicious 0, unknown -10
    v[out] = 10.0;
    let bias = out + n_out * n_hidden;
    v[bias] = -5.0;
    v[bias + 2] = -10.0;
    let params = ParameterVector::from_values(&spec, v).unwrap();
    Checkpoint {
        model: GlobalModel::new(spec, params).unwrap(),
        stats: Some(NormStats {
            min: FEATURE_BOUNDS.map(|b| b.0),
            max: FEATURE_BOUNDS.map(|b| b.1),
        }),
    }
}
