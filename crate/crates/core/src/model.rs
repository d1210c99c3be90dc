//! Feedforward multiclass classifier trained from scratch.
//!
//! Hidden layers use ReLU, the output layer softmax, and the training loss is
//! mean categorical cross-entropy. Parameters live in one flat vector so they
//! can be exchanged and averaged between clients; per layer the layout is the
//! weight matrix in row-major `[out][in]` order followed by the `out` biases,
//! layers in forward order.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{ClassLabel, Dataset, Sample, NUM_CLASSES, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::seed::rng_from;

/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Single hidden layer.
    AFed,
    /// Two or more hidden layers.
    DFed,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::AFed => "afed",
            Variant::DFed => "dfed",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "afed" => Ok(Variant::AFed),
            "dfed" => Ok(Variant::DFed),
            other => Err(Error::invalid(format!("unknown variant `{other}` (expected afed or dfed)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    layer_sizes: Vec<usize>,
    variant: Variant,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>, variant: Variant) -> Result<Self> {
        if layer_sizes.first() != Some(&NUM_FEATURES) || layer_sizes.last() != Some(&NUM_CLASSES) {
            return Err(Error::invalid(format!(
                "layer sizes {layer_sizes:?} must start at {NUM_FEATURES} and end at {NUM_CLASSES}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        let hidden = layer_sizes.len() - 2;
        let ok = match variant {
            Variant::AFed => hidden == 1,
            Variant::DFed => hidden >= 2,
        };
        if !ok {
            return Err(Error::invalid(format!("{variant} cannot have {hidden} hidden layers")));
        }
        Ok(Self { layer_sizes, variant })
    }

    /// `[12, 16, 3]`.
    pub fn afed() -> Self {
        Self::new(vec![NUM_FEATURES, 16, NUM_CLASSES], Variant::AFed).expect("valid")
    }

    /// `[12, 32, 16, 3]`.
    pub fn dfed() -> Self {
        Self::new(vec![NUM_FEATURES, 32, 16, NUM_CLASSES], Variant::DFed).expect("valid")
    }

    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::AFed => Self::afed(),
            Variant::DFed => Self::dfed(),
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// First 8 bytes of SHA-256 over the variant and layer sizes.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"fedmup-net:");
        h.update(self.variant.name().as_bytes());
        for s in &self.layer_sizes {
            h.update(b":");
            h.update(s.to_string().as_bytes());
        }
        let digest = h.finalize();
        u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    fn widest(&self) -> usize {
        self.layer_sizes.iter().copied().max().unwrap_or(0)
    }

    /// `(weight offset, bias offset, fan_in, fan_out)` per layer.
    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = offset;
            let biases = offset + fan_in * fan_out;
            offset = biases + fan_out;
            (weights, biases, fan_in, fan_out)
        })
    }
}

/// Flat network parameters bound to the [`NetworkSpec`] they were built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    values: Vec<f64>,
    fingerprint: u64,
}

impl ParameterVector {
    pub fn from_values(spec: &NetworkSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::LayoutMismatch(format!(
                "{} values for a network with {} parameters",
                values.len(),
                spec.param_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self {
            values,
            fingerprint: spec.fingerprint(),
        })
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
            fingerprint: spec.fingerprint(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Same layout, different values. Used by aggregation.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            fingerprint: self.fingerprint,
        }
    }

    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if self.fingerprint != spec.fingerprint() || self.values.len() != spec.param_count() {
            return Err(Error::LayoutMismatch(format!(
                "parameters {:016x} do not belong to network {:016x}",
                self.fingerprint,
                spec.fingerprint()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 90,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} {b} outside (0, 1)")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// He-style uniform initialization: weights drawn from
/// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, biases zero.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> ParameterVector {
    let mut rng = rng_from(seed);
    let mut values = vec![0.0; spec.param_count()];
    for (w, b, fan_in, _) in spec.layers() {
        let limit = (6.0 / fan_in as f64).sqrt();
        for v in &mut values[w..b] {
            *v = rng.random_range(-limit..limit);
        }
    }
    ParameterVector {
        values,
        fingerprint: spec.fingerprint(),
    }
}

/// Reusable activation buffers for one network shape.
struct Scratch {
    /// Post-activation output of every layer; `acts[0]` is the input and the
    /// last entry holds softmax probabilities.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
    layers: Vec<(usize, usize, usize, usize)>,
}

impl Scratch {
    fn new(spec: &NetworkSpec) -> Self {
        Self {
            acts: spec.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: vec![0.0; spec.widest()],
            delta_prev: vec![0.0; spec.widest()],
            layers: spec.layers().collect(),
        }
    }

    fn forward(&mut self, params: &[f64], x: &[f64; NUM_FEATURES]) {
        self.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, &(w, b, fan_in, fan_out)) in self.layers.iter().enumerate() {
            let (prev, next) = self.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            for j in 0..fan_out {
                let row = &params[w + j * fan_in..w + (j + 1) * fan_in];
                let z = params[b + j] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
                out[j] = if l == last { z } else { z.max(0.0) };
            }
        }
        softmax_in_place(self.acts.last_mut().expect("output layer"));
    }

    fn probs(&self) -> [f64; NUM_CLASSES] {
        let out = self.acts.last().expect("output layer");
        std::array::from_fn(|k| out[k])
    }

    /// Adds `scale * d(-ln p_label)/d(params)` for the sample last passed to
    /// `forward` into `grad`.
    fn backward(&mut self, params: &[f64], label: usize, scale: f64, grad: &mut [f64]) {
        let n_layers = self.layers.len();
        for k in 0..NUM_CLASSES {
            let target = if k == label { 1.0 } else { 0.0 };
            self.delta[k] = scale * (self.acts[n_layers][k] - target);
        }
        for l in (0..n_layers).rev() {
            let (w, b, fan_in, fan_out) = self.layers[l];
            let input = &self.acts[l];
            for j in 0..fan_out {
                let d = self.delta[j];
                grad[b + j] += d;
                let g = &mut grad[w + j * fan_in..w + (j + 1) * fan_in];
                for (gi, xi) in g.iter_mut().zip(input) {
                    *gi += d * xi;
                }
            }
            if l == 0 {
                break;
            }
            for i in 0..fan_in {
                // input[i] > 0 exactly when the ReLU that produced it was active
                self.delta_prev[i] = if input[i] > 0.0 {
                    (0..fan_out).map(|j| params[w + j * fan_in + i] * self.delta[j]).sum()
                } else {
                    0.0
                };
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn sample_loss(p: &[f64; NUM_CLASSES], label: ClassLabel) -> f64 {
    -p[label.index()].max(PROB_FLOOR).ln()
}

fn check_features(x: &[f64; NUM_FEATURES]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("feature vector"))
    }
}

fn check_batch(params: &ParameterVector, spec: &NetworkSpec, batch: &[Sample]) -> Result<()> {
    params.check(spec)?;
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    batch.iter().try_for_each(|s| check_features(&s.features))
}

/// Class probabilities for one feature vector.
pub fn forward(params: &ParameterVector, spec: &NetworkSpec, features: &[f64; NUM_FEATURES]) -> Result<[f64; NUM_CLASSES]> {
    params.check(spec)?;
    check_features(features)?;
    let mut s = Scratch::new(spec);
    s.forward(&params.values, features);
    Ok(s.probs())
}

/// Mean cross-entropy over the batch.
pub fn loss(params: &ParameterVector, spec: &NetworkSpec, batch: &[Sample]) -> Result<f64> {
    check_batch(params, spec, batch)?;
    let mut s = Scratch::new(spec);
    let total: f64 = batch
        .iter()
        .map(|x| {
            s.forward(&params.values, &x.features);
            sample_loss(&s.probs(), x.label)
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// Gradient of [`loss`] by backpropagation. Below the probability floor the
/// clamped loss is flat, but the returned gradient is that of the unclamped
/// cross-entropy.
pub fn gradient(params: &ParameterVector, spec: &NetworkSpec, batch: &[Sample]) -> Result<ParameterVector> {
    check_batch(params, spec, batch)?;
    let mut s = Scratch::new(spec);
    let mut grad = vec![0.0; params.len()];
    let scale = 1.0 / batch.len() as f64;
    for x in batch {
        s.forward(&params.values, &x.features);
        s.backward(&params.values, x.label.index(), scale, &mut grad);
    }
    Ok(params.with_values(grad))
}

/// Argmax of [`forward`]; ties go to the lowest class index.
pub fn predict(params: &ParameterVector, spec: &NetworkSpec, features: &[f64; NUM_FEATURES]) -> Result<ClassLabel> {
    Ok(argmax_class(&forward(params, spec, features)?))
}

pub fn argmax_class(p: &[f64; NUM_CLASSES]) -> ClassLabel {
    let mut best = 0;
    for k in 1..NUM_CLASSES {
        if p[k] > p[best] {
            best = k;
        }
    }
    ClassLabel::from_index(best).expect("index < NUM_CLASSES")
}

/// Predicted label for every sample.
pub fn predict_all(params: &ParameterVector, spec: &NetworkSpec, samples: &[Sample]) -> Result<Vec<ClassLabel>> {
    params.check(spec)?;
    let mut s = Scratch::new(spec);
    samples
        .iter()
        .map(|x| {
            check_features(&x.features)?;
            s.forward(&params.values, &x.features);
            Ok(argmax_class(&s.probs()))
        })
        .collect()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    fn new(len: usize, cfg: &TrainingConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

/// Runs `config.epochs` epochs of shuffled mini-batch Adam on `shard`,
/// starting from `params` with fresh optimizer state.
///
/// Returns the updated parameters and the mean per-sample loss seen during
/// the last epoch (each sample's loss is taken before the update of its
/// batch). With zero epochs the parameters come back unchanged together with
/// their loss on the shard.
pub fn train_local(
    params: &ParameterVector,
    spec: &NetworkSpec,
    shard: &Dataset,
    config: &TrainingConfig,
) -> Result<(ParameterVector, f64)> {
    config.validate()?;
    if shard.is_empty() {
        return Err(Error::Empty("training shard"));
    }
    if !shard.is_normalized() {
        return Err(Error::Normalization("training shard is not normalized".into()));
    }
    let samples = shard.samples();
    check_batch(params, spec, samples)?;
    if config.epochs == 0 {
        return Ok((params.clone(), loss(params, spec, samples)?));
    }

    let mut rng = rng_from(config.seed);
    let mut weights = params.values.clone();
    let mut grad = vec![0.0; weights.len()];
    let mut adam = Adam::new(weights.len(), config);
    let mut scratch = Scratch::new(spec);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_loss = 0.0;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let x = &samples[i];
                scratch.forward(&weights, &x.features);
                total += sample_loss(&scratch.probs(), x.label);
                scratch.backward(&weights, x.label.index(), scale, &mut grad);
            }
            adam.update(&mut weights, &grad);
        }
        epoch_loss = total / samples.len() as f64;
    }

    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trained parameters"));
    }
    Ok((params.with_values(weights), epoch_loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{normalize, synthesize};
    use rand::RngCore;

    fn small_spec() -> NetworkSpec {
        NetworkSpec::new(vec![12, 8, 3], Variant::AFed).unwrap()
    }

    fn random_batch(seed: u64, n: usize) -> Vec<Sample> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|_| Sample {
                features: std::array::from_fn(|_| rng.random::<f64>()),
                label: ClassLabel::from_index((rng.next_u32() % 3) as usize).unwrap(),
            })
            .collect()
    }

    /// Straight-line affine + ReLU + softmax, indexing the flat layout by hand.
    fn oracle_forward(values: &[f64], sizes: &[usize], x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let mut z = vec![0.0; n_out];
            for j in 0..n_out {
                let mut acc = values[off + n_in * n_out + j];
                for i in 0..n_in {
                    acc += values[off + j * n_in + i] * a[i];
                }
                z[j] = acc;
            }
            off += n_in * n_out + n_out;
            if l + 2 < sizes.len() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        let m = a.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = a.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    #[test]
    fn spec_validation() {
        assert!(NetworkSpec::new(vec![12, 3], Variant::AFed).is_err());
        assert!(NetworkSpec::new(vec![12, 8, 3], Variant::DFed).is_err());
        assert!(NetworkSpec::new(vec![11, 8, 3], Variant::AFed).is_err());
        assert!(NetworkSpec::new(vec![12, 0, 3], Variant::AFed).is_err());
        assert_eq!(NetworkSpec::dfed().layer_sizes(), &[12, 32, 16, 3]);
        assert_ne!(NetworkSpec::afed().fingerprint(), NetworkSpec::dfed().fingerprint());
    }

    #[test]
    fn init_layout_and_determinism() {
        let spec = small_spec();
        let p = init_params(&spec, 7);
        assert_eq!(p.len(), 12 * 8 + 8 + 8 * 3 + 3);
        assert_eq!(p.len(), 131);
        assert_eq!(p, init_params(&spec, 7));
        assert_ne!(p, init_params(&spec, 8));
        let bias_ranges = [(96, 104), (128, 131)];
        for (a, b) in bias_ranges {
            assert!(p.values()[a..b].iter().all(|&v| v == 0.0));
        }
        assert!(p.values()[..96].iter().all(|v| v.abs() < (6.0f64 / 12.0).sqrt()));
    }

    #[test]
    fn forward_matches_oracle() {
        for seed in 0..10 {
            let spec = if seed % 2 == 0 { small_spec() } else { NetworkSpec::dfed() };
            let p = init_params(&spec, seed);
            for x in random_batch(seed + 100, 5) {
                let got = forward(&p, &spec, &x.features).unwrap();
                let want = oracle_forward(p.values(), spec.layer_sizes(), &x.features);
                for k in 0..3 {
                    assert!((got[k] - want[k]).abs() < 1e-10);
                }
                assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(got.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn zero_network_is_uniform_and_predicts_first_class() {
        let spec = NetworkSpec::afed();
        let p = ParameterVector::zeros(&spec);
        let x = [0.4; NUM_FEATURES];
        let out = forward(&p, &spec, &x).unwrap();
        assert!(out.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(predict(&p, &spec, &x).unwrap(), ClassLabel::Malicious);
        let batch = random_batch(3, 10);
        assert!((loss(&p, &spec, &batch).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn argmax_and_ties() {
        assert_eq!(argmax_class(&[0.7, 0.2, 0.1]), ClassLabel::Malicious);
        assert_eq!(argmax_class(&[0.5, 0.5, 0.0]), ClassLabel::Malicious);
        assert_eq!(argmax_class(&[0.1, 0.2, 0.7]), ClassLabel::Unknown);
        assert_eq!(argmax_class(&[0.0, 0.5, 0.5]), ClassLabel::NonMalicious);
    }

    #[test]
    fn confident_prediction_has_near_zero_loss() {
        let spec = small_spec();
        let mut v = vec![0.0; spec.param_count()];
        // output bias for class 2 (index 1) huge
        let out_bias = spec.param_count() - 3;
        v[out_bias + 1] = 50.0;
        let p = ParameterVector::from_values(&spec, v).unwrap();
        let batch = vec![Sample {
            features: [0.3; NUM_FEATURES],
            label: ClassLabel::NonMalicious,
        }];
        assert!(loss(&p, &spec, &batch).unwrap() <= 1e-9);
    }

    #[test]
    fn loss_matches_per_sample_oracle() {
        let spec = small_spec();
        let p = init_params(&spec, 21);
        let batch = random_batch(22, 17);
        let want: f64 = batch
            .iter()
            .map(|s| -oracle_forward(p.values(), spec.layer_sizes(), &s.features)[s.label.index()].ln())
            .sum::<f64>()
            / batch.len() as f64;
        assert!((loss(&p, &spec, &batch).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn gradient_is_batch_mean() {
        let spec = small_spec();
        let p = init_params(&spec, 1);
        let batch = random_batch(2, 6);
        let doubled: Vec<Sample> = batch.iter().flat_map(|s| [s.clone(), s.clone()]).collect();
        let g1 = gradient(&p, &spec, &batch).unwrap();
        let g2 = gradient(&p, &spec, &doubled).unwrap();
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn output_bias_gradient_closed_form() {
        // zero weights: every output is uniform, so d/db_k = mean(1/3 - onehot_k)
        let spec = small_spec();
        let p = ParameterVector::zeros(&spec);
        let labels = [0usize, 1, 2, 0, 1, 2, 0, 0];
        let batch: Vec<Sample> = labels
            .iter()
            .map(|&l| Sample {
                features: [0.5; NUM_FEATURES],
                label: ClassLabel::from_index(l).unwrap(),
            })
            .collect();
        let g = gradient(&p, &spec, &batch).unwrap();
        let ob = spec.param_count() - 3;
        for k in 0..3 {
            let frac = labels.iter().filter(|&&l| l == k).count() as f64 / labels.len() as f64;
            assert!((g.values()[ob + k] - (1.0 / 3.0 - frac)).abs() < 1e-15);
        }
        // hidden activations are zero, so nothing reaches earlier layers
        assert!(g.values()[..ob].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let spec = small_spec();
        let other = NetworkSpec::afed();
        let p = init_params(&spec, 0);
        assert!(matches!(forward(&p, &other, &[0.0; 12]), Err(Error::LayoutMismatch(_))));
        assert!(matches!(forward(&p, &spec, &[f64::NAN; 12]), Err(Error::NonFinite(_))));
        assert!(matches!(loss(&p, &spec, &[]), Err(Error::Empty(_))));
        assert!(gradient(&p, &spec, &[]).is_err());
        assert!(ParameterVector::from_values(&spec, vec![0.0; 3]).is_err());
        assert!(ParameterVector::from_values(&spec, vec![f64::INFINITY; 131]).is_err());
    }

    fn shard(n: usize, seed: u64) -> Dataset {
        normalize(&synthesize(n, seed, [0.3, 0.5, 0.2]).unwrap()).unwrap()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let spec = NetworkSpec::afed();
        let p = init_params(&spec, 4);
        let cfg = TrainingConfig { epochs: 0, ..Default::default() };
        let d = shard(50, 1);
        let (out, l) = train_local(&p, &spec, &d, &cfg).unwrap();
        assert_eq!(out, p);
        assert_eq!(l, loss(&p, &spec, d.samples()).unwrap());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let spec = NetworkSpec::afed();
        let p = init_params(&spec, 4);
        let d = shard(200, 2);
        let cfg = TrainingConfig { epochs: 90, seed: 5, ..Default::default() };
        let before = loss(&p, &spec, d.samples()).unwrap();
        let (a, la) = train_local(&p, &spec, &d, &cfg).unwrap();
        let (b, lb) = train_local(&p, &spec, &d, &cfg).unwrap();
        assert!(loss(&a, &spec, d.samples()).unwrap() < before);
        assert!(la < before);
        assert_eq!(la.to_bits(), lb.to_bits());
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn training_rejects_bad_shards() {
        let spec = NetworkSpec::afed();
        let p = init_params(&spec, 4);
        let cfg = TrainingConfig::default();
        let raw = synthesize(20, 1, [0.3, 0.5, 0.2]).unwrap();
        assert!(matches!(train_local(&p, &spec, &raw, &cfg), Err(Error::Normalization(_))));
        assert!(matches!(train_local(&p, &spec, &Dataset::default(), &cfg), Err(Error::Empty(_))));
        let bad = TrainingConfig { beta1: 1.0, ..cfg };
        assert!(train_local(&p, &spec, &shard(20, 1), &bad).is_err());
    }
}
