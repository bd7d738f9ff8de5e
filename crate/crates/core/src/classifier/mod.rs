//! TF-IDF features with L2-regularized logistic regression, used both as the
//! downstream construct classifier and as the real-vs-synthetic discriminator.

mod features;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{ngrams, tokenize, FeatureConfig, SparseVec, TokenPattern, Vectorizer};

use crate::corpus::{LabeledText, Polarity};
use crate::io;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Learning-rate halvings tried before an epoch is skipped.
const MAX_BACKTRACKS: u32 = 30;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),
    #[error("training text {0} has no label")]
    Unlabeled(String),
    #[error("no feature survives min_doc_freq = {0}")]
    EmptyVocabulary(usize),
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("model artifact {path}: {reason}")]
    Artifact { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_penalty: f64,
    pub seed: u64,
    pub feature_config: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 10,
            batch_size: 32,
            l2_penalty: 1e-4,
            seed: 0,
            feature_config: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return bad("l2_penalty must be non-negative");
        }
        let (lo, hi) = self.feature_config.ngram_range;
        if lo == 0 || hi < lo {
            return bad("ngram_range must satisfy 1 <= lo <= hi");
        }
        Ok(())
    }
}

/// Common interface for anything that scores text for the positive class.
pub trait TextClassifier: Send + Sync {
    /// `[negative, positive]`.
    fn classes(&self) -> [&str; 2];
    /// Probability of the positive class.
    fn predict_proba(&self, text: &str) -> f64;
    /// True for the positive class. A tie at 0.5 goes to the negative class.
    fn predict(&self, text: &str) -> bool {
        self.predict_proba(text) > 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub format_version: u32,
    /// `[negative, positive]`.
    pub classes: [String; 2],
    pub train_config: TrainConfig,
    pub vectorizer: Vectorizer,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Full-training-set objective after each epoch; index 0 is the initial value.
    pub epoch_losses: Vec<f64>,
    pub training_data_digest: String,
}

impl TextClassifier for ClassifierModel {
    fn classes(&self) -> [&str; 2] {
        [&self.classes[0], &self.classes[1]]
    }

    fn predict_proba(&self, text: &str) -> f64 {
        let x = self.vectorizer.transform(text);
        sigmoid(score(&x, &self.weights, self.bias))
    }
}

impl ClassifierModel {
    pub fn predict_polarity(&self, text: &str) -> Polarity {
        if self.predict(text) {
            Polarity::PositiveConstruct
        } else {
            Polarity::NegativeConstruct
        }
    }

    pub fn weights_digest(&self) -> String {
        io::json_digest(&(&self.weights, self.bias))
    }

    /// Identifies the whole artifact, not just its weights.
    pub fn digest(&self) -> String {
        io::json_digest(self)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let artifact = |reason: String| ClassifierError::Artifact {
            path: path.display().to_string(),
            reason,
        };
        let model: Self = io::read_json(path).map_err(|e| artifact(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(artifact(format!(
                "format version {} (expected {MODEL_FORMAT_VERSION})",
                model.format_version
            )));
        }
        if model.weights.len() != model.vectorizer.dim() {
            return Err(artifact("weights do not match vocabulary".into()));
        }
        Ok(model)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn score(x: &[(usize, f64)], w: &[f64], b: f64) -> f64 {
    b + x.iter().map(|&(i, v)| w[i] * v).sum::<f64>()
}

/// Mean cross-entropy over `rows` plus `l2/2 * |w|^2` (bias unpenalized),
/// with its gradient `(dw, db)`.
pub fn loss_and_gradient(
    xs: &[SparseVec],
    ys: &[f64],
    rows: &[usize],
    w: &[f64],
    b: f64,
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = rows.len().max(1) as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for &r in rows {
        let z = score(&xs[r], w, b);
        loss += softplus(z) - ys[r] * z;
        let err = sigmoid(z) - ys[r];
        for &(i, v) in &xs[r] {
            gw[i] += err * v;
        }
        gb += err;
    }
    loss /= n;
    gb /= n;
    for (g, wi) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    loss += 0.5 * l2 * w.iter().map(|x| x * x).sum::<f64>();
    (loss, gw, gb)
}

fn data_digest<S: AsRef<str>>(texts: &[S], labels: &[bool]) -> String {
    let pairs: Vec<(&str, bool)> = texts.iter().map(AsRef::as_ref).zip(labels.iter().copied()).collect();
    io::json_digest(&pairs)
}

/// Trains a binary model. `labels[i]` is true for `classes[1]`.
pub fn train_binary<S: AsRef<str>>(
    texts: &[S],
    labels: &[bool],
    classes: [&str; 2],
    config: &TrainConfig,
) -> Result<ClassifierModel, ClassifierError> {
    config.validate()?;
    assert_eq!(texts.len(), labels.len(), "one label per text");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos < 2 || n_neg < 2 {
        return Err(ClassifierError::DegenerateTrainingSet(format!(
            "{n_pos} {} and {n_neg} {} samples; need at least 2 of each",
            classes[1], classes[0]
        )));
    }

    let vectorizer = Vectorizer::fit(texts, &config.feature_config);
    if vectorizer.dim() == 0 {
        return Err(ClassifierError::EmptyVocabulary(config.feature_config.min_doc_freq));
    }
    let xs: Vec<SparseVec> = texts.iter().map(|t| vectorizer.transform(t.as_ref())).collect();
    let ys: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let all: Vec<usize> = (0..xs.len()).collect();
    let l2 = config.l2_penalty;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w = vec![0.0; vectorizer.dim()];
    let mut b = 0.0;
    let mut lr = config.learning_rate;
    let mut loss = loss_and_gradient(&xs, &ys, &all, &w, b, l2).0;
    let mut epoch_losses = vec![loss];
    let mut order = all.clone();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut accepted = false;
        for _ in 0..=MAX_BACKTRACKS {
            let (mut w_try, mut b_try) = (w.clone(), b);
            for batch in order.chunks(config.batch_size) {
                let (_, gw, gb) = loss_and_gradient(&xs, &ys, batch, &w_try, b_try, l2);
                for (wi, g) in w_try.iter_mut().zip(&gw) {
                    *wi -= lr * g;
                }
                b_try -= lr * gb;
            }
            let new_loss = loss_and_gradient(&xs, &ys, &all, &w_try, b_try, l2).0;
            if new_loss <= loss {
                w = w_try;
                b = b_try;
                loss = new_loss;
                accepted = true;
                break;
            }
            lr *= 0.5;
            tracing::debug!(epoch, lr, "loss increased; halving learning rate");
        }
        if !accepted {
            tracing::warn!(epoch, "no descent step found; keeping previous weights");
        }
        epoch_losses.push(loss);
    }

    Ok(ClassifierModel {
        format_version: MODEL_FORMAT_VERSION,
        classes: [classes[0].to_string(), classes[1].to_string()],
        train_config: config.clone(),
        vectorizer,
        weights: w,
        bias: b,
        epoch_losses,
        training_data_digest: data_digest(texts, labels),
    })
}

/// Class names for a construct model, e.g. `["not-sarcastic", "sarcastic"]`.
pub fn construct_classes(construct_name: &str) -> [String; 2] {
    [
        Polarity::NegativeConstruct.construct_word(construct_name),
        Polarity::PositiveConstruct.construct_word(construct_name),
    ]
}

/// Trains the construct classifier on labeled texts.
pub fn train(
    data: &[LabeledText],
    construct_name: &str,
    config: &TrainConfig,
) -> Result<ClassifierModel, ClassifierError> {
    let mut texts = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for item in data {
        let label = item.label.ok_or_else(|| ClassifierError::Unlabeled(item.id.clone()))?;
        texts.push(item.text.as_str());
        labels.push(label.is_positive());
    }
    let classes = construct_classes(construct_name);
    train_binary(&texts, &labels, [&classes[0], &classes[1]], config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> (Vec<&'static str>, Vec<bool>) {
        let texts = vec!["good", "good good", "good day", "bad", "bad bad", "bad day"];
        let labels = vec![true, true, true, false, false, false];
        (texts, labels)
    }

    fn loose() -> TrainConfig {
        TrainConfig {
            learning_rate: 1.0,
            epochs: 50,
            batch_size: 2,
            feature_config: FeatureConfig {
                min_doc_freq: 1,
                ..FeatureConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let (texts, labels) = toy();
        let m = train_binary(&texts, &labels, ["neg", "pos"], &loose()).unwrap();
        for (t, l) in texts.iter().zip(&labels) {
            assert_eq!(m.predict(t), *l, "{t}");
        }
        assert!(m.epoch_losses.windows(2).all(|p| p[1] <= p[0] + 1e-6));
    }

    #[test]
    fn training_is_deterministic() {
        let (texts, labels) = toy();
        let a = train_binary(&texts, &labels, ["neg", "pos"], &loose()).unwrap();
        let b = train_binary(&texts, &labels, ["neg", "pos"], &loose()).unwrap();
        assert_eq!(a.weights_digest(), b.weights_digest());
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_is_degenerate() {
        let err = train_binary(&["a", "b", "c"], &[true, true, true], ["n", "p"], &loose()).unwrap_err();
        assert!(err.to_string().starts_with("degenerate training set"));
    }

    #[test]
    fn unseen_text_scores_the_bias() {
        let (texts, labels) = toy();
        let m = train_binary(&texts, &labels, ["neg", "pos"], &loose()).unwrap();
        assert_eq!(m.predict_proba("zzz"), sigmoid(m.bias));
    }

    #[test]
    fn tie_goes_to_negative_class() {
        let (texts, labels) = toy();
        let mut m = train_binary(&texts, &labels, ["neg", "pos"], &loose()).unwrap();
        m.bias = 0.0;
        assert_eq!(m.predict_proba("unseen words"), 0.5);
        assert!(!m.predict("unseen words"));
        assert_eq!(m.predict_polarity("unseen words"), Polarity::NegativeConstruct);
    }

    #[test]
    fn artifact_round_trips() {
        let (texts, labels) = toy();
        let m = train_binary(&texts, &labels, ["neg", "pos"], &loose()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(ClassifierModel::load(&path).unwrap(), m);
    }

    proptest! {
        #[test]
        fn probabilities_are_complementary(z in -40.0f64..40.0) {
            let p = sigmoid(z);
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert_eq!(p + (1.0 - p), 1.0);
            prop_assert!((sigmoid(-z) - (1.0 - p)).abs() < 1e-12);
        }

        #[test]
        fn sigmoid_is_monotone(a in -30.0f64..30.0, d in 0.0f64..10.0) {
            prop_assert!(sigmoid(a + d) >= sigmoid(a));
        }
    }
}
