//! Real-vs-synthetic discrimination: building the discriminator, measuring
//! believability and culling synthetic samples that look synthetic.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{train_binary, ClassifierError, ClassifierModel, TextClassifier, TrainConfig};
use crate::corpus::{CorpusSplit, LabeledText};

pub const SYNTHETIC_CLASS: &str = "synthetic";
pub const REAL_CLASS: &str = "real";

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("discriminator dataset has no real items")]
    NoRealItems,
    #[error("discriminator dataset has no first-decode synthetic items")]
    NoFirstDecodes,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("filter removed entire dataset")]
    EverythingCulled,
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("discriminator classes are {0:?}, expected [synthetic, real]")]
    WrongClasses([String; 2]),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Real,
    SyntheticFirstDecode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorItem {
    pub id: String,
    pub text: String,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorDataset {
    pub items: Vec<DiscriminatorItem>,
    pub source_run: String,
}

impl DiscriminatorDataset {
    pub fn count(&self, origin: Origin) -> usize {
        self.items.iter().filter(|i| i.origin == origin).count()
    }

    /// Seeded per-origin holdout: returns `(train, test)`.
    pub fn holdout(&self, test_fraction: f64, seed: u64) -> (Self, Self) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut test_idx = BTreeSet::new();
        for origin in [Origin::Real, Origin::SyntheticFirstDecode] {
            let mut idx: Vec<usize> = (0..self.items.len())
                .filter(|&i| self.items[i].origin == origin)
                .collect();
            idx.shuffle(&mut rng);
            let k = (idx.len() as f64 * test_fraction).round() as usize;
            test_idx.extend(idx.into_iter().take(k));
        }
        let pick = |want_test: bool| Self {
            items: self
                .items
                .iter()
                .enumerate()
                .filter(|(i, _)| test_idx.contains(i) == want_test)
                .map(|(_, item)| item.clone())
                .collect(),
            source_run: self.source_run.clone(),
        };
        (pick(false), pick(true))
    }
}

fn subsample<T: Clone>(items: Vec<T>, k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    if items.len() <= k {
        return items;
    }
    let mut keep: Vec<usize> = rand::seq::index::sample(rng, items.len(), k).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| items[i].clone()).collect()
}

/// Real class: the train split texts. Synthetic class: first decodes only.
/// The larger class is subsampled (seeded) to the size of the smaller.
pub fn build_discriminator_dataset(
    split: &CorpusSplit,
    synthetic: &[LabeledText],
    seed: u64,
    source_run: &str,
) -> Result<DiscriminatorDataset, FilterError> {
    let real: Vec<DiscriminatorItem> = split
        .train_texts
        .iter()
        .map(|t| DiscriminatorItem {
            id: t.id.clone(),
            text: t.text.clone(),
            origin: Origin::Real,
        })
        .collect();
    let synth: Vec<DiscriminatorItem> = synthetic
        .iter()
        .filter(|s| s.provenance.as_ref().is_some_and(|p| p.decode_index == 1))
        .map(|s| DiscriminatorItem {
            id: s.id.clone(),
            text: s.text.clone(),
            origin: Origin::SyntheticFirstDecode,
        })
        .collect();
    if real.is_empty() {
        return Err(FilterError::NoRealItems);
    }
    if synth.is_empty() {
        return Err(FilterError::NoFirstDecodes);
    }
    let k = real.len().min(synth.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = subsample(real, k, &mut rng);
    items.extend(subsample(synth, k, &mut rng));
    Ok(DiscriminatorDataset {
        items,
        source_run: source_run.to_string(),
    })
}

/// Trained discriminator plus the ids it was trained on, so believability
/// can exclude them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub model: ClassifierModel,
    pub training_ids: BTreeSet<String>,
    pub source_run: String,
}

impl Discriminator {
    pub fn from_model(
        model: ClassifierModel,
        training_ids: BTreeSet<String>,
        source_run: &str,
    ) -> Result<Self, FilterError> {
        if model.classes != [SYNTHETIC_CLASS.to_string(), REAL_CLASS.to_string()] {
            return Err(FilterError::WrongClasses(model.classes.clone()));
        }
        Ok(Self {
            model,
            training_ids,
            source_run: source_run.to_string(),
        })
    }

    pub fn proba_real(&self, text: &str) -> f64 {
        self.model.predict_proba(text)
    }

    pub fn digest(&self) -> String {
        self.model.weights_digest()
    }

    /// Fraction of items whose origin is predicted correctly at 0.5.
    pub fn accuracy(&self, items: &[DiscriminatorItem]) -> f64 {
        if items.is_empty() {
            return 0.0;
        }
        let correct = items
            .iter()
            .filter(|i| self.model.predict(&i.text) == (i.origin == Origin::Real))
            .count();
        correct as f64 / items.len() as f64
    }
}

pub fn train_discriminator(
    dataset: &DiscriminatorDataset,
    config: &TrainConfig,
) -> Result<Discriminator, FilterError> {
    let texts: Vec<&str> = dataset.items.iter().map(|i| i.text.as_str()).collect();
    let labels: Vec<bool> = dataset.items.iter().map(|i| i.origin == Origin::Real).collect();
    let model = train_binary(&texts, &labels, [SYNTHETIC_CLASS, REAL_CLASS], config)?;
    let ids = dataset.items.iter().map(|i| i.id.clone()).collect();
    Discriminator::from_model(model, ids, &dataset.source_run)
}

/// `proba_real` per text, in input order. Scored on worker threads.
pub fn score_texts<S: AsRef<str> + Sync>(texts: &[S], discriminator: &Discriminator) -> Vec<f64> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    let chunk = texts.len().div_ceil(workers).max(64);
    std::thread::scope(|s| {
        let handles: Vec<_> = texts
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|t| discriminator.proba_real(t.as_ref())).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("scoring thread")).collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BelievabilityReport {
    pub dataset_name: String,
    pub n_items: usize,
    pub n_predicted_real: usize,
    pub fraction_predicted_real: f64,
    pub threshold: f64,
    pub discriminator_digest: String,
    /// Items skipped because the discriminator was trained on them.
    pub excluded_overlap: usize,
}

fn check_threshold(t: f64) -> Result<(), FilterError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(FilterError::BadThreshold(t))
    }
}

/// Fraction of `dataset` with `proba_real > threshold`, leaving out items
/// the discriminator was trained on.
pub fn believability(
    dataset_name: &str,
    dataset: &[LabeledText],
    discriminator: &Discriminator,
    threshold: f64,
) -> Result<BelievabilityReport, FilterError> {
    check_threshold(threshold)?;
    let eval: Vec<&str> = dataset
        .iter()
        .filter(|t| !discriminator.training_ids.contains(&t.id))
        .map(|t| t.text.as_str())
        .collect();
    let excluded = dataset.len() - eval.len();
    if excluded > 0 {
        tracing::info!(dataset_name, excluded, "excluded discriminator training items from believability");
    }
    if eval.is_empty() {
        return Err(FilterError::EmptyDataset);
    }
    let probs = score_texts(&eval, discriminator);
    Ok(believability_from_scores(
        dataset_name,
        &probs,
        threshold,
        &discriminator.digest(),
        excluded,
    ))
}

pub fn believability_from_scores(
    dataset_name: &str,
    proba_real: &[f64],
    threshold: f64,
    discriminator_digest: &str,
    excluded_overlap: usize,
) -> BelievabilityReport {
    let n_real = proba_real.iter().filter(|&&p| p > threshold).count();
    BelievabilityReport {
        dataset_name: dataset_name.to_string(),
        n_items: proba_real.len(),
        n_predicted_real: n_real,
        fraction_predicted_real: if proba_real.is_empty() {
            0.0
        } else {
            n_real as f64 / proba_real.len() as f64
        },
        threshold,
        discriminator_digest: discriminator_digest.to_string(),
        excluded_overlap,
    }
}

/// One line of the per-sample score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub proba_real: f64,
    pub kept: bool,
    pub threshold: f64,
    pub discriminator_digest: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptCulled {
    pub kept: usize,
    pub culled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub cull_threshold: f64,
    pub total: KeptCulled,
    pub per_strategy: BTreeMap<String, KeptCulled>,
    pub per_polarity: BTreeMap<String, KeptCulled>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<LabeledText>,
    pub scores: Vec<SampleScore>,
    pub report: FilterReport,
}

/// Keep rule: `1 - proba_real <= cull_threshold`.
pub fn keeps(proba_real: f64, cull_threshold: f64) -> bool {
    1.0 - proba_real <= cull_threshold
}

/// Keeps samples with `proba(synthetic) <= cull_threshold`, preserving order.
pub fn filter_synthetic(
    dataset: &[LabeledText],
    discriminator: &Discriminator,
    cull_threshold: f64,
) -> Result<FilterOutcome, FilterError> {
    check_threshold(cull_threshold)?;
    if dataset.is_empty() {
        return Err(FilterError::EmptyDataset);
    }
    let texts: Vec<&str> = dataset.iter().map(|t| t.text.as_str()).collect();
    let probs = score_texts(&texts, discriminator);
    apply_threshold(dataset, &probs, cull_threshold, &discriminator.digest())
}

/// Re-applies a threshold to persisted probabilities.
pub fn apply_threshold(
    dataset: &[LabeledText],
    proba_real: &[f64],
    cull_threshold: f64,
    discriminator_digest: &str,
) -> Result<FilterOutcome, FilterError> {
    check_threshold(cull_threshold)?;
    assert_eq!(dataset.len(), proba_real.len(), "one score per sample");
    let mut kept = Vec::new();
    let mut scores = Vec::with_capacity(dataset.len());
    let mut report = FilterReport {
        cull_threshold,
        total: KeptCulled::default(),
        per_strategy: BTreeMap::new(),
        per_polarity: BTreeMap::new(),
    };
    for (item, &p) in dataset.iter().zip(proba_real) {
        let keep = keeps(p, cull_threshold);
        let strategy = item
            .provenance
            .as_ref()
            .map_or("unknown".to_string(), |pv| pv.strategy.cli_name().to_string());
        let polarity = item.label.map_or("unlabeled".to_string(), |l| format!("{l:?}"));
        for slot in [
            &mut report.total,
            report.per_strategy.entry(strategy).or_default(),
            report.per_polarity.entry(polarity).or_default(),
        ] {
            if keep {
                slot.kept += 1;
            } else {
                slot.culled += 1;
            }
        }
        scores.push(SampleScore {
            id: item.id.clone(),
            proba_real: p,
            kept: keep,
            threshold: cull_threshold,
            discriminator_digest: discriminator_digest.to_string(),
        });
        if keep {
            kept.push(item.clone());
        }
    }
    if kept.is_empty() {
        return Err(FilterError::EverythingCulled);
    }
    Ok(FilterOutcome { kept, scores, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cleaning::GenerationProvenance;
    use crate::corpus::{Polarity, Source};
    use crate::prompting::Strategy;
    use proptest::prelude::*;

    fn synth(id: &str, text: &str, decode: usize, pol: Polarity) -> LabeledText {
        LabeledText {
            id: id.into(),
            text: text.into(),
            label: Some(pol),
            source: Source::Synthetic,
            provenance: Some(GenerationProvenance {
                strategy: Strategy::Grounding,
                polarity: pol,
                grounding_example_id: None,
                taxonomy_entry_index: None,
                decode_index: decode,
                prompt_id: "p".into(),
                run_id: "r".into(),
            }),
        }
    }

    fn split_of(n: usize) -> CorpusSplit {
        CorpusSplit {
            train_texts: (0..n)
                .map(|i| LabeledText::real(format!("real-{i}"), format!("real text {i}"), None))
                .collect(),
            test: vec![],
            split_seed: 0,
            train_fraction: 0.8,
            stratified: true,
        }
    }

    #[test]
    fn first_decodes_only_and_balanced() {
        let split = split_of(100);
        let mut synthetic = Vec::new();
        for p in 0..80 {
            for d in 1..=10 {
                synthetic.push(synth(&format!("g{p}-{d}"), &format!("s {p} {d}"), d, Polarity::PositiveConstruct));
            }
        }
        let ds = build_discriminator_dataset(&split, &synthetic, 7, "run").unwrap();
        assert_eq!(ds.count(Origin::SyntheticFirstDecode), 80);
        assert_eq!(ds.count(Origin::Real), 80);
        assert!(ds
            .items
            .iter()
            .filter(|i| i.origin == Origin::SyntheticFirstDecode)
            .all(|i| i.id.ends_with("-1")));
        assert_eq!(ds, build_discriminator_dataset(&split, &synthetic, 7, "run").unwrap());
    }

    #[test]
    fn no_first_decodes_is_an_error() {
        let synthetic = vec![synth("a", "x", 2, Polarity::PositiveConstruct)];
        assert!(matches!(
            build_discriminator_dataset(&split_of(5), &synthetic, 0, "r"),
            Err(FilterError::NoFirstDecodes)
        ));
    }

    #[test]
    fn indistinguishable_classes_score_near_chance() {
        let texts: Vec<String> = (0..200).map(|i| format!("word{} word{} common", i % 17, i % 5)).collect();
        let mut items = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            items.push(DiscriminatorItem { id: format!("r{i}"), text: t.clone(), origin: Origin::Real });
            items.push(DiscriminatorItem { id: format!("s{i}"), text: t.clone(), origin: Origin::SyntheticFirstDecode });
        }
        let ds = DiscriminatorDataset { items, source_run: "r".into() };
        let (train, test) = ds.holdout(0.25, 1);
        let d = train_discriminator(&train, &TrainConfig::default()).unwrap();
        let acc = d.accuracy(&test.items);
        assert!((acc - 0.5).abs() <= 0.1, "accuracy {acc}");
    }

    #[test]
    fn believability_boundaries_and_exact_fraction() {
        let r = believability_from_scores("x", &[1.0, 1.0, 1.0], 0.5, "d", 0);
        assert_eq!(r.fraction_predicted_real, 1.0);
        let r = believability_from_scores("x", &[1.0, 0.99, 0.2], 1.0, "d", 0);
        assert_eq!(r.fraction_predicted_real, 0.0);
        let r = believability_from_scores("x", &[0.9, 0.6, 0.2, 0.5], 0.5, "d", 0);
        assert_eq!(r.n_predicted_real, 2);
        assert_eq!(r.fraction_predicted_real, 0.5);
    }

    fn scored(n: usize) -> Vec<LabeledText> {
        (0..n)
            .map(|i| synth(&format!("s{i}"), &format!("t{i}"), 1 + i % 3, if i % 2 == 0 { Polarity::PositiveConstruct } else { Polarity::NegativeConstruct }))
            .collect()
    }

    #[test]
    fn threshold_boundaries() {
        let data = scored(4);
        let probs = [0.1, 1.0, 0.5, 0.7];
        let all = apply_threshold(&data, &probs, 1.0, "d").unwrap();
        assert_eq!(all.kept, data);
        let strict = apply_threshold(&data, &probs, 0.0, "d").unwrap();
        assert_eq!(strict.kept, vec![data[1].clone()]);
        assert_eq!(strict.report.total, KeptCulled { kept: 1, culled: 3 });
        assert_eq!(strict.report.per_polarity.values().map(|c| c.kept + c.culled).sum::<usize>(), 4);
        assert!(matches!(
            apply_threshold(&data, &[0.1, 0.2, 0.3, 0.4], 0.0, "d"),
            Err(FilterError::EverythingCulled)
        ));
    }

    proptest! {
        #[test]
        fn kept_set_grows_with_threshold(
            probs in prop::collection::vec(0.0f64..=1.0, 1..60),
            t1 in 0.0f64..=1.0,
            t2 in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let kept_lo: Vec<bool> = probs.iter().map(|&p| keeps(p, lo)).collect();
            let kept_hi: Vec<bool> = probs.iter().map(|&p| keeps(p, hi)).collect();
            for (a, b) in kept_lo.iter().zip(&kept_hi) {
                prop_assert!(!a || *b);
            }
        }
    }
}
