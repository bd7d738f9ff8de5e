//! Metrics and the strategy comparison report.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{train, ClassifierError, ClassifierModel, TrainConfig};
use crate::corpus::{LabeledText, Polarity};
use crate::filtering::{believability, Discriminator, FilterError};
use crate::generation::{zero_shot_annotate, Completer, ZeroShotError};
use crate::prompting::Strategy;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{predictions} predictions for {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("no items to score")]
    Empty,
    #[error("truths contain a single class")]
    SingleClassTruths,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("test item {0} has no label")]
    UnlabeledTest(String),
    #[error("zero-shot annotation: {0}")]
    ZeroShot(String),
}

fn check_lengths(predictions: &[Polarity], truths: &[Polarity]) -> Result<(), MetricError> {
    if predictions.len() != truths.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if truths.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

pub fn accuracy(predictions: &[Polarity], truths: &[Polarity]) -> Result<f64, MetricError> {
    check_lengths(predictions, truths)?;
    let correct = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truths.len() as f64)
}

/// F1 for one class; 0 when the class is never predicted nor present.
fn class_f1(predictions: &[Polarity], truths: &[Polarity], class: Polarity) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &t) in predictions.iter().zip(truths) {
        match (p == class, t == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Unweighted mean of the two per-class F1 scores.
pub fn macro_f1(predictions: &[Polarity], truths: &[Polarity]) -> Result<f64, MetricError> {
    check_lengths(predictions, truths)?;
    let has = |c: Polarity| truths.contains(&c);
    if !(has(Polarity::PositiveConstruct) && has(Polarity::NegativeConstruct)) {
        return Err(MetricError::SingleClassTruths);
    }
    let pos = class_f1(predictions, truths, Polarity::PositiveConstruct);
    let neg = class_f1(predictions, truths, Polarity::NegativeConstruct);
    Ok((pos + neg) / 2.0)
}

/// Report rows, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Simple,
    Grounding,
    GroundingRewrite,
    Taxonomy,
    Filtering,
    Groundtruth,
    AllNegative,
    ZeroShot,
}

impl RowKind {
    pub const ALL: [RowKind; 8] = [
        RowKind::Simple,
        RowKind::Grounding,
        RowKind::GroundingRewrite,
        RowKind::Taxonomy,
        RowKind::Filtering,
        RowKind::Groundtruth,
        RowKind::AllNegative,
        RowKind::ZeroShot,
    ];

    pub fn for_strategy(strategy: Strategy) -> Self {
        match strategy {
            Strategy::Simple => RowKind::Simple,
            Strategy::Grounding => RowKind::Grounding,
            Strategy::GroundingRewrite => RowKind::GroundingRewrite,
            Strategy::Taxonomy => RowKind::Taxonomy,
        }
    }

    pub fn display_name(self, construct_name: &str) -> String {
        match self {
            RowKind::Simple => "Simple".into(),
            RowKind::Grounding => "Grounding".into(),
            RowKind::GroundingRewrite => "Grounding (rewrite)".into(),
            RowKind::Taxonomy => "Grounding + Taxonomy".into(),
            RowKind::Filtering => "Grounding + Filtering".into(),
            RowKind::Groundtruth => "Groundtruth annotations".into(),
            RowKind::AllNegative => {
                format!("All {}", Polarity::NegativeConstruct.construct_word(construct_name))
            }
            RowKind::ZeroShot => "Zero-shot LLM".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: RowKind,
    pub name: String,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub believability: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    /// Test items without a usable prediction (zero-shot only).
    pub excluded: usize,
    /// Believability on data selected by the same discriminator.
    pub circularity_warning: bool,
    pub model_digest: Option<String>,
    pub error: Option<String>,
}

impl ReportRow {
    pub fn failed(kind: RowKind, construct_name: &str, error: impl ToString) -> Self {
        Self {
            kind,
            name: kind.display_name(construct_name),
            accuracy: None,
            macro_f1: None,
            believability: None,
            n_train: 0,
            n_test: 0,
            excluded: 0,
            circularity_warning: false,
            model_digest: None,
            error: Some(error.to_string()),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.error.is_some()
    }
}

fn test_truths(test: &[LabeledText]) -> Result<Vec<Polarity>, EvalError> {
    test.iter()
        .map(|t| t.label.ok_or_else(|| EvalError::UnlabeledTest(t.id.clone())))
        .collect()
}

/// Scores a trained model on the labeled test set.
pub fn score_model(model: &ClassifierModel, test: &[LabeledText]) -> Result<(f64, f64), EvalError> {
    let truths = test_truths(test)?;
    let preds: Vec<Polarity> = test.iter().map(|t| model.predict_polarity(&t.text)).collect();
    Ok((accuracy(&preds, &truths)?, macro_f1(&preds, &truths)?))
}

/// Options shared by every trained row.
#[derive(Debug, Clone)]
pub struct RowContext<'a> {
    pub construct_name: &'a str,
    pub train_config: &'a TrainConfig,
    pub discriminator: Option<&'a Discriminator>,
    pub believability_threshold: f64,
}

/// Trains a fresh classifier on `train_data` and evaluates it on `test`.
/// Believability is measured on `believability_data` when a discriminator
/// is available.
pub fn evaluate_strategy(
    kind: RowKind,
    train_data: &[LabeledText],
    test: &[LabeledText],
    believability_data: &[LabeledText],
    ctx: &RowContext<'_>,
) -> Result<(ReportRow, ClassifierModel), EvalError> {
    let model = train(train_data, ctx.construct_name, ctx.train_config)?;
    let (acc, f1) = score_model(&model, test)?;
    let believability = match ctx.discriminator {
        Some(d) => Some(
            believability(
                &kind.display_name(ctx.construct_name),
                believability_data,
                d,
                ctx.believability_threshold,
            )?
            .fraction_predicted_real,
        ),
        None => None,
    };
    let row = ReportRow {
        kind,
        name: kind.display_name(ctx.construct_name),
        accuracy: Some(acc),
        macro_f1: Some(f1),
        believability,
        n_train: train_data.len(),
        n_test: test.len(),
        excluded: 0,
        circularity_warning: kind == RowKind::Filtering && believability.is_some(),
        model_digest: Some(model.weights_digest()),
        error: None,
    };
    Ok((row, model))
}

/// Predicts the negative class for every test item.
pub fn baseline_all_negative(test: &[LabeledText], construct_name: &str) -> Result<ReportRow, EvalError> {
    let truths = test_truths(test)?;
    let preds = vec![Polarity::NegativeConstruct; truths.len()];
    Ok(ReportRow {
        kind: RowKind::AllNegative,
        name: RowKind::AllNegative.display_name(construct_name),
        accuracy: Some(accuracy(&preds, &truths)?),
        macro_f1: Some(macro_f1(&preds, &truths)?),
        believability: None,
        n_train: 0,
        n_test: truths.len(),
        excluded: 0,
        circularity_warning: false,
        model_digest: None,
        error: None,
    })
}

/// Labels the test set with direct yes/no questions. Items with an
/// ambiguous answer after one retry are excluded from the metrics.
pub fn baseline_zero_shot(
    test: &[LabeledText],
    completer: &Completer,
    construct_name: &str,
    parallelism: usize,
) -> Result<ReportRow, EvalError> {
    let truths = test_truths(test)?;
    let next = AtomicUsize::new(0);
    let answers: Mutex<Vec<Option<Result<Polarity, ZeroShotError>>>> = Mutex::new(vec![None; test.len()]);
    std::thread::scope(|s| {
        for _ in 0..parallelism.clamp(1, test.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= test.len() {
                    break;
                }
                let r = zero_shot_annotate(&test[i].text, completer, construct_name);
                answers.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let mut preds = Vec::new();
    let mut kept_truths = Vec::new();
    let mut excluded = 0;
    for (answer, truth) in answers.into_inner().unwrap().into_iter().zip(truths) {
        match answer.expect("every item answered") {
            Ok(p) => {
                preds.push(p);
                kept_truths.push(truth);
            }
            Err(ZeroShotError::Ambiguous(_)) | Err(ZeroShotError::EmptyText) => excluded += 1,
            Err(ZeroShotError::Generation(e)) => return Err(EvalError::ZeroShot(e.to_string())),
        }
    }
    if excluded > 0 {
        tracing::warn!(excluded, "zero-shot answers could not be parsed");
    }
    Ok(ReportRow {
        kind: RowKind::ZeroShot,
        name: RowKind::ZeroShot.display_name(construct_name),
        accuracy: Some(accuracy(&preds, &kept_truths)?),
        macro_f1: Some(macro_f1(&preds, &kept_truths)?),
        believability: None,
        n_train: 0,
        n_test: test.len(),
        excluded,
        circularity_warning: false,
        model_digest: None,
        error: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub run_id: String,
    pub config_digest: String,
    pub construct_name: String,
    pub rows: Vec<ReportRow>,
}

impl EvaluationReport {
    pub fn new(run_id: &str, config_digest: &str, construct_name: &str, mut rows: Vec<ReportRow>) -> Self {
        rows.sort_by_key(|r| r.kind);
        Self {
            run_id: run_id.to_string(),
            config_digest: config_digest.to_string(),
            construct_name: construct_name.to_string(),
            rows,
        }
    }

    pub fn failed_rows(&self) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| r.is_failed()).collect()
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        crate::io::to_jsonl(&self.rows).expect("report rows serialize")
    }

    /// Aligned plain-text table.
    pub fn render_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let header = ["Method", "Accuracy", "Macro-F1", "Believability", "n_train", "n_test", "excluded"];
        let mut cells: Vec<[String; 7]> = vec![header.map(str::to_string)];
        for r in &self.rows {
            let mut name = r.name.clone();
            if r.circularity_warning {
                name.push_str(" *");
            }
            let metric = |v| if r.is_failed() { "FAILED".to_string() } else { fmt(v) };
            cells.push([
                name,
                metric(r.accuracy),
                metric(r.macro_f1),
                fmt(r.believability),
                r.n_train.to_string(),
                r.n_test.to_string(),
                r.excluded.to_string(),
            ]);
        }
        let widths: Vec<usize> = (0..7)
            .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let mut line = format!("{:<w$}", row[0], w = widths[0]);
            for c in 1..7 {
                let _ = write!(line, "  {:>w$}", row[c], w = widths[c]);
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        if self.rows.iter().any(|r| r.circularity_warning) {
            out.push_str("* believability measured by the discriminator that selected the data\n");
        }
        for r in self.failed_rows() {
            let _ = writeln!(out, "{} failed: {}", r.name, r.error.as_deref().unwrap_or(""));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::{GenerationParams, MockBackend};
    use proptest::prelude::*;
    use Polarity::{NegativeConstruct as N, PositiveConstruct as P};

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[P, N, P], &[P, N, P]).unwrap(), 1.0);
        assert_eq!(accuracy(&[P, P, N, N], &[P, N, N, P]).unwrap(), 0.5);
        assert!(matches!(accuracy(&[P], &[P, N]), Err(MetricError::LengthMismatch { .. })));
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[P, N], &[P, N]).unwrap(), 1.0);
        assert!(matches!(macro_f1(&[P, N], &[N, N]), Err(MetricError::SingleClassTruths)));
        let truths = [P, N, P, N];
        let preds = [N; 4];
        assert_eq!(accuracy(&preds, &truths).unwrap(), 0.5);
        assert_eq!(macro_f1(&preds, &truths).unwrap(), 1.0 / 3.0);
    }

    fn labeled(labels: &[Polarity]) -> Vec<LabeledText> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| LabeledText::real(format!("t{i}"), format!("text number {i}"), Some(l)))
            .collect()
    }

    #[test]
    fn all_negative_on_balanced_set() {
        let row = baseline_all_negative(&labeled(&[P, N, P, N]), "sarcastic").unwrap();
        assert_eq!(row.accuracy, Some(0.5));
        assert_eq!(row.macro_f1, Some(1.0 / 3.0));
        assert_eq!(row.name, "All not-sarcastic");
    }

    #[test]
    fn zero_shot_always_yes_on_balanced_set() {
        let c = Completer::new(Box::new(MockBackend::fixed("yes")), GenerationParams::default());
        let row = baseline_zero_shot(&labeled(&[P, N, P, N, P, N]), &c, "sarcastic", 3).unwrap();
        assert_eq!(row.accuracy, Some(0.5));
        assert_eq!(row.excluded, 0);
        let c = Completer::new(Box::new(MockBackend::fixed("unsure")), GenerationParams::default());
        let err = baseline_zero_shot(&labeled(&[P, N]), &c, "sarcastic", 1).unwrap_err();
        assert!(matches!(err, EvalError::Metric(MetricError::Empty)));
    }

    #[test]
    fn report_rows_follow_declared_order() {
        let rows = vec![
            ReportRow::failed(RowKind::ZeroShot, "sarcastic", "x"),
            baseline_all_negative(&labeled(&[P, N]), "sarcastic").unwrap(),
            ReportRow::failed(RowKind::Simple, "sarcastic", "y"),
        ];
        let report = EvaluationReport::new("r", "d", "sarcastic", rows);
        let kinds: Vec<_> = report.rows.iter().map(|r| r.kind).collect();
        assert_eq!(kinds, [RowKind::Simple, RowKind::AllNegative, RowKind::ZeroShot]);
        assert_eq!(report.failed_rows().len(), 2);
        let table = report.render_table();
        assert!(table.lines().next().unwrap().starts_with("Method"));
        assert!(table.contains("All not-sarcastic"));
    }

    fn flip(v: &[Polarity]) -> Vec<Polarity> {
        v.iter().map(|p| p.flipped()).collect()
    }

    proptest! {
        #[test]
        fn macro_f1_is_symmetric_under_relabeling(
            pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 2..30)
        ) {
            let to = |b: bool| if b { P } else { N };
            let preds: Vec<_> = pairs.iter().map(|p| to(p.0)).collect();
            let truths: Vec<_> = pairs.iter().map(|p| to(p.1)).collect();
            if let Ok(f) = macro_f1(&preds, &truths) {
                prop_assert_eq!(f, macro_f1(&flip(&preds), &flip(&truths)).unwrap());
                prop_assert!((0.0..=1.0).contains(&f));
            }
        }
    }
}
