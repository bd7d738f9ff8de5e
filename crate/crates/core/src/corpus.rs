//! Labeled text corpora: ingest from CSV/JSONL, canonical JSONL persistence,
//! and the stratified train/test split whose train half has its labels erased.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cleaning::GenerationProvenance;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus file is empty")]
    Empty,
    #[error("empty text at line {0}")]
    EmptyText(usize),
    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("invalid record {id:?}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("train_fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("corpus needs at least 2 records to split, got {0}")]
    TooSmall(usize),
}

/// Binary label of the target construct. `PositiveConstruct` is e.g.
/// "sarcastic", `NegativeConstruct` its negation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    NegativeConstruct,
    PositiveConstruct,
}

impl Polarity {
    pub const BOTH: [Polarity; 2] = [Polarity::PositiveConstruct, Polarity::NegativeConstruct];

    pub fn flipped(self) -> Self {
        match self {
            Polarity::PositiveConstruct => Polarity::NegativeConstruct,
            Polarity::NegativeConstruct => Polarity::PositiveConstruct,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Polarity::PositiveConstruct
    }

    /// The word inserted into prompts: `sarcastic` or `not-sarcastic`.
    pub fn construct_word(self, construct_name: &str) -> String {
        match self {
            Polarity::PositiveConstruct => construct_name.to_string(),
            Polarity::NegativeConstruct => format!("not-{construct_name}"),
        }
    }

    /// Maps the label spellings found in the wild onto a polarity.
    /// Returns `Ok(None)` for an explicitly empty label.
    pub fn parse_label(raw: &str) -> Result<Option<Polarity>, String> {
        let norm = raw.trim().to_lowercase();
        let positive = [
            "1", "true", "yes", "pos", "positive", "positive_construct", "sarcastic",
        ];
        let negative = [
            "0", "false", "no", "neg", "negative", "negative_construct",
        ];
        if norm.is_empty() || norm == "null" {
            return Ok(None);
        }
        if positive.contains(&norm.as_str()) {
            return Ok(Some(Polarity::PositiveConstruct));
        }
        if negative.contains(&norm.as_str()) {
            return Ok(Some(Polarity::NegativeConstruct));
        }
        for prefix in ["not_", "not-", "not ", "non_", "non-", "non "] {
            if let Some(rest) = norm.strip_prefix(prefix) {
                if !rest.is_empty() {
                    return Ok(Some(Polarity::NegativeConstruct));
                }
            }
        }
        // Any other bare word is taken as the construct name itself.
        if norm.chars().all(|c| c.is_alphabetic() || c == '-' || c == '_') {
            return Ok(Some(Polarity::PositiveConstruct));
        }
        Err(format!("unrecognized label {raw:?}"))
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarity::PositiveConstruct => f.write_str("positive_construct"),
            Polarity::NegativeConstruct => f.write_str("negative_construct"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl CorpusFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(CorpusFormat::Csv),
            "jsonl" | "ndjson" => Some(CorpusFormat::Jsonl),
            _ => None,
        }
    }
}

/// One text sample. Field order is the canonical JSONL key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledText {
    pub id: String,
    pub text: String,
    pub label: Option<Polarity>,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<GenerationProvenance>,
}

impl LabeledText {
    pub fn real(id: impl Into<String>, text: impl Into<String>, label: Option<Polarity>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
            source: Source::Real,
            provenance: None,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: &str| CorpusError::Invalid {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        if self.text.trim().is_empty() {
            return Err(invalid("empty text"));
        }
        match (self.source, &self.provenance) {
            (Source::Real, Some(_)) => Err(invalid("real record carries generation provenance")),
            _ => Ok(()),
        }
    }
}

/// Trims and collapses internal whitespace runs to single spaces.
pub fn normalize_text(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Reads a raw real-world corpus. Every record comes back with
/// `source = real`; missing ids are assigned from the line number.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<LabeledText>, CorpusError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if content.trim().is_empty() {
        return Err(CorpusError::Empty);
    }
    let raw = match format {
        CorpusFormat::Csv => parse_csv(&content)?,
        CorpusFormat::Jsonl => parse_jsonl(&content)?,
    };
    if raw.is_empty() {
        return Err(CorpusError::Empty);
    }
    finish_records(raw)
}

struct RawRecord {
    line: usize,
    id: Option<String>,
    text: String,
    label: Option<Polarity>,
}

fn parse_csv(content: &str) -> Result<Vec<RawRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(content.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Malformed {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let find = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.contains(&h.trim().to_lowercase().as_str()))
    };
    let text_col = find(&["text", "tweet"]).ok_or_else(|| CorpusError::Malformed {
        line: 1,
        reason: "header has no `text` column".to_string(),
    })?;
    let label_col = find(&["label", "sarcastic"]);
    let id_col = find(&["id"]);

    let mut out = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| CorpusError::Malformed {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let text = record.get(text_col).ok_or_else(|| CorpusError::Malformed {
            line,
            reason: "missing text field".to_string(),
        })?;
        let label = match label_col.and_then(|c| record.get(c)) {
            Some(raw) => Polarity::parse_label(raw)
                .map_err(|reason| CorpusError::Malformed { line, reason })?,
            None => None,
        };
        let id = id_col
            .and_then(|c| record.get(c))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        out.push(RawRecord {
            line,
            id,
            text: text.to_string(),
            label,
        });
    }
    Ok(out)
}

fn parse_jsonl(content: &str) -> Result<Vec<RawRecord>, CorpusError> {
    let mut out = Vec::new();
    for (idx, raw_line) in content.lines().enumerate() {
        let line = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::Malformed { line, reason };
        let value: Value = serde_json::from_str(raw_line).map_err(|e| malformed(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("record is not a JSON object".to_string()))?;
        let text = match obj.get("text") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(malformed("`text` is not a string".to_string())),
            None => return Err(malformed("missing `text` field".to_string())),
        };
        let label = match obj.get("label") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Polarity::parse_label(s).map_err(malformed)?,
            Some(Value::Bool(b)) => Some(if *b {
                Polarity::PositiveConstruct
            } else {
                Polarity::NegativeConstruct
            }),
            Some(Value::Number(n)) => Polarity::parse_label(&n.to_string()).map_err(malformed)?,
            Some(other) => return Err(malformed(format!("unsupported label {other}"))),
        };
        let id = match obj.get("id") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
            Some(Value::Number(n)) => Some(n.to_string()),
            Some(other) => return Err(malformed(format!("unsupported id {other}"))),
        };
        out.push(RawRecord {
            line,
            id,
            text,
            label,
        });
    }
    Ok(out)
}

fn finish_records(raw: Vec<RawRecord>) -> Result<Vec<LabeledText>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for rec in raw {
        let text = normalize_text(&rec.text);
        if text.is_empty() {
            return Err(CorpusError::EmptyText(rec.line));
        }
        let id = rec.id.unwrap_or_else(|| format!("real-{:06}", rec.line));
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { id, line: rec.line });
        }
        out.push(LabeledText::real(id, text, rec.label));
    }
    Ok(out)
}

/// Writes records as canonical JSONL (fixed key order, one record per line).
pub fn write_corpus(path: &Path, records: &[LabeledText]) -> Result<(), CorpusError> {
    crate::io::write_jsonl(path, records).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads canonical JSONL written by [`write_corpus`], checking record invariants.
pub fn read_corpus(path: &Path) -> Result<Vec<LabeledText>, CorpusError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: LabeledText =
            serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        record.validate()?;
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId {
                id: record.id,
                line: idx + 1,
            });
        }
        out.push(record);
    }
    Ok(out)
}

/// Real data split into an unlabeled train half (grounding material) and a
/// labeled test half (evaluation only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train_texts: Vec<LabeledText>,
    pub test: Vec<LabeledText>,
    pub split_seed: u64,
    pub train_fraction: f64,
    /// False when stratification was requested but fell back (single class).
    pub stratified: bool,
}

impl CorpusSplit {
    pub fn to_canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("split serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratify: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            stratify: true,
        }
    }
}

/// Stratified split with the default policy.
pub fn split_corpus(
    corpus: &[LabeledText],
    train_fraction: f64,
    seed: u64,
) -> Result<CorpusSplit, CorpusError> {
    split_corpus_with(
        corpus,
        &SplitConfig {
            train_fraction,
            seed,
            stratify: true,
        },
    )
}

pub fn split_corpus_with(
    corpus: &[LabeledText],
    config: &SplitConfig,
) -> Result<CorpusSplit, CorpusError> {
    let fraction = config.train_fraction;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::BadFraction(fraction));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(CorpusError::TooSmall(n));
    }

    let mut strata: BTreeMap<Option<Polarity>, Vec<usize>> = BTreeMap::new();
    let mut stratified = config.stratify;
    if stratified {
        for (i, item) in corpus.iter().enumerate() {
            strata.entry(item.label).or_default().push(i);
        }
        if strata.len() < 2 {
            tracing::warn!("corpus has a single class; falling back to an unstratified split");
            stratified = false;
        }
    }
    if !stratified {
        strata.clear();
        strata.insert(None, (0..n).collect());
    }

    let train_total = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let quotas = allocate_quotas(
        &strata.values().map(Vec::len).collect::<Vec<_>>(),
        train_total,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut in_train = vec![false; n];
    for (members, quota) in strata.values().zip(quotas) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..quota] {
            in_train[i] = true;
        }
    }

    let mut train_texts = Vec::with_capacity(train_total);
    let mut test = Vec::with_capacity(n - train_total);
    for (item, train) in corpus.iter().zip(in_train) {
        if train {
            let mut erased = item.clone();
            erased.label = None;
            train_texts.push(erased);
        } else {
            test.push(item.clone());
        }
    }
    Ok(CorpusSplit {
        train_texts,
        test,
        split_seed: config.seed,
        train_fraction: fraction,
        stratified,
    })
}

/// Largest-remainder apportionment of `total` across strata of the given sizes.
fn allocate_quotas(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let exact: Vec<f64> = sizes
        .iter()
        .map(|&s| s as f64 * total as f64 / n as f64)
        .collect();
    let mut quotas: Vec<usize> = exact
        .iter()
        .zip(sizes)
        .map(|(e, &s)| (e.floor() as usize).min(s))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = total - quotas.iter().sum::<usize>();
    while remaining > 0 {
        let mut progressed = false;
        for &i in &order {
            if remaining == 0 {
                break;
            }
            if quotas[i] < sizes[i] {
                quotas[i] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    quotas
}

/// Restores the labels of erased train texts from the original corpus, for
/// the ground-truth reference row.
pub fn relabel(train_texts: &[LabeledText], corpus: &[LabeledText]) -> Vec<LabeledText> {
    let labels: std::collections::HashMap<&str, Option<Polarity>> =
        corpus.iter().map(|r| (r.id.as_str(), r.label)).collect();
    train_texts
        .iter()
        .map(|t| {
            let mut r = t.clone();
            r.label = labels.get(t.id.as_str()).copied().flatten();
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn corpus(labels: &[Option<Polarity>]) -> Vec<LabeledText> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| LabeledText::real(format!("t{i}"), format!("text number {i}"), *l))
            .collect()
    }

    fn write_tmp(content: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn jsonl_label_maps_to_positive() {
        let f = write_tmp("{\"text\":\"great, another Monday\",\"label\":\"sarcastic\"}\n", ".jsonl");
        let rows = load_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].label, Some(Polarity::PositiveConstruct));
        assert_eq!(rows[0].source, Source::Real);
        assert_eq!(rows[0].text, "great, another Monday");
        assert_eq!(rows[0].id, "real-000001");
    }

    #[test]
    fn empty_text_names_line() {
        let f = write_tmp("{\"text\":\"ok text\"}\n{\"text\":\"   \"}\n", ".jsonl");
        let err = load_corpus(f.path(), CorpusFormat::Jsonl).unwrap_err();
        assert_eq!(err.to_string(), "empty text at line 2");
    }

    #[test]
    fn malformed_json_names_line() {
        let f = write_tmp("{\"text\":\"ok\"}\n{not json\n", ".jsonl");
        match load_corpus(f.path(), CorpusFormat::Jsonl).unwrap_err() {
            CorpusError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_tmp("\n\n", ".csv");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Csv),
            Err(CorpusError::Empty)
        ));
    }

    #[test]
    fn csv_of_two_thousand_rows_loads_fully() {
        let mut content = String::from("text,label\n");
        for i in 0..2100 {
            let label = if i % 4 == 0 { 1 } else { 0 };
            content.push_str(&format!("\"tweet {i}, with a comma\",{label}\n"));
        }
        let f = write_tmp(&content, ".csv");
        let rows = load_corpus(f.path(), CorpusFormat::Csv).unwrap();
        assert_eq!(rows.len(), 2100);
        assert_eq!(
            rows.iter().filter(|r| r.label == Some(Polarity::PositiveConstruct)).count(),
            525
        );
        // CSV line numbers are 1-based and include the header.
        assert_eq!(rows[0].id, "real-000002");
    }

    #[test]
    fn csv_without_label_column_is_unlabeled() {
        let f = write_tmp("id,text\na1,hello there\na2,  spaced   out  \n", ".csv");
        let rows = load_corpus(f.path(), CorpusFormat::Csv).unwrap();
        assert_eq!(rows[1].id, "a2");
        assert_eq!(rows[1].text, "spaced out");
        assert!(rows.iter().all(|r| r.label.is_none()));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let f = write_tmp("{\"id\":\"x\",\"text\":\"a\"}\n{\"id\":\"x\",\"text\":\"b\"}\n", ".jsonl");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Jsonl),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn label_spellings() {
        use Polarity::*;
        for (raw, want) in [
            ("sarcastic", Some(PositiveConstruct)),
            ("not-sarcastic", Some(NegativeConstruct)),
            ("not_sarcastic", Some(NegativeConstruct)),
            ("0", Some(NegativeConstruct)),
            ("1", Some(PositiveConstruct)),
            ("", None),
        ] {
            assert_eq!(Polarity::parse_label(raw).unwrap(), want, "{raw}");
        }
        assert!(Polarity::parse_label("2.5").is_err());
    }

    #[test]
    fn ten_items_split_deterministically() {
        let c = corpus(&[Some(Polarity::PositiveConstruct); 10]);
        let a = split_corpus(&c, 0.8, 7).unwrap();
        let b = split_corpus(&c, 0.8, 7).unwrap();
        assert_eq!(a.train_texts.len(), 8);
        assert_eq!(a.test.len(), 2);
        assert!(a.train_texts.iter().all(|t| t.label.is_none()));
        assert!(a.test.iter().all(|t| t.label.is_some()));
        assert_eq!(a.to_canonical_json(), b.to_canonical_json());
        // single class falls back to an unstratified split
        assert!(!a.stratified);
    }

    #[test]
    fn stratified_half_split() {
        use Polarity::*;
        let c = corpus(&[
            Some(PositiveConstruct),
            Some(PositiveConstruct),
            Some(NegativeConstruct),
            Some(NegativeConstruct),
        ]);
        for seed in 0..20 {
            let s = split_corpus(&c, 0.5, seed).unwrap();
            assert!(s.stratified);
            let pos = s.test.iter().filter(|t| t.label == Some(PositiveConstruct)).count();
            assert_eq!((s.test.len(), pos), (2, 1));
        }
    }

    #[test]
    fn two_thousand_split_counts() {
        let labels: Vec<_> = (0..2000)
            .map(|i| {
                Some(if i % 13 < 3 {
                    Polarity::PositiveConstruct
                } else {
                    Polarity::NegativeConstruct
                })
            })
            .collect();
        let s = split_corpus(&corpus(&labels), 0.8, 11).unwrap();
        assert_eq!((s.train_texts.len(), s.test.len()), (1600, 400));
    }

    #[test]
    fn fraction_bounds() {
        let c = corpus(&[None, None, None]);
        assert!(matches!(split_corpus(&c, 0.0, 1), Err(CorpusError::BadFraction(_))));
        assert!(matches!(split_corpus(&c, 1.0, 1), Err(CorpusError::BadFraction(_))));
        assert!(matches!(split_corpus(&c[..1], 0.5, 1), Err(CorpusError::TooSmall(1))));
    }

    #[test]
    fn relabel_restores_train_labels() {
        let c = corpus(&[Some(Polarity::PositiveConstruct), Some(Polarity::NegativeConstruct)]);
        let s = split_corpus(&c, 0.5, 3).unwrap();
        let back = relabel(&s.train_texts, &c);
        let orig = c.iter().find(|r| r.id == back[0].id).unwrap();
        assert_eq!(back[0].label, orig.label);
    }

    fn arb_corpus() -> impl Strategy<Value = Vec<LabeledText>> {
        prop::collection::vec(
            (
                "[a-zA-Z0-9 ,.!?'\"é]{1,40}",
                prop::option::of(prop::bool::ANY),
            ),
            2..60,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .filter_map(|(i, (text, label))| {
                    let text = normalize_text(&text);
                    (!text.is_empty()).then(|| {
                        LabeledText::real(
                            format!("id{i}"),
                            text,
                            label.map(|b| {
                                if b {
                                    Polarity::PositiveConstruct
                                } else {
                                    Polarity::NegativeConstruct
                                }
                            }),
                        )
                    })
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn write_then_read_round_trips(rows in arb_corpus()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.jsonl");
            write_corpus(&path, &rows).unwrap();
            prop_assert_eq!(read_corpus(&path).unwrap(), rows);
        }

        #[test]
        fn split_is_a_partition(rows in arb_corpus(), fraction in 0.05f64..0.95, seed in 0u64..1000) {
            prop_assume!(rows.len() >= 2);
            let s = split_corpus(&rows, fraction, seed).unwrap();
            let mut ids: Vec<_> = s.train_texts.iter().chain(&s.test).map(|r| r.id.clone()).collect();
            prop_assert_eq!(ids.len(), rows.len());
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), rows.len());
            prop_assert!(s.train_texts.iter().all(|r| r.label.is_none()));
            let again = split_corpus(&rows, fraction, seed).unwrap();
            prop_assert_eq!(s.to_canonical_json(), again.to_canonical_json());
        }

        #[test]
        fn stratified_test_tracks_class_share(n_pos in 50usize..200, n_neg in 50usize..200, seed in 0u64..100) {
            let labels: Vec<_> = (0..n_pos).map(|_| Some(Polarity::PositiveConstruct))
                .chain((0..n_neg).map(|_| Some(Polarity::NegativeConstruct)))
                .collect();
            let s = split_corpus(&corpus(&labels), 0.8, seed).unwrap();
            let full = n_pos as f64 / (n_pos + n_neg) as f64;
            let test_pos = s.test.iter().filter(|r| r.label == Some(Polarity::PositiveConstruct)).count();
            let share = test_pos as f64 / s.test.len() as f64;
            prop_assert!((share - full).abs() <= 0.05, "{share} vs {full}");
        }
    }
}
