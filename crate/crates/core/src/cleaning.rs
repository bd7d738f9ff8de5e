//! Turns raw LLM responses into individual synthetic samples.
//!
//! Two artifact families dominate generated lists: an affirmative lead-in
//! ("Sure, here you go:") and, for taxonomy prompts, the name of the variant
//! used ("Verbal Irony: ..."). Both sit before the first colon of an item and
//! are removed by splitting there. The split only fires when the text before
//! the colon reads like a lead-in or a label, and stripping runs to a fixed
//! point, so colons inside the generated text itself survive and
//! `strip_preamble` is idempotent.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_text, LabeledText, Polarity, Source};
use crate::generation::{is_refusal, RawCompletion};
use crate::prompting::{GenerationJob, Strategy, StrategySpec};

/// Items shorter than this (in chars) after cleaning are list-parsing residue.
pub const MIN_ITEM_CHARS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum CleaningError {
    #[error("empty completion")]
    EmptyCompletion,
    #[error("completion is a refusal")]
    Refusal,
    #[error("no numbered items found in completion")]
    NoItems,
    #[error("completion {0} does not resolve to a planned job (corrupt run state)")]
    UnknownPromptId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationProvenance {
    pub strategy: Strategy,
    pub polarity: Polarity,
    pub grounding_example_id: Option<String>,
    pub taxonomy_entry_index: Option<usize>,
    /// 1-based position within the numbered list of the response.
    pub decode_index: usize,
    pub prompt_id: String,
    pub run_id: String,
}

fn list_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:\*\*)?\(?(\d{1,3})[.)](?:\*\*)?(?:\s+|$)|^[-*\u{2022}]\s+").unwrap())
}

const QUOTE_PAIRS: [(char, char); 5] = [
    ('"', '"'),
    ('\u{201c}', '\u{201d}'),
    ('\'', '\''),
    ('\u{2018}', '\u{2019}'),
    ('\u{ab}', '\u{bb}'),
];

const LABEL_CONNECTORS: [&str; 13] = [
    "of", "the", "and", "or", "to", "a", "an", "in", "on", "by", "for", "with", "via",
];

const CONSTRUCT_VOCABULARY: [&str; 14] = [
    "irony", "ironic", "sarcas", "hyperbole", "understatement", "overstatement", "exaggerat",
    "mimicry", "satire", "satiric", "deadpan", "rhetorical", "mockery", "caps lock",
];

const META_WORDS: [&str; 11] = [
    "version", "rewrite", "rewritten", "text", "tweet", "example", "output", "sentence", "answer",
    "response", "variant",
];

/// Removes list numerals, wrapping quotes and lead-in/label prefixes, then
/// trims. Returns an empty string when nothing is left.
pub fn strip_preamble(raw_line: &str) -> String {
    let mut current = raw_line.trim().to_string();
    loop {
        let next = strip_once(&current);
        if next == current {
            return next;
        }
        current = next;
    }
}

fn strip_once(s: &str) -> String {
    let s = s.trim();
    if let Some(m) = list_marker().find(s) {
        return s[m.end()..].trim().to_string();
    }
    if let Some(inner) = unquote(s) {
        return inner.trim().to_string();
    }
    if let Some((prefix, rest)) = s.split_once(':') {
        let mut rest = rest.trim();
        // "**Sure, here you go:** text"
        for emphasis in ["**", "__"] {
            if prefix.trim_start().starts_with(emphasis) {
                rest = rest.strip_prefix(emphasis).unwrap_or(rest).trim_start();
            }
        }
        let starts_with_digit = rest.chars().next().is_some_and(|c| c.is_ascii_digit());
        let split = match preamble_kind(prefix) {
            Some(PreambleKind::LeadIn) => !rest.starts_with("//"),
            Some(PreambleKind::Label) => !starts_with_digit && !rest.starts_with("//"),
            None => false,
        };
        if split {
            return rest.to_string();
        }
    }
    s.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PreambleKind {
    /// "Sure, here you go", "Here are 10 texts".
    LeadIn,
    /// "Verbal Irony", "Rewrite 3", "Sarcastic version".
    Label,
}

fn unquote(s: &str) -> Option<&str> {
    let body = s.strip_suffix(',').unwrap_or(s);
    let mut chars = body.chars();
    let first = chars.next()?;
    let last = chars.next_back()?;
    QUOTE_PAIRS
        .iter()
        .any(|&(open, close)| first == open && last == close)
        .then(|| &body[first.len_utf8()..body.len() - last.len_utf8()])
}

/// Classifies the text before a colon as an affirmative lead-in, a short
/// label (taxonomy variant name, "Rewrite 3", "Sarcastic version") or
/// neither.
fn preamble_kind(prefix: &str) -> Option<PreambleKind> {
    if is_lead_in(prefix) {
        Some(PreambleKind::LeadIn)
    } else if is_label(prefix) {
        Some(PreambleKind::Label)
    } else {
        None
    }
}

fn bare_prefix(prefix: &str) -> &str {
    prefix
        .trim()
        .trim_matches(|c: char| matches!(c, '*' | '_' | '#' | '"' | '\u{201c}' | '\u{201d}'))
        .trim()
}

fn bare_word(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'' && c != '-')
        .to_lowercase()
}

fn is_lead_in(prefix: &str) -> bool {
    let p = bare_prefix(prefix);
    let words: Vec<&str> = p.split_whitespace().collect();
    if words.is_empty() || words.len() > 15 {
        return false;
    }
    let lower = p.to_lowercase();
    matches!(
        bare_word(words[0]).as_str(),
        "sure" | "certainly" | "okay" | "ok" | "absolutely" | "alright" | "below"
    ) || ["here is", "here are", "here's", "here you go", "here they are", "of course", "no problem"]
        .iter()
        .any(|lead| lower.starts_with(lead))
}

fn is_label(prefix: &str) -> bool {
    let p = bare_prefix(prefix);
    if p.is_empty() {
        return false;
    }
    let lower = p.to_lowercase();
    let words: Vec<&str> = p.split_whitespace().collect();
    let bare = |w: &str| bare_word(w);
    if words.len() > 6 || p.contains(['.', ',', '!', '?', ';']) {
        return false;
    }
    // "Rewrite 3", "Sarcastic version", "Tweet #2".
    let has_alpha = words.iter().any(|w| w.chars().any(char::is_alphabetic));
    if !has_alpha {
        return false;
    }
    if words.len() <= 4 && words.iter().any(|w| META_WORDS.contains(&bare(w).as_str())) {
        return true;
    }
    if CONSTRUCT_VOCABULARY.iter().any(|v| lower.contains(v)) {
        return true;
    }
    // Title Case label such as "Sarcasm of Ignorance".
    if p.chars().last().is_some_and(|c| c.is_ascii_digit()) {
        return false;
    }
    words.iter().enumerate().all(|(i, w)| {
        let core = w.trim_matches(|c: char| !c.is_alphanumeric());
        match core.chars().next() {
            None => true,
            Some(c) if !c.is_alphabetic() => true,
            Some(c) if c.is_uppercase() => true,
            Some(_) => i > 0 && LABEL_CONNECTORS.contains(&core),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedItem {
    pub decode_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParsedList {
    /// `(decode_index, text)` pairs, decode_index 1-based.
    pub items: Vec<(usize, String)>,
    pub dropped: Vec<DroppedItem>,
    /// `expected_n` minus the number of numbered items found, if positive.
    pub shortfall: usize,
}

/// Splits a numbered-list response into cleaned items. Lines before the
/// first numbered item are treated as a lead-in; unnumbered lines directly
/// after an item continue it; anything after a blank line is an epilogue.
pub fn parse_numbered_list(raw_text: &str, expected_n: usize) -> Result<ParsedList, CleaningError> {
    if raw_text.trim().is_empty() {
        return Err(CleaningError::EmptyCompletion);
    }
    let mut raw_items: Vec<String> = Vec::new();
    let mut open = false;
    for line in raw_text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            open = false;
            continue;
        }
        let numbered = list_marker()
            .captures(trimmed)
            .is_some_and(|c| c.get(1).is_some());
        if numbered {
            raw_items.push(trimmed.to_string());
            open = true;
        } else if open {
            let last = raw_items.last_mut().expect("open implies an item");
            last.push(' ');
            last.push_str(trimmed);
        }
    }
    if raw_items.is_empty() {
        if is_refusal(raw_text) {
            return Err(CleaningError::Refusal);
        }
        if expected_n == 1 {
            raw_items.push(normalize_text(raw_text));
        } else {
            return Err(CleaningError::NoItems);
        }
    }

    let mut parsed = ParsedList {
        shortfall: expected_n.saturating_sub(raw_items.len()),
        ..ParsedList::default()
    };
    if parsed.shortfall > 0 {
        tracing::debug!(
            found = raw_items.len(),
            expected_n,
            "numbered list shorter than requested"
        );
    }
    for (i, raw) in raw_items.iter().enumerate() {
        let decode_index = i + 1;
        if decode_index > expected_n {
            parsed.dropped.push(DroppedItem {
                decode_index,
                reason: format!("beyond the {expected_n} requested items"),
            });
            continue;
        }
        let text = normalize_text(&strip_preamble(raw));
        if text.chars().count() < MIN_ITEM_CHARS {
            parsed.dropped.push(DroppedItem {
                decode_index,
                reason: if text.is_empty() {
                    "empty after stripping".to_string()
                } else {
                    format!("shorter than {MIN_ITEM_CHARS} chars")
                },
            });
            continue;
        }
        parsed.items.push((decode_index, text));
    }
    Ok(parsed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PolarityCounts {
    pub positive: usize,
    pub negative: usize,
}

impl PolarityCounts {
    fn add(&mut self, polarity: Polarity) {
        match polarity {
            Polarity::PositiveConstruct => self.positive += 1,
            Polarity::NegativeConstruct => self.negative += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.positive + self.negative
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AssemblyStats {
    pub completions: usize,
    pub refusals: usize,
    pub parse_failures: usize,
    pub items_dropped: usize,
    pub shortfall: usize,
    pub pre_dedup: PolarityCounts,
    pub duplicates_removed: usize,
    pub post_dedup: PolarityCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub samples: Vec<LabeledText>,
    pub stats: AssemblyStats,
}

/// Lookup from prompt id to the spec that produced it.
pub type JobIndex = BTreeMap<String, StrategySpec>;

pub fn job_index(jobs: &[GenerationJob]) -> JobIndex {
    jobs.iter()
        .map(|j| (j.prompt_id.clone(), j.spec.clone()))
        .collect()
}

fn dedup_key(text: &str) -> String {
    normalize_text(&text.to_lowercase())
}

/// Builds the synthetic corpus: one labeled sample per parsed item, label =
/// the spec's polarity, provenance filled in. Case-folded exact duplicates
/// keep the copy with the lowest decode index. Output is ordered by
/// `(prompt_id, decode_index)`.
pub fn assemble_synthetic_corpus(
    completions: &[RawCompletion],
    specs: &JobIndex,
    run_id: &str,
) -> Result<Assembly, CleaningError> {
    let mut ordered: Vec<&RawCompletion> = completions.iter().collect();
    ordered.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));
    ordered.dedup_by(|a, b| a.prompt_id == b.prompt_id);

    let mut stats = AssemblyStats {
        completions: ordered.len(),
        ..AssemblyStats::default()
    };
    let mut candidates: Vec<LabeledText> = Vec::new();
    for completion in ordered {
        let spec = specs
            .get(&completion.prompt_id)
            .ok_or_else(|| CleaningError::UnknownPromptId(completion.prompt_id.clone()))?;
        if completion.refusal {
            stats.refusals += 1;
            continue;
        }
        let parsed = match parse_numbered_list(&completion.raw_text, spec.n_generations) {
            Ok(p) => p,
            Err(CleaningError::Refusal) => {
                stats.refusals += 1;
                continue;
            }
            Err(err) => {
                tracing::debug!(prompt_id = %completion.prompt_id, %err, "unparseable completion");
                stats.parse_failures += 1;
                continue;
            }
        };
        stats.items_dropped += parsed.dropped.len();
        stats.shortfall += parsed.shortfall;
        for (decode_index, text) in parsed.items {
            stats.pre_dedup.add(spec.polarity);
            candidates.push(LabeledText {
                id: format!("{}-{:02}", completion.prompt_id, decode_index),
                text,
                label: Some(spec.polarity),
                source: Source::Synthetic,
                provenance: Some(GenerationProvenance {
                    strategy: spec.strategy,
                    polarity: spec.polarity,
                    grounding_example_id: spec.grounding_example.as_ref().map(|e| e.id.clone()),
                    taxonomy_entry_index: (spec.strategy == Strategy::Taxonomy)
                        .then_some(decode_index),
                    decode_index,
                    prompt_id: completion.prompt_id.clone(),
                    run_id: run_id.to_string(),
                }),
            });
        }
    }

    let rank = |s: &LabeledText| {
        let p = s.provenance.as_ref().expect("synthetic samples carry provenance");
        (p.decode_index, p.prompt_id.clone())
    };
    let mut keep: HashMap<String, (usize, String)> = HashMap::new();
    for sample in &candidates {
        let r = rank(sample);
        keep.entry(dedup_key(&sample.text))
            .and_modify(|best| {
                if r < *best {
                    *best = r.clone();
                }
            })
            .or_insert(r);
    }
    let samples: Vec<LabeledText> = candidates
        .into_iter()
        .filter(|s| keep.get(&dedup_key(&s.text)) == Some(&rank(s)))
        .collect();
    stats.duplicates_removed = stats.pre_dedup.total() - samples.len();
    for s in &samples {
        stats.post_dedup.add(s.label.expect("synthetic samples are labeled"));
    }
    Ok(Assembly { samples, stats })
}
