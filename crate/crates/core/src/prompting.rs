//! Prompt rendering for the four generation strategies, polarity
//! substitution, the two-step taxonomy procedure and job planning.
//!
//! Templates are versioned text assets with `{CONSTRUCT}`, `{EXAMPLE}`, `{N}`
//! and `{TAXONOMY}` placeholders. Every generation prompt asks for a numbered
//! list so the cleaning stage can split a response into individual samples.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusSplit, LabeledText, Polarity};

pub const TEMPLATE_VERSION: &str = "v1";
pub const DEFAULT_N_GENERATIONS: usize = 10;
pub const DEFAULT_TAXONOMY_K: usize = 4;

const SIMPLE_TEMPLATE: &str = include_str!("../templates/simple.txt");
const GROUNDING_TEMPLATE: &str = include_str!("../templates/grounding.txt");
const REWRITE_TEMPLATE: &str = include_str!("../templates/grounding_rewrite.txt");
const TAXONOMY_TEMPLATE: &str = include_str!("../templates/taxonomy.txt");
const ELICITATION_TEMPLATE: &str = include_str!("../templates/taxonomy_elicitation.txt");
const ZERO_SHOT_TEMPLATE: &str = include_str!("../templates/zero_shot.txt");

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("strategy {0} requires a grounding example")]
    MissingGroundingExample(Strategy),
    #[error("strategy simple must not carry a grounding example")]
    UnexpectedGroundingExample,
    #[error("strategy taxonomy requires a taxonomy")]
    MissingTaxonomy,
    #[error("taxonomy prompt must request one rewrite per entry ({k}), got n_generations={n}")]
    TaxonomySizeMismatch { k: usize, n: usize },
    #[error("n_generations must be positive")]
    ZeroGenerations,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
    #[error("{found} of {k} entries parsed")]
    TooFewEntries { found: usize, k: usize },
    #[error("taxonomy entries are not numbered contiguously from 1 (got {0:?})")]
    NonContiguous(Vec<usize>),
    #[error("strategy {0} needs a non-empty train split")]
    EmptyTrainSet(Strategy),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("unknown template placeholder {{{0}}}")]
    UnknownPlaceholder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Simple,
    Grounding,
    #[serde(alias = "rewrite")]
    GroundingRewrite,
    Taxonomy,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Simple,
        Strategy::Grounding,
        Strategy::GroundingRewrite,
        Strategy::Taxonomy,
    ];

    pub fn is_grounded(self) -> bool {
        self != Strategy::Simple
    }

    /// Short name used on the command line and in artifact paths.
    pub fn cli_name(self) -> &'static str {
        match self {
            Strategy::Simple => "simple",
            Strategy::Grounding => "grounding",
            Strategy::GroundingRewrite => "rewrite",
            Strategy::Taxonomy => "taxonomy",
        }
    }

    /// Row label in the evaluation report.
    pub fn display_name(self) -> &'static str {
        match self {
            Strategy::Simple => "Simple",
            Strategy::Grounding => "Grounding",
            Strategy::GroundingRewrite => "Grounding (rewrite)",
            Strategy::Taxonomy => "Grounding + Taxonomy",
        }
    }

    fn template(self) -> &'static str {
        match self {
            Strategy::Simple => SIMPLE_TEMPLATE,
            Strategy::Grounding => GROUNDING_TEMPLATE,
            Strategy::GroundingRewrite => REWRITE_TEMPLATE,
            Strategy::Taxonomy => TAXONOMY_TEMPLATE,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Strategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simple" => Ok(Strategy::Simple),
            "grounding" => Ok(Strategy::Grounding),
            "rewrite" | "grounding_rewrite" | "grounding-rewrite" => Ok(Strategy::GroundingRewrite),
            "taxonomy" => Ok(Strategy::Taxonomy),
            other => Err(PromptError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    pub index: usize,
    pub name: String,
    pub description: String,
}

/// k named variants of a construct, numbered from 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub construct_name: String,
    pub entries: Vec<TaxonomyEntry>,
}

impl Taxonomy {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.entries.is_empty() {
            return Err(PromptError::InvalidTaxonomy("no entries".to_string()));
        }
        let indices: Vec<usize> = self.entries.iter().map(|e| e.index).collect();
        if indices.iter().enumerate().any(|(i, &idx)| idx != i + 1) {
            return Err(PromptError::NonContiguous(indices));
        }
        let mut names = HashSet::new();
        for entry in &self.entries {
            if entry.name.trim().is_empty() {
                return Err(PromptError::InvalidTaxonomy(format!(
                    "entry {} has an empty name",
                    entry.index
                )));
            }
            if !names.insert(entry.name.to_lowercase()) {
                return Err(PromptError::InvalidTaxonomy(format!(
                    "duplicate name {:?}",
                    entry.name
                )));
            }
        }
        Ok(())
    }

    /// `1. Name: description` lines, the format the elicitation prompt requests.
    pub fn format_numbered(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}. {}: {}", e.index, e.name, e.description))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Taxonomy block inserted into the taxonomy generation prompt.
    fn prompt_block(&self) -> String {
        format!(
            "Here are {} ways a text can be {}:\n{}",
            self.len(),
            self.construct_name,
            self.format_numbered()
        )
    }

    /// One JSON record per entry, for the taxonomy JSONL artifact.
    pub fn to_records(&self) -> Vec<TaxonomyRecord> {
        self.entries
            .iter()
            .map(|e| TaxonomyRecord {
                construct_name: self.construct_name.clone(),
                index: e.index,
                name: e.name.clone(),
                description: e.description.clone(),
            })
            .collect()
    }

    pub fn from_records(records: Vec<TaxonomyRecord>) -> Result<Self, PromptError> {
        let construct_name = records
            .first()
            .map(|r| r.construct_name.clone())
            .ok_or_else(|| PromptError::InvalidTaxonomy("no entries".to_string()))?;
        let taxonomy = Taxonomy {
            construct_name,
            entries: records
                .into_iter()
                .map(|r| TaxonomyEntry {
                    index: r.index,
                    name: r.name,
                    description: r.description,
                })
                .collect(),
        };
        taxonomy.validate()?;
        Ok(taxonomy)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyRecord {
    pub construct_name: String,
    pub index: usize,
    pub name: String,
    pub description: String,
}

/// Everything that governs one generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub strategy: Strategy,
    pub polarity: Polarity,
    pub n_generations: usize,
    pub grounding_example: Option<LabeledText>,
    pub taxonomy: Option<Taxonomy>,
    pub construct_name: String,
}

impl StrategySpec {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.n_generations == 0 {
            return Err(PromptError::ZeroGenerations);
        }
        match (self.strategy.is_grounded(), &self.grounding_example) {
            (true, None) => return Err(PromptError::MissingGroundingExample(self.strategy)),
            (false, Some(_)) => return Err(PromptError::UnexpectedGroundingExample),
            _ => {}
        }
        if self.strategy == Strategy::Taxonomy {
            let taxonomy = self.taxonomy.as_ref().ok_or(PromptError::MissingTaxonomy)?;
            taxonomy.validate()?;
            if taxonomy.len() != self.n_generations {
                return Err(PromptError::TaxonomySizeMismatch {
                    k: taxonomy.len(),
                    n: self.n_generations,
                });
            }
        }
        Ok(())
    }

    pub fn with_polarity(&self, polarity: Polarity) -> Self {
        Self {
            polarity,
            ..self.clone()
        }
    }
}

/// What a rendered prompt is for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptKind {
    Generation(StrategySpec),
    TaxonomyElicitation { construct_name: String, k: usize },
    ZeroShot { construct_name: String, text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub id: String,
    pub kind: PromptKind,
    pub rendered_text: String,
    pub template_version: String,
}

impl PromptInstance {
    fn new(kind: PromptKind, rendered_text: String) -> Self {
        let id = format!(
            "prompt-{}",
            &crate::io::sha256_hex(format!("{TEMPLATE_VERSION}\n{rendered_text}").as_bytes())[..16]
        );
        Self {
            id,
            kind,
            rendered_text,
            template_version: TEMPLATE_VERSION.to_string(),
        }
    }

    /// Replaces the content-derived id with a job id.
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn spec(&self) -> Option<&StrategySpec> {
        match &self.kind {
            PromptKind::Generation(spec) => Some(spec),
            _ => None,
        }
    }
}

/// Single-pass placeholder substitution. Substituted values are never
/// rescanned, so an example text containing `{N}` stays verbatim.
fn fill(template: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) if is_placeholder(&after[..end]) => {
                let name = &after[..end];
                let value = values
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::UnknownPlaceholder(name.to_string()))?;
                out.push_str(value);
                rest = &after[end + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out.trim_end().to_string())
}

fn is_placeholder(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_uppercase() || c == '_')
}

/// Renders the generation prompt for `spec`. Pure: equal specs give equal text.
pub fn render_prompt(spec: &StrategySpec) -> Result<PromptInstance, PromptError> {
    spec.validate()?;
    let construct = spec.polarity.construct_word(&spec.construct_name);
    let n = spec.n_generations.to_string();
    let example = spec
        .grounding_example
        .as_ref()
        .map(|e| e.text.as_str())
        .unwrap_or_default();
    let taxonomy = spec
        .taxonomy
        .as_ref()
        .map(Taxonomy::prompt_block)
        .unwrap_or_default();
    let rendered = fill(
        spec.strategy.template(),
        &[
            ("CONSTRUCT", &construct),
            ("N", &n),
            ("EXAMPLE", example),
            ("TAXONOMY", &taxonomy),
        ],
    )?;
    Ok(PromptInstance::new(PromptKind::Generation(spec.clone()), rendered))
}

/// First step of taxonomy-based generation: ask for k numbered ways the
/// construct can manifest, one `i. Name: description` line each.
pub fn render_taxonomy_elicitation(
    construct_name: &str,
    k: usize,
) -> Result<PromptInstance, PromptError> {
    if k == 0 {
        return Err(PromptError::ZeroK);
    }
    let rendered = fill(
        ELICITATION_TEMPLATE,
        &[("CONSTRUCT", construct_name), ("N", &k.to_string())],
    )?;
    Ok(PromptInstance::new(
        PromptKind::TaxonomyElicitation {
            construct_name: construct_name.to_string(),
            k,
        },
        rendered,
    ))
}

/// Fixed yes/no classification prompt for the zero-shot baseline.
pub fn render_zero_shot(construct_name: &str, text: &str) -> Result<PromptInstance, PromptError> {
    let rendered = fill(
        ZERO_SHOT_TEMPLATE,
        &[("CONSTRUCT", construct_name), ("EXAMPLE", text)],
    )?;
    Ok(PromptInstance::new(
        PromptKind::ZeroShot {
            construct_name: construct_name.to_string(),
            text: text.to_string(),
        },
        rendered,
    ))
}

fn numbered_line() -> &'static Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:[-*]\s*)?\(?(\d{1,3})[.)]\s*(.*)$").unwrap())
}

fn strip_wrapping(s: &str) -> &str {
    let s = s.trim().trim_end_matches(',').trim();
    let s = s.trim_matches(|c| matches!(c, '"' | '\u{201c}' | '\u{201d}'));
    s.trim()
}

/// Parses an elicitation response into a taxonomy of exactly `k` entries.
pub fn parse_taxonomy(
    raw_llm_output: &str,
    k: usize,
    construct_name: &str,
) -> Result<Taxonomy, PromptError> {
    if k == 0 {
        return Err(PromptError::ZeroK);
    }
    let mut parsed = Vec::new();
    for line in raw_llm_output.lines() {
        let Some(caps) = numbered_line().captures(line) else {
            continue;
        };
        let number: usize = caps[1].parse().expect("regex matched digits");
        let body = strip_wrapping(&caps[2]);
        let Some((name, description)) = body.split_once(':') else {
            continue;
        };
        let name = name.trim().trim_matches(|c| matches!(c, '*' | '_' | '"')).trim();
        let description = strip_wrapping(description);
        if name.is_empty() || description.is_empty() {
            continue;
        }
        parsed.push(TaxonomyEntry {
            index: number,
            name: name.to_string(),
            description: description.to_string(),
        });
    }
    if parsed.len() < k {
        return Err(PromptError::TooFewEntries {
            found: parsed.len(),
            k,
        });
    }
    parsed.truncate(k);
    let taxonomy = Taxonomy {
        construct_name: construct_name.to_string(),
        entries: parsed,
    };
    taxonomy.validate()?;
    Ok(taxonomy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarityMode {
    /// One job per polarity for every prompt, giving class-balanced output.
    #[default]
    Both,
}

#[derive(Debug, Clone)]
pub struct PlanConfig {
    pub strategy: Strategy,
    pub polarity_mode: PolarityMode,
    pub n_generations: usize,
    pub simple_repetitions: usize,
    pub construct_name: String,
    /// Required when `strategy` is taxonomy.
    pub taxonomy: Option<Taxonomy>,
}

/// Expands a split into generation specs. Grounded strategies emit one spec
/// per polarity per train text; simple emits `2 × simple_repetitions`.
/// Polarities alternate positive/negative so any prefix of an even length is
/// balanced.
pub fn plan_generation_jobs(
    split: &CorpusSplit,
    config: &PlanConfig,
) -> Result<Vec<StrategySpec>, PromptError> {
    let PolarityMode::Both = config.polarity_mode;
    let n_generations = match (&config.taxonomy, config.strategy) {
        (Some(t), Strategy::Taxonomy) => t.len(),
        (None, Strategy::Taxonomy) => return Err(PromptError::MissingTaxonomy),
        _ => config.n_generations,
    };
    let base = |example: Option<&LabeledText>, polarity| StrategySpec {
        strategy: config.strategy,
        polarity,
        n_generations,
        grounding_example: example.cloned(),
        taxonomy: (config.strategy == Strategy::Taxonomy)
            .then(|| config.taxonomy.clone())
            .flatten(),
        construct_name: config.construct_name.clone(),
    };

    let mut specs = Vec::new();
    if config.strategy.is_grounded() {
        if split.train_texts.is_empty() {
            return Err(PromptError::EmptyTrainSet(config.strategy));
        }
        for example in &split.train_texts {
            for polarity in Polarity::BOTH {
                specs.push(base(Some(example), polarity));
            }
        }
    } else {
        for _ in 0..config.simple_repetitions {
            for polarity in Polarity::BOTH {
                specs.push(base(None, polarity));
            }
        }
    }
    for spec in &specs {
        spec.validate()?;
    }
    Ok(specs)
}

/// A spec with its stable job id (`<strategy>-<index>`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub prompt_id: String,
    pub spec: StrategySpec,
}

pub fn index_jobs(specs: Vec<StrategySpec>) -> Vec<GenerationJob> {
    specs
        .into_iter()
        .enumerate()
        .map(|(i, spec)| GenerationJob {
            prompt_id: format!("{}-{:06}", spec.strategy.cli_name(), i),
            spec,
        })
        .collect()
}
