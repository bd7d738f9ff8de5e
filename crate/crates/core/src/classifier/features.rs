use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Sparse vector as `(feature index, value)` pairs sorted by index.
pub type SparseVec = Vec<(usize, f64)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenPattern {
    /// Runs of word characters, plus each punctuation mark as its own token.
    WordPunct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub lowercase: bool,
    pub token_pattern: TokenPattern,
    pub ngram_range: (usize, usize),
    pub min_doc_freq: usize,
    pub tfidf: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            token_pattern: TokenPattern::WordPunct,
            ngram_range: (1, 2),
            min_doc_freq: 2,
            tfidf: true,
        }
    }
}

fn word_punct() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\w+|[^\w\s]").expect("valid token regex"))
}

pub fn tokenize(text: &str, config: &FeatureConfig) -> Vec<String> {
    let text = if config.lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    match config.token_pattern {
        TokenPattern::WordPunct => word_punct()
            .find_iter(&text)
            .map(|m| m.as_str().to_string())
            .collect(),
    }
}

/// All n-grams in the configured range, joined with a space.
pub fn ngrams(text: &str, config: &FeatureConfig) -> Vec<String> {
    let tokens = tokenize(text, config);
    let (lo, hi) = config.ngram_range;
    let mut out = Vec::new();
    for n in lo.max(1)..=hi {
        for window in tokens.windows(n) {
            out.push(window.join(" "));
        }
    }
    out
}

/// Fitted vocabulary plus idf weights. Terms are indexed in sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vectorizer {
    pub config: FeatureConfig,
    pub vocabulary: BTreeMap<String, usize>,
    /// Empty when tf-idf weighting is off.
    pub idf: Vec<f64>,
}

impl Vectorizer {
    /// Smoothed idf: `ln((1 + n) / (1 + df)) + 1`.
    pub fn fit<S: AsRef<str>>(docs: &[S], config: &FeatureConfig) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in docs {
            let terms: BTreeSet<String> = ngrams(doc.as_ref(), config).into_iter().collect();
            for t in terms {
                *df.entry(t).or_default() += 1;
            }
        }
        let kept: Vec<(String, usize)> = df
            .into_iter()
            .filter(|(_, d)| *d >= config.min_doc_freq.max(1))
            .collect();
        let n = docs.len() as f64;
        let idf = if config.tfidf {
            kept.iter()
                .map(|(_, d)| ((1.0 + n) / (1.0 + *d as f64)).ln() + 1.0)
                .collect()
        } else {
            Vec::new()
        };
        let vocabulary = kept
            .into_iter()
            .enumerate()
            .map(|(i, (t, _))| (t, i))
            .collect();
        Self {
            config: config.clone(),
            vocabulary,
            idf,
        }
    }

    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    /// L2-normalized term-frequency (times idf) vector. Unseen terms are
    /// ignored, so text with no known term maps to the zero vector.
    pub fn transform(&self, text: &str) -> SparseVec {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for g in ngrams(text, &self.config) {
            if let Some(&i) = self.vocabulary.get(&g) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut v: SparseVec = counts
            .into_iter()
            .map(|(i, c)| (i, if self.idf.is_empty() { c } else { c * self.idf[i] }))
            .collect();
        let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, x) in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(min_df: usize) -> FeatureConfig {
        FeatureConfig {
            min_doc_freq: min_df,
            ..FeatureConfig::default()
        }
    }

    #[test]
    fn tokenizer_splits_words_and_punctuation() {
        assert_eq!(
            tokenize("Oh great, ANOTHER Monday!!", &cfg(1)),
            ["oh", "great", ",", "another", "monday", "!", "!"]
        );
        assert_eq!(ngrams("a b c", &cfg(1)), ["a", "b", "c", "a b", "b c"]);
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let v = Vectorizer::fit(&["a b", "a c"], &cfg(1));
        assert!(v.transform("").is_empty());
        assert!(v.transform("zzz qqq").is_empty());
    }

    #[test]
    fn common_terms_get_lower_idf() {
        let v = Vectorizer::fit(&["a b", "a c"], &cfg(1));
        let idf = |t: &str| v.idf[v.vocabulary[t]];
        assert!(idf("a") < idf("b"));
        assert_eq!(idf("b"), idf("c"));
    }

    #[test]
    fn min_doc_freq_prunes_rare_terms() {
        let v = Vectorizer::fit(&["a b", "a c"], &cfg(2));
        assert_eq!(v.vocabulary.keys().collect::<Vec<_>>(), ["a"]);
    }

    proptest! {
        #[test]
        fn known_text_has_unit_norm(docs in prop::collection::vec("[a-d ]{1,12}", 2..8), pick in 0usize..8) {
            let v = Vectorizer::fit(&docs, &cfg(1));
            let doc = &docs[pick % docs.len()];
            let x = v.transform(doc);
            if !x.is_empty() {
                let norm: f64 = x.iter().map(|(_, a)| a * a).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-12);
            } else {
                prop_assert!(doc.trim().is_empty());
            }
        }
    }
}
