//! Offline completion backend. Responses are a pure function of
//! `(seed, prompt id, prompt text)`, and imitate the shape of real chat
//! model output: occasional lead-ins, quoted items, taxonomy labels and a
//! closing remark, so the cleaning stage has real work to do.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BackendError, BackendReply, CompletionBackend, GenerationParams};
use crate::corpus::Polarity;
use crate::prompting::{PromptInstance, PromptKind, StrategySpec, Taxonomy};

#[derive(Debug, Clone)]
pub enum MockMode {
    /// Synthesizes answers from built-in phrase banks.
    Seeded { seed: u64 },
    /// Returns the same reply to every prompt.
    Fixed { reply: String },
    /// Builds generation lists by sampling from a fixture corpus.
    Fixture { seed: u64, texts: Vec<String> },
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    mode: MockMode,
    model_name: String,
}

impl MockBackend {
    pub fn seeded(seed: u64) -> Self {
        Self::new(MockMode::Seeded { seed })
    }

    pub fn fixed(reply: impl Into<String>) -> Self {
        Self::new(MockMode::Fixed {
            reply: reply.into(),
        })
    }

    pub fn new(mode: MockMode) -> Self {
        Self {
            mode,
            model_name: "mock".to_string(),
        }
    }

    fn rng_for(seed: u64, prompt: &PromptInstance) -> ChaCha8Rng {
        let mut material = seed.to_le_bytes().to_vec();
        material.extend_from_slice(prompt.id.as_bytes());
        material.push(0);
        material.extend_from_slice(prompt.rendered_text.as_bytes());
        let digest = crate::io::sha256_hex(&material);
        let mut key = [0u8; 32];
        hex_to_bytes(&digest, &mut key);
        ChaCha8Rng::from_seed(key)
    }

    fn reply_text(&self, prompt: &PromptInstance) -> String {
        match &self.mode {
            MockMode::Fixed { reply } => reply.clone(),
            MockMode::Seeded { seed } => {
                let mut rng = Self::rng_for(*seed, prompt);
                match &prompt.kind {
                    PromptKind::Generation(spec) => generation_reply(spec, &mut rng, None),
                    PromptKind::TaxonomyElicitation { construct_name, k } => {
                        elicitation_reply(construct_name, *k, &mut rng)
                    }
                    PromptKind::ZeroShot { text, .. } => zero_shot_reply(text, &mut rng),
                }
            }
            MockMode::Fixture { seed, texts } => {
                let mut rng = Self::rng_for(*seed, prompt);
                match &prompt.kind {
                    PromptKind::Generation(spec) => generation_reply(spec, &mut rng, Some(texts)),
                    PromptKind::TaxonomyElicitation { construct_name, k } => {
                        elicitation_reply(construct_name, *k, &mut rng)
                    }
                    PromptKind::ZeroShot { text, .. } => zero_shot_reply(text, &mut rng),
                }
            }
        }
    }
}

fn hex_to_bytes(hex_str: &str, out: &mut [u8; 32]) {
    let bytes = hex::decode(hex_str).expect("sha256 hex");
    out.copy_from_slice(&bytes[..32]);
}

impl CompletionBackend for MockBackend {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn send(
        &self,
        prompt: &PromptInstance,
        _params: &GenerationParams,
    ) -> Result<BackendReply, BackendError> {
        let text = self.reply_text(prompt);
        Ok(BackendReply {
            prompt_tokens: prompt.rendered_text.split_whitespace().count() as u32,
            completion_tokens: text.split_whitespace().count() as u32,
            text,
            finish_reason: Some("stop".to_string()),
            latency_ms: 0,
        })
    }
}

const TOPICS: [&str; 24] = [
    "the weather", "Monday mornings", "traffic on the highway", "my phone battery",
    "the office printer", "waiting in line", "group projects", "the wifi at home",
    "another software update", "my inbox", "the bus being late", "doing laundry",
    "the gym at 6am", "meetings that could be emails", "airport security",
    "my neighbour's music", "homework", "cooking dinner", "the new season of my show",
    "paying rent", "a flat tire", "self-checkout machines", "the group chat", "jury duty",
];

const SARCASTIC: [&str; 12] = [
    "Oh great, {t}. Just what I needed.",
    "Wow, {t}. Truly living the dream.",
    "I just love how {t} never fails to disappoint. Best day ever.",
    "Nothing says fun like {t}. #blessed",
    "Fantastic, {t} again. Can't wait for more.",
    "Yeah, because {t} is exactly what I wanted today.",
    "Oh wow, {t}? What a shocking surprise.",
    "Thrilled about {t}. Absolutely thrilled.",
    "Wow, {t} really made my day. Not.",
    "Oh sure, {t} is totally the highlight of my week.",
    "Could {t} be any more exciting? I think not.",
    "Another round of {t}? Lucky me!",
];

const NEUTRAL: [&str; 12] = [
    "{T}. Pretty normal day overall.",
    "Thinking about {t} today.",
    "Quick update on {t}, nothing special.",
    "{T}, and that's fine with me.",
    "Spent some time on {t} this afternoon.",
    "Not a bad afternoon: {t} went smoothly.",
    "Had a chat with a friend about {t}.",
    "{T} took longer than expected, but it worked out.",
    "Made some progress with {t} this week.",
    "Noticed {t} on my way home.",
    "Planning to deal with {t} tomorrow.",
    "{T} again today, as usual.",
];

const LEAD_INS: [&str; 4] = [
    "Sure, here you go:",
    "Here are {n} {c} texts:",
    "Certainly! Here are the rewrites:",
    "",
];

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn lowercase_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// A short fragment of the grounding example, or a stock topic.
fn topic(spec: &StrategySpec, rng: &mut ChaCha8Rng) -> String {
    if let Some(example) = &spec.grounding_example {
        let words: Vec<&str> = example
            .text
            .split_whitespace()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '#' && c != '\''))
            .filter(|w| !w.is_empty())
            .collect();
        if words.len() >= 2 {
            let len = rng.random_range(2..=words.len().min(6));
            let start = rng.random_range(0..=words.len() - len);
            return lowercase_first(&words[start..start + len].join(" "));
        }
    }
    TOPICS.choose(rng).expect("non-empty").to_string()
}

fn generation_reply(
    spec: &StrategySpec,
    rng: &mut ChaCha8Rng,
    fixture: Option<&Vec<String>>,
) -> String {
    let construct = spec.polarity.construct_word(&spec.construct_name);
    let mut out = String::new();
    let lead = LEAD_INS.choose(rng).expect("non-empty");
    if !lead.is_empty() {
        out.push_str(
            &lead
                .replace("{n}", &spec.n_generations.to_string())
                .replace("{c}", &construct),
        );
        out.push_str("\n\n");
    }
    let paren = rng.random_bool(0.2);
    for decode in 1..=spec.n_generations {
        let mut item = match fixture.filter(|f| !f.is_empty()) {
            Some(texts) => texts.choose(rng).expect("non-empty").clone(),
            None => {
                let t = topic(spec, rng);
                let bank = match spec.polarity {
                    Polarity::PositiveConstruct => &SARCASTIC,
                    Polarity::NegativeConstruct => &NEUTRAL,
                };
                bank.choose(rng)
                    .expect("non-empty")
                    .replace("{t}", &t)
                    .replace("{T}", &capitalize(&t))
            }
        };
        if let Some(entry) = taxonomy_entry(spec.taxonomy.as_ref(), decode) {
            if entry.to_lowercase().contains("caps") && spec.polarity.is_positive() {
                item = item.to_uppercase();
            }
            if rng.random_bool(0.7) {
                item = format!("{entry}: {item}");
            }
        }
        if rng.random_bool(0.2) {
            item = format!("\"{item}\"");
        }
        let marker = if paren { ")" } else { "." };
        out.push_str(&format!("{decode}{marker} {item}\n"));
    }
    if rng.random_bool(0.2) {
        out.push_str("\nI hope these help!\n");
    }
    out.trim_end().to_string()
}

fn taxonomy_entry(taxonomy: Option<&Taxonomy>, decode: usize) -> Option<&str> {
    taxonomy?
        .entries
        .get(decode - 1)
        .map(|e| e.name.as_str())
}

const SARCASM_FORMS: [(&str, &str); 10] = [
    ("Verbal Irony", "Saying something but meaning the exact opposite."),
    ("Sarcastic Mimicry", "Imitating or repeating others' statements sarcastically."),
    ("Sarcasm of Ignorance", "Pretending to ignore or not understand the obvious."),
    ("Caps Lock Sarcasm", "Using all caps in written communication for sarcastic emphasis."),
    ("Hyperbole", "Exaggerating wildly to mock a situation."),
    ("Understatement", "Downplaying something that is obviously significant."),
    ("Rhetorical Questions", "Asking questions whose answer is painfully obvious."),
    ("Deadpan Delivery", "Stating something absurd in a completely flat tone."),
    ("False Enthusiasm", "Expressing excitement about something clearly unpleasant."),
    ("Backhanded Compliments", "Praising in a way that is actually an insult."),
];

fn elicitation_reply(construct_name: &str, k: usize, rng: &mut ChaCha8Rng) -> String {
    let mut forms: Vec<(String, String)> = if construct_name.to_lowercase().contains("sarcas") {
        SARCASM_FORMS
            .iter()
            .map(|(n, d)| (n.to_string(), d.to_string()))
            .collect()
    } else {
        Vec::new()
    };
    rand::seq::SliceRandom::shuffle(forms.as_mut_slice(), rng);
    let mut out = format!("Sure! Here are {k} ways a text can be {construct_name}:\n\n");
    for i in 1..=k {
        let (name, description) = forms.get(i - 1).cloned().unwrap_or_else(|| {
            (
                format!("Variant {i}"),
                format!("A distinct way of being {construct_name}, number {i}."),
            )
        });
        out.push_str(&format!("{i}. {name}: {description}\n"));
    }
    out.trim_end().to_string()
}

const MARKERS: [&str; 14] = [
    "oh ", "wow", "great", "love", "thrilled", "fantastic", "just what", "can't wait", "totally",
    "#not", "best", "lucky me", "sure", "yeah",
];

/// Keyword heuristic with a little seeded noise.
fn zero_shot_reply(text: &str, rng: &mut ChaCha8Rng) -> String {
    let lower = format!("{} ", text.to_lowercase());
    let mut yes = MARKERS.iter().any(|m| lower.contains(m));
    if rng.random_bool(0.1) {
        yes = !yes;
    }
    let options: &[&str] = if yes {
        &["Yes.", "yes", "Yes, it is."]
    } else {
        &["No.", "no", "No, it is not."]
    };
    options.choose(rng).expect("non-empty").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabeledText;
    use crate::prompting::{render_prompt, render_zero_shot, Strategy};

    fn prompt(id: &str, polarity: Polarity) -> PromptInstance {
        render_prompt(&StrategySpec {
            strategy: Strategy::Grounding,
            polarity,
            n_generations: 10,
            grounding_example: Some(LabeledText::real("r", "Stuck at the airport for six hours again", None)),
            taxonomy: None,
            construct_name: "sarcastic".into(),
        })
        .unwrap()
        .with_id(id)
    }

    #[test]
    fn seeded_replies_are_deterministic() {
        let a = MockBackend::seeded(42);
        let b = MockBackend::seeded(42);
        let p = prompt("grounding-000001", Polarity::PositiveConstruct);
        let params = GenerationParams::default();
        assert_eq!(a.send(&p, &params).unwrap().text, b.send(&p, &params).unwrap().text);
        let other = MockBackend::seeded(43).send(&p, &params).unwrap().text;
        assert_ne!(a.send(&p, &params).unwrap().text, other);
    }

    #[test]
    fn seeded_lists_have_requested_length() {
        let backend = MockBackend::seeded(7);
        for i in 0..50 {
            let p = prompt(&format!("g-{i}"), Polarity::NegativeConstruct);
            let text = backend.send(&p, &GenerationParams::default()).unwrap().text;
            let parsed = crate::cleaning::parse_numbered_list(&text, 10).unwrap();
            assert_eq!(parsed.items.len(), 10, "{text}");
        }
    }

    #[test]
    fn zero_shot_fixed_reply() {
        let backend = MockBackend::fixed("yes");
        let p = render_zero_shot("sarcastic", "whatever").unwrap();
        assert_eq!(backend.send(&p, &GenerationParams::default()).unwrap().text, "yes");
    }
}
