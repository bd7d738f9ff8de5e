//! LLM completion: decoding parameters, pluggable backends (remote chat API
//! or deterministic mock), rate limiting, retries, concurrent job execution
//! and the zero-shot annotation baseline.

mod mock;
mod rate_limit;
mod remote;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{MockBackend, MockMode};
pub use rate_limit::{Clock, ManualClock, RateLimiter, SystemClock};
pub use remote::ChatApiBackend;

use crate::corpus::Polarity;
use crate::prompting::{render_zero_shot, PromptInstance};

/// Decoding parameters. The defaults favour diverse output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            frequency_penalty: 0.5,
            presence_penalty: 0.4,
            max_tokens: 700,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GenerationError::Config("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) || self.top_p.is_nan() {
            return Err(GenerationError::Config("top_p must lie in (0, 1]".into()));
        }
        if self.max_tokens == 0 {
            return Err(GenerationError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[serde(alias = "remote")]
    RemoteChatApi,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub backoff_multiplier: f64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            initial_backoff_ms: 500,
            backoff_multiplier: 2.0,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, given `attempt` failures so far.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = self.backoff_multiplier.powi(attempt.saturating_sub(1) as i32);
        let ms = (self.initial_backoff_ms as f64 * factor).min(self.max_backoff_ms as f64);
        Duration::from_millis(ms as u64)
    }
}

/// Declarative provider settings, as found in the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub rate_limit_per_minute: Option<u32>,
    pub retry: RetryPolicy,
    pub timeout_secs: u64,
    pub parallelism: usize,
    /// Mock only; falls back to the run seed when absent.
    pub mock_seed: Option<u64>,
    /// Mock only; one text per line, sampled to build generation lists.
    pub mock_fixture: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint: None,
            model_name: "gpt-3.5-turbo".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            rate_limit_per_minute: Some(60),
            retry: RetryPolicy::default(),
            timeout_secs: 120,
            parallelism: 4,
            mock_seed: None,
            mock_fixture: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProviderMetadata {
    pub model_name: String,
    pub latency_ms: u64,
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
    pub finish_reason: Option<String>,
}

/// One archived provider response. Empty `raw_text` is kept, never dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub prompt_id: String,
    pub raw_text: String,
    pub refusal: bool,
    pub provider_metadata: ProviderMetadata,
    pub request_params: GenerationParams,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub finish_reason: Option<String>,
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("request rejected: {0}")]
    Fatal(String),
}

pub trait CompletionBackend: Send + Sync {
    fn model_name(&self) -> &str;
    fn send(
        &self,
        prompt: &PromptInstance,
        params: &GenerationParams,
    ) -> Result<BackendReply, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("request failed: {0}")]
    Request(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("skipped after an earlier authentication failure")]
    Aborted,
}

impl GenerationError {
    /// Errors that make every further request pointless.
    pub fn is_fatal_for_run(&self) -> bool {
        matches!(self, GenerationError::Auth(_) | GenerationError::Config(_))
    }
}

const REFUSAL_OPENINGS: [&str; 16] = [
    "i'm sorry",
    "i am sorry",
    "sorry, but",
    "sorry, i",
    "i apologize",
    "i can't",
    "i cannot",
    "i can not",
    "i won't",
    "i will not",
    "as an ai",
    "i'm not able",
    "i am not able",
    "i'm unable",
    "i am unable",
    "unfortunately, i",
];

/// A reply that opens with a refusal phrase and contains no numbered list.
pub fn is_refusal(text: &str) -> bool {
    let lower = text.trim_start().to_lowercase().replace('\u{2019}', "'");
    let opens = REFUSAL_OPENINGS.iter().any(|p| lower.starts_with(p));
    let has_list = text.lines().any(|l| {
        let t = l.trim_start();
        let digits = t.chars().take_while(char::is_ascii_digit).count();
        digits > 0 && t[digits..].starts_with(['.', ')'])
    });
    opens && !has_list
}

/// Backend plus the policies around it: retries, backoff and rate limits.
pub struct Completer {
    backend: Box<dyn CompletionBackend>,
    params: GenerationParams,
    retry: RetryPolicy,
    limiter: Option<RateLimiter>,
    clock: Arc<dyn Clock>,
}

impl Completer {
    pub fn new(backend: Box<dyn CompletionBackend>, params: GenerationParams) -> Self {
        Self {
            backend,
            params,
            retry: RetryPolicy::default(),
            limiter: None,
            clock: Arc::new(SystemClock::default()),
        }
    }

    pub fn mock(seed: u64) -> Self {
        Self::new(Box::new(MockBackend::seeded(seed)), GenerationParams::default())
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        if let Some(limiter) = self.limiter.take() {
            self.limiter = Some(RateLimiter::new(limiter.per_minute(),Arc::clone(&self.clock)));
        }
        self
    }

    pub fn with_rate_limit(mut self, per_minute: u32) -> Self {
        self.limiter = Some(RateLimiter::new(per_minute, Arc::clone(&self.clock)));
        self
    }

    pub fn params(&self) -> &GenerationParams {
        &self.params
    }

    pub fn model_name(&self) -> &str {
        self.backend.model_name()
    }

    /// Builds a completer from config. The remote provider reads its key
    /// from the environment variable named in the config.
    pub fn from_config(
        config: &ProviderConfig,
        params: GenerationParams,
        run_seed: u64,
    ) -> Result<Self, GenerationError> {
        params.validate()?;
        let completer = match config.kind {
            ProviderKind::Mock => {
                let seed = config.mock_seed.unwrap_or(run_seed);
                let backend = match &config.mock_fixture {
                    Some(path) => {
                        let content = std::fs::read_to_string(path).map_err(|e| {
                            GenerationError::Config(format!("{}: {e}", path.display()))
                        })?;
                        let texts: Vec<String> = content
                            .lines()
                            .map(str::trim)
                            .filter(|l| !l.is_empty())
                            .map(str::to_string)
                            .collect();
                        if texts.is_empty() {
                            return Err(GenerationError::Config(format!(
                                "mock fixture {} is empty",
                                path.display()
                            )));
                        }
                        MockBackend::new(MockMode::Fixture { seed, texts })
                    }
                    None => MockBackend::seeded(seed),
                };
                Completer::new(Box::new(backend), params)
            }
            ProviderKind::RemoteChatApi => {
                let endpoint = config.endpoint.as_deref().ok_or_else(|| {
                    GenerationError::Config("remote provider requires an endpoint".into())
                })?;
                let key = std::env::var(&config.api_key_env).map_err(|_| {
                    GenerationError::Config(format!(
                        "remote provider requires the {} environment variable",
                        config.api_key_env
                    ))
                })?;
                let backend = ChatApiBackend::new(
                    endpoint,
                    &config.model_name,
                    key,
                    Duration::from_secs(config.timeout_secs),
                );
                let mut c = Completer::new(Box::new(backend), params);
                if let Some(rate) = config.rate_limit_per_minute {
                    c = c.with_rate_limit(rate);
                }
                c
            }
        };
        Ok(completer.with_retry(config.retry))
    }

    /// Sends one prompt, retrying transient failures with exponential backoff.
    pub fn complete(&self, prompt: &PromptInstance) -> Result<RawCompletion, GenerationError> {
        if prompt.rendered_text.trim().is_empty() {
            return Err(GenerationError::EmptyPrompt);
        }
        let max_attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            match self.backend.send(prompt, &self.params) {
                Ok(reply) => {
                    let refusal = reply.finish_reason.as_deref() == Some("content_filter")
                        || is_refusal(&reply.text);
                    return Ok(RawCompletion {
                        prompt_id: prompt.id.clone(),
                        raw_text: reply.text,
                        refusal,
                        provider_metadata: ProviderMetadata {
                            model_name: self.backend.model_name().to_string(),
                            latency_ms: reply.latency_ms,
                            prompt_tokens: reply.prompt_tokens,
                            completion_tokens: reply.completion_tokens,
                            finish_reason: reply.finish_reason,
                        },
                        request_params: self.params,
                        attempts: attempt,
                    });
                }
                Err(BackendError::Auth(msg)) => return Err(GenerationError::Auth(msg)),
                Err(BackendError::Fatal(msg)) => return Err(GenerationError::Request(msg)),
                Err(BackendError::Transient(msg)) => {
                    tracing::warn!(prompt_id = %prompt.id, attempt, %msg, "transient provider failure");
                    last = msg;
                    if attempt < max_attempts {
                        self.clock.sleep(self.retry.backoff(attempt));
                    }
                }
            }
        }
        Err(GenerationError::Exhausted {
            attempts: max_attempts,
            last,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub prompt_id: String,
    pub error: String,
    pub fatal_for_run: bool,
}

#[derive(Debug, Default)]
pub struct GenerationOutcome {
    /// In input order.
    pub completions: Vec<RawCompletion>,
    pub failures: Vec<GenerationFailure>,
    pub aborted: bool,
}

/// Runs prompts on up to `parallelism` worker threads. `on_completion` is
/// called as each response arrives (for crash-safe archiving); the returned
/// outcome is in input order regardless of completion order. An
/// authentication failure stops all further requests.
pub fn run_prompts<F>(
    prompts: &[PromptInstance],
    completer: &Completer,
    parallelism: usize,
    on_completion: F,
) -> GenerationOutcome
where
    F: Fn(&RawCompletion) + Sync,
{
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<RawCompletion, GenerationError>>>> =
        Mutex::new(vec![None; prompts.len()]);
    let workers = parallelism.clamp(1, prompts.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= prompts.len() {
                    break;
                }
                let result = if abort.load(Ordering::SeqCst) {
                    Err(GenerationError::Aborted)
                } else {
                    completer.complete(&prompts[i])
                };
                match &result {
                    Ok(c) => on_completion(c),
                    Err(e) if e.is_fatal_for_run() => abort.store(true, Ordering::SeqCst),
                    Err(_) => {}
                }
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });

    let mut outcome = GenerationOutcome {
        aborted: abort.load(Ordering::SeqCst),
        ..GenerationOutcome::default()
    };
    for (prompt, slot) in prompts.iter().zip(slots.into_inner().unwrap()) {
        match slot.expect("every slot is filled") {
            Ok(c) => outcome.completions.push(c),
            Err(e) => outcome.failures.push(GenerationFailure {
                prompt_id: prompt.id.clone(),
                fatal_for_run: e.is_fatal_for_run(),
                error: e.to_string(),
            }),
        }
    }
    outcome
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ZeroShotError {
    #[error("empty text")]
    EmptyText,
    #[error("ambiguous answers {0:?}")]
    Ambiguous(Vec<String>),
    #[error(transparent)]
    Generation(#[from] GenerationError),
}

/// Maps a yes/no answer onto a polarity, ignoring case and punctuation.
pub fn parse_yes_no(answer: &str) -> Option<Polarity> {
    let first = answer
        .split(|c: char| !c.is_alphanumeric())
        .find(|w| !w.is_empty())?
        .to_lowercase();
    match first.as_str() {
        "yes" => Some(Polarity::PositiveConstruct),
        "no" => Some(Polarity::NegativeConstruct),
        _ => None,
    }
}

/// Labels `text` by asking the model directly. An unparseable answer is
/// retried once (as a distinct request) before giving up.
pub fn zero_shot_annotate(
    text: &str,
    completer: &Completer,
    construct_name: &str,
) -> Result<Polarity, ZeroShotError> {
    if text.trim().is_empty() {
        return Err(ZeroShotError::EmptyText);
    }
    let prompt = render_zero_shot(construct_name, text).expect("zero-shot template is valid");
    let mut answers = Vec::new();
    for attempt in 0..2 {
        let request = if attempt == 0 {
            prompt.clone()
        } else {
            prompt.clone().with_id(format!("{}-retry", prompt.id))
        };
        let reply = completer.complete(&request)?;
        if let Some(p) = parse_yes_no(&reply.raw_text) {
            return Ok(p);
        }
        answers.push(reply.raw_text);
    }
    Err(ZeroShotError::Ambiguous(answers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabeledText;
    use crate::prompting::{render_prompt, Strategy, StrategySpec};

    struct Scripted {
        replies: Mutex<Vec<Result<BackendReply, BackendError>>>,
        calls: AtomicUsize,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<BackendReply, BackendError>>) -> Self {
            replies.reverse();
            Self {
                replies: Mutex::new(replies),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl CompletionBackend for Scripted {
        fn model_name(&self) -> &str {
            "scripted"
        }
        fn send(&self, _: &PromptInstance, _: &GenerationParams) -> Result<BackendReply, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies
                .lock()
                .unwrap()
                .pop()
                .unwrap_or(Err(BackendError::Fatal("script exhausted".into())))
        }
    }

    fn ok(text: &str) -> Result<BackendReply, BackendError> {
        Ok(BackendReply {
            text: text.into(),
            finish_reason: Some("stop".into()),
            prompt_tokens: 1,
            completion_tokens: 1,
            latency_ms: 0,
        })
    }

    fn prompt() -> PromptInstance {
        render_prompt(&StrategySpec {
            strategy: Strategy::Simple,
            polarity: Polarity::PositiveConstruct,
            n_generations: 10,
            grounding_example: None,
            taxonomy: None,
            construct_name: "sarcastic".into(),
        })
        .unwrap()
    }

    #[test]
    fn defaults_match_decoding_settings() {
        let p = GenerationParams::default();
        assert_eq!(
            (p.temperature, p.top_p, p.frequency_penalty, p.presence_penalty, p.max_tokens),
            (1.0, 1.0, 0.5, 0.4, 700)
        );
    }

    #[test]
    fn transient_failures_are_retried_with_backoff() {
        let clock = ManualClock::new();
        let completer = Completer::new(
            Box::new(Scripted::new(vec![
                Err(BackendError::Transient("500".into())),
                Err(BackendError::Transient("500".into())),
                ok("1. fine"),
            ])),
            GenerationParams::default(),
        )
        .with_clock(Arc::new(clock.clone()));
        let c = completer.complete(&prompt()).unwrap();
        assert_eq!(c.attempts, 3);
        // 500ms then 1000ms
        assert_eq!(clock.now(), Duration::from_millis(1500));
    }

    #[test]
    fn exhaustion_and_auth_errors() {
        let clock = Arc::new(ManualClock::new());
        let completer = Completer::new(
            Box::new(Scripted::new(vec![Err(BackendError::Transient("503".into())); 5])),
            GenerationParams::default(),
        )
        .with_clock(clock);
        assert!(matches!(
            completer.complete(&prompt()),
            Err(GenerationError::Exhausted { attempts: 5, .. })
        ));

        let backend = Scripted::new(vec![Err(BackendError::Auth("401".into())), ok("never")]);
        let completer = Completer::new(Box::new(backend), GenerationParams::default());
        assert!(matches!(completer.complete(&prompt()), Err(GenerationError::Auth(_))));
    }

    #[test]
    fn refusals_are_flagged_not_dropped() {
        let completer = Completer::new(
            Box::new(Scripted::new(vec![ok("I'm sorry, I can't help with that.")])),
            GenerationParams::default(),
        );
        let c = completer.complete(&prompt()).unwrap();
        assert!(c.refusal);
        assert!(!is_refusal("Sorry to say:\n1. Oh great, rain."));
        let filtered = Completer::new(
            Box::new(Scripted::new(vec![Ok(BackendReply {
                text: String::new(),
                finish_reason: Some("content_filter".into()),
                prompt_tokens: 0,
                completion_tokens: 0,
                latency_ms: 0,
            })])),
            GenerationParams::default(),
        );
        let c = filtered.complete(&prompt()).unwrap();
        assert!(c.refusal);
        assert_eq!(c.raw_text, "");
    }

    #[test]
    fn mock_completions_are_reproducible() {
        let a = Completer::mock(42).complete(&prompt()).unwrap();
        let b = Completer::mock(42).complete(&prompt()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_run_keeps_input_order() {
        let prompts: Vec<_> = (0..40)
            .map(|i| {
                render_prompt(&StrategySpec {
                    strategy: Strategy::Grounding,
                    polarity: if i % 2 == 0 {
                        Polarity::PositiveConstruct
                    } else {
                        Polarity::NegativeConstruct
                    },
                    n_generations: 5,
                    grounding_example: Some(LabeledText::real(format!("r{i}"), format!("text {i} here"), None)),
                    taxonomy: None,
                    construct_name: "sarcastic".into(),
                })
                .unwrap()
                .with_id(format!("grounding-{i:06}"))
            })
            .collect();
        let completer = Completer::mock(3);
        let seen = AtomicUsize::new(0);
        let parallel = run_prompts(&prompts, &completer, 8, |_| {
            seen.fetch_add(1, Ordering::SeqCst);
        });
        let serial = run_prompts(&prompts, &completer, 1, |_| {});
        assert_eq!(seen.load(Ordering::SeqCst), 40);
        assert_eq!(parallel.completions, serial.completions);
        assert!(parallel.failures.is_empty());
    }

    #[test]
    fn auth_failure_aborts_remaining_jobs() {
        let backend = Scripted::new(vec![ok("1. a b c"), Err(BackendError::Auth("401".into()))]);
        let completer = Completer::new(Box::new(backend), GenerationParams::default());
        let prompts: Vec<_> = (0..5).map(|i| prompt().with_id(format!("p{i}"))).collect();
        let outcome = run_prompts(&prompts, &completer, 1, |_| {});
        assert!(outcome.aborted);
        assert_eq!(outcome.completions.len(), 1);
        assert_eq!(outcome.failures.len(), 4);
        // persisted = requests - fatal errors
        assert_eq!(outcome.completions.len(), prompts.len() - outcome.failures.len());
    }

    #[test]
    fn yes_no_parsing() {
        assert_eq!(parse_yes_no("yes"), Some(Polarity::PositiveConstruct));
        assert_eq!(parse_yes_no("No."), Some(Polarity::NegativeConstruct));
        assert_eq!(parse_yes_no("  YES, definitely"), Some(Polarity::PositiveConstruct));
        assert_eq!(parse_yes_no("maybe"), None);
    }

    #[test]
    fn zero_shot_with_fixed_mock() {
        let yes = Completer::new(Box::new(MockBackend::fixed("yes")), GenerationParams::default());
        assert_eq!(
            zero_shot_annotate("some text", &yes, "sarcastic").unwrap(),
            Polarity::PositiveConstruct
        );
        let no = Completer::new(Box::new(MockBackend::fixed("No.")), GenerationParams::default());
        assert_eq!(
            zero_shot_annotate("some text", &no, "sarcastic").unwrap(),
            Polarity::NegativeConstruct
        );
        let unsure = Scripted::new(vec![ok("hmm"), ok("perhaps")]);
        let c = Completer::new(Box::new(unsure), GenerationParams::default());
        assert_eq!(
            zero_shot_annotate("x y", &c, "sarcastic").unwrap_err(),
            ZeroShotError::Ambiguous(vec!["hmm".into(), "perhaps".into()])
        );
        let retry_ok = Scripted::new(vec![ok("hmm"), ok("Yes!")]);
        let c = Completer::new(Box::new(retry_ok), GenerationParams::default());
        assert_eq!(zero_shot_annotate("x y", &c, "sarcastic").unwrap(), Polarity::PositiveConstruct);
    }
}
