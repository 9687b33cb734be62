//! Completion backends and the suggest -> parse -> repair loop.

mod http;
mod mock;

use std::fmt::Write as _;

use thiserror::Error;

use crate::features::tokenize_words;
use crate::mapping::LlmScaleSuggestion;
use crate::prompting::{build_prompt, PromptError, PromptSpec};
use crate::response::{parse_response, ParseDiagnostic};

pub use http::{complete, HttpBackend};
pub use mock::{mock_complete, MockBackend};

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited; gave up after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("network error after {attempts} attempt(s): {detail}")]
    Network { attempts: u32, detail: String },
    #[error("API returned HTTP {status}: {detail}")]
    Status { status: u16, detail: String },
    #[error("malformed API response: {0}")]
    MalformedApiResponse(String),
    #[error("prompt has no enumerated target words")]
    UnrecognizedPrompt,
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
}

/// Anything that turns a prompt into completion text.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for &T {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        (**self).complete(prompt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    /// Base URL of a chat-completions style API, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable that holds the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub max_parallel: usize,
    /// First retry delay; doubles per retry up to `max_backoff_ms`.
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-3.5-turbo".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            temperature: 0.0,
            timeout_s: 60.0,
            max_retries: 4,
            max_parallel: 4,
            initial_backoff_ms: 500,
            max_backoff_ms: 20_000,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |s: String| Err(BackendError::InvalidConfig(s));
        if self.base_url.trim().is_empty() {
            return bad("base_url is empty".into());
        }
        if !(self.temperature >= 0.0) {
            return bad(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            ));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return bad(format!("timeout must be > 0, got {}", self.timeout_s));
        }
        if self.max_parallel == 0 {
            return bad("max_parallel must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairPolicy {
    pub max_attempts: u32,
    /// Appended to the original prompt after a rejected response.
    /// `{response}` and `{diagnostics}` are substituted.
    pub repair_instruction_template: String,
}

pub const DEFAULT_REPAIR_TEMPLATE: &str = "
# Correction
Your previous response could not be used.
Previous response:
{response}
Problems found:
{diagnostics}
Answer again. Follow the response format exactly and give exactly one WORD line for every target word, in order.
Response:
";

impl Default for RepairPolicy {
    fn default() -> Self {
        RepairPolicy {
            max_attempts: 3,
            repair_instruction_template: DEFAULT_REPAIR_TEMPLATE.into(),
        }
    }
}

impl RepairPolicy {
    fn repair_prompt(&self, base: &str, response: &str, diagnostics: &[ParseDiagnostic]) -> String {
        let listed = diagnostics
            .iter()
            .map(|d| format!("- {d}"))
            .collect::<Vec<_>>()
            .join("\n");
        let mut prompt = base.to_string();
        prompt.push_str(
            &self
                .repair_instruction_template
                .replace("{response}", response.trim_end())
                .replace("{diagnostics}", &listed),
        );
        prompt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attempt {
    pub prompt: String,
    pub response: String,
    /// Rejection reasons, or warnings for the accepted attempt.
    pub diagnostics: Vec<ParseDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Transcript {
    pub attempts: Vec<Attempt>,
}

impl Transcript {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, a) in self.attempts.iter().enumerate() {
            let _ = writeln!(out, "=== attempt {} ===", i + 1);
            out.push_str("--- prompt ---\n");
            out.push_str(&a.prompt);
            if !a.prompt.ends_with('\n') {
                out.push('\n');
            }
            out.push_str("--- response ---\n");
            out.push_str(&a.response);
            if !a.response.ends_with('\n') {
                out.push('\n');
            }
            out.push_str("--- diagnostics ---\n");
            if a.diagnostics.is_empty() {
                out.push_str("(none)\n");
            }
            for d in &a.diagnostics {
                let _ = writeln!(out, "{d}");
            }
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("backend error: {source}")]
    Backend {
        source: BackendError,
        transcript: Transcript,
    },
    #[error("no usable response after {} attempt(s)", .transcript.attempts.len())]
    RepairExhausted {
        /// Diagnostics of each rejected attempt, in order.
        diagnostics: Vec<Vec<ParseDiagnostic>>,
        transcript: Transcript,
    },
}

impl LlmError {
    pub fn transcript(&self) -> Option<&Transcript> {
        match self {
            LlmError::Prompt(_) => None,
            LlmError::Backend { transcript, .. } | LlmError::RepairExhausted { transcript, .. } => {
                Some(transcript)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suggestion {
    pub suggestion: LlmScaleSuggestion,
    pub transcript: Transcript,
}

/// Prompts the backend and re-asks with diagnostics until a response parses
/// or `policy.max_attempts` is used up.
pub fn suggest_with_repair(
    spec: &PromptSpec,
    backend: &dyn CompletionBackend,
    policy: &RepairPolicy,
) -> Result<Suggestion, LlmError> {
    let base = build_prompt(spec)?;
    let expected = tokenize_words(&spec.target_text);
    let mut transcript = Transcript::default();
    let mut rejected = Vec::new();
    let mut prompt = base.clone();

    for _ in 0..policy.max_attempts.max(1) {
        let response = match backend.complete(&prompt) {
            Ok(r) => r,
            Err(source) => return Err(LlmError::Backend { source, transcript }),
        };
        match parse_response(&response, &expected) {
            Ok(parsed) => {
                transcript.attempts.push(Attempt {
                    prompt,
                    response,
                    diagnostics: parsed.warnings,
                });
                return Ok(Suggestion {
                    suggestion: parsed.suggestion,
                    transcript,
                });
            }
            Err(failure) => {
                let next = policy.repair_prompt(&base, &response, &failure.diagnostics);
                rejected.push(failure.diagnostics.clone());
                transcript.attempts.push(Attempt {
                    prompt: std::mem::replace(&mut prompt, next),
                    response,
                    diagnostics: failure.diagnostics,
                });
            }
        }
    }
    Err(LlmError::RepairExhausted {
        diagnostics: rejected,
        transcript,
    })
}
