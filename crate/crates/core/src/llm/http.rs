use std::fmt;
use std::thread;
use std::time::Duration;

use rand::Rng;
use serde_json::{json, Value};

use super::{BackendConfig, BackendError, CompletionBackend};

/// Chat-completions client. Holds the API key, so `Debug` redacts it.
pub struct HttpBackend {
    config: BackendConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

enum Outcome {
    Done(String),
    Retry { rate_limited: bool, detail: String },
    Fatal(BackendError),
}

impl HttpBackend {
    /// Reads the key from `config.api_key_env`; fails without touching the network
    /// when it is unset or empty.
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let api_key = match std::env::var(&config.api_key_env) {
            Ok(k) if !k.trim().is_empty() => k,
            _ => {
                return Err(BackendError::Auth(format!(
                    "environment variable {} is not set",
                    config.api_key_env
                )))
            }
        };
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .http_status_as_error(false)
            .build();
        Ok(HttpBackend {
            agent: ureq::Agent::new_with_config(agent_config),
            config,
            api_key,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self
            .config
            .initial_backoff_ms
            .saturating_mul(1u64 << retry.min(20))
            .min(self.config.max_backoff_ms);
        let jitter: f64 = rand::rng().random_range(0.5..=1.0);
        Duration::from_millis((base as f64 * jitter) as u64)
    }

    fn attempt(&self, prompt: &str) -> Outcome {
        let body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        });
        let result = self
            .agent
            .post(self.endpoint())
            .header("Authorization", format!("Bearer {}", self.api_key))
            .send_json(&body);
        let mut resp = match result {
            Ok(r) => r,
            Err(e) => return classify_transport(e),
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        match status {
            200..=299 => match extract_content(&text) {
                Ok(s) => Outcome::Done(s),
                Err(e) => Outcome::Fatal(e),
            },
            401 | 403 => Outcome::Fatal(BackendError::Auth(format!("HTTP {status}"))),
            429 => Outcome::Retry {
                rate_limited: true,
                detail: "HTTP 429".into(),
            },
            408 | 500..=599 => Outcome::Retry {
                rate_limited: false,
                detail: format!("HTTP {status}"),
            },
            _ => Outcome::Fatal(BackendError::Status {
                status,
                detail: api_error_message(&text),
            }),
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let attempts = self.config.max_retries + 1;
        let mut last = (false, String::new());
        for n in 1..=attempts {
            match self.attempt(prompt) {
                Outcome::Done(s) => return Ok(s),
                Outcome::Fatal(e) => return Err(e),
                Outcome::Retry {
                    rate_limited,
                    detail,
                } => {
                    last = (rate_limited, detail);
                    if n < attempts {
                        thread::sleep(self.backoff(n - 1));
                    }
                }
            }
        }
        Err(if last.0 {
            BackendError::RateLimited { attempts }
        } else {
            BackendError::Network {
                attempts,
                detail: last.1,
            }
        })
    }
}

/// One-shot convenience: builds a client from `config` and sends `prompt`.
pub fn complete(prompt: &str, config: &BackendConfig) -> Result<String, BackendError> {
    HttpBackend::new(config.clone())?.complete(prompt)
}

fn classify_transport(e: ureq::Error) -> Outcome {
    use ureq::Error as E;
    match e {
        E::Timeout(_) | E::Io(_) | E::ConnectionFailed | E::HostNotFound | E::BodyStalled => {
            Outcome::Retry {
                rate_limited: false,
                detail: e.to_string(),
            }
        }
        other => Outcome::Fatal(BackendError::Network {
            attempts: 1,
            detail: other.to_string(),
        }),
    }
}

fn extract_content(body: &str) -> Result<String, BackendError> {
    let malformed = |s: &str| BackendError::MalformedApiResponse(s.to_string());
    let v: Value = serde_json::from_str(body).map_err(|e| malformed(&format!("not JSON: {e}")))?;
    let choice = v
        .get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| malformed("no choices"))?;
    choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| malformed("first choice has no message content"))
}

fn api_error_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| {
            v.pointer("/error/message")
                .and_then(Value::as_str)
                .map(str::to_string)
        })
        .unwrap_or_else(|| body.chars().take(200).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"REASONING: x"}}]}"#;
        assert_eq!(extract_content(body).unwrap(), "REASONING: x");
        assert!(matches!(
            extract_content(r#"{"choices":[]}"#),
            Err(BackendError::MalformedApiResponse(_))
        ));
        assert!(extract_content("<html>").is_err());
    }

    #[test]
    fn missing_key_is_auth_error() {
        let config = BackendConfig {
            api_key_env: "PROSODY_TEST_DEFINITELY_UNSET_KEY".into(),
            base_url: "http://127.0.0.1:9".into(),
            ..BackendConfig::default()
        };
        assert!(matches!(
            HttpBackend::new(config),
            Err(BackendError::Auth(_))
        ));
    }

    #[test]
    fn debug_redacts_key() {
        std::env::set_var("PROSODY_TEST_REDACT_KEY", "sk-secret-value");
        let config = BackendConfig {
            api_key_env: "PROSODY_TEST_REDACT_KEY".into(),
            ..BackendConfig::default()
        };
        let backend = HttpBackend::new(config).unwrap();
        assert!(!format!("{backend:?}").contains("sk-secret-value"));
    }
}
