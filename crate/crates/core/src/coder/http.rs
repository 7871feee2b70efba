//! Vendor-neutral chat-completion HTTP backend.
//!
//! Requests POST `{"model", "messages", "temperature"}` and read the first
//! choice's message content. Retries cover HTTP 429 and 5xx with
//! exponential backoff and full jitter; 401/403 fail immediately. A
//! token-bucket limiter can be shared across concurrent sessions to bound
//! the request rate.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChatMessage, CoderBackend, CoderError, SessionState};

pub const DEFAULT_API_KEY_ENV: &str = "CODER_API_KEY";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpChatConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub api_key_env: String,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpChatConfig {
    fn default() -> Self {
        HttpChatConfig {
            endpoint: String::new(),
            model: "default".to_string(),
            temperature: 0.0,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            max_retries: 4,
            backoff_base_ms: 250,
            timeout_secs: 60,
        }
    }
}

impl HttpChatConfig {
    pub fn validate(&self) -> Result<(), CoderError> {
        if self.endpoint.is_empty() {
            return Err(CoderError::BackendUnavailable(
                "http backend needs an endpoint URL".to_string(),
            ));
        }
        if self.temperature < 0.0 {
            return Err(CoderError::BackendUnavailable(
                "temperature must be nonnegative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Blocking token bucket; `acquire` waits until a token is available.
pub struct TokenBucket {
    capacity: f64,
    refill_per_sec: f64,
    state: Mutex<(f64, Instant)>,
    signal: Condvar,
}

impl TokenBucket {
    pub fn new(capacity: f64, refill_per_sec: f64) -> Self {
        assert!(capacity >= 1.0 && refill_per_sec > 0.0);
        TokenBucket {
            capacity,
            refill_per_sec,
            state: Mutex::new((capacity, Instant::now())),
            signal: Condvar::new(),
        }
    }

    pub fn acquire(&self) {
        let mut state = self.state.lock().expect("bucket lock");
        loop {
            let now = Instant::now();
            let elapsed = now.duration_since(state.1).as_secs_f64();
            state.0 = (state.0 + elapsed * self.refill_per_sec).min(self.capacity);
            state.1 = now;
            if state.0 >= 1.0 {
                state.0 -= 1.0;
                return;
            }
            let wait = (1.0 - state.0) / self.refill_per_sec;
            let (guard, _) = self
                .signal
                .wait_timeout(state, Duration::from_secs_f64(wait))
                .expect("bucket wait");
            state = guard;
        }
    }
}

/// HTTP chat backend over a blocking client.
pub struct HttpChatBackend {
    config: HttpChatConfig,
    client: reqwest::blocking::Client,
    api_key: String,
    jitter: ChaCha8Rng,
    limiter: Option<Arc<TokenBucket>>,
}

impl HttpChatBackend {
    /// Build the backend; fails with `AuthError` before any request when
    /// the configured key variable is absent.
    pub fn new(config: HttpChatConfig) -> Result<Self, CoderError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            CoderError::AuthError(format!(
                "environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| CoderError::BackendUnavailable(e.to_string()))?;
        Ok(HttpChatBackend {
            config,
            client,
            api_key,
            jitter: ChaCha8Rng::seed_from_u64(0x6a6974746572),
            limiter: None,
        })
    }

    pub fn with_limiter(mut self, limiter: Arc<TokenBucket>) -> Self {
        self.limiter = Some(limiter);
        self
    }
}

impl CoderBackend for HttpChatBackend {
    fn send(&mut self, session: &SessionState, message: &str) -> Result<String, CoderError> {
        let mut messages = session.messages.clone();
        messages.push(ChatMessage {
            role: super::Role::User,
            content: message.to_string(),
        });
        http_send(
            &self.client,
            &self.config,
            &self.api_key,
            &messages,
            &mut self.jitter,
            self.limiter.as_deref(),
        )
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn name(&self) -> String {
        format!("http({})", self.config.model)
    }
}

/// POST one chat-completion request with the configured retry policy and
/// return the first choice's message content.
pub fn http_send(
    client: &reqwest::blocking::Client,
    config: &HttpChatConfig,
    api_key: &str,
    messages: &[ChatMessage],
    jitter: &mut ChaCha8Rng,
    limiter: Option<&TokenBucket>,
) -> Result<String, CoderError> {
    let payload = serde_json::json!({
        "model": config.model,
        "messages": messages
            .iter()
            .map(|m| serde_json::json!({"role": m.role.as_str(), "content": m.content}))
            .collect::<Vec<_>>(),
        "temperature": config.temperature,
    });
    for attempt in 0..=config.max_retries {
        if let Some(bucket) = limiter {
            bucket.acquire();
        }
        let response = client
            .post(&config.endpoint)
            .bearer_auth(api_key)
            .json(&payload)
            .send()
            .map_err(|e| CoderError::BackendUnavailable(e.to_string()))?;
        let status = response.status().as_u16();
        match status {
            200..=299 => {
                let body: serde_json::Value = response
                    .json()
                    .map_err(|e| CoderError::MalformedResponse(e.to_string()))?;
                return body["choices"][0]["message"]["content"]
                    .as_str()
                    .map(|s| s.to_string())
                    .ok_or_else(|| {
                        CoderError::MalformedResponse(
                            "no choices[0].message.content in reply".to_string(),
                        )
                    });
            }
            401 | 403 => {
                return Err(CoderError::AuthError(format!(
                    "server rejected credentials with status {status}"
                )));
            }
            429 | 500..=599 => {
                if attempt == config.max_retries {
                    return Err(CoderError::RetryExhausted {
                        attempts: attempt + 1,
                    });
                }
                // full jitter: uniform over [0, base * 2^attempt]
                let cap = config.backoff_base_ms.saturating_mul(1u64 << attempt.min(20));
                let sleep_ms = jitter.gen_range(0..=cap);
                std::thread::sleep(Duration::from_millis(sleep_ms));
            }
            other => {
                let body = response.text().unwrap_or_default();
                return Err(CoderError::Http { status: other, body });
            }
        }
    }
    unreachable!("loop returns before exhausting attempts")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_requires_endpoint() {
        let config = HttpChatConfig::default();
        assert!(config.validate().is_err());
        let ok = HttpChatConfig {
            endpoint: "http://127.0.0.1:1/v1/chat/completions".to_string(),
            ..HttpChatConfig::default()
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn missing_api_key_fails_before_any_request() {
        let config = HttpChatConfig {
            endpoint: "http://127.0.0.1:1/v1/chat/completions".to_string(),
            api_key_env: "DQC_TEST_KEY_THAT_DOES_NOT_EXIST".to_string(),
            ..HttpChatConfig::default()
        };
        match HttpChatBackend::new(config) {
            Err(CoderError::AuthError(msg)) => {
                assert!(msg.contains("DQC_TEST_KEY_THAT_DOES_NOT_EXIST"));
            }
            Err(other) => panic!("expected AuthError, got {other:?}"),
            Ok(_) => panic!("expected AuthError, got a backend"),
        }
    }

    #[test]
    fn token_bucket_paces_acquisitions() {
        let bucket = TokenBucket::new(1.0, 200.0); // 200 tokens/sec
        let start = Instant::now();
        for _ in 0..5 {
            bucket.acquire();
        }
        // 4 refills needed at 5 ms each
        assert!(start.elapsed() >= Duration::from_millis(15));
    }
}
