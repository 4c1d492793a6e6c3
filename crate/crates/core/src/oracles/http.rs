//! OpenAI-compatible HTTP endpoints: chat completions, echo-mode completions
//! for answer log-probabilities, and embeddings.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{EmbeddingProvider, InFlightLimit, LikelihoodProvider, Oracle, OracleError, Prompt};

fn default_temperature() -> f64 {
    0.0
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_timeout_secs() -> u64 {
    120
}

/// Connection settings for one remote model. The API key is never stored
/// inline; `api_key_env` names the environment variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_attempts")]
    pub attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            temperature: default_temperature(),
            max_tokens: None,
            timeout_secs: default_timeout_secs(),
            attempts: default_attempts(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

struct Endpoint {
    name: String,
    config: HttpConfig,
    agent: ureq::Agent,
    limit: Option<Arc<InFlightLimit>>,
}

impl Endpoint {
    fn new(name: String, config: HttpConfig, limit: Option<Arc<InFlightLimit>>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Endpoint {
            name,
            config,
            agent,
            limit,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    /// POSTs `body`, retrying transport failures, 429 and 5xx with
    /// exponential backoff.
    fn post(&self, path: &str, body: &Value) -> Result<Value, OracleError> {
        let attempts = self.config.attempts.max(1);
        let key = match &self.config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| OracleError::Failed {
                oracle: self.name.clone(),
                message: format!("environment variable {var} is not set"),
            })?),
            None => None,
        };
        let url = self.url(path);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 2));
                thread::sleep(Duration::from_millis(wait));
            }
            let _permit = self.limit.as_ref().map(|l| l.acquire());
            let mut req = self.agent.post(&url);
            if let Some(key) = &key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        return resp.body_mut().read_json::<Value>().map_err(|e| {
                            OracleError::Failed {
                                oracle: self.name.clone(),
                                message: format!("invalid JSON response: {e}"),
                            }
                        });
                    }
                    last = format!("HTTP status {status}");
                    if status != 429 && status < 500 {
                        return Err(OracleError::Transport {
                            oracle: self.name.clone(),
                            attempts: attempt,
                            message: last,
                        });
                    }
                }
                Err(e) => last = e.to_string(),
            }
            log::debug!("{}: attempt {attempt}/{attempts} failed: {last}", self.name);
        }
        Err(OracleError::Transport {
            oracle: self.name.clone(),
            attempts,
            message: last,
        })
    }

    fn malformed(&self, what: &str) -> OracleError {
        OracleError::Failed {
            oracle: self.name.clone(),
            message: format!("response missing {what}"),
        }
    }
}

/// Chat-completion oracle.
pub struct HttpOracle(Endpoint);

impl HttpOracle {
    pub fn new(
        name: impl Into<String>,
        config: HttpConfig,
        limit: Option<Arc<InFlightLimit>>,
    ) -> Self {
        HttpOracle(Endpoint::new(name.into(), config, limit))
    }
}

impl Oracle for HttpOracle {
    fn name(&self) -> &str {
        &self.0.name
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, OracleError> {
        let mut messages = Vec::new();
        if !prompt.system.is_empty() {
            messages.push(json!({"role": "system", "content": prompt.system}));
        }
        messages.push(json!({"role": "user", "content": prompt.user}));
        let mut body = json!({
            "model": self.0.config.model,
            "messages": messages,
            "temperature": self.0.config.temperature,
        });
        if let Some(max) = self.0.config.max_tokens {
            body["max_tokens"] = json!(max);
        }
        let resp = self.0.post("chat/completions", &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| self.0.malformed("choices[0].message.content"))
    }
}

/// Answer log-probabilities via a legacy completions endpoint in echo mode
/// (as served by vLLM): the prompt is `question + "\n"` followed by the
/// answer, and the answer's tokens are those whose text offset falls at or
/// after the answer's first character.
pub struct HttpLikelihood(Endpoint);

impl HttpLikelihood {
    pub fn new(
        name: impl Into<String>,
        config: HttpConfig,
        limit: Option<Arc<InFlightLimit>>,
    ) -> Self {
        HttpLikelihood(Endpoint::new(name.into(), config, limit))
    }
}

impl LikelihoodProvider for HttpLikelihood {
    fn name(&self) -> &str {
        &self.0.name
    }

    fn answer_logprobs(&self, question: &str, answer: &str) -> Result<Vec<f64>, OracleError> {
        let prefix = format!("{question}\n");
        let body = json!({
            "model": self.0.config.model,
            "prompt": format!("{prefix}{answer}"),
            "max_tokens": 1,
            "temperature": 0.0,
            "echo": true,
            "logprobs": 1,
        });
        let resp = self.0.post("completions", &body)?;
        let logprobs = resp
            .pointer("/choices/0/logprobs/token_logprobs")
            .and_then(Value::as_array)
            .ok_or_else(|| self.0.malformed("choices[0].logprobs.token_logprobs"))?;
        let offsets = resp
            .pointer("/choices/0/logprobs/text_offset")
            .and_then(Value::as_array)
            .ok_or_else(|| self.0.malformed("choices[0].logprobs.text_offset"))?;
        let start = prefix.chars().count() as u64;
        let end = start + answer.chars().count() as u64;
        let out: Vec<f64> = offsets
            .iter()
            .zip(logprobs)
            .filter(|(off, _)| off.as_u64().is_some_and(|o| o >= start && o < end))
            .filter_map(|(_, lp)| lp.as_f64())
            .collect();
        if out.is_empty() {
            return Err(self.0.malformed("answer token log-probabilities"));
        }
        Ok(out)
    }
}

pub struct HttpEmbedding(Endpoint);

impl HttpEmbedding {
    pub fn new(
        name: impl Into<String>,
        config: HttpConfig,
        limit: Option<Arc<InFlightLimit>>,
    ) -> Self {
        HttpEmbedding(Endpoint::new(name.into(), config, limit))
    }
}

impl EmbeddingProvider for HttpEmbedding {
    fn name(&self) -> &str {
        &self.0.name
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, OracleError> {
        let body = json!({"model": self.0.config.model, "input": text});
        let resp = self.0.post("embeddings", &body)?;
        resp.pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .map(|v| v.iter().filter_map(Value::as_f64).collect())
            .ok_or_else(|| self.0.malformed("data[0].embedding"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Serves `responses` in order (repeating the last), one per connection,
    /// and counts requests.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).ok();
                let (status, text) = responses[n.min(responses.len() - 1)].clone();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                stream.write_all(reply.as_bytes()).ok();
            }
        });
        (format!("http://{addr}/v1"), hits)
    }

    fn config(base: &str) -> HttpConfig {
        HttpConfig {
            backoff_ms: 1,
            timeout_secs: 5,
            ..HttpConfig::new(base, "test-model")
        }
    }

    #[test]
    fn chat_completion_success() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"(moderate)"}}]}"#;
        let (base, hits) = serve(vec![(200, body.to_string())]);
        let o = HttpOracle::new("remote", config(&base), None);
        assert_eq!(o.complete(&Prompt::user("x")).unwrap(), "(moderate)");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn server_error_exhausts_three_attempts() {
        let (base, hits) = serve(vec![(500, "{}".to_string())]);
        let o = HttpOracle::new("remote", config(&base), None);
        match o.complete(&Prompt::user("x")).unwrap_err() {
            OracleError::Transport { attempts, message, .. } => {
                assert_eq!(attempts, 3);
                assert!(message.contains("500"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retry_then_success() {
        let ok = r#"{"choices":[{"message":{"content":"yes"}}]}"#;
        let (base, hits) = serve(vec![(503, "{}".into()), (200, ok.into())]);
        let o = HttpOracle::new("remote", config(&base), None);
        assert_eq!(o.complete(&Prompt::user("x")).unwrap(), "yes");
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn client_error_is_not_retried() {
        let (base, hits) = serve(vec![(400, "{}".to_string())]);
        let o = HttpOracle::new("remote", config(&base), None);
        assert!(matches!(
            o.complete(&Prompt::user("x")),
            Err(OracleError::Transport { attempts: 1, .. })
        ));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn missing_key_variable_is_reported() {
        let mut c = config("http://127.0.0.1:9");
        c.api_key_env = Some("CUSTOMBENCH_TEST_UNSET_KEY".into());
        let o = HttpOracle::new("remote", c, None);
        let err = o.complete(&Prompt::user("x")).unwrap_err();
        assert!(err.to_string().contains("CUSTOMBENCH_TEST_UNSET_KEY"));
    }

    #[test]
    fn echo_logprobs_select_answer_tokens() {
        // prompt "Q?\nab": tokens "Q?" @0, "\n" @2, "a" @3, "b" @4, generated @5
        let body = r#"{"choices":[{"logprobs":{"token_logprobs":[null,-0.1,-0.5,-0.25,-3.0],"text_offset":[0,2,3,4,5]}}]}"#;
        let (base, _) = serve(vec![(200, body.to_string())]);
        let p = HttpLikelihood::new("lp", config(&base), None);
        assert_eq!(p.answer_logprobs("Q?", "ab").unwrap(), vec![-0.5, -0.25]);
    }

    #[test]
    fn embeddings_endpoint() {
        let body = r#"{"data":[{"embedding":[0.5,-1.0,2.0]}]}"#;
        let (base, _) = serve(vec![(200, body.to_string())]);
        let e = HttpEmbedding::new("emb", config(&base), None);
        assert_eq!(e.embed("text").unwrap(), vec![0.5, -1.0, 2.0]);
    }
}
