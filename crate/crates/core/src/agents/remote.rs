use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Agent, AgentError, Prompt, PublicTurn, TurnRequest};
use crate::protocol::{Grammar, Role};

pub const ENV_ENDPOINT: &str = "ARENA_ENDPOINT";
pub const ENV_API_KEY: &str = "ARENA_API_KEY";
pub const ENV_MODEL: &str = "ARENA_MODEL";

const DEFAULT_PATH: &str = "/v1/chat/completions";
const MAX_BACKOFF: Duration = Duration::from_secs(8);

/// Connection and sampling settings for a chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteModelConfig {
    /// Base URL, e.g. `http://localhost:8000`.
    pub endpoint: String,
    /// Request path appended to `endpoint`.
    pub path: String,
    pub model_name: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl RemoteModelConfig {
    pub fn new(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            path: DEFAULT_PATH.to_string(),
            model_name: model_name.into(),
            api_key: None,
            temperature: 1.0,
            max_tokens: 4000,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
        }
    }

    /// Reads endpoint, model and key from `ARENA_*` environment variables.
    pub fn from_env() -> Result<Self, AgentError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, AgentError> {
        let get = |k: &str| lookup(k).map(|v| v.trim().to_string()).filter(|v| !v.is_empty());
        let endpoint = get(ENV_ENDPOINT).ok_or_else(|| AgentError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model = get(ENV_MODEL).ok_or_else(|| AgentError::Config(format!("{ENV_MODEL} is not set")))?;
        let mut config = Self::new(endpoint, model);
        config.api_key = get(ENV_API_KEY);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(AgentError::Config(format!("endpoint {:?} is not an http(s) URL", self.endpoint)));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(AgentError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(AgentError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if self.path.is_empty() {
            base.to_string()
        } else if self.path.starts_with('/') {
            format!("{base}{}", self.path)
        } else {
            format!("{base}/{}", self.path)
        }
    }

    pub fn request_body(&self, messages: &[ChatMessage]) -> Value {
        json!({
            "model": self.model_name,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.backoff_base.checked_mul(1u32 << attempt.min(16)).map_or(MAX_BACKOFF, |d| d.min(MAX_BACKOFF))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: impl Into<String>) -> Self {
        Self { role: role.to_string(), content: content.into() }
    }
}

/// Chat framing from `own` side's perspective: the context opens as a user
/// message, opponent turns are user messages and own turns are assistant
/// messages. Adjacent user messages are merged.
pub fn build_messages(prompt: &Prompt, history: &[PublicTurn], own: Role) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::new("system", prompt.system.clone())];
    let mut push = |role: &str, content: &str| match messages.last_mut() {
        Some(last) if last.role == role && role == "user" => {
            last.content.push_str("\n\n");
            last.content.push_str(content);
        }
        _ => messages.push(ChatMessage::new(role, content)),
    };
    push("user", &prompt.context);
    for turn in history {
        push(if turn.role == own { "assistant" } else { "user" }, &turn.text);
    }
    messages
}

fn http_agent(config: &RemoteModelConfig) -> ureq::Agent {
    ureq::Agent::config_builder().timeout_global(Some(config.timeout)).http_status_as_error(false).build().into()
}

fn extract_content(body: &str) -> Result<String, AgentError> {
    let value: Value = serde_json::from_str(body).map_err(|e| AgentError::BadResponse(format!("invalid JSON: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| AgentError::BadResponse("no choices[0].message.content in response".into()))
}

fn send_with_retries(
    agent: &ureq::Agent,
    config: &RemoteModelConfig,
    messages: &[ChatMessage],
) -> Result<String, AgentError> {
    let url = config.url();
    let body = config.request_body(messages);
    let attempts = config.max_retries + 1;
    let mut last = AgentError::Transport { attempts: 0, message: "no attempt made".into() };
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(config.backoff(attempt - 1));
        }
        let mut request = agent.post(&url);
        if let Some(key) = &config.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        match request.send_json(&body) {
            Err(e) => {
                last = AgentError::Transport { attempts: attempt + 1, message: e.to_string() };
            }
            Ok(mut response) => {
                let status = response.status().as_u16();
                let text = response.body_mut().read_to_string().unwrap_or_default();
                if (200..300).contains(&status) {
                    return extract_content(&text);
                }
                last = AgentError::Status { status, body: text };
                if !(status == 429 || status >= 500) {
                    return Err(last);
                }
            }
        }
    }
    Err(last)
}

/// One chat completion: returns the assistant message text.
pub fn remote_next_turn(config: &RemoteModelConfig, messages: &[ChatMessage]) -> Result<String, AgentError> {
    config.validate()?;
    send_with_retries(&http_agent(config), config, messages)
}

/// Chat-model agent. The underlying HTTP agent pools connections and is safe
/// to share across concurrently running episodes.
#[derive(Debug, Clone)]
pub struct RemoteAgent {
    config: RemoteModelConfig,
    grammar: Grammar,
    http: ureq::Agent,
}

impl RemoteAgent {
    pub fn new(config: RemoteModelConfig, grammar: Grammar) -> Result<Self, AgentError> {
        config.validate()?;
        let http = http_agent(&config);
        Ok(Self { config, grammar, http })
    }

    pub fn config(&self) -> &RemoteModelConfig {
        &self.config
    }
}

impl Agent for RemoteAgent {
    fn next_turn(&self, request: &TurnRequest<'_>) -> Result<String, AgentError> {
        let messages = build_messages(request.prompt, request.visible_history, request.view.role);
        send_with_retries(&self.http, &self.config, &messages)
    }

    fn grammar(&self) -> Grammar {
        self.grammar
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ActionKind;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    /// Serves one canned response per connection and forwards request bodies.
    fn mock_server(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0u8; length];
                reader.read_exact(&mut buf).unwrap();
                tx.send(String::from_utf8(buf).unwrap()).unwrap();
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}"), rx)
    }

    fn reply(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn fast(endpoint: String) -> RemoteModelConfig {
        RemoteModelConfig {
            backoff_base: Duration::from_millis(1),
            timeout: Duration::from_secs(5),
            ..RemoteModelConfig::new(endpoint, "test-model")
        }
    }

    #[test]
    fn request_carries_sampling_parameters() {
        let (endpoint, bodies) = mock_server(vec![(200, reply("Thought: a\nTalk: b\nAction: REJECT"))]);
        let config = RemoteModelConfig { temperature: 0.7, max_tokens: 300, ..fast(endpoint) };
        let out = remote_next_turn(&config, &[ChatMessage::new("user", "hi")]).unwrap();
        assert_eq!(out, "Thought: a\nTalk: b\nAction: REJECT");
        let sent: Value = serde_json::from_str(&bodies.recv().unwrap()).unwrap();
        assert_eq!(sent["temperature"], json!(0.7));
        assert_eq!(sent["max_tokens"], json!(300));
        assert_eq!(sent["model"], json!("test-model"));
        assert_eq!(sent["messages"][0]["content"], json!("hi"));
    }

    #[test]
    fn unreachable_endpoint_fails_after_all_attempts() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let config = RemoteModelConfig { max_retries: 2, ..fast(format!("http://127.0.0.1:{port}")) };
        match remote_next_turn(&config, &[]) {
            Err(AgentError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn server_errors_are_retried_and_client_errors_are_not() {
        let (endpoint, _rx) = mock_server(vec![(503, "{}".into()), (200, reply("ok"))]);
        assert_eq!(remote_next_turn(&fast(endpoint), &[]).unwrap(), "ok");

        let (endpoint, _rx) = mock_server(vec![(400, "{\"error\":\"bad\"}".into())]);
        match remote_next_turn(&fast(endpoint), &[]) {
            Err(AgentError::Status { status, body }) => {
                assert_eq!(status, 400);
                assert!(body.contains("bad"));
            }
            other => panic!("expected status error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_response_is_reported() {
        let (endpoint, _rx) = mock_server(vec![(200, "{\"choices\":[]}".into())]);
        assert!(matches!(remote_next_turn(&fast(endpoint), &[]), Err(AgentError::BadResponse(_))));
    }

    #[test]
    fn messages_alternate_from_own_perspective() {
        let prompt = Prompt { system: "sys".into(), context: "ctx".into() };
        let turn = |role, text: &str| PublicTurn { role, text: text.into(), action: ActionKind::Reject };
        let history = [turn(Role::Buyer, "b1"), turn(Role::Seller, "s1"), turn(Role::Buyer, "b2")];
        let seller = build_messages(&prompt, &history, Role::Seller);
        let roles: Vec<_> = seller.iter().map(|m| m.role.as_str()).collect();
        assert_eq!(roles, ["system", "user", "assistant", "user"]);
        assert_eq!(seller[1].content, "ctx\n\nb1");
        let buyer = build_messages(&prompt, &history[..2], Role::Buyer);
        let roles: Vec<_> = buyer.iter().map(|m| m.role.as_str()).collect();
        assert_eq!(roles, ["system", "user", "assistant", "user"]);
    }

    #[test]
    fn configuration_from_environment() {
        let vars = |k: &str| match k {
            ENV_ENDPOINT => Some("http://localhost:9".to_string()),
            ENV_MODEL => Some("m".to_string()),
            _ => None,
        };
        let config = RemoteModelConfig::from_lookup(vars).unwrap();
        assert_eq!(config.url(), "http://localhost:9/v1/chat/completions");
        assert!(config.api_key.is_none());
        assert!(RemoteModelConfig::from_lookup(|_| None).is_err());
        let bad = RemoteModelConfig { temperature: -0.1, ..config };
        assert!(bad.validate().is_err());
    }
}
