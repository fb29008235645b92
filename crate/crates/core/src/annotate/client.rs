//! Chat-completion clients: a live HTTP client and an offline stub.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::prompts::render_clusters;
use super::text::{jaccard, token_set, top_tokens};
use crate::error::{Error, Result};

/// Something that answers a single-message prompt.
pub trait ChatClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;

    /// Number of requests issued so far.
    fn requests(&self) -> usize;
}

/// Hex SHA-256 of the prompt, the key for canned responses.
pub fn prompt_key(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Offline client. Replies with a canned response when one is registered for
/// the prompt's hash and otherwise with a deterministic heuristic answer in
/// the format the prompt asks for.
#[derive(Debug, Default)]
pub struct StubClient {
    canned: BTreeMap<String, String>,
    count: AtomicUsize,
}

impl StubClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_response(mut self, prompt: &str, response: impl Into<String>) -> Self {
        self.canned.insert(prompt_key(prompt), response.into());
        self
    }

    /// Loads `<sha256-hex>.txt` files from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::MissingInput(dir.to_path_buf()));
        }
        let mut canned = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                canned.insert(stem.to_string(), std::fs::read_to_string(&path)?);
            }
        }
        Ok(Self {
            canned,
            count: AtomicUsize::new(0),
        })
    }

    fn fallback(prompt: &str) -> String {
        if prompt.contains("Each cluster contains codes paired with descriptions") {
            return annotate_fallback(prompt);
        }
        if prompt.contains("sub-conceptions are not a sub-conception") {
            return hierarchy_fallback(prompt);
        }
        if prompt.contains("all semantically different") {
            return divergence_fallback(prompt);
        }
        if prompt.contains("Please provide a score between 0 and 1") {
            return relevance_fallback(prompt);
        }
        String::new()
    }
}

impl ChatClient for StubClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        self.count.fetch_add(1, Ordering::Relaxed);
        Ok(self
            .canned
            .get(&prompt_key(prompt))
            .cloned()
            .unwrap_or_else(|| Self::fallback(prompt)))
    }

    fn requests(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

/// Splits a rendered annotation prompt back into its clusters' descriptions.
fn parse_cluster_blocks(prompt: &str) -> Vec<Vec<String>> {
    let mut clusters: Vec<Vec<String>> = Vec::new();
    for line in prompt.lines() {
        if line.starts_with("Cluster ") && line.ends_with(':') {
            clusters.push(Vec::new());
        } else if line.starts_with("Each cluster contains") {
            break;
        } else if let (Some(c), Some((_, desc))) = (clusters.last_mut(), line.split_once(':')) {
            c.push(desc.to_string());
        }
    }
    clusters
}

fn annotate_fallback(prompt: &str) -> String {
    parse_cluster_blocks(prompt)
        .iter()
        .enumerate()
        .map(|(k, descs)| {
            let toks = top_tokens(descs.iter().map(String::as_str), 2);
            let label = if toks.is_empty() { format!("group {}", k + 1) } else { toks.join(" ") };
            format!("{}:{label}", k + 1)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn hierarchy_fallback(prompt: &str) -> String {
    let main = prompt.split('"').nth(1).unwrap_or_default();
    let subs = prompt
        .split_once("sub-conceptions: ")
        .and_then(|(_, rest)| rest.split_once(".\n"))
        .map(|(list, _)| list)
        .unwrap_or_default();
    let main_tokens = token_set(main);
    let unrelated = subs
        .split(", ")
        .filter(|s| !s.is_empty() && token_set(s).is_disjoint(&main_tokens))
        .count();
    unrelated.to_string()
}

fn divergence_fallback(prompt: &str) -> String {
    let list = prompt
        .split_once("conceptions: ")
        .and_then(|(_, rest)| rest.split_once(".\n"))
        .map(|(list, _)| list)
        .unwrap_or_default();
    let items: Vec<String> = list.split(", ").map(|s| s.trim().to_lowercase()).collect();
    let distinct: std::collections::BTreeSet<&String> = items.iter().collect();
    if distinct.len() == items.len() { "Yes" } else { "No" }.to_string()
}

fn relevance_fallback(prompt: &str) -> String {
    let target = prompt
        .split_once("related to ")
        .and_then(|(_, rest)| rest.split_once("?\n\n"))
        .map(|(t, _)| t)
        .unwrap_or_default();
    let code = prompt.split("\n\n").nth(1).unwrap_or_default();
    format!("{:.2}", jaccard(target, code))
}

/// Request settings for the live client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    /// Attempts after the first one.
    pub max_retries: usize,
    /// Delay before the first retry, doubled on each further retry.
    pub backoff_ms: u64,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 1000,
            api_key_env: "OPENAI_API_KEY".into(),
        }
    }
}

/// Chat-completion client over HTTP(S) with temperature 0.
pub struct LiveClient {
    cfg: LiveConfig,
    token: String,
    agent: ureq::Agent,
    count: AtomicUsize,
}

impl LiveClient {
    /// Reads the bearer token from the configured environment variable.
    pub fn new(cfg: LiveConfig) -> Result<Self> {
        let token = std::env::var(&cfg.api_key_env)
            .map_err(|_| Error::invalid(format!("environment variable {} is not set", cfg.api_key_env)))?;
        Ok(Self::with_token(cfg, token))
    }

    pub fn with_token(cfg: LiveConfig, token: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            cfg,
            token: token.into(),
            agent,
            count: AtomicUsize::new(0),
        }
    }

    fn attempt(&self, body: &Value) -> std::result::Result<String, (bool, String)> {
        let mut resp = self
            .agent
            .post(&self.cfg.endpoint)
            .header("Authorization", &format!("Bearer {}", self.token))
            .send_json(body)
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let retry = status == 429 || status >= 500;
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err((retry, format!("HTTP {status}: {text}")));
        }
        let v: Value = resp.body_mut().read_json().map_err(|e| (false, e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| (false, format!("response has no message content: {v}")))
    }
}

impl ChatClient for LiveClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let mut delay = self.cfg.backoff_ms;
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            self.count.fetch_add(1, Ordering::Relaxed);
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retry, msg)) => {
                    log::warn!("chat request attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                    if !retry {
                        break;
                    }
                    if attempt < self.cfg.max_retries && delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                        delay *= 2;
                    }
                }
            }
        }
        Err(Error::Client(last))
    }

    fn requests(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

/// Selects and configures a client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientConfig {
    Stub {
        #[serde(default)]
        canned_dir: Option<PathBuf>,
    },
    Live(LiveConfig),
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig::Stub { canned_dir: None }
    }
}

impl ClientConfig {
    pub fn build(&self) -> Result<Box<dyn ChatClient>> {
        Ok(match self {
            ClientConfig::Stub { canned_dir: None } => Box::new(StubClient::new()),
            ClientConfig::Stub { canned_dir: Some(d) } => Box::new(StubClient::from_dir(d)?),
            ClientConfig::Live(cfg) => Box::new(LiveClient::new(cfg.clone())?),
        })
    }
}

/// Renders the stub's fallback reply for the given clusters; exposed so
/// canned-response fixtures can be generated.
pub fn stub_cluster_reply(clusters: &[Vec<(String, String)>]) -> String {
    annotate_fallback(&render_clusters(clusters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::prompts::{divergence_prompt, hierarchy_prompt, relevance_prompt, PromptDomain, PromptTemplate};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    #[test]
    fn canned_response_wins_over_fallback() {
        let stub = StubClient::new().with_response("hello", "world");
        assert_eq!(stub.complete("hello").unwrap(), "world");
        assert_eq!(stub.complete("other").unwrap(), "");
        assert_eq!(stub.requests(), 2);
    }

    #[test]
    fn canned_directory_is_keyed_by_hash() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(format!("{}.txt", prompt_key("p"))), "canned").unwrap();
        let stub = StubClient::from_dir(dir.path()).unwrap();
        assert_eq!(stub.complete("p").unwrap(), "canned");
        assert!(StubClient::from_dir(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn fallback_replies_follow_each_format() {
        let stub = StubClient::new();
        let clusters = vec![
            vec![("a".into(), "heart failure acute".into()), ("b".into(), "heart failure chronic".into())],
            vec![("c".into(), "kidney stone".into())],
        ];
        let p = PromptTemplate::builtin(PromptDomain::Diagnosis).render(&render_clusters(&clusters));
        assert_eq!(stub.complete(&p).unwrap(), "1:failure heart\n2:kidney stone");
        assert_eq!(stub.complete(&hierarchy_prompt("heart failure", &["heart failure acute", "kidney stone"])).unwrap(), "1");
        assert_eq!(stub.complete(&divergence_prompt(&["a b", "c"])).unwrap(), "Yes");
        assert_eq!(stub.complete(&divergence_prompt(&["a b", "A B"])).unwrap(), "No");
        assert_eq!(stub.complete(&relevance_prompt("heart failure", "heart attack")).unwrap(), "0.33");
    }

    /// Serves the given (status, body) replies in order, one per connection,
    /// and returns the received request bodies.
    fn mock_server(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn live(url: String, retries: usize) -> LiveClient {
        LiveClient::with_token(
            LiveConfig {
                endpoint: url,
                max_retries: retries,
                backoff_ms: 0,
                timeout_secs: 10,
                ..LiveConfig::default()
            },
            "secret",
        )
    }

    #[test]
    fn live_client_retries_server_errors_then_succeeds() {
        let ok = json!({"choices": [{"message": {"role": "assistant", "content": "1:Diabetes"}}]}).to_string();
        let (url, handle) = mock_server(vec![(503, "busy".into()), (200, ok)]);
        let client = live(url, 2);
        assert_eq!(client.complete("prompt").unwrap(), "1:Diabetes");
        assert_eq!(client.requests(), 2);
        let bodies = handle.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["model"], "gpt-4o");
        assert_eq!(sent["temperature"], 0);
        assert_eq!(sent["messages"][0]["content"], "prompt");
    }

    #[test]
    fn live_client_gives_up_on_client_errors() {
        let (url, handle) = mock_server(vec![(400, "bad".into())]);
        let client = live(url, 3);
        assert!(matches!(client.complete("p"), Err(Error::Client(_))));
        assert_eq!(client.requests(), 1);
        handle.join().unwrap();
    }
}
