//! Adapter that turns an OpenAI-compatible HTTP endpoint into a
//! [`SequentialPredictiveModel`].
//!
//! Wire format (`POST {base_url}/completions`):
//!
//! ```json
//! {"model": "...", "prompt": "...", "temperature": 1.0, "max_tokens": 64, "stop": ["\n\n"], "seed": 123}
//! ```
//!
//! read back from `choices[0].text`. Chat mode posts to
//! `{base_url}/chat/completions` with
//! `"messages": [{"role": "user", "content": "..."}]` in place of `prompt` and
//! reads `choices[0].message.content`. The API key is sent as a bearer token.

mod cache;
mod transport;

pub use cache::{TranscriptCache, TranscriptRecord};
pub use transport::{HttpReply, Transport, TransportError, UreqTransport};

use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::PathGenerationError;
use crate::models::SequentialPredictiveModel;
use crate::prompts::{ParseFailureKind, PromptTemplate};
use crate::rng::RngStream;
use crate::types::{Sample, TaskKind};

pub const DEFAULT_API_KEY_ENV: &str = "MARTINGALE_PROBE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One free-form prompt continued for as many samples as fit.
    Completion,
    /// One request per sample, appended to a growing user message.
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens_per_request: u32,
    pub mode: Mode,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    pub min_request_interval_ms: u64,
    /// First retry delay; doubles on each further retry.
    pub backoff_base_ms: u64,
    /// Parse repairs allowed per path before it is recorded as failed.
    pub repair_attempts: u32,
    /// Overrides the per-task token estimate used to size requests.
    pub tokens_per_sample: Option<u32>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            model_name: "gpt-3.5-turbo-instruct".into(),
            temperature: 1.0,
            max_tokens_per_request: 256,
            mode: Mode::Completion,
            request_timeout_secs: 60.0,
            max_retries: 5,
            min_request_interval_ms: 0,
            backoff_base_ms: 500,
            repair_attempts: 5,
            tokens_per_sample: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |msg: String| Err(ClientError::Config(msg));
        if self.base_url.is_empty() || self.model_name.is_empty() {
            return bad("endpoint needs a base URL and a model name".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_tokens_per_request == 0 {
            return bad("max_tokens_per_request must be positive".into());
        }
        if !(self.request_timeout_secs > 0.0) {
            return bad("request timeout must be positive".into());
        }
        Ok(())
    }

    pub fn tokens_per_sample(&self, kind: TaskKind) -> u32 {
        self.tokens_per_sample.unwrap_or(match kind {
            TaskKind::Bernoulli => 2,
            TaskKind::Gaussian => 4,
            TaskKind::NaturalLanguage => 16,
        })
    }

    fn url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        match self.mode {
            Mode::Completion => format!("{base}/completions"),
            Mode::Chat => format!("{base}/chat/completions"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("request failed after {attempts} attempts (last status: {})", last_status.map_or("none".to_string(), |s| s.to_string()))]
    RetriesExhausted { attempts: u32, last_status: Option<u16> },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transcript cache: {0}")]
    Cache(String),
}

/// Spaces requests at least `interval` apart across all threads.
#[derive(Debug)]
struct RateLimiter {
    interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let mut last = self.last.lock().expect("rate limiter lock");
        if let Some(prev) = *last {
            let ready = prev + self.interval;
            let now = Instant::now();
            if ready > now {
                std::thread::sleep(ready - now);
            }
        }
        *last = Some(Instant::now());
    }
}

/// One request to the endpoint.
#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub stop: &'a [String],
    pub max_tokens: u32,
    /// Sampling seed forwarded to the endpoint; part of the cache key so
    /// distinct paths never share a cached response.
    pub seed: u64,
}

/// Blocking client with retries, rate limiting and a transcript cache.
pub struct LlmClient {
    cfg: EndpointConfig,
    api_key: String,
    transport: Box<dyn Transport>,
    cache: TranscriptCache,
    limiter: RateLimiter,
    template: PromptTemplate,
    kind: TaskKind,
    network_requests: AtomicUsize,
}

impl LlmClient {
    /// Build a client, reading the API key from `cfg.api_key_env`.
    pub fn new(
        cfg: EndpointConfig,
        transport: Box<dyn Transport>,
        cache: TranscriptCache,
        template: PromptTemplate,
        kind: TaskKind,
    ) -> Result<Self, ClientError> {
        let api_key = std::env::var(&cfg.api_key_env)
            .map_err(|_| ClientError::Config(format!("API key variable {} is not set", cfg.api_key_env)))?;
        Self::with_api_key(cfg, api_key, transport, cache, template, kind)
    }

    pub fn with_api_key(
        cfg: EndpointConfig,
        api_key: String,
        transport: Box<dyn Transport>,
        cache: TranscriptCache,
        template: PromptTemplate,
        kind: TaskKind,
    ) -> Result<Self, ClientError> {
        cfg.validate()?;
        template.validate().map_err(|e| ClientError::Config(e.to_string()))?;
        if api_key.is_empty() {
            return Err(ClientError::Config(format!("API key variable {} is empty", cfg.api_key_env)));
        }
        Ok(Self {
            limiter: RateLimiter {
                interval: Duration::from_millis(cfg.min_request_interval_ms),
                last: Mutex::new(None),
            },
            cfg,
            api_key,
            transport,
            cache,
            template,
            kind,
            network_requests: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &TranscriptCache {
        &self.cache
    }

    /// HTTP requests actually sent (cache hits and nothing else excluded).
    pub fn network_requests(&self) -> usize {
        self.network_requests.load(AtomicOrdering::SeqCst)
    }

    fn body(&self, req: &CompletionRequest<'_>) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "max_tokens": req.max_tokens,
            "seed": req.seed,
        });
        if !req.stop.is_empty() {
            body["stop"] = serde_json::json!(req.stop);
        }
        match self.cfg.mode {
            Mode::Completion => body["prompt"] = serde_json::json!(req.prompt),
            Mode::Chat => body["messages"] = serde_json::json!([{"role": "user", "content": req.prompt}]),
        }
        body
    }

    fn extract_text(&self, body: &str) -> Result<String, ClientError> {
        let v: serde_json::Value =
            serde_json::from_str(body).map_err(|e| ClientError::MalformedResponse(format!("not JSON: {e}")))?;
        let choice = &v["choices"][0];
        let text = match self.cfg.mode {
            Mode::Completion => &choice["text"],
            Mode::Chat => &choice["message"]["content"],
        };
        text.as_str()
            .map(str::to_owned)
            .ok_or_else(|| ClientError::MalformedResponse(format!("no completion text in {body}")))
    }

    fn backoff(&self, retry: u32) -> Duration {
        let ms = self.cfg.backoff_base_ms.saturating_mul(1u64 << retry.min(16));
        Duration::from_millis(ms.min(30_000))
    }

    /// Send one request, or answer it from the cache.
    pub fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, ClientError> {
        let body = self.body(req);
        // serde_json maps are ordered by key, so this text is canonical.
        let body_text = body.to_string();
        let hash = hex::encode(Sha256::digest(body_text.as_bytes()));
        if let Some(hit) = self.cache.get(&hash) {
            return Ok(hit.response);
        }

        let url = self.cfg.url();
        let mut last_status = None;
        let mut attempt = 0;
        let text = loop {
            self.limiter.acquire();
            self.network_requests.fetch_add(1, AtomicOrdering::SeqCst);
            let transient = match self.transport.post_json(&url, &self.api_key, &body_text) {
                Ok(reply) => match reply.status {
                    200..=299 => break self.extract_text(&reply.body)?,
                    401 | 403 => return Err(ClientError::Auth { status: reply.status }),
                    408 | 429 | 500..=599 => {
                        last_status = Some(reply.status);
                        true
                    }
                    status => {
                        return Err(ClientError::Http {
                            status,
                            body: reply.body,
                        })
                    }
                },
                Err(e) => {
                    log::warn!("request to {url} failed: {e:?}");
                    true
                }
            };
            debug_assert!(transient);
            if attempt >= self.cfg.max_retries {
                return Err(ClientError::RetriesExhausted {
                    attempts: attempt + 1,
                    last_status,
                });
            }
            std::thread::sleep(self.backoff(attempt));
            attempt += 1;
        };

        let mut params = body;
        if let Some(obj) = params.as_object_mut() {
            obj.remove("prompt");
            obj.remove("messages");
        }
        self.cache.insert(TranscriptRecord {
            hash,
            prompt: req.prompt.to_string(),
            params,
            parsed: self.parse_prefix(&text),
            response: text.clone(),
            ts: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            endpoint: format!("{} {}", self.cfg.base_url, self.cfg.model_name),
        })?;
        Ok(text)
    }

    /// Samples that parse cleanly from the start of `text`.
    fn parse_prefix(&self, text: &str) -> Vec<Sample> {
        let mut out = Vec::new();
        let mut offset = 0;
        while let Ok((s, used)) = self.template.parse_next_sample(&text[offset..], self.kind) {
            out.push(s);
            offset += used;
        }
        out
    }

    fn stop_sequences(&self) -> Vec<String> {
        vec!["\n\n".to_string()]
    }

    /// Generate `m` samples by continuing the rendered prompt. A response
    /// that stops parsing mid-text is truncated at the last valid sample and
    /// the next request continues from there; each such truncation (or a
    /// response without a single sample) uses one repair attempt.
    pub fn sample_path_completion_mode(
        &self,
        context: &[Sample],
        m: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<Sample>, PathGenerationError> {
        let mut generated: Vec<Sample> = Vec::with_capacity(m);
        let mut raw = String::new();
        let mut repairs = 0;
        let stop = self.stop_sequences();
        let per_sample = self.cfg.tokens_per_sample(self.kind);
        let fail = |reason: String, generated: &Vec<Sample>, raw: &String| PathGenerationError {
            reason,
            partial: generated.clone(),
            raw_text: raw.clone(),
        };
        while generated.len() < m {
            let prompt = self
                .template
                .render(self.kind, context, &generated)
                .map_err(|e| fail(e.to_string(), &generated, &raw))?;
            let remaining = (m - generated.len()) as u32;
            let req = CompletionRequest {
                prompt: &prompt,
                stop: &stop,
                max_tokens: remaining.saturating_mul(per_sample).min(self.cfg.max_tokens_per_request),
                seed: rng.next_u64(),
            };
            let text = self
                .complete(&req)
                .map_err(|e| fail(e.to_string(), &generated, &raw))?;
            raw.push_str(&text);

            let before = generated.len();
            let mut offset = 0;
            let mut broken = false;
            while generated.len() < m {
                match self.template.parse_next_sample(&text[offset..], self.kind) {
                    Ok((s, used)) => {
                        generated.push(s);
                        offset += used;
                    }
                    Err(f) => {
                        broken = f.kind == ParseFailureKind::Invalid;
                        if broken {
                            log::debug!("unparseable completion at {:?}", f.prefix);
                        }
                        break;
                    }
                }
            }
            if broken || generated.len() == before {
                repairs += 1;
                if repairs > self.cfg.repair_attempts {
                    return Err(fail(
                        format!("parse repair attempts exhausted ({})", self.cfg.repair_attempts),
                        &generated,
                        &raw,
                    ));
                }
            }
        }
        Ok(generated)
    }

    /// Generate `m` samples with one request each, appending every sample to
    /// the user message before the next request. Only the first sample of a
    /// response is used; a response without one is retried as a repair.
    pub fn sample_path_chat_mode(
        &self,
        context: &[Sample],
        m: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<Sample>, PathGenerationError> {
        let mut generated: Vec<Sample> = Vec::with_capacity(m);
        let mut raw = String::new();
        let max_tokens = 2 * self.cfg.tokens_per_sample(self.kind);
        let fail = |reason: String, generated: &Vec<Sample>, raw: &String| PathGenerationError {
            reason,
            partial: generated.clone(),
            raw_text: raw.clone(),
        };
        while generated.len() < m {
            let prompt = self
                .template
                .render(self.kind, context, &generated)
                .map_err(|e| fail(e.to_string(), &generated, &raw))?;
            let mut repairs = 0;
            loop {
                let req = CompletionRequest {
                    prompt: &prompt,
                    stop: &[],
                    max_tokens,
                    seed: rng.next_u64(),
                };
                let text = self
                    .complete(&req)
                    .map_err(|e| fail(e.to_string(), &generated, &raw))?;
                raw.push_str(&text);
                raw.push('\n');
                match self.template.parse_next_sample(&text, self.kind) {
                    Ok((s, _)) => {
                        generated.push(s);
                        break;
                    }
                    Err(_) => {
                        repairs += 1;
                        if repairs > self.cfg.repair_attempts {
                            return Err(fail(
                                format!("no parseable sample after {repairs} requests"),
                                &generated,
                                &raw,
                            ));
                        }
                    }
                }
            }
        }
        Ok(generated)
    }
}

/// Request and token counts for a planned run, before any network call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Estimate the cost of `paths` paths of length `m` after `n` observations,
/// assuming no retries or repairs. Tokens are approximated as 4 characters.
pub fn estimate_cost(
    cfg: &EndpointConfig,
    template: &PromptTemplate,
    kind: TaskKind,
    n: usize,
    m: usize,
    paths: usize,
) -> CostEstimate {
    let per_sample = u64::from(cfg.tokens_per_sample(kind));
    let header = (template.instruction.len() + template.lead_in.len()) as u64 / 4 + 1;
    let (m64, n64, paths) = (m as u64, n as u64, paths as u64);
    let (requests, prompt_tokens) = match cfg.mode {
        Mode::Chat => {
            // Request i carries n + i samples.
            let samples_sent = m64 * n64 + m64 * m64.saturating_sub(1) / 2;
            (m64, m64 * header + samples_sent * per_sample)
        }
        Mode::Completion => {
            let reqs = (m64 * per_sample).div_ceil(u64::from(cfg.max_tokens_per_request)).max(u64::from(m > 0));
            (reqs, reqs * (header + n64 * per_sample) + reqs.saturating_sub(1) * m64 * per_sample / 2)
        }
    };
    CostEstimate {
        requests: requests * paths,
        prompt_tokens: prompt_tokens * paths,
        completion_tokens: m64 * per_sample * paths,
    }
}

/// A remote LLM used as a sequential predictive model.
pub struct RemoteModel {
    client: LlmClient,
}

impl RemoteModel {
    pub fn new(client: LlmClient) -> Self {
        Self { client }
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }
}

impl SequentialPredictiveModel for RemoteModel {
    fn task_kind(&self) -> TaskKind {
        self.client.kind
    }

    fn label(&self) -> String {
        format!("remote({})", self.client.cfg.model_name)
    }

    fn sample_path(
        &self,
        context: &[Sample],
        m: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<Sample>, PathGenerationError> {
        match self.client.cfg.mode {
            Mode::Completion => self.client.sample_path_completion_mode(context, m, rng),
            Mode::Chat => self.client.sample_path_chat_mode(context, m, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Scripted transport that logs every call.
    #[derive(Default)]
    struct Mock {
        script: Mutex<VecDeque<Result<HttpReply, TransportError>>>,
        fallback: Option<String>,
        calls: Mutex<Vec<(Instant, String)>>,
    }

    impl Mock {
        fn always(text: &str) -> Arc<Self> {
            Arc::new(Self {
                fallback: Some(text.to_string()),
                ..Default::default()
            })
        }

        fn scripted(replies: Vec<Result<HttpReply, TransportError>>) -> Arc<Self> {
            Arc::new(Self {
                script: Mutex::new(replies.into()),
                ..Default::default()
            })
        }

        fn count(&self) -> usize {
            self.calls.lock().unwrap().len()
        }

        fn bodies(&self) -> Vec<serde_json::Value> {
            self.calls
                .lock()
                .unwrap()
                .iter()
                .map(|(_, b)| serde_json::from_str(b).unwrap())
                .collect()
        }
    }

    fn ok_completion(text: &str) -> Result<HttpReply, TransportError> {
        Ok(HttpReply {
            status: 200,
            body: serde_json::json!({"choices": [{"text": text}]}).to_string(),
        })
    }

    fn status(code: u16) -> Result<HttpReply, TransportError> {
        Ok(HttpReply {
            status: code,
            body: "{}".into(),
        })
    }

    impl Transport for Arc<Mock> {
        fn post_json(&self, _url: &str, _key: &str, body: &str) -> Result<HttpReply, TransportError> {
            self.calls.lock().unwrap().push((Instant::now(), body.to_string()));
            if let Some(r) = self.script.lock().unwrap().pop_front() {
                return r;
            }
            let text = self.fallback.clone().expect("script exhausted");
            let v: serde_json::Value = serde_json::from_str(body).unwrap();
            let reply = if v.get("messages").is_some() {
                serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
            } else {
                serde_json::json!({"choices": [{"text": text}]})
            };
            Ok(HttpReply {
                status: 200,
                body: reply.to_string(),
            })
        }
    }

    fn cfg(mode: Mode) -> EndpointConfig {
        EndpointConfig {
            base_url: "http://mock/v1".into(),
            model_name: "mock".into(),
            mode,
            backoff_base_ms: 1,
            ..Default::default()
        }
    }

    fn client(cfg: EndpointConfig, mock: &Arc<Mock>) -> LlmClient {
        LlmClient::with_api_key(
            cfg,
            "key".into(),
            Box::new(mock.clone()),
            TranscriptCache::in_memory(),
            PromptTemplate::default_for(TaskKind::Bernoulli),
            TaskKind::Bernoulli,
        )
        .unwrap()
    }

    fn bits(v: &[u8]) -> Vec<Sample> {
        v.iter().map(|&b| Sample::binary(b).unwrap()).collect()
    }

    fn req<'a>(prompt: &'a str, seed: u64) -> CompletionRequest<'a> {
        CompletionRequest {
            prompt,
            stop: &[],
            max_tokens: 8,
            seed,
        }
    }

    #[test]
    fn cache_hit_makes_no_network_call() {
        let mock = Mock::always("1,0,");
        let c = client(cfg(Mode::Completion), &mock);
        let first = c.complete(&req("p", 1)).unwrap();
        let second = c.complete(&req("p", 1)).unwrap();
        assert_eq!(first, second);
        assert_eq!(mock.count(), 1);
        assert_eq!(c.cache().len(), 1);
        c.complete(&req("p", 2)).unwrap();
        assert_eq!(mock.count(), 2);
    }

    #[test]
    fn transcript_file_replays_without_network() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transcript.jsonl");
        let mock = Mock::always("1,1,0,");
        let mut c = client(cfg(Mode::Completion), &mock);
        c.cache = TranscriptCache::open(&path).unwrap();
        let first = c.complete(&req("prompt", 7)).unwrap();

        let silent = Mock::scripted(vec![]);
        let mut again = client(cfg(Mode::Completion), &silent);
        again.cache = TranscriptCache::open(&path).unwrap();
        assert_eq!(again.complete(&req("prompt", 7)).unwrap(), first);
        assert_eq!(silent.count(), 0);

        let line = std::fs::read_to_string(&path).unwrap();
        let rec: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for field in ["hash", "prompt", "params", "response", "parsed", "ts"] {
            assert!(rec.get(field).is_some(), "missing {field}");
        }
        assert_eq!(rec["params"]["seed"], 7);
        assert!(rec["params"].get("prompt").is_none());
    }

    #[test]
    fn retries_transient_statuses_then_succeeds() {
        let mock = Mock::scripted(vec![status(503), Err(TransportError::Timeout), ok_completion("1,")]);
        let c = client(cfg(Mode::Completion), &mock);
        assert_eq!(c.complete(&req("p", 0)).unwrap(), "1,");
        assert_eq!(mock.count(), 3);
    }

    #[test]
    fn retries_exhausted_reports_last_status() {
        let mock = Mock::scripted(vec![status(429), status(429), status(500)]);
        let c = client(EndpointConfig { max_retries: 2, ..cfg(Mode::Completion) }, &mock);
        let err = c.complete(&req("p", 0)).unwrap_err();
        assert_eq!(
            err,
            ClientError::RetriesExhausted {
                attempts: 3,
                last_status: Some(500)
            }
        );
    }

    #[test]
    fn auth_and_malformed_are_terminal() {
        let mock = Mock::scripted(vec![status(401)]);
        let c = client(cfg(Mode::Completion), &mock);
        assert_eq!(c.complete(&req("p", 0)).unwrap_err(), ClientError::Auth { status: 401 });
        assert_eq!(mock.count(), 1);

        let mock = Mock::scripted(vec![Ok(HttpReply {
            status: 200,
            body: "{\"choices\": []}".into(),
        })]);
        let c = client(cfg(Mode::Completion), &mock);
        assert!(matches!(c.complete(&req("p", 0)), Err(ClientError::MalformedResponse(_))));
        assert_eq!(mock.count(), 1);
    }

    #[test]
    fn missing_api_key_is_config_error() {
        let cfg = EndpointConfig {
            api_key_env: "MPROBE_TEST_KEY_THAT_IS_NEVER_SET".into(),
            ..cfg(Mode::Completion)
        };
        let err = LlmClient::new(
            cfg,
            Box::new(Mock::scripted(vec![])),
            TranscriptCache::in_memory(),
            PromptTemplate::default_for(TaskKind::Bernoulli),
            TaskKind::Bernoulli,
        )
        .err()
        .unwrap();
        assert!(matches!(err, ClientError::Config(_)));
    }

    #[test]
    fn http_server_429_then_200() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let replies = [
                ("429 Too Many Requests", "{}".to_string()),
                ("200 OK", serde_json::json!({"choices": [{"text": "0,1,"}]}).to_string()),
            ];
            let mut stamps = Vec::new();
            for (line, body) in replies {
                let (mut sock, _) = listener.accept().unwrap();
                stamps.push(Instant::now());
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                // Read headers, then the declared body.
                loop {
                    let k = sock.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..k]);
                    let text = String::from_utf8_lossy(&buf);
                    if let Some(h) = text.find("\r\n\r\n") {
                        let len = text[..h]
                            .lines()
                            .find_map(|l| {
                                let l = l.to_ascii_lowercase();
                                l.strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap())
                            })
                            .unwrap_or(0);
                        if buf.len() >= h + 4 + len {
                            break;
                        }
                    }
                    if k == 0 {
                        break;
                    }
                }
                let resp = format!(
                    "HTTP/1.1 {line}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                sock.write_all(resp.as_bytes()).unwrap();
            }
            stamps
        });

        let cfg = EndpointConfig {
            base_url: format!("http://{addr}/v1"),
            backoff_base_ms: 50,
            ..cfg(Mode::Completion)
        };
        let transport = UreqTransport::new(Duration::from_secs(10));
        let c = LlmClient::with_api_key(
            cfg,
            "key".into(),
            Box::new(transport),
            TranscriptCache::in_memory(),
            PromptTemplate::default_for(TaskKind::Bernoulli),
            TaskKind::Bernoulli,
        )
        .unwrap();
        assert_eq!(c.complete(&req("p", 0)).unwrap(), "0,1,");
        assert_eq!(c.network_requests(), 2);
        let stamps = server.join().unwrap();
        assert!(stamps[1] - stamps[0] >= Duration::from_millis(50));
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let mock = Mock::always("1,");
        let c = client(
            EndpointConfig {
                min_request_interval_ms: 20,
                ..cfg(Mode::Completion)
            },
            &mock,
        );
        for seed in 0..5 {
            c.complete(&req("p", seed)).unwrap();
        }
        let calls = mock.calls.lock().unwrap();
        for w in calls.windows(2) {
            assert!(w[1].0 - w[0].0 >= Duration::from_millis(20));
        }
    }

    #[test]
    fn completion_mode_echo() {
        let mock = Mock::always("1,0,1,1,0,0,1,0,");
        let c = client(cfg(Mode::Completion), &mock);
        let model = RemoteModel::new(c);
        let path = model.sample_path(&bits(&[1, 0]), 8, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(path, bits(&[1, 0, 1, 1, 0, 0, 1, 0]));
        assert_eq!(mock.count(), 1);
        let body = &mock.bodies()[0];
        assert_eq!(body["max_tokens"], 16);
        assert_eq!(body["temperature"], 1.0);
        assert!(body["prompt"].as_str().unwrap().ends_with(": 1,0,"));
    }

    #[test]
    fn completion_mode_budget_splits_requests() {
        let mock = Mock::always("1,1,1,1,");
        let c = client(
            EndpointConfig {
                max_tokens_per_request: 8,
                ..cfg(Mode::Completion)
            },
            &mock,
        );
        let path = c.sample_path_completion_mode(&[], 10, &mut RngStream::new(2, 0)).unwrap();
        assert_eq!(path.len(), 10);
        // ceil(10 * 2 / 8) = 3 requests.
        assert_eq!(mock.count(), 3);
        let prompts: Vec<String> = mock.bodies().iter().map(|b| b["prompt"].as_str().unwrap().to_string()).collect();
        assert!(prompts[1].ends_with("1,1,1,1,"));
    }

    #[test]
    fn completion_mode_repairs_from_valid_prefix() {
        let mock = Mock::scripted(vec![ok_completion("1,0,x9,1"), ok_completion("0,0,")]);
        let c = client(cfg(Mode::Completion), &mock);
        let path = c.sample_path_completion_mode(&bits(&[1]), 4, &mut RngStream::new(3, 0)).unwrap();
        assert_eq!(path, bits(&[1, 0, 0, 0]));
        let prompts: Vec<String> = mock.bodies().iter().map(|b| b["prompt"].as_str().unwrap().to_string()).collect();
        assert_eq!(prompts.len(), 2);
        assert!(prompts[1].ends_with(": 1,1,0,"));
    }

    #[test]
    fn completion_mode_exhausts_repairs() {
        let mock = Mock::always("1,garbage");
        let c = client(
            EndpointConfig {
                repair_attempts: 2,
                ..cfg(Mode::Completion)
            },
            &mock,
        );
        let err = c.sample_path_completion_mode(&[], 10, &mut RngStream::new(4, 0)).unwrap_err();
        assert_eq!(err.partial, bits(&[1, 1, 1]));
        assert!(err.raw_text.contains("garbage"));
        assert_eq!(mock.count(), 3);
    }

    #[test]
    fn zero_length_path_sends_nothing() {
        let mock = Mock::scripted(vec![]);
        for mode in [Mode::Completion, Mode::Chat] {
            let model = RemoteModel::new(client(cfg(mode), &mock));
            assert!(model.sample_path(&bits(&[1]), 0, &mut RngStream::new(0, 0)).unwrap().is_empty());
        }
        assert_eq!(mock.count(), 0);
    }

    #[test]
    fn chat_mode_one_request_per_sample() {
        let mock = Mock::always("1,0,1");
        let c = client(cfg(Mode::Chat), &mock);
        let path = c.sample_path_chat_mode(&bits(&[0]), 3, &mut RngStream::new(5, 0)).unwrap();
        assert_eq!(path, bits(&[1, 1, 1]));
        assert_eq!(mock.count(), 3);
        let bodies = mock.bodies();
        let content = |i: usize| bodies[i]["messages"][0]["content"].as_str().unwrap().to_string();
        assert!(content(0).ends_with(": 0,"));
        assert!(content(2).ends_with(": 0,1,1,"));
        assert_eq!(bodies[0]["messages"][0]["role"], "user");
    }

    #[test]
    fn chat_mode_fixed_zero() {
        let mock = Mock::always("0");
        let c = client(cfg(Mode::Chat), &mock);
        let path = c.sample_path_chat_mode(&[], 6, &mut RngStream::new(6, 0)).unwrap();
        assert_eq!(path, bits(&[0; 6]));
    }

    #[test]
    fn chat_mode_first_request_fails() {
        let mock = Mock::scripted(vec![status(403)]);
        let c = client(cfg(Mode::Chat), &mock);
        let err = c.sample_path_chat_mode(&[], 3, &mut RngStream::new(7, 0)).unwrap_err();
        assert!(err.partial.is_empty());
        assert!(err.reason.contains("403"));
    }

    #[test]
    fn cost_estimate_counts() {
        let cfg = EndpointConfig {
            mode: Mode::Chat,
            ..EndpointConfig::default()
        };
        let t = PromptTemplate::default_for(TaskKind::Bernoulli);
        let e = estimate_cost(&cfg, &t, TaskKind::Bernoulli, 50, 24, 200);
        assert_eq!(e.requests, 24 * 200);
        assert_eq!(e.completion_tokens, 24 * 2 * 200);
        let cfg = EndpointConfig {
            max_tokens_per_request: 10,
            ..EndpointConfig::default()
        };
        assert_eq!(estimate_cost(&cfg, &t, TaskKind::Bernoulli, 50, 24, 1).requests, 5);
    }
}
