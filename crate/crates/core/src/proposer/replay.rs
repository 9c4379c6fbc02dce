//! Capture every backend exchange to a fixture file and serve it back later.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, CompletionBackend, CompletionRequest, CompletionResponse};

/// Stable key of a request: SHA-256 of its canonical JSON encoding.
pub fn request_key(request: &CompletionRequest) -> String {
    let json = serde_json::to_string(request).expect("request serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub key: String,
    pub request: CompletionRequest,
    pub response: CompletionResponse,
}

fn load_entries(path: &Path) -> Result<BTreeMap<String, ReplayEntry>, BackendError> {
    let text = std::fs::read_to_string(path).map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let entry: ReplayEntry = serde_json::from_str(line)
            .map_err(|e| BackendError::Fixture(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.insert(entry.key.clone(), entry);
    }
    Ok(out)
}

/// Passes requests through to `inner` and remembers each exchange.
pub struct RecordingBackend<B> {
    inner: B,
    entries: Mutex<BTreeMap<String, ReplayEntry>>,
}

impl<B: CompletionBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, entries: Mutex::new(BTreeMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("recording lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes all exchanges, sorted by key, one JSON record per line.
    pub fn save(&self, path: &Path) -> Result<(), BackendError> {
        let entries = self.entries.lock().expect("recording lock");
        let mut out = String::new();
        for e in entries.values() {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))
    }
}

impl<B: CompletionBackend> CompletionBackend for RecordingBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let response = self.inner.complete(request)?;
        let key = request_key(request);
        self.entries
            .lock()
            .expect("recording lock")
            .insert(key.clone(), ReplayEntry { key, request: request.clone(), response: response.clone() });
        Ok(response)
    }

    fn supports_logprobs(&self) -> bool {
        self.inner.supports_logprobs()
    }
}

/// Serves only recorded exchanges; an unrecorded request is an error.
#[derive(Clone, Debug, Default)]
pub struct ReplayBackend {
    entries: BTreeMap<String, ReplayEntry>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Ok(Self { entries: load_entries(path)? })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let key = request_key(request);
        self.entries
            .get(&key)
            .map(|e| e.response.clone())
            .ok_or_else(|| BackendError::Fixture(format!("no recorded response for request {key}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proposer::mock::{MockBackend, MockFixture, MockRule, MockSample, PromptMatch};

    #[test]
    fn record_then_replay() {
        let inner = MockBackend::new(MockFixture {
            rules: vec![MockRule {
                matcher: PromptMatch::Any,
                samples: vec![MockSample { text: "a b".into(), token_logprobs: vec![-0.1, -0.2], first_token_top_logits: Default::default() }],
            }],
        });
        let rec = RecordingBackend::new(inner);
        let req = CompletionRequest {
            prompt: "p".into(),
            n: 2,
            temperature: 0.8,
            max_tokens: 4,
            logprobs: 1,
            stop: vec!["\n".into()],
            seed: Some(0),
        };
        let live = rec.complete(&req).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.jsonl");
        rec.save(&path).unwrap();
        let replay = ReplayBackend::load(&path).unwrap();
        assert_eq!(replay.complete(&req).unwrap(), live);
        let mut other = req.clone();
        other.n = 3;
        assert!(matches!(replay.complete(&other), Err(BackendError::Fixture(_))));
    }
}
