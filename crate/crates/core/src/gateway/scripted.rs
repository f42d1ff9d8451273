use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Completion, CompletionRequest, GatewayError, HashedEmbedder, Provider};
use crate::text::estimate_tokens;

/// One line of a replay fixture file. Entries are matched by fingerprint; an
/// entry with an empty fingerprint and a `tag` answers any request carrying
/// that tag whose fingerprint has no entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(default)]
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub response: String,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbeddingEntry {
    token: String,
    vector: Vec<f32>,
}

/// Replays fixture responses. Repeated requests with the same key walk the
/// key's queue in file order; once exhausted the last entry keeps answering.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    by_fingerprint: HashMap<String, Vec<FixtureEntry>>,
    by_tag: HashMap<String, Vec<FixtureEntry>>,
    cursors: Mutex<HashMap<String, usize>>,
    embedder: HashedEmbedder,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_entry(mut self, entry: FixtureEntry) -> Self {
        self.push(entry);
        self
    }

    /// Queues plain responses for a tag, with token counts estimated.
    pub fn with_tag_responses<S: AsRef<str>>(mut self, tag: &str, responses: &[S]) -> Self {
        for r in responses {
            self.push(FixtureEntry {
                fingerprint: String::new(),
                tag: Some(tag.to_string()),
                response: r.as_ref().to_string(),
                prompt_tokens: 0,
                completion_tokens: estimate_tokens(r.as_ref()) as u64,
            });
        }
        self
    }

    pub fn with_embedder(mut self, embedder: HashedEmbedder) -> Self {
        self.embedder = embedder;
        self
    }

    pub fn push(&mut self, entry: FixtureEntry) {
        if entry.fingerprint.is_empty() {
            if let Some(tag) = entry.tag.clone() {
                self.by_tag.entry(tag).or_default().push(entry);
            }
        } else {
            self.by_fingerprint.entry(entry.fingerprint.clone()).or_default().push(entry);
        }
    }

    pub fn extend_jsonl(&mut self, text: &str) -> Result<(), GatewayError> {
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(line)
                .map_err(|e| GatewayError::Provider(format!("fixture line {}: {e}", n + 1)))?;
            self.push(entry);
        }
        Ok(())
    }

    pub fn from_jsonl(text: &str) -> Result<Self, GatewayError> {
        let mut p = Self::new();
        p.extend_jsonl(text)?;
        Ok(p)
    }

    /// Loads every `*.jsonl` file in `dir` (sorted by name) as completion
    /// fixtures, except `embeddings.jsonl`, which holds `{token, vector}` lines.
    pub fn load_dir(dir: &Path) -> Result<Self, GatewayError> {
        let io = |e: std::io::Error| GatewayError::Provider(format!("{}: {e}", dir.display()));
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        let mut p = Self::new();
        for f in files {
            let text = std::fs::read_to_string(&f).map_err(io)?;
            if f.file_name().is_some_and(|n| n == "embeddings.jsonl") {
                p.load_embeddings(&text)?;
            } else {
                p.extend_jsonl(&text)?;
            }
        }
        Ok(p)
    }

    pub fn load_embeddings(&mut self, text: &str) -> Result<(), GatewayError> {
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let e: EmbeddingEntry =
                serde_json::from_str(line).map_err(|e| GatewayError::Provider(format!("embedding fixture: {e}")))?;
            self.embedder.insert(e.token, e.vector);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.by_fingerprint.values().map(Vec::len).sum::<usize>() + self.by_tag.values().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn next(&self, key: String, queue: &[FixtureEntry]) -> FixtureEntry {
        let mut cursors = self.cursors.lock().unwrap_or_else(|e| e.into_inner());
        let i = cursors.entry(key).or_insert(0);
        let entry = queue[(*i).min(queue.len() - 1)].clone();
        *i += 1;
        entry
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, GatewayError> {
        let fp = req.fingerprint();
        let entry = if let Some(q) = self.by_fingerprint.get(&fp) {
            self.next(format!("fp:{fp}"), q)
        } else if let Some(q) = self.by_tag.get(&req.tag) {
            self.next(format!("tag:{}", req.tag), q)
        } else {
            return Err(GatewayError::MissingFixture { fingerprint: fp, tag: req.tag.clone() });
        };
        Ok(Completion {
            text: entry.response,
            prompt_tokens: entry.prompt_tokens,
            completion_tokens: entry.completion_tokens,
        })
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        Ok(self.embedder.embed(text))
    }
}

type Responder = dyn Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync;

/// Provider backed by a closure; token counts are chars/4 estimates.
pub struct FnProvider {
    respond: Box<Responder>,
    embedder: HashedEmbedder,
}

impl FnProvider {
    pub fn new(f: impl Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync + 'static) -> Self {
        FnProvider { respond: Box::new(f), embedder: HashedEmbedder::new() }
    }

    pub fn with_embedder(mut self, embedder: HashedEmbedder) -> Self {
        self.embedder = embedder;
        self
    }
}

impl Provider for FnProvider {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, GatewayError> {
        let text = (self.respond)(req)?;
        Ok(Completion {
            prompt_tokens: estimate_tokens(&req.prompt) as u64,
            completion_tokens: estimate_tokens(&text) as u64,
            text,
        })
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        Ok(self.embedder.embed(text))
    }
}

/// Wraps a provider and records every successful completion as a fixture
/// entry, in call order.
pub struct Recorder {
    inner: Arc<dyn Provider>,
    log: Mutex<Vec<FixtureEntry>>,
}

impl Recorder {
    pub fn new(inner: Arc<dyn Provider>) -> Self {
        Recorder { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn entries(&self) -> Vec<FixtureEntry> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn to_jsonl(&self) -> String {
        self.entries()
            .iter()
            .map(|e| serde_json::to_string(e).expect("fixture entry serializes") + "\n")
            .collect()
    }
}

impl Provider for Recorder {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, GatewayError> {
        let out = self.inner.complete(req)?;
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(FixtureEntry {
            fingerprint: req.fingerprint(),
            tag: Some(req.tag.clone()),
            response: out.text.clone(),
            prompt_tokens: out.prompt_tokens,
            completion_tokens: out.completion_tokens,
        });
        Ok(out)
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        self.inner.embed(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn miss_names_fingerprint() {
        let req = CompletionRequest::new("t", "unknown prompt");
        match ScriptedProvider::new().complete(&req) {
            Err(GatewayError::MissingFixture { fingerprint, .. }) => assert_eq!(fingerprint, req.fingerprint()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn queue_repeats_last() {
        let p = ScriptedProvider::new().with_tag_responses("score", &["3", "5"]);
        let req = CompletionRequest::new("score", "anything");
        let got: Vec<_> = (0..4).map(|_| p.complete(&req).unwrap().text).collect();
        assert_eq!(got, ["3", "5", "5", "5"]);
    }

    #[test]
    fn fingerprint_beats_tag() {
        let req = CompletionRequest::new("t", "exact");
        let p = ScriptedProvider::new().with_tag_responses("t", &["by tag"]).with_entry(FixtureEntry {
            fingerprint: req.fingerprint(),
            tag: None,
            response: "by fingerprint".into(),
            prompt_tokens: 1,
            completion_tokens: 1,
        });
        assert_eq!(p.complete(&req).unwrap().text, "by fingerprint");
        assert_eq!(p.complete(&CompletionRequest::new("t", "other")).unwrap().text, "by tag");
    }

    #[test]
    fn recorder_output_replays() {
        let rec = Recorder::new(Arc::new(FnProvider::new(|r: &CompletionRequest| Ok(r.prompt.to_uppercase()))));
        let reqs = [CompletionRequest::new("a", "one"), CompletionRequest::new("b", "two")];
        for r in &reqs {
            rec.complete(r).unwrap();
        }
        let replay = ScriptedProvider::from_jsonl(&rec.to_jsonl()).unwrap();
        for r in &reqs {
            assert_eq!(replay.complete(r).unwrap(), rec.inner.complete(r).unwrap());
        }
    }
}
