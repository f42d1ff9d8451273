//! Task-aware lexical and embedding indexes over `{name, content, tag}`
//! triplets, one per node.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{KnowledgeGraph, NodeType};
use crate::gateway::{Gateway, GatewayError};
use crate::text::content_words;

/// Which node components go into an entry's content, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskProfile {
    pub name: String,
    pub components: Vec<String>,
}

impl TaskProfile {
    pub fn new(name: &str, components: &[&str]) -> Self {
        TaskProfile { name: name.into(), components: components.iter().map(|c| c.to_string()).collect() }
    }

    /// Built-in profiles. Code-producing tasks get calculation logic; chart
    /// and insight tasks get usage instead.
    pub fn preset(name: &str) -> Option<Self> {
        let p = match name.to_ascii_lowercase().as_str() {
            "nl2dsl" => Self::new("nl2dsl", &["description", "usage", "calculation_logic", "tags"]),
            "nl2sql" => Self::new("nl2sql", &["description", "calculation_logic", "type"]),
            "nl2dscode" => Self::new("nl2dscode", &["description", "calculation_logic", "type", "usage"]),
            "nl2vis" => Self::new("nl2vis", &["description", "usage", "type"]),
            "nl2insight" => Self::new("nl2insight", &["description", "usage", "tags"]),
            "describe" => Self::new("describe", &["description"]),
            _ => return None,
        };
        Some(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub content: String,
    pub tag: String,
    pub node_id: String,
}

#[derive(Debug, Clone)]
pub struct Indexes {
    pub profile: TaskProfile,
    pub entries: Vec<IndexEntry>,
    words: Vec<BTreeSet<String>>,
    vectors: Vec<Vec<f32>>,
    postings: BTreeMap<String, Vec<usize>>,
    by_node: HashMap<String, usize>,
}

impl Indexes {
    pub fn entry(&self, node_id: &str) -> Option<&IndexEntry> {
        self.by_node.get(node_id).map(|&i| &self.entries[i])
    }

    /// Word set the lexical index holds for a node.
    pub fn words(&self, node_id: &str) -> Option<&BTreeSet<String>> {
        self.by_node.get(node_id).map(|&i| &self.words[i])
    }

    pub fn vector(&self, node_id: &str) -> Option<&[f32]> {
        self.by_node.get(node_id).map(|&i| self.vectors[i].as_slice())
    }

    /// Entries sharing at least one content word with `words`.
    pub fn lexical_hits(&self, words: &BTreeSet<String>) -> BTreeSet<usize> {
        words.iter().filter_map(|w| self.postings.get(w)).flatten().copied().collect()
    }

    pub fn vectors(&self) -> impl Iterator<Item = (&IndexEntry, &[f32])> {
        self.entries.iter().zip(self.vectors.iter().map(Vec::as_slice))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn content_for(g: &KnowledgeGraph, node_id: &str, profile: &TaskProfile) -> String {
    let node = g.node(node_id).expect("indexed node exists");
    let mut parts = Vec::new();
    if node.node_type == NodeType::Alias {
        if let Some(t) = node.component_text("alias_of") {
            parts.push(format!("alias of {t}"));
        }
    }
    for key in &profile.components {
        if let Some(text) = node.component_text(key).filter(|t| !t.is_empty()) {
            parts.push(format!("{key}: {text}"));
        }
    }
    parts.join("; ")
}

pub fn build_indexes(g: &KnowledgeGraph, profile: &TaskProfile, gateway: &Gateway) -> Result<Indexes, GatewayError> {
    let mut idx = Indexes {
        profile: profile.clone(),
        entries: Vec::with_capacity(g.len()),
        words: Vec::with_capacity(g.len()),
        vectors: Vec::with_capacity(g.len()),
        postings: BTreeMap::new(),
        by_node: HashMap::new(),
    };
    for node in g.nodes() {
        let content = content_for(g, &node.id, profile);
        let text = format!("{} {}", node.name, content);
        let words = content_words(&text);
        let i = idx.entries.len();
        for w in &words {
            idx.postings.entry(w.clone()).or_default().push(i);
        }
        idx.vectors.push(gateway.embed(&text)?);
        idx.words.push(words);
        idx.by_node.insert(node.id.clone(), i);
        idx.entries.push(IndexEntry { name: node.name.clone(), content, tag: node.node_type.to_string(), node_id: node.id.clone() });
    }
    Ok(idx)
}
