//! Coarse-to-fine knowledge retrieval.
//!
//! Coarse: union of lexical hits (any shared content word) and embedding
//! hits above a loose threshold, with aliases replaced by their primary
//! node. Fine: weighted sum of three normalized stage scores, then a stable
//! sort and a top-K cut.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::index::Indexes;
use super::{KnowledgeGraph, KnowledgeNode, NodeType};
use crate::gateway::{cosine, CompletionRequest, Gateway, GatewayError};
use crate::text::{content_words, extract_json, overlap_f1};

pub const TAG_LLM_EVAL: &str = "graph.llm_eval";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// `(w_lex, w_sem, w_llm)`
    pub weights: [f64; 3],
    pub top_k: usize,
    pub coarse_threshold: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { weights: [1.0 / 3.0; 3], top_k: 20, coarse_threshold: 0.35 }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err("weights must be nonnegative".into());
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err("weights must sum to 1".into());
        }
        if self.top_k == 0 {
            return Err("top_k must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.coarse_threshold) {
            return Err("coarse_threshold must be in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredNode {
    pub node_id: String,
    pub name: String,
    pub node_type: NodeType,
    pub lex: f64,
    pub sem: f64,
    pub llm: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineOrder {
    pub ranked: Vec<ScoredNode>,
    /// Set when the relevance reply could not be parsed; the LLM stage then
    /// scored 0 for every node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_error: Option<String>,
}

/// Candidate primary node ids for a query, sorted by id.
pub fn coarse_retrieve(
    q: &str,
    g: &KnowledgeGraph,
    idx: &Indexes,
    cfg: &RetrievalConfig,
    gateway: &Gateway,
) -> Result<Vec<String>, GatewayError> {
    let words = content_words(q);
    let mut hits: BTreeSet<&str> = idx.lexical_hits(&words).into_iter().map(|i| idx.entries[i].node_id.as_str()).collect();
    if !words.is_empty() {
        let qv = gateway.embed(q)?;
        hits.extend(idx.vectors().filter(|(_, v)| cosine(&qv, v) >= cfg.coarse_threshold).map(|(e, _)| e.node_id.as_str()));
    }
    Ok(hits
        .into_iter()
        .filter_map(|id| g.backtrack(id))
        .map(|n| n.id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect())
}

/// One batched relevance call. Returns `node id -> score in [0, 1]`; nodes
/// missing from the reply score 0.
pub fn llm_eval(
    q: &str,
    nodes: &[&KnowledgeNode],
    idx: &Indexes,
    gateway: &Gateway,
) -> Result<(BTreeMap<String, f64>, Option<String>), GatewayError> {
    if nodes.is_empty() {
        return Ok((BTreeMap::new(), None));
    }
    let mut prompt = format!(
        "Rate how relevant each knowledge node is to the query, from 0 (unrelated) to 5 (essential).\n\
         Query: {q}\nNodes:\n"
    );
    for n in nodes {
        let content = idx.entry(&n.id).map(|e| e.content.as_str()).unwrap_or("");
        prompt.push_str(&format!("- {} | {} | {} | {}\n", n.id, n.node_type, n.name, content));
    }
    prompt.push_str("Reply with a JSON object mapping node id to score.");
    let reply = gateway.complete(&CompletionRequest::new(TAG_LLM_EVAL, prompt))?;
    let Some(Value::Object(map)) = extract_json(&reply) else {
        return Ok((BTreeMap::new(), Some(format!("unparseable relevance reply: {}", reply.trim()))));
    };
    let scores = nodes
        .iter()
        .filter_map(|n| map.get(&n.id).and_then(Value::as_f64).map(|s| (n.id.clone(), s.clamp(0.0, 5.0) / 5.0)))
        .collect();
    Ok((scores, None))
}

pub(crate) fn rank(a: &ScoredNode, b: &ScoredNode) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.node_type.precedence().cmp(&b.node_type.precedence()))
        .then_with(|| a.name.cmp(&b.name))
        .then_with(|| a.node_id.cmp(&b.node_id))
}

pub fn fine_order(
    q: &str,
    candidates: &[String],
    g: &KnowledgeGraph,
    idx: &Indexes,
    cfg: &RetrievalConfig,
    gateway: &Gateway,
) -> Result<FineOrder, GatewayError> {
    let nodes: Vec<&KnowledgeNode> = candidates.iter().filter_map(|id| g.node(id)).collect();
    let words = content_words(q);
    let qv = gateway.embed(q)?;
    let [w_lex, w_sem, w_llm] = cfg.weights;
    let (llm, llm_error) = if w_llm > 0.0 { llm_eval(q, &nodes, idx, gateway)? } else { (BTreeMap::new(), None) };
    let mut ranked: Vec<ScoredNode> = nodes
        .iter()
        .map(|n| {
            let lex = idx.words(&n.id).map_or(0.0, |w| overlap_f1(&words, w));
            let sem = idx.vector(&n.id).map_or(0.0, |v| cosine(&qv, v).max(0.0)).min(1.0);
            let l = llm.get(&n.id).copied().unwrap_or(0.0);
            ScoredNode {
                node_id: n.id.clone(),
                name: n.name.clone(),
                node_type: n.node_type,
                lex,
                sem,
                llm: l,
                score: (w_lex * lex + w_sem * sem + w_llm * l).clamp(0.0, 1.0),
            }
        })
        .collect();
    ranked.sort_by(rank);
    ranked.truncate(cfg.top_k);
    Ok(FineOrder { ranked, llm_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(id: &str, t: NodeType, score: f64) -> ScoredNode {
        ScoredNode { node_id: id.into(), name: id.into(), node_type: t, lex: 0.0, sem: 0.0, llm: 0.0, score }
    }

    #[test]
    fn weighted_sum() {
        let [a, b, c] = RetrievalConfig::default().weights;
        assert!((a * 0.6 + b * 0.9 + c * 0.9 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn tie_break_by_type_then_name() {
        let mut v = [
            scored("b", NodeType::Table, 0.5),
            scored("z", NodeType::Column, 0.5),
            scored("a", NodeType::Column, 0.5),
            scored("j", NodeType::Jargon, 0.9),
        ];
        v.sort_by(rank);
        let ids: Vec<_> = v.iter().map(|s| s.node_id.as_str()).collect();
        assert_eq!(ids, ["j", "a", "z", "b"]);
    }

    #[test]
    fn config_validation() {
        assert!(RetrievalConfig::default().validate().is_ok());
        let bad = RetrievalConfig { weights: [0.5, 0.5, 0.5], ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
