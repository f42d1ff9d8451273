//! Map/Reduce knowledge generation with self-calibration.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::bundle::{from_value, parse_bundle, KnowledgeBundle};
use super::{GenConfig, KnowledgeError, LineageInfo, Script, ScriptHistory, SchemaInfo};
use crate::gateway::{CompletionRequest, Gateway};
use crate::text::{jaccard, word_set};

pub const TAG_MAP: &str = "knowledge.map";
pub const TAG_CALIBRATE: &str = "knowledge.calibrate";
pub const TAG_REDUCE: &str = "knowledge.reduce";

/// Outcome of the map phase for one script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub script_id: String,
    pub bundle: KnowledgeBundle,
    pub score: u8,
    pub attempts: u32,
    pub generation_calls: u32,
    pub calibration_calls: u32,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub bundle: KnowledgeBundle,
    pub drafts: Vec<MapResult>,
    /// Scripts whose best draft stayed below the threshold but still fed
    /// the reduce phase.
    pub below_threshold: Vec<String>,
    /// Scripts that never produced a valid draft.
    pub failed: Vec<String>,
}

/// Drops exact duplicates and near-duplicates (token Jaccard at or above
/// `dedup_similarity`), keeping the most recent script. Output is ordered
/// most recent first.
pub fn preprocess_scripts(h: &ScriptHistory, cfg: &GenConfig) -> ScriptHistory {
    let mut ordered: Vec<&Script> = h.scripts.iter().collect();
    ordered.sort_by(|a, b| b.last_run.cmp(&a.last_run).then_with(|| a.id.cmp(&b.id)));
    let mut kept: Vec<(&Script, BTreeSet<String>)> = Vec::new();
    for s in ordered {
        let words = word_set(&s.text);
        let dup = kept.iter().any(|(k, kw)| k.text == s.text || jaccard(kw, &words) >= cfg.dedup_similarity);
        if !dup {
            kept.push((s, words));
        }
    }
    ScriptHistory { scripts: kept.into_iter().map(|(s, _)| s.clone()).collect(), table_ref: h.table_ref.clone() }
}

fn schema_block(schema: &SchemaInfo, lineage: &LineageInfo) -> String {
    let mut out = format!("Database: {}\nTable: {}\nColumns:\n", schema.database, schema.table);
    for c in &schema.columns {
        out.push_str(&format!("  - {} ({})\n", c.name, c.declared_type));
    }
    let edges: Vec<_> = lineage.touching(&schema.table).collect();
    if !edges.is_empty() {
        out.push_str("Lineage:\n");
        for e in edges {
            out.push_str(&format!("  - {} -> {}\n", e.upstream, e.downstream));
        }
    }
    out
}

const BUNDLE_SHAPE: &str = r#"{"database": {"description", "usage", "tags"}, "table": {"description", "usage", "organization", "key_column_names", "key_derived_attribute_names", "tags"}, "columns": {"<column>": {"description", "usage", "type", "tags", "derived": [{"name", "description", "usage", "calculation_logic", "related_columns", "tags"}]}}}"#;

fn map_prompt(script: &Script, schema: &SchemaInfo, lineage: &LineageInfo, attempt: u32, feedback: Option<u8>) -> String {
    let mut p = format!(
        "Analyze the semantic content and logical structure of this data processing script and extract \
         knowledge about the database, table and columns it involves. Only describe columns the script \
         actually touches; derived columns must name the columns they are computed from.\n\n{}\n\
         Script ({:?}, id {}):\n{}\n\nReply with JSON shaped as {BUNDLE_SHAPE}.",
        schema_block(schema, lineage),
        script.language,
        script.id,
        script.text
    );
    if let Some(score) = feedback {
        p.push_str(&format!("\nAttempt {attempt}: the previous draft scored {score}/5. Improve it."));
    }
    p
}

const CALIBRATION_EXAMPLES: &str = "\
Example 1: a column described as \"a column\" with usage \"used in queries\" -> score: 1 (vague, not useful).
Example 2: correct descriptions for every involved column, derived metric with explicit formula and related columns -> score: 5.
Example 3: correct table description but a derived column missing its calculation logic -> score: 3.";

fn score_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)score\s*[:=]?\s*(-?\d+)").expect("static regex"))
}

fn int_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+").expect("static regex"))
}

/// Score in a calibration reply: a bare integer, then `score: N`, then the
/// first integer anywhere. Clamped to [1, 5].
pub fn extract_score(reply: &str) -> Option<u8> {
    let t = reply.trim();
    let raw: i64 = t
        .parse()
        .ok()
        .or_else(|| score_re().captures(t).and_then(|c| c[1].parse().ok()))
        .or_else(|| int_re().find(t).and_then(|m| m.as_str().parse().ok()))?;
    Some(raw.clamp(1, 5) as u8)
}

pub fn self_calibrate(draft: &KnowledgeBundle, gateway: &Gateway) -> Result<u8, KnowledgeError> {
    let prompt = format!(
        "Rate the following knowledge components from 1 to 5, considering correctness, comprehensiveness \
         and clarity.\n{CALIBRATION_EXAMPLES}\n\nKnowledge:\n{}\n\nReply with `score: N`.",
        draft.to_json()
    );
    let reply = gateway.complete(&CompletionRequest::new(TAG_CALIBRATE, prompt))?;
    extract_score(&reply).ok_or_else(|| KnowledgeError::InvalidModelOutput(format!("no score in `{}`", reply.trim())))
}

/// Generates knowledge for one script, regenerating while the calibration
/// score is below the threshold, for at most `max_attempts` generations. An
/// unparseable draft uses up an attempt without a calibration call.
pub fn map_generate(
    script: &Script,
    schema: &SchemaInfo,
    lineage: &LineageInfo,
    cfg: &GenConfig,
    gateway: &Gateway,
) -> Result<MapResult, KnowledgeError> {
    let mut best: Option<MapResult> = None;
    let mut feedback = None;
    let mut last_issue = String::new();
    let (mut gen_calls, mut cal_calls) = (0, 0);
    for attempt in 1..=cfg.max_attempts {
        gen_calls += 1;
        let reply = gateway.complete(&CompletionRequest::new(TAG_MAP, map_prompt(script, schema, lineage, attempt, feedback)))?;
        let draft = match parse_bundle(&reply, schema) {
            Ok(d) => d,
            Err(issue) => {
                last_issue = issue.to_string();
                continue;
            }
        };
        cal_calls += 1;
        let score = self_calibrate(&draft, gateway)?;
        feedback = Some(score);
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(MapResult {
                script_id: script.id.clone(),
                bundle: draft,
                score,
                attempts: attempt,
                generation_calls: 0,
                calibration_calls: 0,
                accepted: false,
            });
        }
        if score >= cfg.score_threshold {
            break;
        }
    }
    match best {
        Some(mut b) => {
            b.generation_calls = gen_calls;
            b.calibration_calls = cal_calls;
            b.accepted = b.score >= cfg.score_threshold;
            if b.accepted {
                Ok(b)
            } else {
                b.attempts = gen_calls;
                Err(KnowledgeError::AttemptsExhausted(Box::new(b)))
            }
        }
        None => Err(KnowledgeError::InvalidModelOutput(format!(
            "script {}: no valid draft in {gen_calls} attempts ({last_issue})",
            script.id
        ))),
    }
}

/// Aggregates drafts into one bundle. Columns present in any draft but
/// missing from the reply are copied from the first draft that has them.
pub fn reduce_synthesize(
    drafts: &[KnowledgeBundle],
    schema: &SchemaInfo,
    lineage: &LineageInfo,
    gateway: &Gateway,
) -> Result<KnowledgeBundle, KnowledgeError> {
    if drafts.is_empty() {
        return Err(KnowledgeError::NoDrafts);
    }
    let listed: Vec<String> = drafts.iter().enumerate().map(|(i, d)| format!("Draft {}:\n{}", i + 1, d.to_json())).collect();
    let prompt = format!(
        "Scrutinize, aggregate and summarize these separately generated knowledge drafts into one \
         consistent and conflict-free result. Keep every column that any draft describes.\n\n{}\n{}\n\
         Reply with JSON shaped as {BUNDLE_SHAPE}.",
        schema_block(schema, lineage),
        listed.join("\n")
    );
    let reply = gateway.complete(&CompletionRequest::new(TAG_REDUCE, prompt))?;
    let mut out = parse_bundle(&reply, schema).map_err(|e| KnowledgeError::InvalidModelOutput(e.to_string()))?;
    for d in drafts {
        for (name, col) in &d.columns {
            out.columns.entry(name.clone()).or_insert_with(|| col.clone());
        }
    }
    from_value(&serde_json::to_value(&out).expect("bundle serializes"), schema)
        .map_err(|e| KnowledgeError::InvalidModelOutput(e.to_string()))
}

/// Full pipeline: preprocess, map each surviving script (bounded
/// concurrency), reduce. Below-threshold best drafts take part in reduce
/// and are listed in the report.
pub fn generate_knowledge(
    history: &ScriptHistory,
    schema: &SchemaInfo,
    lineage: &LineageInfo,
    cfg: &GenConfig,
    gateway: &Gateway,
) -> Result<GenerationReport, KnowledgeError> {
    cfg.validate()?;
    schema.validate()?;
    let scripts = preprocess_scripts(history, cfg).scripts;
    let width = cfg.max_in_flight.max(1);
    let mut results = Vec::with_capacity(scripts.len());
    for chunk in scripts.chunks(width) {
        let chunk_results: Vec<_> = if chunk.len() == 1 {
            vec![map_generate(&chunk[0], schema, lineage, cfg, gateway)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> =
                    chunk.iter().map(|sc| s.spawn(move || map_generate(sc, schema, lineage, cfg, gateway))).collect();
                handles.into_iter().map(|h| h.join().expect("map worker panicked")).collect()
            })
        };
        results.extend(chunk.iter().map(|s| s.id.clone()).zip(chunk_results));
    }
    let (mut drafts, mut below, mut failed) = (Vec::new(), Vec::new(), Vec::new());
    for (id, r) in results {
        match r {
            Ok(m) => drafts.push(m),
            Err(KnowledgeError::AttemptsExhausted(m)) => {
                below.push(id);
                drafts.push(*m);
            }
            Err(KnowledgeError::InvalidModelOutput(_)) => failed.push(id),
            Err(e) => return Err(e),
        }
    }
    let bundles: Vec<KnowledgeBundle> = drafts.iter().map(|d| d.bundle.clone()).collect();
    let bundle = reduce_synthesize(&bundles, schema, lineage, gateway)?;
    Ok(GenerationReport { bundle, drafts, below_threshold: below, failed })
}
