//! Generators and independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use nbi_core::agent::{BufferConfig, Content, InformationUnit, SharedBuffer, Snapshot, SweepPolicy, UnitKey};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nbi_core::gateway::{CompletionRequest, FnProvider, Gateway, HashedEmbedder};
use nbi_core::graph::{build_indexes, Indexes, KnowledgeGraph, NodeType, RetrievalConfig, TaskProfile};
use nbi_core::knowledge::{ColumnKnowledge, DatabaseKnowledge, DerivedColumn, KnowledgeBundle, TableKnowledge};
use nbi_core::notebook::{Cell, CellEdit, Notebook};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::Value;
use sqlparser::ast::{Expr, GroupByExpr, SelectItem, SetExpr, Statement};
use sqlparser::dialect::GenericDialect;
use sqlparser::parser::Parser;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

// ---------------------------------------------------------------- notebooks

pub const VARS: [&str; 8] = ["v0", "v1", "v2", "v3", "v4", "v5", "v6", "v7"];

/// A generated cell together with the variables it defines and reads, known
/// by construction rather than by analysis.
#[derive(Debug, Clone)]
pub struct GenCell {
    pub cell: Cell,
    pub defs: BTreeSet<String>,
    pub uses: BTreeSet<String>,
}

fn pick<'a>(rng: &mut impl Rng, k: usize) -> Vec<&'a str> {
    let mut v: Vec<&str> = VARS.choose_multiple(rng, k).copied().collect();
    v.sort();
    v
}

pub fn gen_cell(rng: &mut impl Rng, id: &str) -> GenCell {
    let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    match rng.gen_range(0..10) {
        0..=4 => {
            let k = rng.gen_range(0..=2);
            let uses = pick(rng, k);
            let k = rng.gen_range(0..=2);
            let defs = pick(rng, k);
            let rhs = if uses.is_empty() { "1".to_string() } else { uses.join(" + ") };
            let source = match defs.as_slice() {
                [] => format!("print({rhs})"),
                [one] => format!("{one} = {rhs}"),
                many => format!("{} = {}", many.join(", "), many.iter().map(|_| format!("({rhs})")).collect::<Vec<_>>().join(", ")),
            };
            GenCell { cell: Cell::python(id, source), defs: set(&defs), uses: set(&uses) }
        }
        5..=6 => {
            let def = pick(rng, 1);
            let (source, uses) = if rng.gen_bool(0.5) {
                let from = pick(rng, 1);
                (format!("SELECT a, b FROM {} WHERE a > 1", from[0]), set(&from))
            } else {
                ("SELECT a, b FROM warehouse_table".to_string(), BTreeSet::new())
            };
            GenCell { cell: Cell::sql(id, source, Some(def[0])), defs: set(&def), uses }
        }
        7 => {
            let var = pick(rng, 1);
            GenCell { cell: Cell::chart(id, "{\"mark\": \"bar\"}", var[0]), defs: BTreeSet::new(), uses: set(&var) }
        }
        _ => GenCell { cell: Cell::markdown(id, "notes"), defs: BTreeSet::new(), uses: BTreeSet::new() },
    }
}

pub fn gen_notebook(rng: &mut impl Rng, cells: usize) -> (Notebook, Vec<GenCell>) {
    let gen: Vec<GenCell> = (0..cells).map(|i| gen_cell(rng, &format!("c{i}"))).collect();
    (Notebook::with_cells("gen", gen.iter().map(|g| g.cell.clone()).collect()), gen)
}

/// A random valid edit: create at a random position, modify, or delete.
pub fn gen_edit(rng: &mut impl Rng, nb: &Notebook, fresh: &mut usize) -> CellEdit {
    let n = nb.cells.len();
    match (n, rng.gen_range(0..3)) {
        (0, _) | (_, 0) => {
            *fresh += 1;
            CellEdit::Create { cell: gen_cell(rng, &format!("n{fresh}")).cell, index: Some(rng.gen_range(0..=n)) }
        }
        (_, 1) => {
            let id = nb.cells[rng.gen_range(0..n)].id.clone();
            CellEdit::Modify { cell: gen_cell(rng, &id).cell, cell_id: id }
        }
        _ => CellEdit::Delete { cell_id: nb.cells[rng.gen_range(0..n)].id.clone() },
    }
}

/// Brute force: each read of `v` in cell j depends on the nearest cell
/// i < j that defines `v`.
pub fn oracle_edges(cells: &[GenCell]) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for (j, c) in cells.iter().enumerate() {
        for v in &c.uses {
            if let Some(i) = (0..j).rev().find(|&i| cells[i].defs.contains(v)) {
                out.insert((cells[i].cell.id.clone(), c.cell.id.clone()));
            }
        }
    }
    out
}

/// Reachability by repeated scanning of the edge set.
pub fn reach(edges: &BTreeSet<(String, String)>, start: &str, forward: bool) -> BTreeSet<String> {
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut frontier = vec![start.to_string()];
    while let Some(n) = frontier.pop() {
        for (a, b) in edges {
            let (from, to) = if forward { (a, b) } else { (b, a) };
            if *from == n && seen.insert(to.clone()) {
                frontier.push(to.clone());
            }
        }
    }
    seen
}

// ---------------------------------------------------------------- retrieval

const VOCAB: [&str; 16] = [
    "revenue", "income", "order", "region", "product", "customer", "date", "month", "cost", "profit", "channel", "store",
    "amount", "count", "city", "segment",
];

/// Bundle-backed graph of at most `max_nodes` nodes drawn from a small
/// vocabulary so that lexical ties are common.
pub fn gen_graph(rng: &mut impl Rng, max_nodes: usize) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new();
    let tables = rng.gen_range(2..=12);
    for t in 0..tables {
        let mut columns = BTreeMap::new();
        let ncols = rng.gen_range(3..=24);
        let mut names = Vec::new();
        for c in 0..ncols {
            let w: Vec<&str> = VOCAB.choose_multiple(rng, 2).copied().collect();
            let name = format!("{}_{}_{c}", w[0], w[1]);
            let d: Vec<&str> = VOCAB.choose_multiple(rng, 3).copied().collect();
            let derived = if c == 0 && rng.gen_bool(0.5) {
                vec![DerivedColumn {
                    name: format!("derived_{t}"),
                    description: format!("{} minus {}", VOCAB[t % 16], VOCAB[(t + 3) % 16]),
                    calculation_logic: format!("{name} * 2"),
                    ..Default::default()
                }]
            } else {
                Vec::new()
            };
            columns.insert(
                name.clone(),
                ColumnKnowledge {
                    description: format!("{} of the {} by {}", d[0], d[1], d[2]),
                    usage: format!("group by {}", d[0]),
                    derived,
                    ..Default::default()
                },
            );
            names.push(name);
        }
        let bundle = KnowledgeBundle {
            database: DatabaseKnowledge { name: "db".into(), description: "analytics warehouse".into(), ..Default::default() },
            table: TableKnowledge {
                name: format!("t{t}"),
                description: format!("{} and {} facts", VOCAB[(t * 5) % 16], VOCAB[(t * 7 + 1) % 16]),
                ..Default::default()
            },
            columns,
        };
        let mut trial = g.clone();
        if trial.upsert_bundle(&bundle).is_ok() && trial.len() <= max_nodes {
            g = trial;
        }
    }
    g
}

/// Deterministic 0..=5 relevance per node, independent of the query, so
/// the LLM component produces many ties.
pub fn llm_score(node_id: &str) -> u64 {
    node_id.bytes().fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64)) % 6
}

pub fn scoring_gateway() -> Gateway {
    let embedder = HashedEmbedder::new();
    Gateway::new(std::sync::Arc::new(
        FnProvider::new(|req: &CompletionRequest| {
            let ids: BTreeMap<String, u64> = req
                .prompt
                .lines()
                .filter_map(|l| l.strip_prefix("- "))
                .filter_map(|l| l.split(" | ").next())
                .map(|id| (id.to_string(), llm_score(id)))
                .collect();
            Ok(serde_json::to_string(&ids).unwrap())
        })
        .with_embedder(embedder),
    ))
}

pub fn indexes(g: &KnowledgeGraph, gw: &Gateway) -> Indexes {
    build_indexes(g, &TaskProfile::preset("nl2dsl").unwrap(), gw).unwrap()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn precedence(t: NodeType) -> u8 {
    match t {
        NodeType::Column => 0,
        NodeType::Table => 1,
        NodeType::Database => 2,
        NodeType::Value => 3,
        NodeType::Jargon => 4,
        NodeType::Alias => 5,
    }
}

/// Exhaustive scoring of every candidate, then selection of the best K by
/// repeated linear scans under the tie-break (score desc, type precedence,
/// name, id).
pub fn brute_force_top_k(
    query: &str,
    candidates: &[String],
    g: &KnowledgeGraph,
    idx: &Indexes,
    gw: &Gateway,
    cfg: &RetrievalConfig,
) -> Vec<String> {
    let qw = nbi_core::text::content_words(query);
    let qv = gw.embed(query).unwrap();
    let mut pool: Vec<(f64, u8, String, String)> = candidates
        .iter()
        .map(|id| {
            let n = g.node(id).unwrap();
            let lex = idx.words(id).map_or(0.0, |w| {
                let inter = qw.iter().filter(|x| w.contains(*x)).count() as f64;
                if qw.is_empty() || w.is_empty() || inter == 0.0 {
                    0.0
                } else {
                    let (p, r) = (inter / w.len() as f64, inter / qw.len() as f64);
                    2.0 * p * r / (p + r)
                }
            });
            let sem = idx.vector(id).map_or(0.0, |v| {
                let denom = dot(v, v).sqrt() * dot(&qv, &qv).sqrt();
                if denom == 0.0 {
                    0.0
                } else {
                    (dot(v, &qv) / denom).max(0.0)
                }
            });
            let sem = sem.min(1.0);
            let llm = llm_score(id) as f64 / 5.0;
            let [a, b, c] = cfg.weights;
            ((a * lex + b * sem + c * llm).clamp(0.0, 1.0), precedence(n.node_type), n.name.clone(), id.clone())
        })
        .collect();
    let mut out = Vec::new();
    while out.len() < cfg.top_k && !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            let (x, y) = (&pool[i], &pool[best]);
            let better = x.0 > y.0 || (x.0 == y.0 && (x.1, &x.2, &x.3) < (y.1, &y.2, &y.3));
            if better {
                best = i;
            }
        }
        out.push(pool.remove(best).3);
    }
    out
}

pub fn gen_query(rng: &mut impl Rng) -> String {
    let k = rng.gen_range(1..=4);
    VOCAB.choose_multiple(rng, k).copied().collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------- SQL

/// Clause sets of a single SELECT, extracted from the sqlparser AST.
#[derive(Debug, Default, PartialEq)]
pub struct Clauses {
    pub select: Vec<String>,
    pub from: String,
    pub predicates: BTreeSet<String>,
    pub group_by: Vec<String>,
    pub order_by: Vec<String>,
    pub limit: Option<String>,
}

fn split_and(e: &Expr, out: &mut BTreeSet<String>) {
    match e {
        Expr::BinaryOp { left, op: sqlparser::ast::BinaryOperator::And, right } => {
            split_and(left, out);
            split_and(right, out);
        }
        Expr::Nested(inner) => split_and(inner, out),
        other => {
            out.insert(other.to_string());
        }
    }
}

pub fn clauses(sql: &str) -> Clauses {
    let stmts = Parser::parse_sql(&GenericDialect {}, sql).unwrap_or_else(|e| panic!("{sql}: {e}"));
    let Statement::Query(q) = &stmts[0] else { panic!("not a query: {sql}") };
    let SetExpr::Select(s) = q.body.as_ref() else { panic!("not a select: {sql}") };
    let mut c = Clauses {
        select: s.projection.iter().map(|p| match p {
            SelectItem::ExprWithAlias { expr, alias } => format!("{expr} AS {alias}"),
            other => other.to_string(),
        }).collect(),
        from: s.from.first().map(|f| f.relation.to_string()).unwrap_or_default(),
        ..Default::default()
    };
    if let Some(w) = &s.selection {
        split_and(w, &mut c.predicates);
    }
    if let GroupByExpr::Expressions(exprs, _) = &s.group_by {
        c.group_by = exprs.iter().map(|e| e.to_string()).collect();
    }
    if let Some(ob) = &q.order_by {
        c.order_by = ob.to_string().trim_start_matches("ORDER BY ").split(", ").map(str::to_string).collect();
    }
    if let Some(l) = &q.limit_clause {
        c.limit = Some(l.to_string().trim().trim_start_matches("LIMIT ").to_string());
    }
    c
}

// ---------------------------------------------------------------- buffer

pub fn unit(role: &str, action: &str, source: &str, payload: &str, t: i64) -> InformationUnit {
    InformationUnit {
        data_source: source.into(),
        role: role.into(),
        action: action.into(),
        description: format!("{role} {action}"),
        content: Content::Text(payload.into()),
        timestamp: Utc.timestamp_opt(1_700_000_000 + t, 0).unwrap(),
        origin_cell: None,
    }
}

fn key_unit(k: usize, payload: &str, t: i64) -> InformationUnit {
    unit(&format!("agent{}", k % 3), &format!("act{}", k % 2), &format!("src{}", k / 6), payload, t)
}

/// Random puts, retracts and sweeps against a last-writer-wins model.
/// Returns the first violated law.
pub fn buffer_law(seed: u64, ops: usize, initial: usize, sweep_every: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buf = SharedBuffer::new(BufferConfig { initial_capacity: initial, sweep_every });
    let mut model: BTreeMap<UnitKey, InformationUnit> = BTreeMap::new();
    let mut last_cap = buf.capacity();
    for i in 0..ops {
        match rng.gen_range(0..20) {
            0 => {
                buf.sweep(SweepPolicy::default(), Utc::now());
            }
            1 => {
                let k = key_unit(rng.gen_range(0..18), "x", 0).key();
                let got = buf.retract(&k);
                if got != model.remove(&k) {
                    return Err(format!("op {i}: retract of {k} disagrees with model"));
                }
            }
            _ => {
                let u = key_unit(rng.gen_range(0..18), &format!("p{i}"), i as i64);
                let receipt = buf.put(u.clone()).map_err(|e| e.to_string())?;
                if receipt.superseded != model.contains_key(&u.key()) {
                    return Err(format!("op {i}: superseded flag wrong"));
                }
                model.insert(u.key(), u);
            }
        }
        let cap = buf.capacity();
        if !cap.is_multiple_of(initial) || !(cap / initial).is_power_of_two() {
            return Err(format!("op {i}: capacity {cap} is not {initial}·2^n"));
        }
        if cap < last_cap {
            return Err(format!("op {i}: capacity shrank"));
        }
        last_cap = cap;
        if buf.live_count() > cap || buf.slot_count() > cap {
            return Err(format!("op {i}: {} live / {} slots exceed capacity {cap}", buf.live_count(), buf.slot_count()));
        }
        let live = buf.live();
        let keys: BTreeSet<UnitKey> = live.iter().map(InformationUnit::key).collect();
        if keys.len() != live.len() {
            return Err(format!("op {i}: two live units share a key"));
        }
        let mut sorted = live.clone();
        sorted.sort_by_key(InformationUnit::key);
        if sorted != model.values().cloned().collect::<Vec<_>>() {
            return Err(format!("op {i}: live set differs from the model"));
        }
    }
    Ok(())
}

/// Writers put concurrently while readers snapshot. Every snapshot must
/// equal the model state after replaying puts in receipt order up to its
/// watermark.
pub fn buffer_stress(writers: usize, puts_per_writer: usize, readers: usize) -> Result<(), String> {
    let buf = Arc::new(SharedBuffer::new(BufferConfig { initial_capacity: 2, sweep_every: 16 }));
    let mut handles = Vec::new();
    for w in 0..writers {
        let buf = buf.clone();
        handles.push(std::thread::spawn(move || {
            (0..puts_per_writer)
                .map(|i| {
                    let u = key_unit((w * 7 + i) % 18, &format!("w{w}-{i}"), i as i64);
                    (buf.put(u.clone()).unwrap().seq, u)
                })
                .collect::<Vec<_>>()
        }));
    }
    let mut snaps = Vec::new();
    let mut rhandles = Vec::new();
    for _ in 0..readers {
        let buf = buf.clone();
        rhandles.push(std::thread::spawn(move || (0..200).map(|_| buf.snapshot()).collect::<Vec<Snapshot>>()));
    }
    let mut log: Vec<(u64, InformationUnit)> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    for h in rhandles {
        snaps.extend(h.join().unwrap());
    }
    snaps.push(buf.snapshot());
    log.sort_by_key(|(s, _)| *s);
    let seqs: Vec<u64> = log.iter().map(|(s, _)| *s).collect();
    if seqs != (1..=log.len() as u64).collect::<Vec<_>>() {
        return Err("put sequence numbers are not a gapless total order".into());
    }
    for snap in &snaps {
        let mut model: BTreeMap<UnitKey, (u64, InformationUnit)> = BTreeMap::new();
        for (s, u) in log.iter().take_while(|(s, _)| *s <= snap.watermark) {
            model.insert(u.key(), (*s, u.clone()));
        }
        let mut want: Vec<(u64, InformationUnit)> = model.into_values().collect();
        want.sort_by_key(|(s, _)| *s);
        let mut got = snap.units.clone();
        got.sort_by_key(|(s, _)| *s);
        if got != want {
            return Err(format!("snapshot at watermark {} is not a prefix state", snap.watermark));
        }
    }
    Ok(())
}

/// Clause sets a DSL spec must render to, derived from the spec JSON alone.
pub fn expected_clauses(spec: &Value, table: &str) -> Clauses {
    let arr = |k: &str| spec.get(k).and_then(Value::as_array).cloned().unwrap_or_default();
    let lit = |v: &Value| match v {
        Value::String(s) => format!("'{}'", s.replace('\'', "''")),
        other => other.to_string(),
    };
    let dims: Vec<String> = arr("DimensionList").iter().map(|d| d["column"].as_str().unwrap().to_string()).collect();
    let measures: Vec<(String, String, String)> = arr("MeasureList")
        .iter()
        .map(|m| {
            let (col, agg) = (m["column"].as_str().unwrap(), m["aggregation"].as_str().unwrap());
            let expr = match agg {
                "count_distinct" => format!("COUNT(DISTINCT {col})"),
                a => format!("{}({col})", a.to_uppercase()),
            };
            let alias = if col == "*" { "count_all".to_string() } else { format!("{agg}_{col}") };
            (col.to_string(), expr, alias)
        })
        .collect();
    let mut select = dims.clone();
    select.extend(measures.iter().map(|(_, e, a)| format!("{e} AS {a}")));
    let predicates = arr("ConditionList")
        .iter()
        .map(|c| {
            let (col, op, v) = (c["column"].as_str().unwrap(), c["operator"].as_str().unwrap(), &c["value"]);
            match op {
                "in" => format!("{col} IN ({})", v.as_array().unwrap().iter().map(lit).collect::<Vec<_>>().join(", ")),
                "between" => format!("{col} BETWEEN {} AND {}", lit(&v[0]), lit(&v[1])),
                "like" => format!("{col} LIKE {}", lit(v)),
                o => format!("{col} {o} {}", lit(v)),
            }
        })
        .collect();
    let order_by = arr("OrderList")
        .iter()
        .map(|o| {
            let col = o["column"].as_str().unwrap();
            let target = measures.iter().find(|(c, _, _)| c == col).map_or(col.to_string(), |(_, _, a)| a.clone());
            format!("{target} {}", o.get("direction").and_then(Value::as_str).unwrap_or("asc").to_uppercase())
        })
        .collect();
    Clauses {
        select,
        from: table.to_string(),
        predicates,
        group_by: if measures.is_empty() { Vec::new() } else { dims },
        order_by,
        limit: spec.get("LimitN").map(|n| n.to_string()),
    }
}

pub fn sales_columns() -> BTreeSet<&'static str> {
    ["ftime", "prod_class4_name", "region", "shouldincome_after", "cost"].into()
}

#[derive(Debug, serde::Deserialize)]
pub struct DslFixture {
    pub name: String,
    pub reply: String,
    #[serde(default)]
    pub table: String,
    #[serde(default)]
    pub expect_paths: Vec<String>,
}

pub fn dsl_fixtures(file: &str) -> Vec<DslFixture> {
    std::fs::read_to_string(fixtures().join("dsl").join(file))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

// ---------------------------------------------------------------- context

#[derive(Debug, serde::Deserialize)]
pub struct CorpusItem {
    pub notebook: Notebook,
    pub query: String,
    pub scope: nbi_core::QueryScope,
}

pub fn corpus() -> Vec<(String, CorpusItem)> {
    let dir = fixtures().join("context");
    let mut files: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let item = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
            (p.file_name().unwrap().to_string_lossy().into_owned(), item)
        })
        .collect()
}

/// Closure and minimality of a pruned bundle, checked against reachability
/// over the DAG's edge set:
/// - every kept code or chart cell lies in the scope's closure and is
///   admitted by the task type (or is the root);
/// - every admitted closure cell is kept;
/// - Markdown cells appear only when similar enough to the query.
pub fn check_bundle(item: &CorpusItem, bundle: &nbi_core::ContextBundle, threshold: f64) -> Result<(), String> {
    use nbi_core::context::{markdown_similarity, ScopeLevel};
    use nbi_core::CellKind;
    let dag = nbi_core::CellDag::build(&item.notebook);
    let edges = dag.edges();
    let (root, mut closure) = match item.scope.level {
        ScopeLevel::Notebook => {
            let var = item.scope.data_variable.as_deref().ok_or("no variable")?;
            let root = item
                .notebook
                .cells
                .iter()
                .find(|c| c.data_variable().as_deref() == Some(var) || nbi_core::analysis::cell_surface(c).is_ok_and(|s| s.defined.contains(var)))
                .ok_or("variable undefined")?
                .id
                .clone();
            let closure = reach(&edges, &root, true);
            (root, closure)
        }
        ScopeLevel::Cell => {
            let root = item.scope.anchor_cell.clone().ok_or("no anchor")?;
            let closure = reach(&edges, &root, false);
            (root, closure)
        }
    };
    closure.insert(root.clone());
    let kept: BTreeSet<&str> = bundle.cells.iter().map(|c| c.id.as_str()).collect();
    for c in &item.notebook.cells {
        let admitted = closure.contains(&c.id) && (item.scope.task_type.keeps(c.kind) || c.id == root);
        let md_ok = c.kind == CellKind::Markdown && markdown_similarity(&c.source, &item.query) >= threshold;
        let inside = kept.contains(c.id.as_str());
        if admitted && !inside {
            return Err(format!("closure cell {} missing", c.id));
        }
        if inside && !admitted && !md_ok {
            return Err(format!("cell {} kept outside the pruned closure", c.id));
        }
    }
    let order: Vec<&str> = item.notebook.cells.iter().map(|c| c.id.as_str()).filter(|id| kept.contains(id)).collect();
    if order != bundle.cell_ids() {
        return Err("bundle cells are not in document order".into());
    }
    Ok(())
}

// ---------------------------------------------------------------- protocol

pub fn scenario_dirs() -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(fixtures().join("scenarios")).unwrap().map(|e| e.unwrap().path()).collect();
    dirs.sort();
    dirs
}

/// Protocol violations in one dispatch trace:
/// - a delivery whose unit does not come from a plan predecessor;
/// - a consumer that executes without having received each producer's unit;
/// - more than `budget` Execute episodes for an agent;
/// - an agent whose last state is not Finish, or a missing final answer.
pub fn protocol_violations(plan: &nbi_core::agent::CommPlan, trace: &nbi_core::agent::Trace, budget: usize) -> Vec<String> {
    use nbi_core::agent::{AgentState, TraceEventKind};
    let mut out = Vec::new();
    let edges: BTreeSet<(&str, &str)> = plan.transitions.iter().map(|t| (t.from.as_str(), t.to.as_str())).collect();
    let mut received: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for e in &trace.events {
        match e.event {
            TraceEventKind::Deliver => {
                if let Some(k) = &e.unit_key {
                    if !edges.contains(&(k.role.as_str(), e.agent.as_str())) {
                        out.push(format!("{} received a unit from {} without an edge", e.agent, k.role));
                    }
                    received.entry(e.agent.as_str()).or_default().insert(k.role.as_str());
                }
            }
            TraceEventKind::Execute => {
                let got = received.remove(e.agent.as_str()).unwrap_or_default();
                for (from, _) in edges.iter().filter(|(_, to)| *to == e.agent) {
                    if !got.contains(from) {
                        out.push(format!("{} executed without the unit of {from}", e.agent));
                    }
                }
            }
            _ => {}
        }
    }
    let finals = trace.final_states();
    for node in &plan.nodes {
        let n = trace.episodes(&node.agent);
        if n == 0 || n > budget {
            out.push(format!("{} ran {n} episodes", node.agent));
        }
        if finals.get(&node.agent) != Some(&AgentState::Finish) {
            out.push(format!("{} did not finish", node.agent));
        }
    }
    if trace.events.last().map(|e| e.event) != Some(TraceEventKind::Answer) {
        out.push("trace does not end with the answer".into());
    }
    out
}

/// A rendered chart is valid when it passes structural validation and every
/// encoded field is a column of its embedded rows.
pub fn chart_is_valid(spec: &Value) -> Result<(), String> {
    nbi_core::graph::validate_chart_spec(spec)?;
    let rows = spec.pointer("/data/values").and_then(Value::as_array).ok_or("no embedded data")?;
    let first = rows.first().and_then(Value::as_object).ok_or("no rows")?;
    for (ch, enc) in spec["encoding"].as_object().ok_or("no encoding")? {
        let f = enc["field"].as_str().unwrap_or_default();
        if !first.contains_key(f) {
            return Err(format!("{ch} field `{f}` is not a result column"));
        }
    }
    Ok(())
}

// --------------------------------------------------------------- knowledge

pub struct MapRun {
    pub generation_calls: usize,
    pub calibration_calls: usize,
    pub result: Result<nbi_core::knowledge::MapResult, nbi_core::knowledge::KnowledgeError>,
}

/// Runs the map phase for one script against a model whose calibration
/// replies walk through `scores` (repeating the last one), counting calls
/// at the provider.
pub fn map_with_scores(scores: &[u8], threshold: u8, max_attempts: u32) -> MapRun {
    use nbi_core::knowledge::{map_generate, ColumnSchema, GenConfig, Language, LineageInfo, SchemaInfo, Script};
    use std::sync::atomic::{AtomicUsize, Ordering};

    let gens = Arc::new(AtomicUsize::new(0));
    let cals = Arc::new(AtomicUsize::new(0));
    let (g, c) = (gens.clone(), cals.clone());
    let scores = scores.to_vec();
    let draft = serde_json::json!({
        "database": {"description": "bi warehouse", "usage": "reporting"},
        "table": {"description": "sales facts", "usage": "revenue analysis", "organization": "one row per sale"},
        "columns": {"region": {"description": "sales region", "usage": "grouping"}}
    })
    .to_string();
    let gateway = Gateway::new(Arc::new(FnProvider::new(move |req: &CompletionRequest| match req.tag.as_str() {
        "knowledge.map" => {
            g.fetch_add(1, Ordering::SeqCst);
            Ok(draft.clone())
        }
        "knowledge.calibrate" => {
            let i = c.fetch_add(1, Ordering::SeqCst);
            Ok(format!("score: {}", scores[i.min(scores.len() - 1)]))
        }
        other => panic!("unexpected tag {other}"),
    })));
    let schema = SchemaInfo {
        database: "bi".into(),
        table: "sales".into(),
        columns: vec![ColumnSchema { name: "region".into(), declared_type: "string".into() }],
    };
    let script = Script {
        id: "s1".into(),
        language: Language::Sql,
        text: "SELECT region, SUM(revenue) FROM sales GROUP BY region".into(),
        last_run: Utc.timestamp_opt(0, 0).unwrap(),
    };
    let cfg = GenConfig { score_threshold: threshold, max_attempts, ..GenConfig::default() };
    let result = map_generate(&script, &schema, &LineageInfo::default(), &cfg, &gateway);
    MapRun { generation_calls: gens.load(Ordering::SeqCst), calibration_calls: cals.load(Ordering::SeqCst), result }
}
