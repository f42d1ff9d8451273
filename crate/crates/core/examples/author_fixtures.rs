//! Regenerates the committed fixtures under `fixtures/`: replay scenarios
//! (recorded through a deterministic stand-in model), DSL reply fixtures and
//! the context corpus. Run after any prompt change:
//!
//! ```text
//! cargo run -p nbi-core --example author_fixtures
//! ```

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use nbi_core::agent::SqlExecutor;
use nbi_core::context::{QueryScope, TaskType};
use nbi_core::gateway::{CompletionRequest, FnProvider, GatewayError, HashedEmbedder, Recorder};
use nbi_core::graph::{dsl_to_sql, DslSpec, OperatorRegistry};
use nbi_core::notebook::{serialize_notebook, Cell, Notebook};
use nbi_core::agent::KernelError;
use nbi_core::replay::{run_with, ReplayError, Scenario, ScenarioStep, World};
use nbi_core::{Decision, SessionError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const STOP: &[&str] = &["the", "and", "for", "draw", "chart", "show", "what", "are", "with", "each", "from", "into", "per"];

fn words(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|w| w.len() >= 3 && !STOP.contains(&w.as_str()))
        .collect()
}

fn line_after<'a>(prompt: &'a str, prefix: &str) -> &'a str {
    prompt.lines().find_map(|l| l.strip_prefix(prefix)).unwrap_or("").trim()
}

/// Stand-in model: generic answers for retrieval, rewrite and synthesis;
/// per-tag reply queues for everything else.
struct Model {
    queues: Mutex<HashMap<String, VecDeque<String>>>,
}

impl Model {
    fn answer(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        match req.tag.as_str() {
            "graph.rewrite" => Ok(line_after(&req.prompt, "Question:").to_string()),
            "context.predict_variable" => Ok("sales_df".into()),
            "graph.llm_eval" => {
                let q = words(line_after(&req.prompt, "Query:"));
                let mut scores = serde_json::Map::new();
                for l in req.prompt.lines().filter_map(|l| l.strip_prefix("- ")) {
                    let parts: Vec<&str> = l.splitn(4, " | ").collect();
                    let [id, ty, name, content] = parts[..] else { continue };
                    let shared = words(&format!("{} {content}", name.replace('_', " "))).intersection(&q).count() as u64;
                    let score = match ty {
                        "column" => 2 + shared.min(3),
                        "table" => 3,
                        "value" if shared > 0 => 5,
                        _ => shared.min(5),
                    };
                    scores.insert(id.to_string(), json!(score));
                }
                Ok(Value::Object(scores).to_string())
            }
            "agent.synthesize" => {
                let n = req.prompt.lines().filter(|l| l.starts_with('[')).count();
                Ok(format!("Answer to \"{}\" assembled from {n} agent result(s).", line_after(&req.prompt, "Query:")))
            }
            tag => {
                let mut queues = self.queues.lock().unwrap();
                let q = queues.get_mut(tag).ok_or_else(|| GatewayError::Provider(format!("no scripted reply for {tag}")))?;
                if q.len() > 1 {
                    Ok(q.pop_front().unwrap())
                } else {
                    q.front().cloned().ok_or_else(|| GatewayError::Provider(format!("empty queue for {tag}")))
                }
            }
        }
    }
}

fn embedder(world: &World) -> HashedEmbedder {
    let mut e = HashedEmbedder::new();
    for l in world.embeddings.lines().filter(|l| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(l).unwrap();
        let vector = v["vector"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap() as f32).collect();
        e.insert(v["token"].as_str().unwrap(), vector);
    }
    e
}

fn base_notebook() -> Notebook {
    Notebook::with_cells(
        "sales_review",
        vec![
            Cell::sql("c1", "SELECT * FROM sales", Some("sales_df")),
            Cell::python("c2", "monthly = sales_df.groupby('ftime').sum()\nmonthly.head()"),
            Cell::markdown("c3", "# Revenue review 2024\nQuarterly product revenue notes."),
        ],
    )
}

struct Spec {
    name: &'static str,
    description: &'static str,
    query: &'static str,
    scope: QueryScope,
    plan: Value,
    replies: Vec<(&'static str, Vec<String>)>,
    decision: Decision,
}

fn sub(id: &str, description: &str, capability: &str, agent: &str) -> Value {
    json!({"id": id, "description": description, "capability": capability, "agent": agent})
}

fn plan(subtasks: Vec<Value>, edges: &[(&str, &str)]) -> Value {
    json!({"subtasks": subtasks, "transitions": edges.iter().map(|(f, t)| json!({"from": f, "to": t})).collect::<Vec<_>>()})
}

const S: &str = "SQL Agent";
const V: &str = "VIS Agent";
const P: &str = "Python Agent";
const I: &str = "Insight Agent";

fn sql_sub() -> Value {
    sub("s1", "query the sales table", "NL2SQL", S)
}

fn vis_sub() -> Value {
    sub("s2", "chart the query result", "NL2VIS", V)
}

fn py_sub(id: &str) -> Value {
    sub(id, "write pandas code for the analysis", "NL2DSCode", P)
}

fn ins_sub(id: &str) -> Value {
    sub(id, "summarize the key findings", "Insight", I)
}

fn dsl_rev_by(dims: &[&str]) -> String {
    json!({
        "MeasureList": [{"column": "shouldincome_after", "aggregation": "sum"}],
        "DimensionList": dims.iter().map(|d| json!({"column": d, "type": if *d == "ftime" { "temporal" } else { "categorical" }})).collect::<Vec<_>>(),
        "ConditionList": []
    })
    .to_string()
}

fn chart(mark: &str, x: (&str, &str), y: (&str, &str), color: Option<&str>) -> String {
    let mut enc = json!({"x": {"field": x.0, "type": x.1}, "y": {"field": y.0, "type": y.1}});
    if let Some(c) = color {
        enc["color"] = json!({"field": c, "type": "nominal"});
    }
    json!({"mark": mark, "encoding": enc}).to_string()
}

fn python(code: &str) -> String {
    format!("```python\n{code}\n```")
}

/// A self-contained script printing summary statistics over rows computed
/// from the world table.
fn insight_code(world: &World, dsl: &str) -> String {
    let spec: DslSpec = serde_json::from_str(dsl).unwrap();
    let sql = dsl_to_sql(&spec, "sales", &OperatorRegistry::default()).unwrap();
    let t = SqlExecutor::new(world.tables.clone()).execute(&sql).unwrap();
    format!(
        "rows = {}\nvalues = [r[-1] for r in rows]\ntotal = sum(values)\ntop = max(rows, key=lambda r: r[-1])\nprint('groups', len(rows))\nprint('total', round(total, 2))\nprint('top', top[0], round(top[-1] / total * 100, 1))",
        serde_json::to_string(&t.rows).unwrap()
    )
}

fn specs(world: &World) -> Vec<Spec> {
    let nb_scope = |t| QueryScope::notebook(Some("sales_df"), t);
    let by_product = dsl_rev_by(&["prod_class4_name"]);
    let by_region = dsl_rev_by(&["region"]);
    let cost_by_product = json!({
        "MeasureList": [{"column": "cost", "aggregation": "sum"}],
        "DimensionList": [{"column": "prod_class4_name", "type": "categorical"}],
        "ConditionList": []
    })
    .to_string();
    let summary = |s: &str| vec![s.to_string()];
    let growth = python("growth = monthly['shouldincome_after'].pct_change()\ngrowth.tail()");
    vec![
        Spec {
            name: "nl2vis_bar_revenue_by_product",
            description: "SQL agent feeds the VIS agent; the chart is rendered over the executed result",
            query: "draw a bar chart of revenue by product",
            scope: nb_scope(TaskType::Nl2Vis),
            plan: plan(vec![sql_sub(), vis_sub()], &[(S, V)]),
            replies: vec![
                ("agent.sql.translate_dsl", vec![by_product.clone()]),
                ("agent.vis.chart_spec", vec![chart("bar", ("prod_class4_name", "nominal"), ("sum_shouldincome_after", "quantitative"), None)]),
            ],
            decision: Decision::Accept,
        },
        Spec {
            name: "nl2sql_total_tencentbi",
            description: "single SQL agent with an equality filter on a known value",
            query: "total income of TencentBI",
            scope: nb_scope(TaskType::Nl2Sql),
            plan: plan(vec![sql_sub()], &[]),
            replies: vec![(
                "agent.sql.translate_dsl",
                vec![json!({
                    "MeasureList": [{"column": "shouldincome_after", "aggregation": "sum"}],
                    "DimensionList": [],
                    "ConditionList": [{"column": "prod_class4_name", "operator": "=", "value": "TencentBI"}]
                })
                .to_string()],
            )],
            decision: Decision::Accept,
        },
        Spec {
            name: "nl2sql_revenue_by_region_rejected",
            description: "single SQL agent; the suggestion is rejected and the buffer restored",
            query: "revenue by region, highest first",
            scope: nb_scope(TaskType::Nl2Sql),
            plan: plan(vec![sql_sub()], &[]),
            replies: vec![(
                "agent.sql.translate_dsl",
                vec![json!({
                    "MeasureList": [{"column": "shouldincome_after", "aggregation": "sum"}],
                    "DimensionList": [{"column": "region", "type": "categorical"}],
                    "ConditionList": [],
                    "OrderList": [{"column": "shouldincome_after", "direction": "desc"}]
                })
                .to_string()],
            )],
            decision: Decision::Reject,
        },
        Spec {
            name: "nl2vis_line_daily_trend",
            description: "temporal dimension rendered as a line chart",
            query: "draw a line chart of the revenue trend over time",
            scope: nb_scope(TaskType::Nl2Vis),
            plan: plan(vec![sql_sub(), vis_sub()], &[(S, V)]),
            replies: vec![
                ("agent.sql.translate_dsl", vec![dsl_rev_by(&["ftime"])]),
                ("agent.vis.chart_spec", vec![chart("line", ("ftime", "temporal"), ("sum_shouldincome_after", "quantitative"), None)]),
            ],
            decision: Decision::Accept,
        },
        Spec {
            name: "python_growth",
            description: "single Python agent anchored on the monthly cell",
            query: "compute month over month growth of revenue",
            scope: QueryScope::cell("c2", TaskType::Nl2DsCode),
            plan: plan(vec![py_sub("s1")], &[]),
            replies: vec![("agent.python.code", vec![growth.clone()])],
            decision: Decision::Accept,
        },
        Spec {
            name: "insight_cost_by_product",
            description: "single Insight agent running its script in the sandbox",
            query: "what are the key insights about cost by product",
            scope: nb_scope(TaskType::Nl2Insight),
            plan: plan(vec![ins_sub("s1")], &[]),
            replies: vec![
                ("agent.insight.code", vec![python(&insight_code(world, &cost_by_product))]),
                ("agent.insight.summary", summary("GameHub carries the largest share of cost across the four products.")),
            ],
            decision: Decision::Accept,
        },
        Spec {
            name: "sql_then_python",
            description: "SQL result delivered to the Python agent",
            query: "revenue by product, then compute each product's share in pandas",
            scope: nb_scope(TaskType::Nl2DsCode),
            plan: plan(vec![sql_sub(), py_sub("s2")], &[(S, P)]),
            replies: vec![
                ("agent.sql.translate_dsl", vec![by_product.clone()]),
                ("agent.python.code", vec![python("share = sales_df.groupby('prod_class4_name')['shouldincome_after'].sum()\nshare = share / share.sum()")]),
            ],
            decision: Decision::Accept,
        },
        Spec {
            name: "sql_then_insight",
            description: "SQL result delivered to the Insight agent",
            query: "which region brings the most revenue and why does it matter",
            scope: nb_scope(TaskType::Nl2Insight),
            plan: plan(vec![sql_sub(), ins_sub("s2")], &[(S, I)]),
            replies: vec![
                ("agent.sql.translate_dsl", vec![by_region.clone()]),
                ("agent.insight.code", vec![python(&insight_code(world, &by_region))]),
                ("agent.insight.summary", summary("One region leads revenue; the spread between regions is moderate.")),
            ],
            decision: Decision::Accept,
        },
        Spec {
            name: "fan_in_three_agents",
            description: "SQL and Python agents both feed the Insight agent",
            query: "summarize revenue by product and its growth",
            scope: nb_scope(TaskType::Nl2Insight),
            plan: plan(vec![sql_sub(), py_sub("s2"), ins_sub("s3")], &[(S, I), (P, I)]),
            replies: vec![
                ("agent.sql.translate_dsl", vec![by_product.clone()]),
                ("agent.python.code", vec![growth.clone()]),
                ("agent.insight.code", vec![python(&insight_code(world, &by_product))]),
                ("agent.insight.summary", summary("Revenue concentrates in two products and grows steadily month over month.")),
            ],
            decision: Decision::Accept,
        },
        Spec {
            name: "four_agents",
            description: "all four agents; SQL fans out to VIS and Insight, Python feeds Insight",
            query: "chart revenue by product and explain the main findings",
            scope: nb_scope(TaskType::Nl2Insight),
            plan: plan(vec![sql_sub(), vis_sub(), py_sub("s3"), ins_sub("s4")], &[(S, V), (S, I), (P, I)]),
            replies: vec![
                ("agent.sql.translate_dsl", vec![by_product.clone()]),
                ("agent.vis.chart_spec", vec![chart("bar", ("prod_class4_name", "nominal"), ("sum_shouldincome_after", "quantitative"), None)]),
                ("agent.python.code", vec![growth.clone()]),
                ("agent.insight.code", vec![python(&insight_code(world, &by_product))]),
                ("agent.insight.summary", summary("Two products account for most revenue; the chart shows the gap.")),
            ],
            decision: Decision::Accept,
        },
        Spec {
            name: "sql_retry_unknown_column",
            description: "first DSL names a column outside the knowledge; the retry succeeds",
            query: "total income per product",
            scope: nb_scope(TaskType::Nl2Sql),
            plan: plan(vec![sql_sub()], &[]),
            replies: vec![(
                "agent.sql.translate_dsl",
                vec![
                    json!({
                        "MeasureList": [{"column": "revenue_total", "aggregation": "sum"}],
                        "DimensionList": [{"column": "prod_class4_name", "type": "categorical"}],
                        "ConditionList": []
                    })
                    .to_string(),
                    by_product.clone(),
                ],
            )],
            decision: Decision::Accept,
        },
        Spec {
            name: "sql_fails_twice_then_succeeds",
            description: "two invalid replies then a valid one: three episodes",
            query: "income of TencentBI by region",
            scope: nb_scope(TaskType::Nl2Sql),
            plan: plan(vec![sql_sub()], &[]),
            replies: vec![(
                "agent.sql.translate_dsl",
                vec![
                    "I would sum the income column.".to_string(),
                    json!({
                        "MeasureList": [{"column": "shouldincome_after", "aggregation": "sum"}],
                        "DimensionList": [{"column": "region", "type": "categorical"}],
                        "ConditionList": [{"column": "prod_class4_name", "operator": "roughly", "value": "TencentBI"}]
                    })
                    .to_string(),
                    json!({
                        "MeasureList": [{"column": "shouldincome_after", "aggregation": "sum"}],
                        "DimensionList": [{"column": "region", "type": "categorical"}],
                        "ConditionList": [{"column": "prod_class4_name", "operator": "=", "value": "TencentBI"}]
                    })
                    .to_string(),
                ],
            )],
            decision: Decision::Accept,
        },
        Spec {
            name: "vis_retry_bad_field",
            description: "chart names a field missing from the result; the renderer fails and the retry succeeds",
            query: "draw a bar chart of income by product",
            scope: nb_scope(TaskType::Nl2Vis),
            plan: plan(vec![sql_sub(), vis_sub()], &[(S, V)]),
            replies: vec![
                ("agent.sql.translate_dsl", vec![by_product.clone()]),
                (
                    "agent.vis.chart_spec",
                    vec![
                        chart("bar", ("product", "nominal"), ("income", "quantitative"), None),
                        chart("bar", ("prod_class4_name", "nominal"), ("sum_shouldincome_after", "quantitative"), None),
                    ],
                ),
            ],
            decision: Decision::Accept,
        },
        Spec {
            name: "insight_sandbox_error_retry",
            description: "first script raises in the sandbox; the retry runs cleanly",
            query: "what are the key insights about revenue by region",
            scope: nb_scope(TaskType::Nl2Insight),
            plan: plan(vec![ins_sub("s1")], &[]),
            replies: vec![
                ("agent.insight.code", vec![python("print(total_revenue)"), python(&insight_code(world, &by_region))]),
                ("agent.insight.summary", summary("Revenue is spread across regions with one clear leader.")),
            ],
            decision: Decision::Accept,
        },
        Spec {
            name: "vis_color_two_dimensions",
            description: "two dimensions map to x and color",
            query: "draw a bar chart of revenue by product and region",
            scope: nb_scope(TaskType::Nl2Vis),
            plan: plan(vec![sql_sub(), vis_sub()], &[(S, V)]),
            replies: vec![
                ("agent.sql.translate_dsl", vec![dsl_rev_by(&["prod_class4_name", "region"])]),
                (
                    "agent.vis.chart_spec",
                    vec![chart("bar", ("prod_class4_name", "nominal"), ("sum_shouldincome_after", "quantitative"), Some("region"))],
                ),
            ],
            decision: Decision::Accept,
        },
        Spec {
            name: "independent_sql_and_python_rejected",
            description: "two agents without transitions; neither receives the other's unit",
            query: "revenue by region and a pandas summary of the monthly table",
            scope: nb_scope(TaskType::Other),
            plan: plan(vec![sql_sub(), py_sub("s2")], &[]),
            replies: vec![
                ("agent.sql.translate_dsl", vec![by_region.clone()]),
                ("agent.python.code", vec![python("summary = monthly.describe()")]),
            ],
            decision: Decision::Reject,
        },
        Spec {
            name: "python_syntax_retry",
            description: "first code reply does not parse; the retry does",
            query: "compute the rolling three day average of revenue",
            scope: QueryScope::cell("c2", TaskType::Nl2DsCode),
            plan: plan(vec![py_sub("s1")], &[]),
            replies: vec![(
                "agent.python.code",
                vec![python("rolling = monthly['shouldincome_after'].rolling(3).mean(\n"), python("rolling = monthly['shouldincome_after'].rolling(3).mean()")],
            )],
            decision: Decision::Accept,
        },
        Spec {
            name: "sql_count_distinct_top3",
            description: "count distinct with ordering and a limit",
            query: "number of distinct region values per product, top 3",
            scope: nb_scope(TaskType::Nl2Sql),
            plan: plan(vec![sql_sub()], &[]),
            replies: vec![(
                "agent.sql.translate_dsl",
                vec![json!({
                    "MeasureList": [{"column": "region", "aggregation": "count_distinct"}],
                    "DimensionList": [{"column": "prod_class4_name", "type": "categorical"}],
                    "ConditionList": [],
                    "OrderList": [{"column": "region", "direction": "desc"}],
                    "LimitN": 3
                })
                .to_string()],
            )],
            decision: Decision::Accept,
        },
        Spec {
            name: "chain_sql_python_insight",
            description: "three agents in a chain",
            query: "revenue by product, its share, and what stands out",
            scope: nb_scope(TaskType::Nl2Insight),
            plan: plan(vec![sql_sub(), py_sub("s2"), ins_sub("s3")], &[(S, P), (P, I)]),
            replies: vec![
                ("agent.sql.translate_dsl", vec![by_product.clone()]),
                ("agent.python.code", vec![python("share = sales_df.groupby('prod_class4_name')['shouldincome_after'].sum()\nshare = share / share.sum()")]),
                ("agent.insight.code", vec![python(&insight_code(world, &by_product))]),
                ("agent.insight.summary", summary("The leading product holds close to a third of revenue.")),
            ],
            decision: Decision::Accept,
        },
        Spec {
            name: "vis_point_two_measures",
            description: "two measures per product as a scatter chart",
            query: "draw a scatter chart of revenue against cost per product",
            scope: nb_scope(TaskType::Nl2Vis),
            plan: plan(vec![sql_sub(), vis_sub()], &[(S, V)]),
            replies: vec![
                (
                    "agent.sql.translate_dsl",
                    vec![json!({
                        "MeasureList": [{"column": "shouldincome_after", "aggregation": "sum"}, {"column": "cost", "aggregation": "sum"}],
                        "DimensionList": [{"column": "prod_class4_name", "type": "categorical"}],
                        "ConditionList": []
                    })
                    .to_string()],
                ),
                ("agent.vis.chart_spec", vec![chart("point", ("sum_shouldincome_after", "quantitative"), ("sum_cost", "quantitative"), Some("prod_class4_name"))]),
            ],
            decision: Decision::Accept,
        },
    ]
}

fn write(path: &Path, text: impl AsRef<[u8]>) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, text).unwrap();
}

fn author_scenarios(root: &Path, world: &World) {
    let dir = root.join("scenarios");
    let _ = std::fs::remove_dir_all(&dir);
    for (i, spec) in specs(world).into_iter().enumerate() {
        let mut queues: HashMap<String, VecDeque<String>> =
            spec.replies.iter().map(|(t, r)| (t.to_string(), r.iter().cloned().collect())).collect();
        queues.insert("agent.plan".into(), [spec.plan.to_string()].into());
        let model = Arc::new(Model { queues: Mutex::new(queues) });
        let provider = FnProvider::new(move |req| model.answer(req)).with_embedder(embedder(world));
        let recorder = Arc::new(Recorder::new(Arc::new(provider)));
        let scenario = Scenario {
            name: spec.name.into(),
            description: spec.description.into(),
            world: "../../world".into(),
            notebook: base_notebook(),
            steps: vec![
                ScenarioStep::Ask { query: spec.query.into(), scope: spec.scope },
                ScenarioStep::Resolve { decision: spec.decision },
            ],
        };
        let run = match run_with(&scenario, world, recorder.clone()) {
            Ok(run) => run,
            Err(e) => {
                if let ReplayError::Step { source: SessionError::Dispatch(KernelError::BudgetExhausted { trace, .. }), .. } = &e {
                    eprint!("{}", trace.to_jsonl());
                }
                panic!("{}: {e}", spec.name)
            }
        };
        let sdir = dir.join(format!("{:02}_{}", i + 1, spec.name));
        write(&sdir.join("scenario.json"), serde_json::to_string_pretty(&scenario).unwrap() + "\n");
        write(&sdir.join("completions.jsonl"), recorder.to_jsonl());
        let s = &run.suggestions[0];
        println!("{:02} {:<40} agents={} events={}", i + 1, spec.name, s.plan.nodes.len(), s.trace.events.len());
    }
}

/// 25 valid DSL replies over the sales table and 25 malformed ones, each
/// with the field paths the validator must report.
fn author_dsl(root: &Path) {
    let dims = ["prod_class4_name", "region", "ftime"];
    let measures = [("shouldincome_after", "sum"), ("cost", "avg"), ("shouldincome_after", "max"), ("region", "count_distinct"), ("*", "count")];
    let conds = [
        json!([]),
        json!([{"column": "prod_class4_name", "operator": "=", "value": "TencentBI"}]),
        json!([{"column": "shouldincome_after", "operator": ">", "value": 200}]),
        json!([{"column": "region", "operator": "in", "value": ["north", "east"]}]),
        json!([{"column": "ftime", "operator": "between", "value": ["2024-01-01", "2024-06-30"]}, {"column": "cost", "operator": "<=", "value": 300}]),
    ];
    let mut valid = String::new();
    for i in 0..25 {
        let (mcol, agg) = measures[i % 5];
        let mut spec = json!({
            "MeasureList": [{"column": mcol, "aggregation": agg}],
            "DimensionList": if i % 7 == 6 { json!([]) } else { json!([{"column": dims[i % 3], "type": if dims[i % 3] == "ftime" { "temporal" } else { "categorical" }}]) },
            "ConditionList": conds[(i / 5) % 5],
        });
        if i % 5 == 2 && i % 7 != 6 {
            spec["DimensionList"].as_array_mut().unwrap().push(json!({"column": dims[(i + 1) % 3], "type": "categorical"}));
        }
        let dim_cols: Vec<&str> = spec["DimensionList"].as_array().unwrap().iter().filter_map(|d| d["column"].as_str()).collect();
        if i % 4 == 1 && mcol != "*" && !dim_cols.contains(&mcol) {
            spec["OrderList"] = json!([{"column": mcol, "direction": "desc"}]);
        } else if i % 4 == 3 && !dim_cols.is_empty() {
            spec["OrderList"] = json!([{"column": dim_cols[0]}]);
        }
        if i % 3 == 2 {
            spec["LimitN"] = json!(1 + i % 10);
        }
        valid.push_str(&(json!({"name": format!("valid_{:02}", i + 1), "table": "sales", "reply": spec.to_string()}).to_string() + "\n"));
    }
    write(&root.join("dsl/valid.jsonl"), valid);

    let ok_m = json!([{"column": "cost", "aggregation": "sum"}]);
    let ok_d = json!([{"column": "region", "type": "categorical"}]);
    let base = |m: Value, d: Value, c: Value| json!({"MeasureList": m, "DimensionList": d, "ConditionList": c});
    let with = |extra: (&str, Value)| {
        let mut v = base(ok_m.clone(), ok_d.clone(), json!([]));
        v[extra.0] = extra.1;
        v.to_string()
    };
    let cases: Vec<(&str, String, Vec<&str>)> = vec![
        ("not_json", "SELECT cost FROM sales".into(), vec!["$"]),
        ("array_root", "[1, 2]".into(), vec!["$"]),
        ("missing_measures", json!({"DimensionList": ok_d, "ConditionList": []}).to_string(), vec!["$.MeasureList"]),
        ("missing_dimensions", json!({"MeasureList": ok_m, "ConditionList": []}).to_string(), vec!["$.DimensionList"]),
        ("missing_conditions", json!({"MeasureList": ok_m, "DimensionList": ok_d}).to_string(), vec!["$.ConditionList"]),
        ("measures_not_array", base(json!("cost"), ok_d.clone(), json!([])).to_string(), vec!["$.MeasureList"]),
        ("measure_no_column", base(json!([{"aggregation": "sum"}]), ok_d.clone(), json!([])).to_string(), vec!["$.MeasureList[0].column"]),
        ("measure_bad_aggregation", base(json!([{"column": "cost", "aggregation": "median"}]), ok_d.clone(), json!([])).to_string(), vec!["$.MeasureList[0].aggregation"]),
        ("measure_empty_column", base(json!([{"column": "", "aggregation": "sum"}]), ok_d.clone(), json!([])).to_string(), vec!["$.MeasureList[0].column"]),
        ("measure_extra_field", base(json!([{"column": "cost", "aggregation": "sum", "alias": "c"}]), ok_d.clone(), json!([])).to_string(), vec!["$.MeasureList[0].alias"]),
        ("dimension_bad_type", base(ok_m.clone(), json!([{"column": "region", "type": "numeric"}]), json!([])).to_string(), vec!["$.DimensionList[0].type"]),
        ("dimension_not_object", base(ok_m.clone(), json!(["region"]), json!([])).to_string(), vec!["$.DimensionList[0]"]),
        ("condition_unknown_operator", base(ok_m.clone(), ok_d.clone(), json!([{"column": "cost", "operator": "approx", "value": 1}])).to_string(), vec!["$.ConditionList[0].operator"]),
        ("condition_missing_value", base(ok_m.clone(), ok_d.clone(), json!([{"column": "cost", "operator": ">"}])).to_string(), vec!["$.ConditionList[0].value"]),
        ("condition_in_scalar", base(ok_m.clone(), ok_d.clone(), json!([{"column": "region", "operator": "in", "value": "north"}])).to_string(), vec!["$.ConditionList[0].value"]),
        ("condition_between_one", base(ok_m.clone(), ok_d.clone(), json!([{"column": "ftime", "operator": "between", "value": ["2024-01-01"]}])).to_string(), vec!["$.ConditionList[0].value"]),
        ("condition_compare_array", base(ok_m.clone(), ok_d.clone(), json!([{"column": "cost", "operator": ">", "value": [1, 2]}])).to_string(), vec!["$.ConditionList[0].value"]),
        ("order_bad_direction", with(("OrderList", json!([{"column": "cost", "direction": "up"}]))), vec!["$.OrderList[0].direction"]),
        ("order_no_column", with(("OrderList", json!([{"direction": "asc"}]))), vec!["$.OrderList[0].column"]),
        ("limit_zero", with(("LimitN", json!(0))), vec!["$.LimitN"]),
        ("limit_string", with(("LimitN", json!("10"))), vec!["$.LimitN"]),
        ("unknown_top_level", with(("GroupBy", json!(["region"]))), vec!["$.GroupBy"]),
        ("two_errors", base(json!([{"column": "cost", "aggregation": "total"}]), json!([{"column": "region", "type": "spatial"}]), json!([])).to_string(), vec!["$.MeasureList[0].aggregation", "$.DimensionList[0].type"]),
        ("conditions_object", base(ok_m.clone(), ok_d.clone(), json!({"column": "cost"})).to_string(), vec!["$.ConditionList"]),
        ("limit_negative", with(("LimitN", json!(-5))), vec!["$.LimitN"]),
    ];
    assert_eq!(cases.len(), 25);
    let mut malformed = String::new();
    for (name, reply, paths) in cases {
        malformed.push_str(&(json!({"name": name, "reply": reply, "expect_paths": paths}).to_string() + "\n"));
    }
    write(&root.join("dsl/malformed.jsonl"), malformed);
}

/// 30 notebooks with several independent data pipelines each, plus one
/// seeded scoped query per notebook.
fn author_context(root: &Path) {
    let dir = root.join("context");
    let _ = std::fs::remove_dir_all(&dir);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let tasks = [TaskType::Nl2Sql, TaskType::Nl2DsCode, TaskType::Nl2Vis, TaskType::Nl2Insight];
    let prose = ["Notes on the data source and its refresh schedule.", "Open questions for the weekly review meeting.", "Known data quality caveats for this table, including late arriving rows and currency conversions."];
    for n in 0..30 {
        let pipelines = rng.gen_range(3..=5);
        let mut cells = vec![Cell::markdown("intro", format!("# Analysis notebook {n}\n{}", prose[n % 3]))];
        for p in 0..pipelines {
            let df = format!("df_{p}");
            cells.push(Cell::sql(format!("p{p}_load"), format!("SELECT * FROM source_{p} WHERE day >= '2024-01-01'"), Some(&df)));
            let steps = rng.gen_range(1..=4);
            let mut prev = df.clone();
            for s in 0..steps {
                let var = format!("t{p}_{s}");
                let op = ["dropna()", "groupby('key').sum()", "sort_values('value')", "head(100)"][rng.gen_range(0..4)];
                cells.push(Cell::python(format!("p{p}_step{s}"), format!("{var} = {prev}.{op}\nprint({var}.shape)")));
                prev = var;
            }
            if rng.gen_bool(0.6) {
                cells.push(Cell::chart(format!("p{p}_chart"), r#"{"mark": "bar", "encoding": {"x": {"field": "key", "type": "nominal"}, "y": {"field": "value", "type": "quantitative"}}}"#, &prev));
            }
            cells.push(Cell::markdown(format!("p{p}_notes"), format!("## Pipeline {p}\n{}", prose[(n + p) % 3])));
        }
        let target = rng.gen_range(0..pipelines);
        let task = tasks[rng.gen_range(0..tasks.len())];
        let item = json!({
            "notebook": serde_json::from_slice::<Value>(&serialize_notebook(&Notebook::with_cells(format!("corpus_{n:02}"), cells))).unwrap(),
            "query": format!("summarize the values in df_{target} by key"),
            "scope": QueryScope::notebook(Some(&format!("df_{target}")), task),
        });
        write(&dir.join(format!("nb_{n:02}.json")), serde_json::to_string_pretty(&item).unwrap() + "\n");
    }
}

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let world = World::load(&root.join("world")).expect("world fixtures");
    write(&root.join("notebooks/sales_review.json"), serialize_notebook(&base_notebook()));
    author_dsl(&root);
    author_context(&root);
    author_scenarios(&root, &world);
}
