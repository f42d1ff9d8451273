//! Tools agents call from workflow steps: an in-memory SQL executor, a chart
//! renderer that binds result rows into a chart spec, and (natively) a
//! Python sandbox.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Number, Value};
use sqlparser::ast::{
    BinaryOperator, DuplicateTreatment, Expr, FunctionArg, FunctionArgExpr, FunctionArguments, GroupByExpr,
    LimitClause, ObjectNamePart, OrderByKind, OrderBySort, SelectItem, SetExpr, Statement, TableFactor,
    UnaryOperator, Value as SqlValue,
};
use sqlparser::dialect::GenericDialect;
use sqlparser::parser::Parser;

use super::unit::Content;
use crate::graph::validate_chart_spec;
use crate::table::Table;

pub const DEFAULT_TOOL_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    CodeSandbox,
    SqlExecutor,
    ChartRenderer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInput {
    pub data_source: String,
    pub inputs: Vec<Content>,
}

impl ToolInput {
    fn last(&self, kind: &str) -> Option<&Content> {
        self.inputs.iter().rev().find(|c| c.kind() == kind)
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ToolError {
    #[error("{0}")]
    Failed(String),
    #[error("timed out after {} ms", .0.as_millis())]
    Timeout(Duration),
}

pub trait Tool: Send + Sync {
    fn name(&self) -> &str;
    fn kind(&self) -> ToolKind;
    fn timeout(&self) -> Duration {
        DEFAULT_TOOL_TIMEOUT
    }
    fn call(&self, input: &ToolInput) -> Result<Content, ToolError>;
}

#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Arc<dyn Tool>>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, tool: Arc<dyn Tool>) {
        self.tools.insert(tool.name().to_string(), tool);
    }

    pub fn with(mut self, tool: impl Tool + 'static) -> Self {
        self.register(Arc::new(tool));
        self
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Tool>> {
        self.tools.get(name)
    }

    pub fn names(&self) -> std::collections::BTreeSet<String> {
        self.tools.keys().cloned().collect()
    }

    /// SQL executor and chart renderer over `tables`, plus the Python
    /// sandbox on native targets.
    pub fn standard(tables: BTreeMap<String, Table>) -> Self {
        let r = ToolRegistry::new().with(SqlExecutor::new(tables)).with(ChartRenderer);
        #[cfg(not(target_arch = "wasm32"))]
        let r = r.with(CodeSandbox::default());
        r
    }

    /// Runs the tool under its wall-clock timeout. A timed-out call keeps
    /// running on its worker thread until it returns; its result is dropped.
    pub fn call(&self, name: &str, input: &ToolInput) -> Result<Content, ToolError> {
        let tool = self.tools.get(name).ok_or_else(|| ToolError::Failed(format!("unknown tool `{name}`")))?.clone();
        call_with_timeout(tool, input.clone())
    }
}

#[cfg(not(target_arch = "wasm32"))]
fn call_with_timeout(tool: Arc<dyn Tool>, input: ToolInput) -> Result<Content, ToolError> {
    let limit = tool.timeout();
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let _ = tx.send(tool.call(&input));
    });
    match rx.recv_timeout(limit) {
        Ok(result) => result,
        Err(std::sync::mpsc::RecvTimeoutError::Timeout) => Err(ToolError::Timeout(limit)),
        Err(std::sync::mpsc::RecvTimeoutError::Disconnected) => Err(ToolError::Failed("tool panicked".into())),
    }
}

#[cfg(target_arch = "wasm32")]
fn call_with_timeout(tool: Arc<dyn Tool>, input: ToolInput) -> Result<Content, ToolError> {
    tool.call(&input)
}

/// Executes single-table aggregate SELECT statements over in-memory tables.
#[derive(Debug, Clone)]
pub struct SqlExecutor {
    tables: BTreeMap<String, Table>,
    pub max_rows: usize,
}

impl SqlExecutor {
    pub fn new(tables: BTreeMap<String, Table>) -> Self {
        SqlExecutor { tables, max_rows: 500 }
    }

    pub fn execute(&self, sql: &str) -> Result<Table, ToolError> {
        let fail = |m: String| ToolError::Failed(m);
        let stmts = Parser::parse_sql(&GenericDialect {}, sql).map_err(|e| fail(format!("SQL parse error: {e}")))?;
        let [Statement::Query(query)] = stmts.as_slice() else {
            return Err(fail("expected exactly one SELECT statement".into()));
        };
        let SetExpr::Select(select) = query.body.as_ref() else {
            return Err(fail("only plain SELECT is supported".into()));
        };
        let [from] = select.from.as_slice() else {
            return Err(fail("expected exactly one table in FROM".into()));
        };
        if !from.joins.is_empty() {
            return Err(fail("joins are not supported".into()));
        }
        let TableFactor::Table { name, .. } = &from.relation else {
            return Err(fail("FROM must name a table".into()));
        };
        let parts: Vec<String> = name
            .0
            .iter()
            .filter_map(|p| match p {
                ObjectNamePart::Identifier(i) => Some(i.value.clone()),
                _ => None,
            })
            .collect();
        let full = parts.join(".");
        let table = self
            .tables
            .get(&full)
            .or_else(|| parts.last().and_then(|t| self.tables.get(t)))
            .ok_or_else(|| fail(format!("unknown table `{full}`")))?;

        let mut outputs = Vec::new();
        for item in &select.projection {
            match item {
                SelectItem::UnnamedExpr(e) => outputs.push(Projection::new(e, None, table)?),
                SelectItem::ExprWithAlias { expr, alias } => outputs.push(Projection::new(expr, Some(&alias.value), table)?),
                SelectItem::Wildcard(_) => {
                    for (i, c) in table.columns.iter().enumerate() {
                        outputs.push(Projection { name: c.clone(), kind: ProjKind::Column(i) });
                    }
                }
                other => return Err(fail(format!("unsupported select item `{other}`"))),
            }
        }

        let mut rows: Vec<&Vec<Value>> = Vec::new();
        for row in &table.rows {
            let keep = match &select.selection {
                Some(w) => truthy(&eval(w, row, table)?),
                None => true,
            };
            if keep {
                rows.push(row);
            }
        }

        let group_cols = match &select.group_by {
            GroupByExpr::Expressions(exprs, _) => {
                exprs.iter().map(|e| column_of(e, table)).collect::<Result<Vec<_>, _>>()?
            }
            GroupByExpr::All(_) => return Err(fail("GROUP BY ALL is not supported".into())),
        };
        let aggregating = outputs.iter().any(|p| matches!(p.kind, ProjKind::Agg { .. }));
        let mut out_rows: Vec<Vec<Value>> = if aggregating || !group_cols.is_empty() {
            for p in &outputs {
                if let ProjKind::Column(i) = p.kind {
                    if !group_cols.contains(&i) {
                        return Err(fail(format!("column `{}` must appear in GROUP BY", p.name)));
                    }
                }
            }
            let mut order: Vec<Vec<&Vec<Value>>> = Vec::new();
            let mut index: HashMap<String, usize> = HashMap::new();
            for row in rows {
                let key = serde_json::to_string(&group_cols.iter().map(|&i| &row[i]).collect::<Vec<_>>()).unwrap_or_default();
                let slot = *index.entry(key).or_insert_with(|| {
                    order.push(Vec::new());
                    order.len() - 1
                });
                order[slot].push(row);
            }
            if order.is_empty() && group_cols.is_empty() {
                order.push(Vec::new());
            }
            order.iter().map(|g| outputs.iter().map(|p| p.eval_group(g)).collect()).collect()
        } else {
            rows.iter().map(|r| outputs.iter().map(|p| p.eval_row(r)).collect()).collect()
        };

        if let Some(ob) = &query.order_by {
            let OrderByKind::Expressions(items) = &ob.kind else {
                return Err(fail("ORDER BY ALL is not supported".into()));
            };
            let mut keys = Vec::new();
            for it in items {
                let name = ident_name(&it.expr).ok_or_else(|| fail(format!("unsupported ORDER BY `{}`", it.expr)))?;
                let idx = outputs
                    .iter()
                    .position(|p| p.name == name)
                    .ok_or_else(|| fail(format!("ORDER BY `{name}` is not a selected column")))?;
                let desc = matches!(it.options.sort, Some(OrderBySort::Desc));
                keys.push((idx, desc));
            }
            out_rows.sort_by(|a, b| {
                keys.iter()
                    .map(|&(i, desc)| {
                        let o = compare(&a[i], &b[i]).unwrap_or(Ordering::Equal);
                        if desc {
                            o.reverse()
                        } else {
                            o
                        }
                    })
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            });
        }
        match &query.limit_clause {
            None => {}
            Some(LimitClause::LimitOffset { limit: None, offset: None, .. }) => {}
            Some(LimitClause::LimitOffset { limit: Some(e), offset: None, .. }) => {
                let n = literal(e).and_then(|v| v.as_u64()).ok_or_else(|| fail(format!("unsupported LIMIT `{e}`")))?;
                out_rows.truncate(n as usize);
            }
            Some(other) => return Err(fail(format!("unsupported limit clause `{other}`"))),
        }
        Ok(Table::new(outputs.into_iter().map(|p| p.name).collect(), out_rows))
    }
}

impl Tool for SqlExecutor {
    fn name(&self) -> &str {
        "sql_executor"
    }

    fn kind(&self) -> ToolKind {
        ToolKind::SqlExecutor
    }

    fn call(&self, input: &ToolInput) -> Result<Content, ToolError> {
        let Some(Content::Sql(sql)) = input.last("sql") else {
            return Err(ToolError::Failed("no SQL input".into()));
        };
        Ok(Content::TablePreview(self.execute(sql)?.preview(self.max_rows)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AggFn {
    Sum,
    Avg,
    Count,
    CountStar,
    CountDistinct,
    Min,
    Max,
}

#[derive(Debug)]
enum ProjKind {
    Column(usize),
    Agg { f: AggFn, col: Option<usize> },
}

#[derive(Debug)]
struct Projection {
    name: String,
    kind: ProjKind,
}

impl Projection {
    fn new(e: &Expr, alias: Option<&str>, table: &Table) -> Result<Self, ToolError> {
        let kind = match e {
            Expr::Function(f) => {
                let fname = f.name.to_string().to_ascii_uppercase();
                let FunctionArguments::List(list) = &f.args else {
                    return Err(ToolError::Failed(format!("unsupported call `{e}`")));
                };
                let distinct = matches!(list.duplicate_treatment, Some(DuplicateTreatment::Distinct));
                let [FunctionArg::Unnamed(arg)] = list.args.as_slice() else {
                    return Err(ToolError::Failed(format!("`{fname}` takes one argument")));
                };
                let col = match arg {
                    FunctionArgExpr::Wildcard => None,
                    FunctionArgExpr::Expr(x) => Some(column_of(x, table)?),
                    _ => return Err(ToolError::Failed(format!("unsupported argument in `{e}`"))),
                };
                let f = match (fname.as_str(), distinct, col.is_some()) {
                    ("COUNT", false, false) => AggFn::CountStar,
                    ("COUNT", true, true) => AggFn::CountDistinct,
                    ("COUNT", false, true) => AggFn::Count,
                    ("SUM", false, true) => AggFn::Sum,
                    ("AVG", false, true) => AggFn::Avg,
                    ("MIN", false, true) => AggFn::Min,
                    ("MAX", false, true) => AggFn::Max,
                    _ => return Err(ToolError::Failed(format!("unsupported aggregate `{e}`"))),
                };
                ProjKind::Agg { f, col }
            }
            other => ProjKind::Column(column_of(other, table)?),
        };
        let name = alias.map(str::to_string).or_else(|| ident_name(e)).unwrap_or_else(|| e.to_string());
        Ok(Projection { name, kind })
    }

    fn eval_row(&self, row: &[Value]) -> Value {
        match self.kind {
            ProjKind::Column(i) => row[i].clone(),
            ProjKind::Agg { .. } => Value::Null,
        }
    }

    fn eval_group(&self, rows: &[&Vec<Value>]) -> Value {
        let (f, col) = match self.kind {
            ProjKind::Column(i) => return rows.first().map(|r| r[i].clone()).unwrap_or(Value::Null),
            ProjKind::Agg { f, col } => (f, col),
        };
        let vals: Vec<&Value> = match col {
            Some(i) => rows.iter().map(|r| &r[i]).filter(|v| !v.is_null()).collect(),
            None => Vec::new(),
        };
        match f {
            AggFn::CountStar => json!(rows.len()),
            AggFn::Count => json!(vals.len()),
            AggFn::CountDistinct => {
                let distinct: std::collections::BTreeSet<String> = vals.iter().map(|v| v.to_string()).collect();
                json!(distinct.len())
            }
            AggFn::Sum | AggFn::Avg => {
                let nums: Vec<f64> = vals.iter().filter_map(|v| as_f64(v)).collect();
                if nums.is_empty() {
                    return Value::Null;
                }
                let sum: f64 = nums.iter().sum();
                if f == AggFn::Avg {
                    return number(sum / nums.len() as f64);
                }
                if vals.iter().all(|v| v.is_i64()) {
                    json!(vals.iter().filter_map(|v| v.as_i64()).sum::<i64>())
                } else {
                    number(sum)
                }
            }
            AggFn::Min | AggFn::Max => {
                let pick = vals.into_iter().reduce(|a, b| match (compare(a, b), f) {
                    (Some(Ordering::Greater), AggFn::Min) | (Some(Ordering::Less), AggFn::Max) => b,
                    _ => a,
                });
                pick.cloned().unwrap_or(Value::Null)
            }
        }
    }
}

fn number(x: f64) -> Value {
    Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn ident_name(e: &Expr) -> Option<String> {
    match e {
        Expr::Identifier(i) => Some(i.value.clone()),
        Expr::CompoundIdentifier(parts) => parts.last().map(|i| i.value.clone()),
        _ => None,
    }
}

fn column_of(e: &Expr, table: &Table) -> Result<usize, ToolError> {
    let name = ident_name(e).ok_or_else(|| ToolError::Failed(format!("expected a column, found `{e}`")))?;
    table.column_index(&name).ok_or_else(|| ToolError::Failed(format!("unknown column `{name}`")))
}

fn literal(e: &Expr) -> Option<Value> {
    let Expr::Value(v) = e else { return None };
    Some(match &v.value {
        SqlValue::Number(n, _) => n.parse::<i64>().map(Value::from).ok().or_else(|| n.parse::<f64>().ok().map(number))?,
        SqlValue::SingleQuotedString(s) | SqlValue::DoubleQuotedString(s) => Value::String(s.clone()),
        SqlValue::Boolean(b) => Value::Bool(*b),
        SqlValue::Null => Value::Null,
        _ => return None,
    })
}

/// Numbers compare numerically (numeric strings included); other values
/// compare as strings. Null is incomparable.
fn compare(a: &Value, b: &Value) -> Option<Ordering> {
    if a.is_null() || b.is_null() {
        return None;
    }
    if a.is_number() || b.is_number() {
        if let (Some(x), Some(y)) = (as_f64(a), as_f64(b)) {
            return x.partial_cmp(&y);
        }
    }
    match (a, b) {
        (Value::String(x), Value::String(y)) => Some(x.cmp(y)),
        (Value::Bool(x), Value::Bool(y)) => Some(x.cmp(y)),
        _ => Some(a.to_string().cmp(&b.to_string())),
    }
}

fn truthy(v: &Value) -> bool {
    matches!(v, Value::Bool(true))
}

fn like_regex(pattern: &str) -> Result<Regex, ToolError> {
    let mut re = String::from("^");
    for ch in pattern.chars() {
        match ch {
            '%' => re.push_str(".*"),
            '_' => re.push('.'),
            c => re.push_str(&regex::escape(&c.to_string())),
        }
    }
    re.push('$');
    Regex::new(&re).map_err(|e| ToolError::Failed(e.to_string()))
}

fn eval(e: &Expr, row: &[Value], table: &Table) -> Result<Value, ToolError> {
    let unsupported = || ToolError::Failed(format!("unsupported expression `{e}`"));
    Ok(match e {
        Expr::Identifier(_) | Expr::CompoundIdentifier(_) => row[column_of(e, table)?].clone(),
        Expr::Value(_) => literal(e).ok_or_else(unsupported)?,
        Expr::Nested(inner) => eval(inner, row, table)?,
        Expr::UnaryOp { op: UnaryOperator::Not, expr } => Value::Bool(!truthy(&eval(expr, row, table)?)),
        Expr::IsNull(x) => Value::Bool(eval(x, row, table)?.is_null()),
        Expr::IsNotNull(x) => Value::Bool(!eval(x, row, table)?.is_null()),
        Expr::BinaryOp { left, op, right } => {
            let l = eval(left, row, table)?;
            let r = eval(right, row, table)?;
            let ord = compare(&l, &r);
            Value::Bool(match op {
                BinaryOperator::And => truthy(&l) && truthy(&r),
                BinaryOperator::Or => truthy(&l) || truthy(&r),
                BinaryOperator::Eq => ord == Some(Ordering::Equal),
                BinaryOperator::NotEq => matches!(ord, Some(Ordering::Less | Ordering::Greater)),
                BinaryOperator::Lt => ord == Some(Ordering::Less),
                BinaryOperator::LtEq => matches!(ord, Some(Ordering::Less | Ordering::Equal)),
                BinaryOperator::Gt => ord == Some(Ordering::Greater),
                BinaryOperator::GtEq => matches!(ord, Some(Ordering::Greater | Ordering::Equal)),
                _ => return Err(unsupported()),
            })
        }
        Expr::Between { expr, negated, low, high } => {
            let v = eval(expr, row, table)?;
            let lo = eval(low, row, table)?;
            let hi = eval(high, row, table)?;
            let inside = matches!(compare(&v, &lo), Some(Ordering::Greater | Ordering::Equal))
                && matches!(compare(&v, &hi), Some(Ordering::Less | Ordering::Equal));
            Value::Bool(inside != *negated)
        }
        Expr::InList { expr, list, negated } => {
            let v = eval(expr, row, table)?;
            let mut found = false;
            for item in list {
                if compare(&v, &eval(item, row, table)?) == Some(Ordering::Equal) {
                    found = true;
                    break;
                }
            }
            Value::Bool(found != *negated)
        }
        Expr::Like { negated, any: false, expr, pattern, escape_char: None } => {
            let v = eval(expr, row, table)?;
            let Value::String(p) = eval(pattern, row, table)? else { return Err(unsupported()) };
            let text = match v {
                Value::String(s) => s,
                Value::Null => return Ok(Value::Bool(false)),
                other => other.to_string(),
            };
            Value::Bool(like_regex(&p)?.is_match(&text) != *negated)
        }
        _ => return Err(unsupported()),
    })
}

/// Binds result rows into a chart spec after checking that every encoded
/// field is a result column.
#[derive(Debug, Clone, Copy, Default)]
pub struct ChartRenderer;

impl ChartRenderer {
    pub fn render(spec: &Value, rows: &Value) -> Result<Value, ToolError> {
        validate_chart_spec(spec).map_err(ToolError::Failed)?;
        let columns: Vec<String> = rows
            .get("columns")
            .and_then(Value::as_array)
            .map(|c| c.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
            .unwrap_or_default();
        let enc = spec.get("encoding").and_then(Value::as_object).cloned().unwrap_or_default();
        for (channel, e) in &enc {
            let field = e.get("field").and_then(Value::as_str).unwrap_or_default();
            if !columns.iter().any(|c| c == field) {
                return Err(ToolError::Failed(format!("{channel} encodes `{field}`, which is not a result column")));
            }
        }
        let values: Vec<Value> = rows
            .get("rows")
            .and_then(Value::as_array)
            .map(|rs| {
                rs.iter()
                    .filter_map(Value::as_array)
                    .map(|r| Value::Object(columns.iter().cloned().zip(r.iter().cloned()).collect::<Map<_, _>>()))
                    .collect()
            })
            .unwrap_or_default();
        let mut out = spec.clone();
        out["data"] = json!({ "values": values });
        Ok(out)
    }
}

impl Tool for ChartRenderer {
    fn name(&self) -> &str {
        "chart_renderer"
    }

    fn kind(&self) -> ToolKind {
        ToolKind::ChartRenderer
    }

    fn call(&self, input: &ToolInput) -> Result<Content, ToolError> {
        let Some(Content::ChartSpec(spec)) = input.last("chart_spec") else {
            return Err(ToolError::Failed("no chart spec input".into()));
        };
        let Some(Content::TablePreview(rows)) = input.last("table_preview") else {
            return Err(ToolError::Failed("no result rows to chart".into()));
        };
        Ok(Content::ChartSpec(ChartRenderer::render(spec, rows)?))
    }
}

/// Runs Python source in a fresh temporary working directory with an empty
/// environment and a wall-clock limit. Table previews among the inputs are
/// written next to the script as `input_<n>.json`. Network isolation is not
/// enforced at the OS level.
#[cfg(not(target_arch = "wasm32"))]
#[derive(Debug, Clone)]
pub struct CodeSandbox {
    pub interpreter: String,
    pub timeout: Duration,
}

#[cfg(not(target_arch = "wasm32"))]
impl Default for CodeSandbox {
    fn default() -> Self {
        CodeSandbox { interpreter: "python3".into(), timeout: DEFAULT_TOOL_TIMEOUT }
    }
}

#[cfg(not(target_arch = "wasm32"))]
impl CodeSandbox {
    pub fn run(&self, code: &str, data: &[&Value]) -> Result<String, ToolError> {
        use std::io::Read;
        use std::process::{Command, Stdio};
        use std::time::Instant;

        let dir = tempfile::tempdir().map_err(|e| ToolError::Failed(e.to_string()))?;
        std::fs::write(dir.path().join("main.py"), code).map_err(|e| ToolError::Failed(e.to_string()))?;
        for (i, v) in data.iter().enumerate() {
            std::fs::write(dir.path().join(format!("input_{i}.json")), v.to_string())
                .map_err(|e| ToolError::Failed(e.to_string()))?;
        }
        let mut child = Command::new(&self.interpreter)
            .args(["-I", "main.py"])
            .current_dir(dir.path())
            .env_clear()
            .env("PATH", "/usr/local/bin:/usr/bin:/bin")
            .env("HOME", dir.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ToolError::Failed(format!("cannot start {}: {e}", self.interpreter)))?;
        let drain = |mut r: Box<dyn Read + Send>| {
            std::thread::spawn(move || {
                let mut s = String::new();
                let _ = r.read_to_string(&mut s);
                s
            })
        };
        let out = drain(Box::new(child.stdout.take().expect("piped stdout")));
        let err = drain(Box::new(child.stderr.take().expect("piped stderr")));
        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait().map_err(|e| ToolError::Failed(e.to_string()))? {
                Some(status) => break status,
                None if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(ToolError::Timeout(self.timeout));
                }
                None => std::thread::sleep(Duration::from_millis(5)),
            }
        };
        let stdout = out.join().unwrap_or_default();
        let stderr = err.join().unwrap_or_default().replace(&format!("{}/", dir.path().display()), "");
        if status.success() {
            Ok(stdout)
        } else {
            let tail: Vec<&str> = stderr.lines().rev().take(5).collect();
            Err(ToolError::Failed(tail.into_iter().rev().collect::<Vec<_>>().join("\n")))
        }
    }
}

#[cfg(not(target_arch = "wasm32"))]
impl Tool for CodeSandbox {
    fn name(&self) -> &str {
        "code_sandbox"
    }

    fn kind(&self) -> ToolKind {
        ToolKind::CodeSandbox
    }

    fn timeout(&self) -> Duration {
        self.timeout + Duration::from_secs(1)
    }

    fn call(&self, input: &ToolInput) -> Result<Content, ToolError> {
        let Some(Content::Code(code)) = input.last("code") else {
            return Err(ToolError::Failed("no code input".into()));
        };
        let data: Vec<&Value> = input
            .inputs
            .iter()
            .filter_map(|c| match c {
                Content::TablePreview(v) => Some(v),
                _ => None,
            })
            .collect();
        self.run(code, &data).map(Content::Text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sales() -> SqlExecutor {
        let t = Table::new(
            vec!["product".into(), "region".into(), "revenue".into(), "ftime".into()],
            vec![
                vec![json!("A"), json!("north"), json!(10), json!("2024-01-05")],
                vec![json!("B"), json!("north"), json!(5), json!("2024-02-01")],
                vec![json!("A"), json!("south"), json!(7), json!("2023-12-30")],
                vec![json!("C"), json!("south"), json!(2.5), json!("2024-03-03")],
            ],
        );
        SqlExecutor::new([("sales".to_string(), t)].into())
    }

    #[test]
    fn grouped_aggregate() {
        let t = sales()
            .execute("SELECT product, SUM(revenue) AS sum_revenue FROM sales GROUP BY product ORDER BY sum_revenue DESC")
            .unwrap();
        assert_eq!(t.columns, ["product", "sum_revenue"]);
        assert_eq!(t.rows, vec![vec![json!("A"), json!(17)], vec![json!("B"), json!(5)], vec![json!("C"), json!(2.5)]]);
    }

    #[test]
    fn filters() {
        let ex = sales();
        let q = |w: &str| ex.execute(&format!("SELECT COUNT(*) AS n FROM sales WHERE {w}")).unwrap().rows[0][0].clone();
        assert_eq!(q("ftime BETWEEN '2024-01-01' AND '2024-12-31'"), json!(3));
        assert_eq!(q("product IN ('A', 'C') AND revenue > 5"), json!(2));
        assert_eq!(q("region LIKE 'no%'"), json!(2));
        assert_eq!(q("product != 'A' OR revenue >= 10"), json!(3));
    }

    #[test]
    fn ungrouped_column_rejected() {
        let e = sales().execute("SELECT product, SUM(revenue) FROM sales").unwrap_err();
        assert!(e.to_string().contains("GROUP BY"));
    }

    #[test]
    fn count_distinct_and_limit() {
        let t = sales().execute("SELECT region, COUNT(DISTINCT product) AS d FROM sales GROUP BY region LIMIT 1").unwrap();
        assert_eq!(t.rows, vec![vec![json!("north"), json!(2)]]);
    }

    #[test]
    fn renderer_checks_fields() {
        let rows = json!({"columns": ["product", "sum_revenue"], "rows": [["A", 17]]});
        let spec = json!({"mark": {"type": "bar"}, "encoding": {"x": {"field": "product", "type": "nominal"}, "y": {"field": "sum_revenue", "type": "quantitative"}}});
        let out = ChartRenderer::render(&spec, &rows).unwrap();
        assert_eq!(out["data"]["values"][0]["sum_revenue"], 17);
        let bad = json!({"mark": "bar", "encoding": {"x": {"field": "ghost", "type": "nominal"}}});
        assert!(ChartRenderer::render(&bad, &rows).is_err());
    }

    #[test]
    fn sandbox_runs_and_times_out() {
        let sb = CodeSandbox::default();
        assert_eq!(sb.run("import os\nprint(len(os.listdir('.')))", &[]).unwrap().trim(), "1");
        let fails = sb.run("raise SystemExit('boom')", &[]).unwrap_err();
        assert_eq!(fails, ToolError::Failed("boom".into()));
        let quick = CodeSandbox { timeout: Duration::from_millis(200), ..Default::default() };
        assert_eq!(quick.run("while True: pass", &[]), Err(ToolError::Timeout(Duration::from_millis(200))));
    }

    struct Sleepy;
    impl Tool for Sleepy {
        fn name(&self) -> &str {
            "sleepy"
        }
        fn kind(&self) -> ToolKind {
            ToolKind::CodeSandbox
        }
        fn timeout(&self) -> Duration {
            Duration::from_millis(20)
        }
        fn call(&self, _: &ToolInput) -> Result<Content, ToolError> {
            std::thread::sleep(Duration::from_millis(500));
            Ok(Content::Text("late".into()))
        }
    }

    #[test]
    fn registry_enforces_timeout() {
        let r = ToolRegistry::new().with(Sleepy);
        let input = ToolInput { data_source: "t".into(), inputs: vec![] };
        assert_eq!(r.call("sleepy", &input), Err(ToolError::Timeout(Duration::from_millis(20))));
    }
}
