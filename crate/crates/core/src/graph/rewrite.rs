//! Query rewriting. Relative date phrases are resolved deterministically
//! against an injected `now` before the model sees the query; the model
//! only expands references to earlier turns.

use std::sync::OnceLock;

use chrono::{DateTime, Datelike, Duration, Months, NaiveDate, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{CompletionRequest, Gateway, GatewayError};

pub const TAG_REWRITE: &str = "graph.rewrite";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub phrase: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn render(&self) -> String {
        format!("{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewritten: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rewrite {
    pub text: String,
    pub ranges: Vec<DateRange>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RewriteError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("invalid model output: {0}")]
    InvalidModelOutput(String),
}

fn phrase_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(this year|last year|this quarter|last quarter|this month|last month|this week|last week|today|yesterday|(?:last|past) (\d+) days)\b",
        )
        .expect("static regex")
    })
}

fn month_start(d: NaiveDate) -> NaiveDate {
    d.with_day(1).expect("day 1 exists")
}

fn month_end(d: NaiveDate) -> NaiveDate {
    month_start(d) + Months::new(1) - Duration::days(1)
}

fn quarter_start(d: NaiveDate) -> NaiveDate {
    NaiveDate::from_ymd_opt(d.year(), (d.month0() / 3) * 3 + 1, 1).expect("valid quarter start")
}

fn range_for(phrase: &str, days: Option<i64>, today: NaiveDate) -> (NaiveDate, NaiveDate) {
    let ymd = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
    let week_start = today - Duration::days(today.weekday().num_days_from_monday() as i64);
    match phrase {
        "this year" => (ymd(today.year(), 1, 1), ymd(today.year(), 12, 31)),
        "last year" => (ymd(today.year() - 1, 1, 1), ymd(today.year() - 1, 12, 31)),
        "this quarter" => {
            let s = quarter_start(today);
            (s, s + Months::new(3) - Duration::days(1))
        }
        "last quarter" => {
            let s = quarter_start(today) - Months::new(3);
            (s, s + Months::new(3) - Duration::days(1))
        }
        "this month" => (month_start(today), month_end(today)),
        "last month" => {
            let prev = month_start(today) - Months::new(1);
            (prev, month_end(prev))
        }
        "this week" => (week_start, week_start + Duration::days(6)),
        "last week" => (week_start - Duration::days(7), week_start - Duration::days(1)),
        "today" => (today, today),
        "yesterday" => (today - Duration::days(1), today - Duration::days(1)),
        _ => {
            let n = days.unwrap_or(1).max(1);
            (today - Duration::days(n - 1), today)
        }
    }
}

/// Annotates each relative date phrase with its `start..end` range.
pub fn resolve_dates(q: &str, now: DateTime<Utc>) -> (String, Vec<DateRange>) {
    let today = now.date_naive();
    let mut ranges = Vec::new();
    let text = phrase_re()
        .replace_all(q, |c: &regex::Captures<'_>| {
            let phrase = c[1].to_string();
            let days = c.get(2).and_then(|m| m.as_str().parse().ok());
            let (start, end) = range_for(&phrase.to_lowercase(), days, today);
            let r = DateRange { phrase: phrase.clone(), start, end };
            let out = format!("{phrase} ({})", r.render());
            ranges.push(r);
            out
        })
        .into_owned();
    (text, ranges)
}

/// Produces a self-contained query. Resolved date ranges always survive: if
/// the model drops one it is appended.
pub fn rewrite_query(q: &str, history: &[Turn], now: DateTime<Utc>, gateway: &Gateway) -> Result<Rewrite, RewriteError> {
    let (resolved, ranges) = resolve_dates(q, now);
    let mut prompt = String::from(
        "Rewrite the user's latest question into a clear, detailed, self-contained form. Expand references \
         to earlier questions (such as \"what about\") using the conversation. Keep every date range written \
         as start..end exactly.\n",
    );
    prompt.push_str(&format!("Current time: {}\n", now.to_rfc3339()));
    if !history.is_empty() {
        prompt.push_str("Conversation:\n");
        for t in history {
            prompt.push_str(&format!("- {}\n", t.rewritten.as_deref().unwrap_or(&t.query)));
        }
    }
    prompt.push_str(&format!("Question: {resolved}\nReply with the rewritten question only."));
    let reply = gateway.complete(&CompletionRequest::new(TAG_REWRITE, prompt))?;
    let mut text = reply.trim().trim_matches('"').trim().to_string();
    if text.is_empty() {
        return Err(RewriteError::InvalidModelOutput("empty rewrite".into()));
    }
    for r in &ranges {
        if !text.contains(&r.render()) {
            text.push_str(&format!(" ({})", r.render()));
        }
    }
    Ok(Rewrite { text, ranges })
}
