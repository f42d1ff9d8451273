mod common;

use common::{chart_is_valid, protocol_violations, scenario_dirs};
use nbi_core::agent::{Content, TraceEventKind};
use nbi_core::replay::{replay, Scenario, ScenarioStep};
use nbi_core::{CellKind, Decision};

#[test]
fn twenty_scenarios_conform_to_the_protocol() {
    let dirs = scenario_dirs();
    assert_eq!(dirs.len(), 20);
    let mut sizes = std::collections::BTreeSet::new();
    for dir in dirs {
        let run = replay(&dir).unwrap_or_else(|e| panic!("{}: {e}", dir.display()));
        for s in &run.suggestions {
            sizes.insert(s.plan.nodes.len());
            let v = protocol_violations(&s.plan, &s.trace, 5);
            assert!(v.is_empty(), "{}: {v:?}", run.name);
        }
    }
    assert_eq!(sizes, [1, 2, 3, 4].into());
}

fn run(name: &str) -> nbi_core::replay::ScenarioRun {
    let dir = scenario_dirs().into_iter().find(|d| d.ends_with(name)).unwrap();
    replay(&dir).unwrap()
}

#[test]
fn nl2vis_ends_with_a_validating_chart() {
    let run = run("01_nl2vis_bar_revenue_by_product");
    let s = &run.suggestions[0];
    let agents: Vec<&str> = s.plan.nodes.iter().map(|n| n.agent.as_str()).collect();
    assert_eq!(agents, ["SQL Agent", "VIS Agent"]);
    let vis = s.units.iter().find(|u| u.role == "VIS Agent").unwrap();
    let Content::ChartSpec(spec) = &vis.content else { panic!("VIS unit is {}", vis.content.kind()) };
    chart_is_valid(spec).unwrap();
    assert_eq!(spec["data"]["values"].as_array().unwrap().len(), 4);
    let kinds: Vec<CellKind> = run.notebook.cells.iter().map(|c| c.kind).collect();
    assert_eq!(kinds, [CellKind::Sql, CellKind::Python, CellKind::Markdown, CellKind::Sql, CellKind::Chart]);
    let chart = run.notebook.cells.last().unwrap();
    assert_eq!(chart.binding.as_deref(), Some("q1_result1"));
    assert!(run.buffer.iter().any(|u| u.origin_cell.as_deref() == Some(chart.id.as_str())));
}

#[test]
fn retries_are_counted_as_episodes() {
    for (name, agent, episodes) in [
        ("11_sql_retry_unknown_column", "SQL Agent", 2),
        ("12_sql_fails_twice_then_succeeds", "SQL Agent", 3),
        ("13_vis_retry_bad_field", "VIS Agent", 2),
        ("14_insight_sandbox_error_retry", "Insight Agent", 2),
        ("17_python_syntax_retry", "Python Agent", 2),
    ] {
        let run = run(name);
        let trace = &run.suggestions[0].trace;
        assert_eq!(trace.episodes(agent), episodes, "{name}");
        let fails = trace.events.iter().filter(|e| e.event == TraceEventKind::Fail).count();
        assert_eq!(fails, episodes - 1, "{name}");
        // The success superseded the error unit under the same key.
        assert!(run.buffer.iter().all(|u| !matches!(u.content, Content::Error(_))), "{name}");
    }
}

#[test]
fn rejected_suggestions_leave_notebook_and_buffer_untouched() {
    for name in ["03_nl2sql_revenue_by_region_rejected", "16_independent_sql_and_python_rejected"] {
        let dir = scenario_dirs().into_iter().find(|d| d.ends_with(name)).unwrap();
        let scenario = Scenario::load(&dir).unwrap();
        assert!(matches!(scenario.steps.last(), Some(ScenarioStep::Resolve { decision: Decision::Reject })));
        let run = replay(&dir).unwrap();
        assert_eq!(run.notebook, scenario.notebook, "{name}");
        assert!(run.buffer.is_empty(), "{name}");
    }
}

#[test]
fn independent_agents_receive_nothing() {
    let run = run("16_independent_sql_and_python_rejected");
    let trace = &run.suggestions[0].trace;
    assert!(trace.events.iter().filter(|e| e.event == TraceEventKind::Deliver).all(|e| e.unit_key.is_none()));
}

#[test]
fn fan_in_consumer_receives_both_producers() {
    let run = run("09_fan_in_three_agents");
    let trace = &run.suggestions[0].trace;
    let roles: Vec<&str> = trace
        .events
        .iter()
        .filter(|e| e.event == TraceEventKind::Deliver && e.agent == "Insight Agent")
        .filter_map(|e| e.unit_key.as_ref().map(|k| k.role.as_str()))
        .collect();
    assert_eq!(roles, ["SQL Agent", "Python Agent"]);
}

#[test]
fn replay_is_byte_identical() {
    for dir in scenario_dirs() {
        let a = serde_json::to_string(&replay(&dir).unwrap()).unwrap();
        let b = serde_json::to_string(&replay(&dir).unwrap()).unwrap();
        assert_eq!(a, b, "{}", dir.display());
    }
}
