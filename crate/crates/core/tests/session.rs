mod common;

use std::sync::Arc;

use common::scenario_dirs;
use nbi_core::clock::StepClock;
use nbi_core::notebook::{Cell, Notebook};
use nbi_core::replay::{Scenario, ScenarioStep, World};
use nbi_core::{Decision, QueryScope, Session, SessionError};

struct Fixture {
    engine: nbi_core::Engine,
    notebook: Notebook,
    query: String,
    scope: QueryScope,
}

fn nl2vis() -> Fixture {
    let dir = scenario_dirs().into_iter().find(|d| d.ends_with("01_nl2vis_bar_revenue_by_product")).unwrap();
    let scenario = Scenario::load(&dir).unwrap();
    let world = World::load(&dir.join(&scenario.world)).unwrap();
    let engine = world.engine(Arc::new(world.scripted(&dir).unwrap()), Arc::new(StepClock::fixed())).unwrap();
    let ScenarioStep::Ask { query, scope } = scenario.steps[0].clone() else { panic!("first step is an ask") };
    Fixture { engine, notebook: scenario.notebook, query, scope }
}

#[test]
fn accept_commits_cells_and_links_units() {
    let f = nl2vis();
    let mut s = Session::new("s", f.notebook.clone());
    let proposed = s.ask(&f.engine, &f.query, &f.scope).unwrap().cells().len();
    assert_eq!(proposed, 2);
    assert_eq!(s.notebook, f.notebook);
    let rev = s.resolve(Decision::Accept).unwrap();
    assert_eq!(rev, f.notebook.revision + 2);
    assert_eq!(s.notebook.cells.len(), f.notebook.cells.len() + 2);
    assert_eq!(s.audit.len(), 2);
    for c in &s.notebook.cells {
        assert!(s.dag.contains(&c.id));
    }
    let linked = s.buffer.live().into_iter().filter(|u| u.origin_cell.is_some()).count();
    assert_eq!(linked, 2);
    assert!(s.pending().is_none());
}

#[test]
fn one_pending_suggestion_at_a_time() {
    let f = nl2vis();
    let mut s = Session::new("s", f.notebook);
    s.ask(&f.engine, &f.query, &f.scope).unwrap();
    let e = s.ask(&f.engine, &f.query, &f.scope).unwrap_err();
    assert!(matches!(e, SessionError::PendingSuggestion));
    assert_eq!(e.stage(), "session");
    s.resolve(Decision::Reject).unwrap();
    let e = s.resolve(Decision::Reject).unwrap_err();
    assert!(matches!(e, SessionError::NoPendingSuggestion));
}

#[test]
fn edit_commits_user_cells_instead() {
    let f = nl2vis();
    let mut s = Session::new("s", f.notebook.clone());
    s.ask(&f.engine, &f.query, &f.scope).unwrap();
    let mine = Cell::sql("mine", "SELECT region FROM sales", Some("regions_df"));
    s.resolve(Decision::Edit { cells: vec![mine.clone()] }).unwrap();
    assert_eq!(s.notebook.cells.last(), Some(&mine));
    assert_eq!(s.notebook.cells.len(), f.notebook.cells.len() + 1);
    assert_eq!(s.dag.first_definer("regions_df").map(String::as_str), Some("mine"));
}

#[test]
fn failed_commit_keeps_the_suggestion_pending() {
    let f = nl2vis();
    let mut s = Session::new("s", f.notebook.clone());
    s.ask(&f.engine, &f.query, &f.scope).unwrap();
    let dup = Cell::python("c1", "x = 1");
    let e = s.resolve(Decision::Edit { cells: vec![Cell::python("fresh", "y = 2"), dup] }).unwrap_err();
    assert_eq!(e.stage(), "commit");
    assert_eq!(s.notebook, f.notebook);
    assert!(s.audit.is_empty());
    assert!(s.pending().is_some());
    s.resolve(Decision::Accept).unwrap();
}

#[test]
fn empty_notebook_fails_in_context_stage() {
    let f = nl2vis();
    let mut s = Session::new("s", Notebook::new("empty"));
    let e = s.ask(&f.engine, &f.query, &f.scope).unwrap_err();
    assert_eq!(e.stage(), "context");
    assert!(s.pending().is_none());
}
