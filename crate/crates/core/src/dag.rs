//! Cell dependency DAG.
//!
//! An edge `(d, c)` means cell `c` reads a variable whose nearest preceding
//! definition (in document order) is cell `d`. Resolving every reference to
//! the nearest preceding definition keeps the graph acyclic even when a
//! variable is redefined further down the notebook.
//!
//! [`CellDag::update`] maintains the graph incrementally: only the changed
//! cell is re-parsed, and only readers of variables whose definition sites
//! moved are re-resolved. The result always equals [`CellDag::build`] on the
//! post-edit notebook when every edit passes the syntax check.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::analysis::{cell_surface, SyntaxError, Variables};
use crate::notebook::{Cell, CellChange, CellId, ChangeKind, Notebook};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub cell_id: CellId,
    pub message: String,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DagError {
    /// The changed cell failed the syntax check; its previous contribution
    /// to the graph is retained.
    #[error("cell `{cell_id}` failed the syntax check: {error}")]
    Syntax { cell_id: CellId, error: SyntaxError },
    #[error("change references unknown cell `{0}`")]
    UnknownCell(CellId),
}

#[derive(Debug, Clone, Default)]
pub struct CellDag {
    nodes: Vec<CellId>,
    position: HashMap<CellId, usize>,
    /// Last syntactically valid surface per cell.
    surfaces: HashMap<CellId, Variables>,
    /// Definition sites per variable, in document order.
    var_defs: BTreeMap<String, Vec<CellId>>,
    /// Cells whose surface references each variable.
    readers: BTreeMap<String, BTreeSet<CellId>>,
    /// Resolved incoming dependencies: reader -> variable -> definer.
    incoming: HashMap<CellId, BTreeMap<String, CellId>>,
    diagnostics: BTreeMap<CellId, String>,
}

impl PartialEq for CellDag {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges() == other.edges() && self.var_defs() == other.var_defs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: CellId,
    pub to: CellId,
}

/// Serializable view used by the CLI and HTTP API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagView {
    pub nodes: Vec<CellId>,
    pub edges: Vec<Edge>,
    pub var_defs: BTreeMap<String, Vec<(CellId, usize)>>,
    pub diagnostics: Vec<Diagnostic>,
}

impl CellDag {
    pub fn build(nb: &Notebook) -> Self {
        let mut dag = CellDag::default();
        for (i, cell) in nb.cells.iter().enumerate() {
            dag.nodes.push(cell.id.clone());
            dag.position.insert(cell.id.clone(), i);
            let surface = match cell_surface(cell) {
                Ok(s) => s,
                Err(e) => {
                    dag.diagnostics.insert(cell.id.clone(), e.to_string());
                    Variables::default()
                }
            };
            for v in &surface.defined {
                dag.var_defs.entry(v.clone()).or_default().push(cell.id.clone());
            }
            for v in &surface.referenced {
                dag.readers.entry(v.clone()).or_default().insert(cell.id.clone());
            }
            dag.surfaces.insert(cell.id.clone(), surface);
        }
        let ids = dag.nodes.clone();
        for id in &ids {
            dag.resolve(id);
        }
        dag
    }

    /// Applies one committed notebook change. On a syntax failure the node
    /// set still follows the document, but dependency edges are unchanged
    /// and the error is returned.
    pub fn update(&mut self, change: &CellChange) -> Result<(), DagError> {
        match change.kind {
            ChangeKind::Create => {
                let cell = change.after.as_ref().ok_or_else(|| DagError::UnknownCell(change.cell_id.clone()))?;
                let at = change.index.min(self.nodes.len());
                self.nodes.insert(at, cell.id.clone());
                self.reindex();
                match cell_surface(cell) {
                    Ok(surface) => {
                        self.diagnostics.remove(&cell.id);
                        self.surfaces.insert(cell.id.clone(), Variables::default());
                        self.replace_surface(&cell.id, surface);
                        Ok(())
                    }
                    Err(error) => {
                        self.surfaces.insert(cell.id.clone(), Variables::default());
                        self.diagnostics.insert(cell.id.clone(), error.to_string());
                        Err(DagError::Syntax { cell_id: cell.id.clone(), error })
                    }
                }
            }
            ChangeKind::Modify => {
                let cell = change.after.as_ref().ok_or_else(|| DagError::UnknownCell(change.cell_id.clone()))?;
                if !self.position.contains_key(&cell.id) {
                    return Err(DagError::UnknownCell(cell.id.clone()));
                }
                self.modify(cell)
            }
            ChangeKind::Delete => {
                let id = &change.cell_id;
                let Some(&at) = self.position.get(id) else {
                    return Err(DagError::UnknownCell(id.clone()));
                };
                self.replace_surface(id, Variables::default());
                self.nodes.remove(at);
                self.surfaces.remove(id);
                self.incoming.remove(id);
                self.diagnostics.remove(id);
                self.reindex();
                Ok(())
            }
        }
    }

    fn modify(&mut self, cell: &Cell) -> Result<(), DagError> {
        match cell_surface(cell) {
            Ok(surface) => {
                self.diagnostics.remove(&cell.id);
                self.replace_surface(&cell.id, surface);
                Ok(())
            }
            Err(error) => {
                self.diagnostics.insert(cell.id.clone(), error.to_string());
                Err(DagError::Syntax { cell_id: cell.id.clone(), error })
            }
        }
    }

    fn reindex(&mut self) {
        self.position.clear();
        for (i, id) in self.nodes.iter().enumerate() {
            self.position.insert(id.clone(), i);
        }
    }

    /// Swaps a cell's surface and re-resolves exactly the readers whose
    /// nearest definition may have moved.
    fn replace_surface(&mut self, id: &str, new: Variables) {
        let old = self.surfaces.get(id).cloned().unwrap_or_default();
        let pos = self.position[id];
        let mut affected_vars = BTreeSet::new();
        for v in old.defined.difference(&new.defined) {
            if let Some(list) = self.var_defs.get_mut(v) {
                list.retain(|c| c != id);
                if list.is_empty() {
                    self.var_defs.remove(v);
                }
            }
            affected_vars.insert(v.clone());
        }
        for v in new.defined.difference(&old.defined) {
            let list = self.var_defs.entry(v.clone()).or_default();
            let at = list.partition_point(|c| self.position[c] < pos);
            list.insert(at, id.to_string());
            affected_vars.insert(v.clone());
        }
        for v in old.referenced.difference(&new.referenced) {
            if let Some(r) = self.readers.get_mut(v) {
                r.remove(id);
                if r.is_empty() {
                    self.readers.remove(v);
                }
            }
        }
        for v in new.referenced.difference(&old.referenced) {
            self.readers.entry(v.clone()).or_default().insert(id.to_string());
        }
        self.surfaces.insert(id.to_string(), new);

        let mut to_resolve: BTreeSet<CellId> = BTreeSet::new();
        to_resolve.insert(id.to_string());
        for v in &affected_vars {
            if let Some(r) = self.readers.get(v) {
                to_resolve.extend(r.iter().filter(|c| self.position[*c] > pos).cloned());
            }
        }
        for c in to_resolve {
            self.resolve(&c);
        }
    }

    fn resolve(&mut self, id: &str) {
        let pos = self.position[id];
        let mut resolved = BTreeMap::new();
        if let Some(surface) = self.surfaces.get(id) {
            for v in &surface.referenced {
                if let Some(defs) = self.var_defs.get(v) {
                    let k = defs.partition_point(|c| self.position[c] < pos);
                    if k > 0 {
                        resolved.insert(v.clone(), defs[k - 1].clone());
                    }
                }
            }
        }
        if resolved.is_empty() {
            self.incoming.remove(id);
        } else {
            self.incoming.insert(id.to_string(), resolved);
        }
    }

    pub fn nodes(&self) -> &[CellId] {
        &self.nodes
    }

    pub fn contains(&self, id: &str) -> bool {
        self.position.contains_key(id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.position.get(id).copied()
    }

    pub fn edges(&self) -> BTreeSet<(CellId, CellId)> {
        let mut out = BTreeSet::new();
        for (to, deps) in &self.incoming {
            for from in deps.values() {
                out.insert((from.clone(), to.clone()));
            }
        }
        out
    }

    /// Definition sites per variable with their document positions.
    pub fn var_defs(&self) -> BTreeMap<String, Vec<(CellId, usize)>> {
        self.var_defs
            .iter()
            .map(|(v, cells)| (v.clone(), cells.iter().map(|c| (c.clone(), self.position[c])).collect()))
            .collect()
    }

    /// First cell (in document order) that defines `var`.
    pub fn first_definer(&self, var: &str) -> Option<&CellId> {
        self.var_defs.get(var).and_then(|l| l.first())
    }

    pub fn defined_variables(&self) -> impl Iterator<Item = &String> {
        self.var_defs.keys()
    }

    pub fn parents(&self, id: &str) -> BTreeSet<CellId> {
        self.incoming.get(id).map(|m| m.values().cloned().collect()).unwrap_or_default()
    }

    pub fn children(&self, id: &str) -> BTreeSet<CellId> {
        self.incoming
            .iter()
            .filter(|(_, deps)| deps.values().any(|d| d == id))
            .map(|(c, _)| c.clone())
            .collect()
    }

    pub fn ancestors(&self, id: &str) -> BTreeSet<CellId> {
        self.closure(id, |dag, c| dag.parents(c))
    }

    pub fn descendants(&self, id: &str) -> BTreeSet<CellId> {
        let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
        for (to, deps) in &self.incoming {
            for from in deps.values() {
                children.entry(from.as_str()).or_default().push(to.as_str());
            }
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([id]);
        while let Some(c) = queue.pop_front() {
            for &k in children.get(c).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(k.to_string()) {
                    queue.push_back(k);
                }
            }
        }
        seen
    }

    fn closure(&self, id: &str, next: impl Fn(&Self, &str) -> BTreeSet<CellId>) -> BTreeSet<CellId> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([id.to_string()]);
        while let Some(c) = queue.pop_front() {
            for k in next(self, &c) {
                if seen.insert(k.clone()) {
                    queue.push_back(k);
                }
            }
        }
        seen
    }

    /// Kahn's algorithm; `None` if the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<CellId>> {
        let edges = self.edges();
        let mut indegree: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        for (_, to) in &edges {
            *indegree.get_mut(to.as_str())? += 1;
        }
        let mut ready: VecDeque<&str> = self.nodes.iter().map(String::as_str).filter(|n| indegree[n] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_front() {
            order.push(n.to_string());
            for (from, to) in &edges {
                if from == n {
                    let d = indegree.get_mut(to.as_str())?;
                    *d -= 1;
                    if *d == 0 {
                        ready.push_back(to.as_str());
                    }
                }
            }
        }
        (order.len() == self.nodes.len()).then_some(order)
    }

    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        self.diagnostics
            .iter()
            .map(|(c, m)| Diagnostic { cell_id: c.clone(), message: m.clone() })
            .collect()
    }

    pub fn view(&self) -> DagView {
        DagView {
            nodes: self.nodes.clone(),
            edges: self.edges().into_iter().map(|(from, to)| Edge { from, to }).collect(),
            var_defs: self.var_defs(),
            diagnostics: self.diagnostics(),
        }
    }
}

pub fn build_dag(nb: &Notebook) -> CellDag {
    CellDag::build(nb)
}

/// Functional form of [`CellDag::update`].
pub fn update_dag(dag: &CellDag, change: &CellChange) -> Result<CellDag, DagError> {
    let mut next = dag.clone();
    next.update(change)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notebook::{apply_edit, CellEdit};

    fn edges(dag: &CellDag) -> Vec<(String, String)> {
        dag.edges().into_iter().collect()
    }

    fn chain() -> Notebook {
        Notebook::with_cells(
            "nb",
            vec![
                Cell::sql("c1", "SELECT a FROM t", Some("df1")),
                Cell::python("c2", "summary = df1.describe()"),
                Cell::chart("c3", "{}", "df1"),
            ],
        )
    }

    #[test]
    fn sql_python_chart_chain() {
        let dag = CellDag::build(&chain());
        assert_eq!(edges(&dag), [("c1".into(), "c2".into()), ("c1".into(), "c3".into())]);
        assert!(dag.topological_order().is_some());
    }

    #[test]
    fn markdown_only() {
        let nb = Notebook::with_cells("nb", vec![Cell::markdown("m1", "x = y"), Cell::markdown("m2", "df1")]);
        assert!(CellDag::build(&nb).edges().is_empty());
    }

    #[test]
    fn nearest_preceding_definition() {
        let nb = Notebook::with_cells(
            "nb",
            vec![
                Cell::python("c1", "x = 1"),
                Cell::python("c2", "y = 2"),
                Cell::python("c3", "x = 3"),
                Cell::python("c4", "print(x)"),
            ],
        );
        assert_eq!(edges(&CellDag::build(&nb)), [("c3".into(), "c4".into())]);
    }

    #[test]
    fn self_redefinition_points_backwards() {
        let nb = Notebook::with_cells("nb", vec![Cell::python("a", "x = 1"), Cell::python("b", "x = x + 1")]);
        assert_eq!(edges(&CellDag::build(&nb)), [("a".into(), "b".into())]);
    }

    #[test]
    fn syntax_failures_are_isolated_and_recorded() {
        let nb = Notebook::with_cells("nb", vec![Cell::python("a", "x = (1"), Cell::python("b", "print(x)")]);
        let dag = CellDag::build(&nb);
        assert!(dag.edges().is_empty());
        assert_eq!(dag.nodes().len(), 2);
        assert_eq!(dag.diagnostics()[0].cell_id, "a");
    }

    fn step(nb: &Notebook, dag: &mut CellDag, edit: CellEdit) -> Notebook {
        let (next, change) = apply_edit(nb, &edit).unwrap();
        dag.update(&change).unwrap();
        assert_eq!(*dag, CellDag::build(&next));
        next
    }

    #[test]
    fn delete_isolated_markdown() {
        let mut nb = chain();
        nb.cells.push(Cell::markdown("m", "notes"));
        let mut dag = CellDag::build(&nb);
        let before = dag.edges();
        step(&nb, &mut dag, CellEdit::Delete { cell_id: "m".into() });
        assert_eq!(dag.edges(), before);
    }

    #[test]
    fn delete_definer_rebinds_to_earlier() {
        let nb = Notebook::with_cells(
            "nb",
            vec![
                Cell::sql("c1", "SELECT 1", Some("df1")),
                Cell::sql("c2", "SELECT 2", Some("df1")),
                Cell::python("c3", "df1.plot()"),
            ],
        );
        let mut dag = CellDag::build(&nb);
        assert_eq!(edges(&dag), [("c2".into(), "c3".into())]);
        let nb = step(&nb, &mut dag, CellEdit::Delete { cell_id: "c2".into() });
        assert_eq!(edges(&dag), [("c1".into(), "c3".into())]);
        step(&nb, &mut dag, CellEdit::Delete { cell_id: "c1".into() });
        assert!(dag.edges().is_empty());
    }

    #[test]
    fn modify_adds_one_edge() {
        let nb = Notebook::with_cells("nb", vec![Cell::sql("c1", "SELECT 1", Some("df1")), Cell::python("c2", "x = 1")]);
        let mut dag = CellDag::build(&nb);
        step(&nb, &mut dag, CellEdit::Modify { cell_id: "c2".into(), cell: Cell::python("c2", "x = len(df1)") });
        assert_eq!(edges(&dag), [("c1".into(), "c2".into())]);
    }

    #[test]
    fn create_between_definer_and_reader_steals_edge() {
        let nb = Notebook::with_cells("nb", vec![Cell::python("a", "x = 1"), Cell::python("c", "y = x")]);
        let mut dag = CellDag::build(&nb);
        step(&nb, &mut dag, CellEdit::Create { cell: Cell::python("b", "x = 2"), index: Some(1) });
        assert_eq!(edges(&dag), [("b".into(), "c".into())]);
    }

    #[test]
    fn syntax_error_on_modify_keeps_last_good() {
        let nb = Notebook::with_cells("nb", vec![Cell::python("a", "x = 1"), Cell::python("b", "y = x")]);
        let mut dag = CellDag::build(&nb);
        let (_, change) = apply_edit(&nb, &CellEdit::Modify { cell_id: "b".into(), cell: Cell::python("b", "y = (x") }).unwrap();
        let before = dag.clone();
        assert!(matches!(dag.update(&change), Err(DagError::Syntax { .. })));
        assert_eq!(dag, before);
        assert_eq!(dag.diagnostics().len(), 1);
    }

    #[test]
    fn ancestors_and_descendants() {
        let nb = Notebook::with_cells(
            "nb",
            vec![
                Cell::sql("c1", "SELECT 1", Some("df1")),
                Cell::python("c2", "df2 = df1.dropna()"),
                Cell::python("c3", "df3 = df2.head()"),
                Cell::python("c4", "other = 1"),
            ],
        );
        let dag = CellDag::build(&nb);
        assert_eq!(dag.ancestors("c3").into_iter().collect::<Vec<_>>(), ["c1", "c2"]);
        assert_eq!(dag.descendants("c1").into_iter().collect::<Vec<_>>(), ["c2", "c3"]);
        assert!(dag.descendants("c4").is_empty());
    }
}
