//! Persistence. Notebooks live in `notebooks/<id>/` as an append-only
//! `events.jsonl` of committed cell changes plus a periodic
//! `snapshot.json`; the knowledge graph lives in `graph/nodes.jsonl` and
//! `graph/edges.jsonl`.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use nbi_core::graph::{GraphError, KnowledgeGraph};
use nbi_core::notebook::{apply_edit, diff_edits, parse_notebook, serialize_notebook, CellChange, CellEdit, ChangeKind, NotebookError};
use nbi_core::Notebook;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("invalid notebook id `{0}`")]
    InvalidId(String),
    #[error("notebook `{0}` not found")]
    NotFound(String),
    #[error("notebook `{id}` is at revision {current}, expected {expected}")]
    Conflict { id: String, current: u64, expected: u64 },
    #[error(transparent)]
    Notebook(#[from] NotebookError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn io(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::Io { path: path.to_path_buf(), message: e.to_string() }
}

/// Writes through a temporary file and a rename, so readers see the old or
/// the new contents.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io(path, e))
}

/// The edit that reproduces a recorded change.
pub fn edit_of(change: &CellChange) -> Result<CellEdit, StoreError> {
    let missing = || NotebookError::MalformedDocument(format!("change to `{}` has no cell", change.cell_id));
    Ok(match change.kind {
        ChangeKind::Create => CellEdit::Create { cell: change.after.clone().ok_or_else(missing)?, index: Some(change.index) },
        ChangeKind::Modify => CellEdit::Modify { cell_id: change.cell_id.clone(), cell: change.after.clone().ok_or_else(missing)? },
        ChangeKind::Delete => CellEdit::Delete { cell_id: change.cell_id.clone() },
    })
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

struct Entry {
    notebook: Notebook,
    since_snapshot: u64,
}

pub struct NotebookStore {
    dir: PathBuf,
    snapshot_every: u64,
    entries: Mutex<BTreeMap<String, Arc<Mutex<Entry>>>>,
}

/// Exclusive write access to one notebook.
pub struct NotebookGuard<'a> {
    store: &'a NotebookStore,
    id: String,
    entry: MutexGuard<'a, Entry>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl NotebookStore {
    /// Opens `dir`, reloading every notebook from its snapshot and the
    /// events recorded after it.
    pub fn open(dir: &Path, snapshot_every: u64) -> Result<Self, StoreError> {
        let root = dir.join("notebooks");
        fs::create_dir_all(&root).map_err(|e| io(&root, e))?;
        let mut entries = BTreeMap::new();
        let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
            .map_err(|e| io(&root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for d in dirs {
            let Some(id) = d.file_name().and_then(|n| n.to_str()).map(str::to_string) else { continue };
            if !valid_id(&id) {
                continue;
            }
            let notebook = Self::load(&d)?;
            entries.insert(id, Arc::new(Mutex::new(Entry { notebook, since_snapshot: 0 })));
        }
        Ok(NotebookStore { dir: root, snapshot_every, entries: Mutex::new(entries) })
    }

    fn load(dir: &Path) -> Result<Notebook, StoreError> {
        let snap = dir.join("snapshot.json");
        let bytes = fs::read(&snap).map_err(|e| io(&snap, e))?;
        let mut nb = parse_notebook(&bytes)?;
        let events = dir.join("events.jsonl");
        if !events.exists() {
            return Ok(nb);
        }
        let text = fs::read_to_string(&events).map_err(|e| io(&events, e))?;
        let lines: Vec<&str> = text.lines().collect();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |message: String| StoreError::Corrupt { path: events.clone(), line: i + 1, message };
            let change: CellChange = match serde_json::from_str(line) {
                Ok(c) => c,
                // A torn final line is a write that never completed.
                Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => break,
                Err(e) => return Err(corrupt(e.to_string())),
            };
            if change.revision <= nb.revision {
                continue;
            }
            let (next, replayed) = apply_edit(&nb, &edit_of(&change)?).map_err(|e| corrupt(e.to_string()))?;
            if replayed.revision != change.revision {
                return Err(corrupt(format!("revision {} does not follow {}", change.revision, nb.revision)));
            }
            nb = next;
        }
        Ok(nb)
    }

    pub fn ids(&self) -> Vec<String> {
        lock(&self.entries).keys().cloned().collect()
    }

    pub fn revisions(&self) -> BTreeMap<String, u64> {
        let entries: Vec<(String, Arc<Mutex<Entry>>)> = lock(&self.entries).iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        entries.into_iter().map(|(k, e)| (k, lock(&e).notebook.revision)).collect()
    }

    pub fn get(&self, id: &str) -> Result<Notebook, StoreError> {
        let entry = lock(&self.entries).get(id).cloned().ok_or_else(|| StoreError::NotFound(id.into()))?;
        let nb = lock(&entry).notebook.clone();
        Ok(nb)
    }

    /// Runs `f` with exclusive access to notebook `id`. With `create`, a
    /// missing notebook starts empty at revision 0.
    pub fn with_writer<T, E: From<StoreError>>(
        &self,
        id: &str,
        create: bool,
        f: impl FnOnce(&mut NotebookGuard<'_>) -> Result<T, E>,
    ) -> Result<T, E> {
        if !valid_id(id) {
            return Err(StoreError::InvalidId(id.into()).into());
        }
        let entry = {
            let mut entries = lock(&self.entries);
            match entries.get(id) {
                Some(e) => e.clone(),
                None if create => {
                    let dir = self.dir.join(id);
                    fs::create_dir_all(&dir).map_err(|e| E::from(io(&dir, e)))?;
                    let nb = Notebook::new(id);
                    write_atomic(&dir.join("snapshot.json"), &serialize_notebook(&nb)).map_err(E::from)?;
                    let e = Arc::new(Mutex::new(Entry { notebook: nb, since_snapshot: 0 }));
                    entries.insert(id.to_string(), e.clone());
                    e
                }
                None => return Err(StoreError::NotFound(id.into()).into()),
            }
        };
        let mut guard = NotebookGuard { store: self, id: id.to_string(), entry: lock(&entry) };
        f(&mut guard)
    }

    /// Replaces notebook `id` by committing the edits that turn the stored
    /// version into `target`.
    pub fn put(&self, id: &str, target: &Notebook, expected: Option<u64>) -> Result<(Notebook, Vec<CellChange>), StoreError> {
        target.validate()?;
        self.with_writer::<_, StoreError>(id, true, |w| {
            if let Some(rev) = expected {
                w.expect_revision(rev)?;
            }
            let edits = diff_edits(w.notebook(), target);
            let changes = w.commit_edits(&edits)?;
            Ok((w.notebook().clone(), changes))
        })
    }

    /// Writes a snapshot of every notebook.
    pub fn flush(&self) -> Result<(), StoreError> {
        for id in self.ids() {
            self.with_writer::<_, StoreError>(&id, false, |w| w.snapshot())?;
        }
        Ok(())
    }
}

impl NotebookGuard<'_> {
    pub fn notebook(&self) -> &Notebook {
        &self.entry.notebook
    }

    pub fn expect_revision(&self, expected: u64) -> Result<(), StoreError> {
        let current = self.entry.notebook.revision;
        if current == expected {
            Ok(())
        } else {
            Err(StoreError::Conflict { id: self.id.clone(), current, expected })
        }
    }

    /// Applies `edits` through `apply_edit` and appends the resulting
    /// changes to the event log. Nothing is written when any edit fails.
    pub fn commit_edits(&mut self, edits: &[CellEdit]) -> Result<Vec<CellChange>, StoreError> {
        let mut nb = self.entry.notebook.clone();
        let mut changes = Vec::with_capacity(edits.len());
        for e in edits {
            let (next, change) = apply_edit(&nb, e)?;
            nb = next;
            changes.push(change);
        }
        self.append(&changes)?;
        self.entry.notebook = nb;
        self.entry.since_snapshot += changes.len() as u64;
        if self.entry.since_snapshot >= self.store.snapshot_every {
            self.snapshot()?;
        }
        Ok(changes)
    }

    /// Commits changes already applied elsewhere, replaying each through
    /// `apply_edit` and checking it reproduces the recorded revision.
    pub fn commit_changes(&mut self, changes: &[CellChange]) -> Result<(), StoreError> {
        let mut edits = Vec::with_capacity(changes.len());
        for c in changes {
            edits.push(edit_of(c)?);
        }
        let replayed = self.commit_edits(&edits)?;
        debug_assert_eq!(replayed.iter().map(|c| c.revision).collect::<Vec<_>>(), changes.iter().map(|c| c.revision).collect::<Vec<_>>());
        Ok(())
    }

    fn append(&self, changes: &[CellChange]) -> Result<(), StoreError> {
        if changes.is_empty() {
            return Ok(());
        }
        let path = self.store.dir.join(&self.id).join("events.jsonl");
        let mut text = String::new();
        for c in changes {
            text.push_str(&serde_json::to_string(c).expect("change serializes"));
            text.push('\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| io(&path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| io(&path, e))?;
        f.sync_data().map_err(|e| io(&path, e))
    }

    fn snapshot(&mut self) -> Result<(), StoreError> {
        let path = self.store.dir.join(&self.id).join("snapshot.json");
        write_atomic(&path, &serialize_notebook(&self.entry.notebook))?;
        self.entry.since_snapshot = 0;
        Ok(())
    }
}

pub struct GraphStore {
    dir: PathBuf,
}

impl GraphStore {
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let dir = dir.join("graph");
        fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        Ok(GraphStore { dir })
    }

    /// The stored graph, if one was ever saved.
    pub fn load(&self) -> Result<Option<KnowledgeGraph>, StoreError> {
        let (n, e) = (self.dir.join("nodes.jsonl"), self.dir.join("edges.jsonl"));
        if !n.exists() {
            return Ok(None);
        }
        let nodes = fs::read_to_string(&n).map_err(|err| io(&n, err))?;
        let edges = if e.exists() { fs::read_to_string(&e).map_err(|err| io(&e, err))? } else { String::new() };
        Ok(Some(KnowledgeGraph::import_jsonl(&nodes, &edges)?))
    }

    pub fn save(&self, g: &KnowledgeGraph) -> Result<(), StoreError> {
        let (nodes, edges) = g.export_jsonl();
        write_atomic(&self.dir.join("edges.jsonl"), edges.as_bytes())?;
        write_atomic(&self.dir.join("nodes.jsonl"), nodes.as_bytes())
    }
}
