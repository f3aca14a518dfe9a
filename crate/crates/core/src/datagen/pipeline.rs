use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use super::{process_query, DatagenError, DatagenParams, DatasetMixSpec, QueryOutcome, TrainingExample, UnlabeledQuery};
use crate::backends::{Generator, NliScorer};
use crate::retrieval::Retriever;

/// Reads a JSONL query file of `{id, text, dataset_tag}` records.
pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<UnlabeledQuery>, DatagenError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatagenError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: UnlabeledQuery = serde_json::from_str(line).map_err(|e| DatagenError::BadInput {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if q.text.trim().is_empty() {
            return Err(DatagenError::BadInput {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("query {:?} has empty text", q.id),
            });
        }
        out.push(q);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub requested: usize,
    pub kept: usize,
    pub filtered: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub query_id: String,
    pub error: String,
    pub transport: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub selected: usize,
    pub kept: usize,
    pub filtered: usize,
    pub failed: usize,
    /// Queries already completed by an earlier run and skipped this time.
    pub resumed: usize,
    /// Mean grounding score of the kept examples.
    pub mean_g: f64,
    pub per_dataset: BTreeMap<String, DatasetCounts>,
    pub failures: Vec<FailureRecord>,
    pub interrupted: bool,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JournalEntry {
    id: String,
    status: JournalStatus,
    g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum JournalStatus {
    Kept,
    Filtered,
}

#[derive(Serialize, Deserialize)]
struct StagedRecord {
    position: usize,
    example: TrainingExample,
}

fn sidecar(output: &Path, suffix: &str) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Picks the first `count` queries of each dataset tag, in mix order.
fn select(mix: &DatasetMixSpec, queries: &[UnlabeledQuery]) -> Result<Vec<UnlabeledQuery>, DatagenError> {
    let mut selected = Vec::with_capacity(mix.total());
    for (tag, count) in &mix.counts {
        let pool: Vec<&UnlabeledQuery> = queries.iter().filter(|q| &q.dataset_tag == tag).collect();
        if pool.len() < *count {
            return Err(DatagenError::Mix(format!(
                "dataset {tag:?} needs {count} queries, only {} available",
                pool.len()
            )));
        }
        selected.extend(pool.into_iter().take(*count).cloned());
    }
    let mut ids = HashSet::new();
    for q in &selected {
        if !ids.insert(q.id.as_str()) {
            return Err(DatagenError::Mix(format!("duplicate query id {:?}", q.id)));
        }
    }
    Ok(selected)
}

/// Reads completed entries; a torn final line from an interrupted write is ignored.
fn read_journal(path: &Path) -> Result<HashMap<String, JournalEntry>, DatagenError> {
    let mut out = HashMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(source) => {
            return Err(DatagenError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| DatagenError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if let Ok(entry) = serde_json::from_str::<JournalEntry>(&line) {
            out.insert(entry.id.clone(), entry);
        }
    }
    Ok(out)
}

fn read_staged(path: &Path, journal: &HashMap<String, JournalEntry>) -> Result<BTreeMap<usize, TrainingExample>, DatagenError> {
    let mut out = BTreeMap::new();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(source) => {
            return Err(DatagenError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    for line in text.lines() {
        let Ok(rec) = serde_json::from_str::<StagedRecord>(line) else { continue };
        let kept = journal
            .get(&rec.example.metadata.query_id)
            .is_some_and(|e| e.status == JournalStatus::Kept);
        if kept {
            out.entry(rec.position).or_insert(rec.example);
        }
    }
    Ok(out)
}

fn append_line(path: &Path, value: &impl Serialize) -> Result<(), DatagenError> {
    let io = |source| DatagenError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut line = serde_json::to_string(value).expect("serializable");
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    f.write_all(line.as_bytes()).map_err(io)?;
    f.sync_data().map_err(io)
}

/// Runs the data factory over the selected queries and writes the JSONL output.
///
/// Progress is kept next to `output` in `<output>.journal` (one entry per
/// completed query id) and `<output>.staged` (kept records). A rerun skips
/// journaled queries, so an interrupted run resumes without duplicates. The
/// final file is ordered by selection position and written atomically once
/// every query has been attempted. Per-query failures are recorded and the run
/// continues; failed queries are retried on the next run.
///
/// Setting `cancel` stops workers from starting new queries.
#[allow(clippy::too_many_arguments)]
pub fn run_pipeline(
    mix: &DatasetMixSpec,
    queries: &[UnlabeledQuery],
    retriever: &dyn Retriever,
    generator: &dyn Generator,
    scorer: &dyn NliScorer,
    output: &Path,
    params: &DatagenParams,
    cancel: Option<&AtomicBool>,
) -> Result<RunSummary, DatagenError> {
    params.thresholds.validate()?;
    let selected = select(mix, queries)?;
    let journal_path = sidecar(output, ".journal");
    let staged_path = sidecar(output, ".staged");
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| DatagenError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let mut journal = read_journal(&journal_path)?;
    let resumed = selected.iter().filter(|q| journal.contains_key(&q.id)).count();
    let todo: Vec<(usize, &UnlabeledQuery)> = selected
        .iter()
        .enumerate()
        .filter(|(_, q)| !journal.contains_key(&q.id))
        .collect();

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let jobs = params.jobs.max(1).min(todo.len().max(1));
    let mut failures = Vec::new();
    let (tx, rx) = mpsc::channel::<(usize, &UnlabeledQuery, Result<QueryOutcome, DatagenError>)>();
    let write_result: Result<(), DatagenError> = std::thread::scope(|scope| {
        for _ in 0..jobs {
            let tx = tx.clone();
            let (next, stop, todo) = (&next, &stop, &todo);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) || cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(pos, q)) = todo.get(i) else { break };
                let res = process_query(q, retriever, generator, scorer, params);
                if tx.send((pos, q, res)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (pos, q, res) in rx {
            let written = match res {
                Ok(QueryOutcome::Kept(example)) => {
                    let g = example.metadata.g;
                    append_line(&staged_path, &StagedRecord { position: pos, example })
                        .and_then(|_| {
                            let entry = JournalEntry { id: q.id.clone(), status: JournalStatus::Kept, g };
                            append_line(&journal_path, &entry).map(|_| entry)
                        })
                }
                Ok(QueryOutcome::Filtered { g }) => {
                    let entry = JournalEntry { id: q.id.clone(), status: JournalStatus::Filtered, g };
                    append_line(&journal_path, &entry).map(|_| entry)
                }
                Err(e) => {
                    log::warn!("{e}");
                    failures.push((pos, FailureRecord {
                        query_id: q.id.clone(),
                        error: e.to_string(),
                        transport: e.is_transport(),
                    }));
                    continue;
                }
            };
            match written {
                Ok(entry) => {
                    journal.insert(entry.id.clone(), entry);
                }
                Err(e) => {
                    stop.store(true, Ordering::SeqCst);
                    return Err(e);
                }
            }
        }
        Ok(())
    });
    write_result?;
    failures.sort_by_key(|(pos, _)| *pos);
    let failures: Vec<FailureRecord> = failures.into_iter().map(|(_, f)| f).collect();

    let interrupted = cancel.is_some_and(|c| c.load(Ordering::SeqCst))
        && selected.iter().any(|q| !journal.contains_key(&q.id) && !failures.iter().any(|f| f.query_id == q.id));

    let staged = read_staged(&staged_path, &journal)?;
    if !interrupted {
        let mut bytes = Vec::new();
        for example in staged.values() {
            bytes.extend(serde_json::to_vec(example).expect("serializable"));
            bytes.push(b'\n');
        }
        crate::retrieval::write_atomic(output, &bytes).map_err(|source| DatagenError::Io {
            path: output.to_path_buf(),
            source,
        })?;
    }

    let mut per_dataset: BTreeMap<String, DatasetCounts> = BTreeMap::new();
    for q in &selected {
        let c = per_dataset.entry(q.dataset_tag.clone()).or_default();
        c.requested += 1;
        match journal.get(&q.id).map(|e| e.status) {
            Some(JournalStatus::Kept) => c.kept += 1,
            Some(JournalStatus::Filtered) => c.filtered += 1,
            None if failures.iter().any(|f| f.query_id == q.id) => c.failed += 1,
            None => {}
        }
    }
    let kept_g: Vec<f64> = selected
        .iter()
        .filter_map(|q| journal.get(&q.id))
        .filter(|e| e.status == JournalStatus::Kept)
        .map(|e| e.g)
        .collect();
    let mean_g = if kept_g.is_empty() {
        0.0
    } else {
        kept_g.iter().sum::<f64>() / kept_g.len() as f64
    };
    Ok(RunSummary {
        selected: selected.len(),
        kept: per_dataset.values().map(|c| c.kept).sum(),
        filtered: per_dataset.values().map(|c| c.filtered).sum(),
        failed: failures.len(),
        resumed,
        mean_g,
        per_dataset,
        failures,
        interrupted,
        output: output.to_path_buf(),
    })
}
