//! Result rows, run summaries and manifests. Column names and the summary
//! schema are documented in `docs/results.md`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::kinematics::ArticulatedObject;
use crate::tasks::metrics::mean;
use crate::Result;

pub const CSV_COLUMNS: [&str; 10] = [
    "object_id",
    "task",
    "policy",
    "episode",
    "steps",
    "mean_effect",
    "unique_ratio",
    "e_goal",
    "success",
    "termination",
];

/// One episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub object_id: String,
    /// `explore`, or `goal/<joint>/<open|close>`.
    pub task: String,
    pub policy: String,
    pub episode: usize,
    /// Directional steps executed.
    pub steps: usize,
    /// Mean single-action effect D over the directional steps.
    pub mean_effect: f64,
    pub unique_ratio: Option<f64>,
    pub e_goal: Option<f64>,
    pub success: Option<bool>,
    pub termination: String,
}

impl ResultRow {
    fn key(&self) -> (&str, &str, &str, usize) {
        (&self.policy, &self.task, &self.object_id, self.episode)
    }

    /// `explore` or `goal`.
    pub fn kind(&self) -> &str {
        self.task.split('/').next().unwrap_or("")
    }
}

/// Sorts rows by (policy, task, object, episode) so output never depends on
/// completion order.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| a.key().cmp(&b.key()));
}

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(CSV_COLUMNS)?;
    for r in &sorted {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// Aggregate over all rows sharing a policy and task kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub kind: String,
    pub policy: String,
    pub episodes: usize,
    pub mean_steps: f64,
    pub mean_effect: f64,
    pub mean_unique_ratio: Option<f64>,
    pub success_rate: Option<f64>,
    pub mean_e_goal: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    /// Set when the run was cut short; the rows cover completed episodes only.
    pub interrupted: bool,
    pub groups: Vec<GroupSummary>,
}

pub fn summarize(command: &str, rows: &[ResultRow], interrupted: bool) -> Summary {
    let mut groups: BTreeMap<(String, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.kind().to_string(), r.policy.clone()))
            .or_default()
            .push(r);
    }
    let opt_mean = |v: Vec<f64>| (!v.is_empty()).then(|| mean(&v));
    Summary {
        command: command.into(),
        interrupted,
        groups: groups
            .into_iter()
            .map(|((kind, policy), rs)| GroupSummary {
                kind,
                policy,
                episodes: rs.len(),
                mean_steps: mean(&rs.iter().map(|r| r.steps as f64).collect::<Vec<_>>()),
                mean_effect: mean(&rs.iter().map(|r| r.mean_effect).collect::<Vec<_>>()),
                mean_unique_ratio: opt_mean(rs.iter().filter_map(|r| r.unique_ratio).collect()),
                success_rate: opt_mean(
                    rs.iter()
                        .filter_map(|r| r.success.map(|s| f64::from(u8::from(s))))
                        .collect(),
                ),
                mean_e_goal: opt_mean(rs.iter().filter_map(|r| r.e_goal).collect()),
            })
            .collect(),
    }
}

impl Summary {
    pub fn group(&self, kind: &str, policy: &str) -> Option<&GroupSummary> {
        self.groups
            .iter()
            .find(|g| g.kind == kind && g.policy == policy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub id: String,
    /// SHA-256 of the object's canonical JSON.
    pub sha256: String,
}

/// Everything needed to reproduce a run bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
    pub suite: Vec<SuiteEntry>,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new(
        command: &str,
        cfg: &super::ExperimentConfig,
        suite: &[std::sync::Arc<ArticulatedObject>],
    ) -> Self {
        Self {
            command: command.into(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            version: env!("CARGO_PKG_VERSION").into(),
            suite: suite
                .iter()
                .map(|o| SuiteEntry {
                    id: o.id.clone(),
                    sha256: hex::encode(Sha256::digest(o.to_json().as_bytes())),
                })
                .collect(),
            config: serde_json::to_value(cfg).expect("config serializes"),
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Writes one JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut f, it)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}
