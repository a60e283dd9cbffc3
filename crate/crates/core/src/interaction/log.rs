//! Line-delimited JSON trajectory log.
//!
//! Each line of the log is one [`TransitionRecord`]. Observations are stored
//! once in a sidecar file (`<log>.obs.jsonl`, one [`ObservationRecord`] per
//! line) and referenced from the log by content hash.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{compute_outcome, Action, InteractionOutcome, Transition};
use crate::kinematics::{JointState, Observation};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRecord {
    pub episode_id: u64,
    pub step_index: usize,
    pub object_id: String,
    pub action: Action,
    /// Content hash of the observation before the step.
    pub obs_prev: String,
    /// Content hash of the episode's initial (or goal) observation.
    pub obs_init: String,
    pub j_init: JointState,
    pub j_prev: JointState,
    pub j_curr: JointState,
    pub outcome: InteractionOutcome,
    pub grasp_index: Option<usize>,
    pub position_label: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRecord {
    pub hash: String,
    pub observation: Observation,
}

impl TransitionRecord {
    pub fn from_transition(t: &Transition) -> Self {
        Self {
            episode_id: t.episode_id,
            step_index: t.step_index,
            object_id: t.object_id.clone(),
            action: t.action,
            obs_prev: t.obs_prev.content_hash(),
            obs_init: t.obs_init.content_hash(),
            j_init: t.j_init.clone(),
            j_prev: t.j_prev.clone(),
            j_curr: t.j_curr.clone(),
            outcome: t.outcome,
            grasp_index: t.grasp_index,
            position_label: t.position_label,
        }
    }

    /// Checks the stored outcome against a fresh computation.
    pub fn verify_outcome(&self, deltas: &[f64]) -> Result<bool> {
        let o = compute_outcome(deltas, &self.j_init, &self.j_prev, &self.j_curr)?;
        Ok(o == self.outcome)
    }
}

pub fn sidecar_path(log: &Path) -> PathBuf {
    let mut name = log.as_os_str().to_owned();
    name.push(".obs.jsonl");
    PathBuf::from(name)
}

pub struct TrajectoryWriter {
    log: BufWriter<File>,
    sidecar: BufWriter<File>,
    seen: HashSet<String>,
}

impl TrajectoryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            log: BufWriter::new(File::create(path)?),
            sidecar: BufWriter::new(File::create(sidecar_path(path))?),
            seen: HashSet::new(),
        })
    }

    fn put_observation(&mut self, hash: &str, obs: &Observation) -> Result<()> {
        if self.seen.insert(hash.to_string()) {
            let rec = ObservationRecord {
                hash: hash.to_string(),
                observation: obs.clone(),
            };
            serde_json::to_writer(&mut self.sidecar, &rec)?;
            self.sidecar.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write(&mut self, t: &Transition) -> Result<()> {
        let rec = TransitionRecord::from_transition(t);
        self.put_observation(&rec.obs_prev, &t.obs_prev)?;
        self.put_observation(&rec.obs_init, &t.obs_init)?;
        serde_json::to_writer(&mut self.log, &rec)?;
        self.log.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.log.flush()?;
        self.sidecar.flush()?;
        Ok(())
    }
}

impl Drop for TrajectoryWriter {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<TransitionRecord>> {
    read_lines(path)
}

pub fn read_observations(path: &Path) -> Result<HashMap<String, Arc<Observation>>> {
    let recs: Vec<ObservationRecord> = read_lines(&sidecar_path(path))?;
    Ok(recs
        .into_iter()
        .map(|r| (r.hash, Arc::new(r.observation)))
        .collect())
}

/// Rebuilds full transitions from a log and its sidecar.
pub fn read_trajectory(path: &Path) -> Result<Vec<Transition>> {
    let observations = read_observations(path)?;
    let lookup = |h: &str| {
        observations
            .get(h)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("observation {h} missing from sidecar")))
    };
    read_records(path)?
        .into_iter()
        .map(|r| {
            Ok(Transition {
                obs_prev: lookup(&r.obs_prev)?,
                obs_init: lookup(&r.obs_init)?,
                episode_id: r.episode_id,
                step_index: r.step_index,
                object_id: r.object_id,
                action: r.action,
                j_init: r.j_init,
                j_prev: r.j_prev,
                j_curr: r.j_curr,
                outcome: r.outcome,
                grasp_index: r.grasp_index,
                position_label: r.position_label,
            })
        })
        .collect()
}
