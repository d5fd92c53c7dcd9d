//! Append-only persistence. `trials.jsonl` lists every trial and
//! `trials/<id>.jsonl` holds that trial's event log. A record counts once its
//! line is written and synced; a torn final line left by a crash is cut off
//! on the next open.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use car_core::engine::{AllocationEvent, Snapshot, ThetaSummary};
use car_core::{Assignment, TrialConfig, TrialState, WhatIf};
use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;
use tokio::sync::{Mutex, RwLock};

use crate::error::{Result, ServiceError};

const INDEX_FILE: &str = "trials.jsonl";
const LOG_DIR: &str = "trials";

/// One line of the trials index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub created_at: DateTime<Utc>,
    pub config: TrialConfig,
}

struct Live {
    state: TrialState,
    lines: Vec<String>,
    log: tokio::fs::File,
    log_len: u64,
}

pub struct Trial {
    pub record: TrialRecord,
    log_path: PathBuf,
    live: Mutex<Live>,
}

/// Listing entry for `GET /trials`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial_id: String,
    pub name: Option<String>,
    pub created_at: DateTime<Utc>,
    pub policy: String,
    pub n: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialView {
    pub trial_id: String,
    pub name: Option<String>,
    pub created_at: DateTime<Utc>,
    pub config: TrialConfig,
    #[serde(flatten)]
    pub snapshot: Snapshot,
}

impl Trial {
    pub async fn view(&self) -> TrialView {
        let live = self.live.lock().await;
        TrialView {
            trial_id: self.record.trial_id.clone(),
            name: self.record.name.clone(),
            created_at: self.record.created_at,
            config: self.record.config.clone(),
            snapshot: live.state.snapshot(),
        }
    }

    pub async fn summary(&self) -> TrialSummary {
        let n = self.live.lock().await.state.n();
        TrialSummary {
            trial_id: self.record.trial_id.clone(),
            name: self.record.name.clone(),
            created_at: self.record.created_at,
            policy: self.record.config.policy.label().to_string(),
            n,
        }
    }

    pub async fn whatif(&self, x: &[f64]) -> Result<WhatIf> {
        Ok(self.live.lock().await.state.whatif(x)?)
    }

    /// Enroll on a copy of the state, append and sync the event, then swap
    /// the copy in. A failed write leaves both the file and the state as
    /// they were.
    pub async fn enroll(&self, x: &[f64]) -> Result<(Assignment, AllocationEvent, Option<ThetaSummary>)> {
        let mut live = self.live.lock().await;
        let mut next = live.state.clone();
        let (a, ev) = next.enroll(x)?;
        let line = ev.to_json_line();
        let bytes = format!("{line}\n");
        let written = async {
            live.log.write_all(bytes.as_bytes()).await?;
            live.log.sync_data().await
        }
        .await;
        if let Err(e) = written {
            let _ = live.log.set_len(live.log_len).await;
            return Err(ServiceError::io(&self.log_path, e));
        }
        live.log_len += bytes.len() as u64;
        live.lines.push(line);
        let theta = next.theta_summary();
        live.state = next;
        Ok((a, ev, theta))
    }

    /// Event lines with `unit_index >= from`, at most `limit` of them.
    pub async fn events(&self, from: u64, limit: Option<usize>) -> Vec<String> {
        let live = self.live.lock().await;
        let start = (from as usize).min(live.lines.len());
        let end = limit.map_or(live.lines.len(), |l| (start + l).min(live.lines.len()));
        live.lines[start..end].to_vec()
    }
}

pub struct Store {
    dir: PathBuf,
    index: Mutex<tokio::fs::File>,
    trials: RwLock<BTreeMap<String, Arc<Trial>>>,
}

/// Read a JSONL file, cutting off an unterminated final line.
fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ServiceError::io(path, e)),
    };
    let complete = text.rfind('\n').map_or(0, |i| i + 1);
    if complete < text.len() {
        let f = std::fs::OpenOptions::new().write(true).open(path).map_err(|e| ServiceError::io(path, e))?;
        f.set_len(complete as u64).and_then(|_| f.sync_all()).map_err(|e| ServiceError::io(path, e))?;
    }
    Ok(text[..complete].lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

fn open_append(path: &Path) -> Result<std::fs::File> {
    std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| ServiceError::io(path, e))
}

fn sync_dir(dir: &Path) {
    // Directory fsync makes new file names durable; not every platform allows it.
    if let Ok(d) = std::fs::File::open(dir) {
        let _ = d.sync_all();
    }
}

impl Store {
    /// Open or create a data directory and replay every trial in it.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let logs = dir.join(LOG_DIR);
        std::fs::create_dir_all(&logs).map_err(|e| ServiceError::io(&logs, e))?;
        let index_path = dir.join(INDEX_FILE);
        let mut trials = BTreeMap::new();
        for (i, line) in read_lines(&index_path)?.iter().enumerate() {
            let record: TrialRecord = serde_json::from_str(line)
                .map_err(|e| ServiceError::CorruptIndex(format!("{}: line {}: {e}", index_path.display(), i + 1)))?;
            let trial = Self::load_trial(&logs, record)?;
            trials.insert(trial.record.trial_id.clone(), Arc::new(trial));
        }
        let index = open_append(&index_path)?;
        Ok(Store {
            dir,
            index: Mutex::new(tokio::fs::File::from_std(index)),
            trials: RwLock::new(trials),
        })
    }

    fn load_trial(logs: &Path, record: TrialRecord) -> Result<Trial> {
        let log_path = logs.join(format!("{}.jsonl", record.trial_id));
        let lines = read_lines(&log_path)?;
        let events = lines
            .iter()
            .map(|l| AllocationEvent::from_json_line(l))
            .collect::<car_core::Result<Vec<_>>>()?;
        let state = TrialState::replay(record.config.clone(), &events)?;
        let log = open_append(&log_path)?;
        let log_len = log.metadata().map_err(|e| ServiceError::io(&log_path, e))?.len();
        Ok(Trial {
            record,
            log_path,
            live: Mutex::new(Live {
                state,
                lines,
                log: tokio::fs::File::from_std(log),
                log_len,
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub async fn create(&self, config: TrialConfig) -> Result<TrialRecord> {
        let state = TrialState::new(config.clone())?;
        let mut index = self.index.lock().await;
        if let Some(name) = &config.name {
            let trials = self.trials.read().await;
            if trials.values().any(|t| t.record.name.as_ref() == Some(name)) {
                return Err(ServiceError::Duplicate(name.clone()));
            }
        }
        let record = TrialRecord {
            trial_id: uuid::Uuid::new_v4().simple().to_string(),
            name: config.name.clone(),
            created_at: Utc::now().trunc_subsecs(3),
            config,
        };
        let logs = self.dir.join(LOG_DIR);
        let log_path = logs.join(format!("{}.jsonl", record.trial_id));
        let log = open_append(&log_path)?;
        log.sync_all().map_err(|e| ServiceError::io(&log_path, e))?;
        sync_dir(&logs);

        let line = serde_json::to_string(&record).map_err(car_core::CarError::from)? + "\n";
        let index_path = self.dir.join(INDEX_FILE);
        index.write_all(line.as_bytes()).await.map_err(|e| ServiceError::io(&index_path, e))?;
        index.sync_data().await.map_err(|e| ServiceError::io(&index_path, e))?;

        let trial = Trial {
            record: record.clone(),
            log_path,
            live: Mutex::new(Live {
                state,
                lines: Vec::new(),
                log: tokio::fs::File::from_std(log),
                log_len: 0,
            }),
        };
        self.trials.write().await.insert(record.trial_id.clone(), Arc::new(trial));
        Ok(record)
    }

    pub async fn get(&self, id: &str) -> Result<Arc<Trial>> {
        self.trials
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    pub async fn list(&self) -> Vec<Arc<Trial>> {
        self.trials.read().await.values().cloned().collect()
    }
}
