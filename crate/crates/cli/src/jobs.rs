//! Asynchronous pipeline jobs run by the service.

use std::collections::BTreeMap;
use std::path::PathBuf;

use lineage_core::analytics::ReportFormat;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::commands::{self, ExportFormat};
use crate::error::CliError;
use crate::settings::Settings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Ingest,
    Embed,
    BuildIndex,
    Query,
    Report,
}

impl JobKind {
    /// Jobs that change the corpus store or index files; these run one at a
    /// time, in submission order.
    pub fn is_mutating(self) -> bool {
        matches!(self, Self::Ingest | Self::Embed | Self::BuildIndex)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

/// Body of `POST /jobs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JobRequest {
    Ingest {
        path: PathBuf,
    },
    Embed {},
    BuildIndex {},
    Query {
        doc_id: String,
        /// Export file; the result only carries counts when omitted.
        #[serde(default)]
        out: Option<PathBuf>,
        #[serde(default)]
        csv: bool,
    },
    Report {
        doc_id: String,
        out: PathBuf,
    },
}

impl JobRequest {
    pub fn kind(&self) -> JobKind {
        match self {
            Self::Ingest { .. } => JobKind::Ingest,
            Self::Embed {} => JobKind::Embed,
            Self::BuildIndex {} => JobKind::BuildIndex,
            Self::Query { .. } => JobKind::Query,
            Self::Report { .. } => JobKind::Report,
        }
    }

    /// Runs the stage to completion on the calling thread.
    pub fn run(&self, settings: &Settings) -> Result<Value, CliError> {
        match self {
            Self::Ingest { path } => Ok(to_value(&commands::ingest(settings, path)?)),
            Self::Embed {} => Ok(to_value(&commands::embed(settings)?)),
            Self::BuildIndex {} => Ok(to_value(&commands::build_index(settings)?)),
            Self::Query { doc_id, out, csv } => {
                let set = commands::query(settings, doc_id)?;
                if let Some(out) = out {
                    let format = if *csv { ExportFormat::Csv } else { ExportFormat::Jsonl };
                    commands::write_matches(&set, format, Some(out))?;
                }
                Ok(json!({
                    "focus_doc_id": set.focus_doc_id,
                    "records": set.records.len(),
                    "books": set.book_counts.len(),
                    "out": out,
                }))
            }
            Self::Report { doc_id, out } => {
                let report = commands::report(settings, doc_id, ReportFormat::Bundle)?;
                report.bundle.write_to(out)?;
                Ok(json!({
                    "focus_doc_id": doc_id,
                    "files": report.bundle.files.keys().collect::<Vec<_>>(),
                    "out": out,
                }))
            }
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("summary serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDescriptor {
    pub job_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub progress: f64,
    pub error: Option<String>,
    pub result: Option<Value>,
}

impl JobDescriptor {
    fn new(job_id: String, kind: JobKind) -> Self {
        Self { job_id, kind, status: JobStatus::Pending, progress: 0.0, error: None, result: None }
    }
}

/// Job table; status only moves pending -> running -> done | failed.
#[derive(Debug, Default)]
pub struct JobTable {
    next: u64,
    jobs: BTreeMap<String, JobDescriptor>,
}

impl JobTable {
    pub fn submit(&mut self, kind: JobKind) -> JobDescriptor {
        self.next += 1;
        let id = format!("job-{:06}", self.next);
        let job = JobDescriptor::new(id.clone(), kind);
        self.jobs.insert(id, job.clone());
        job
    }

    pub fn get(&self, id: &str) -> Option<&JobDescriptor> {
        self.jobs.get(id)
    }

    pub fn list(&self) -> Vec<JobDescriptor> {
        self.jobs.values().cloned().collect()
    }

    pub fn start(&mut self, id: &str) {
        if let Some(j) = self.jobs.get_mut(id).filter(|j| j.status == JobStatus::Pending) {
            j.status = JobStatus::Running;
        }
    }

    pub fn finish(&mut self, id: &str, outcome: Result<Value, String>) {
        if let Some(j) = self.jobs.get_mut(id).filter(|j| j.status == JobStatus::Running) {
            match outcome {
                Ok(v) => {
                    j.status = JobStatus::Done;
                    j.progress = 1.0;
                    j.result = Some(v);
                }
                Err(e) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(e);
                }
            }
        }
    }
}
