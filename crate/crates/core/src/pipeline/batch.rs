use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{process_job, PipelineConfig, Stage};
use crate::error::{Error, Result};

pub const SUMMARY_FILE: &str = "summary.json";

/// One manifest entry: the id is the path as written in the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetJob {
    pub id: String,
    pub input: PathBuf,
}

impl AssetJob {
    /// Directory name under the batch output: the id with every character
    /// outside `[A-Za-z0-9_-]` replaced by `_`.
    pub fn record_name(&self) -> String {
        self.id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect()
    }
}

/// Reads a manifest: one mesh path per line, relative to the manifest's
/// directory. Blank lines and lines starting with `#` are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<AssetJob>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let jobs: Vec<AssetJob> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| AssetJob {
            id: l.replace('\\', "/"),
            input: base.join(l),
        })
        .collect();
    if jobs.is_empty() {
        return Err(Error::InvalidArgument(format!("manifest {} lists no assets", path.display())));
    }
    let mut seen = HashSet::new();
    for job in &jobs {
        if !seen.insert(job.record_name()) {
            return Err(Error::InvalidArgument(format!(
                "manifest entry '{}' collides with another entry's record directory",
                job.id
            )));
        }
    }
    Ok(jobs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetOutcome {
    pub id: String,
    pub record: String,
    pub ok: bool,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub ok: usize,
    pub failed: usize,
    pub workers: usize,
    pub seconds: f64,
    /// Stage wall-clock totals over all successful assets.
    pub stage_seconds: BTreeMap<Stage, f64>,
    pub assets: Vec<AssetOutcome>,
}

/// Processes every manifest entry into `out/<record name>` on a pool of
/// `workers` threads, then writes `out/summary.json`. Per-asset failures are
/// collected, not propagated.
pub fn run_batch(manifest: &Path, out: &Path, config: &PipelineConfig, workers: usize) -> Result<BatchSummary> {
    config.validate()?;
    if workers == 0 {
        return Err(Error::InvalidArgument("workers must be at least 1".into()));
    }
    let jobs = read_manifest(manifest)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;

    let start = Instant::now();
    let results: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .with_max_len(1)
            .map(|job| {
                let t = Instant::now();
                let res = process_job(job, &out.join(job.record_name()), config);
                (res, t.elapsed().as_secs_f64())
            })
            .collect()
    });

    let mut stage_seconds = BTreeMap::new();
    let assets: Vec<AssetOutcome> = jobs
        .iter()
        .zip(results)
        .map(|(job, (res, seconds))| {
            let mut outcome = AssetOutcome {
                id: job.id.clone(),
                record: job.record_name(),
                ok: res.is_ok(),
                failed_stage: None,
                error: None,
                seconds,
            };
            match res {
                Ok(record) => {
                    for t in record.timings {
                        *stage_seconds.entry(t.stage).or_insert(0.0) += t.seconds;
                    }
                }
                Err(f) => {
                    log::warn!("asset {} failed: {f}", job.id);
                    outcome.failed_stage = Some(f.stage);
                    outcome.error = Some(f.source.to_string());
                }
            }
            outcome
        })
        .collect();
    let ok = assets.iter().filter(|a| a.ok).count();
    let summary = BatchSummary {
        ok,
        failed: assets.len() - ok,
        workers,
        seconds: start.elapsed().as_secs_f64(),
        stage_seconds,
        assets,
    };
    let path = out.join(SUMMARY_FILE);
    fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
