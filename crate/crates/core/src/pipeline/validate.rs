use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    read_array_meta, sha256_file, DatasetRecord, PipelineConfig, RecordCounts, CAMERAS_FILE, CANONICAL_CAMERAS_FILE,
    FPS_SHARP_STEM, FPS_UNIFORM_STEM, MESH_FILE, QUERY_STEM, RECORD_FILE, SURFACE_SHARP_STEM, SURFACE_UNIFORM_STEM,
};
use crate::camera::ConditionRig;
use crate::error::{Error, Result};
use crate::isosurface::{check_watertight, WatertightReport};
use crate::mesh::{load_mesh, DegeneratePolicy, LoadOptions};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    Missing { path: String },
    SizeMismatch { path: String, expected: u64, actual: u64 },
    HashMismatch { path: String, expected: String, actual: String },
    Unlisted { path: String },
    CountMismatch { what: String, expected: usize, actual: usize },
    Unreadable { path: String, error: String },
    NotWatertight { boundary_edges: usize, manifold: bool },
    ReportMismatch { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub asset_id: String,
    pub files_checked: usize,
    pub watertight: Option<WatertightReport>,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
    }
}

fn count(issues: &mut Vec<ValidationIssue>, what: &str, expected: usize, actual: usize) {
    if expected != actual {
        issues.push(ValidationIssue::CountMismatch {
            what: what.into(),
            expected,
            actual,
        });
    }
}

fn list_files(root: &Path) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for entry in walkdir::WalkDir::new(root) {
        let entry = entry.map_err(|e| Error::io(root, e.into()))?;
        if entry.file_type().is_file() {
            if let Ok(rel) = entry.path().strip_prefix(root) {
                out.insert(
                    rel.components()
                        .map(|c| c.as_os_str().to_string_lossy())
                        .collect::<Vec<_>>()
                        .join("/"),
                );
            }
        }
    }
    Ok(out)
}

/// Re-hashes every listed artifact, re-checks the stored mesh and compares
/// counts against `expected` (or the config stored in the record). Every
/// discrepancy is reported; only an unreadable record is an error.
pub fn validate_record(record_dir: &Path, expected: Option<&PipelineConfig>) -> Result<ValidationReport> {
    let record = DatasetRecord::read(record_dir)?;
    let mut issues = Vec::new();

    let mut present = list_files(record_dir)?;
    present.remove(RECORD_FILE);
    for a in &record.artifacts {
        let path = record_dir.join(&a.path);
        if !present.remove(&a.path) {
            issues.push(ValidationIssue::Missing { path: a.path.clone() });
            continue;
        }
        let size = fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
        if size != a.bytes {
            issues.push(ValidationIssue::SizeMismatch {
                path: a.path.clone(),
                expected: a.bytes,
                actual: size,
            });
        }
        let digest = sha256_file(&path)?;
        if digest != a.sha256 {
            issues.push(ValidationIssue::HashMismatch {
                path: a.path.clone(),
                expected: a.sha256.clone(),
                actual: digest,
            });
        }
    }
    issues.extend(present.into_iter().map(|path| ValidationIssue::Unlisted { path }));

    let mut watertight = None;
    if record.artifact(MESH_FILE).is_some() && record_dir.join(MESH_FILE).exists() {
        let options = LoadOptions {
            degenerate: DegeneratePolicy::KeepZeroArea,
        };
        match load_mesh(&record_dir.join(MESH_FILE), &options) {
            Ok((mesh, _)) => {
                let report = check_watertight(&mesh);
                if !report.is_closed || !report.is_edge_manifold {
                    issues.push(ValidationIssue::NotWatertight {
                        boundary_edges: report.boundary_edge_count,
                        manifold: report.is_edge_manifold,
                    });
                }
                if record.watertight.as_ref() != Some(&report) {
                    issues.push(ValidationIssue::ReportMismatch { path: MESH_FILE.into() });
                }
                watertight = Some(report);
            }
            Err(e) => issues.push(ValidationIssue::Unreadable {
                path: MESH_FILE.into(),
                error: e.to_string(),
            }),
        }
    }

    let config = expected.unwrap_or(&record.config);
    let want = RecordCounts::expected(config);
    let have = record.counts;
    count(&mut issues, "query_near", want.query_near, have.query_near);
    count(&mut issues, "query_second", want.query_second, have.query_second);
    count(&mut issues, "surface_uniform", want.surface_uniform, have.surface_uniform);
    count(&mut issues, "surface_sharp", want.surface_sharp, have.surface_sharp);
    count(&mut issues, "fps_uniform", want.fps_uniform, have.fps_uniform);
    count(&mut issues, "fps_sharp", want.fps_sharp, have.fps_sharp);
    count(&mut issues, "views", want.views, have.views);
    count(&mut issues, "canonical_views", want.canonical_views, have.canonical_views);

    // Stored array shapes must agree with the recorded counts.
    let arrays = [
        (QUERY_STEM, have.query_near + have.query_second),
        (SURFACE_UNIFORM_STEM, have.surface_uniform),
        (SURFACE_SHARP_STEM, have.surface_sharp),
        (FPS_UNIFORM_STEM, have.fps_uniform),
        (FPS_SHARP_STEM, have.fps_sharp),
    ];
    for (stem, rows) in arrays {
        let side = format!("{stem}.json");
        if record.artifact(&side).is_none() {
            count(&mut issues, &format!("{stem} rows"), rows, 0);
            continue;
        }
        match read_array_meta(&record_dir.join(&side)) {
            Ok(meta) => {
                count(&mut issues, &format!("{stem} rows"), rows, meta.shape[0]);
                let bin = record_dir.join(format!("{stem}.f32"));
                if let Ok(m) = fs::metadata(&bin) {
                    let expect = (meta.shape[0] * meta.shape[1] * 4) as u64;
                    if m.len() != expect {
                        issues.push(ValidationIssue::SizeMismatch {
                            path: format!("{stem}.f32"),
                            expected: expect,
                            actual: m.len(),
                        });
                    }
                }
            }
            Err(e) => issues.push(ValidationIssue::Unreadable {
                path: side,
                error: e.to_string(),
            }),
        }
    }
    for (file, views) in [(CAMERAS_FILE, have.views), (CANONICAL_CAMERAS_FILE, have.canonical_views)] {
        let path = record_dir.join(file);
        if views == 0 && !path.exists() {
            continue;
        }
        match fs::read_to_string(&path)
            .map_err(|e| Error::io(&path, e))
            .and_then(|t| Ok(serde_json::from_str::<ConditionRig>(&t)?))
        {
            Ok(rig) => count(&mut issues, file, views, rig.cameras.len()),
            Err(e) => issues.push(ValidationIssue::Unreadable {
                path: file.into(),
                error: e.to_string(),
            }),
        }
    }

    Ok(ValidationReport {
        asset_id: record.asset_id,
        files_checked: record.artifacts.len(),
        watertight,
        issues,
    })
}
