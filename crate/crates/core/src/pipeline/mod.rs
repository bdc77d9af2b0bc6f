//! End-to-end preprocessing of one asset into a record directory, batches of
//! assets over a worker pool, and record validation.

mod artifact;
mod batch;
mod config;
mod validate;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::camera::{build_condition_rig, ConditionRig};
use crate::error::{Error, Result};
use crate::field::build_bvh;
use crate::isosurface::{check_watertight, make_watertight, WatertightReport};
use crate::mesh::{load_mesh, normalize_mesh, write_mesh, LoadOptions, LoadReport, Mesh, MeshFormat, NormalizationTransform};
use crate::render::{render, write_images};
use crate::sampler::{
    build_query_set, farthest_point_sampling, sample_surface_sets, QueryComposition, RngStream, StreamId,
    SurfaceSamples,
};

pub use artifact::{
    asset_seed, describe, read_array, read_array_meta, sha256_bytes, sha256_file, write_array, ArrayMeta,
    ArtifactEntry, StreamRef,
};
pub use batch::{read_manifest, run_batch, AssetOutcome, BatchSummary, AssetJob};
pub use config::{PipelineConfig, StageToggles};
pub use validate::{validate_record, ValidationIssue, ValidationReport};

pub const RECORD_FILE: &str = "manifest.json";
pub const MESH_FILE: &str = "watertight.ply";
pub const QUERY_STEM: &str = "query";
pub const SURFACE_UNIFORM_STEM: &str = "surface_uniform";
pub const SURFACE_SHARP_STEM: &str = "surface_sharp";
pub const FPS_UNIFORM_STEM: &str = "fps_uniform";
pub const FPS_SHARP_STEM: &str = "fps_sharp";
pub const CAMERAS_FILE: &str = "cameras.json";
pub const RENDER_DIR: &str = "renders";
pub const CANONICAL_CAMERAS_FILE: &str = "cameras_canonical.json";
pub const CANONICAL_RENDER_DIR: &str = "renders_canonical";

const QUERY_FIELDS: [&str; 6] = ["x", "y", "z", "sdf", "provenance", "sigma"];
const SURFACE_FIELDS: [&str; 6] = ["x", "y", "z", "nx", "ny", "nz"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Normalize,
    Watertight,
    QuerySet,
    SurfaceSampling,
    Fps,
    Cameras,
    Render,
    Serialize,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Normalize => "normalize",
            Stage::Watertight => "watertight",
            Stage::QuerySet => "query_set",
            Stage::SurfaceSampling => "surface_sampling",
            Stage::Fps => "fps",
            Stage::Cameras => "cameras",
            Stage::Render => "render",
            Stage::Serialize => "serialize",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageFailure {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordCounts {
    pub query_near: usize,
    /// Uniform volume or exact surface points, per the composition.
    pub query_second: usize,
    pub composition: QueryComposition,
    pub surface_uniform: usize,
    pub surface_sharp: usize,
    pub fps_uniform: usize,
    pub fps_sharp: usize,
    pub views: usize,
    pub canonical_views: usize,
}

impl RecordCounts {
    /// What a complete run of `config` produces.
    pub fn expected(config: &PipelineConfig) -> Self {
        let s = &config.stages;
        let on = |flag: bool, n: usize| if flag { n } else { 0 };
        RecordCounts {
            query_near: on(s.query, config.n_near),
            query_second: on(s.query, config.n_uniform),
            composition: config.composition,
            surface_uniform: on(s.surface, config.n_surface_uniform),
            surface_sharp: on(s.surface, config.n_surface_sharp),
            fps_uniform: on(s.fps, config.fps_uniform),
            fps_sharp: on(s.fps, config.fps_sharp),
            views: config.views,
            canonical_views: if config.canonical_fov.is_some() { config.views } else { 0 },
        }
    }
}

/// Everything needed to trace and verify one processed asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub asset_id: String,
    pub input: String,
    pub input_sha256: String,
    pub load: LoadReport,
    pub normalization: NormalizationTransform,
    /// Absent when the watertight stage is disabled.
    pub watertight: Option<WatertightReport>,
    pub sharp_fallback: bool,
    pub global_seed: u64,
    pub seed: u64,
    pub rng: String,
    pub streams: Vec<StreamRef>,
    pub counts: RecordCounts,
    pub config: PipelineConfig,
    pub artifacts: Vec<ArtifactEntry>,
    pub timings: Vec<StageTiming>,
}

impl DatasetRecord {
    pub fn read(record_dir: &Path) -> Result<Self> {
        let path = record_dir.join(RECORD_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn artifact(&self, path: &str) -> Option<&ArtifactEntry> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

/// Processes `input` into `record_dir`, using the file name as asset id.
pub fn process_asset(input: &Path, record_dir: &Path, config: &PipelineConfig) -> Result<DatasetRecord, StageFailure> {
    let id = input
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| input.display().to_string());
    process_job(
        &AssetJob {
            id,
            input: input.to_path_buf(),
        },
        record_dir,
        config,
    )
}

struct Timer {
    timings: Vec<StageTiming>,
}

impl Timer {
    fn run<T>(&mut self, stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T, StageFailure> {
        let start = Instant::now();
        let out = f().map_err(|source| StageFailure { stage, source });
        self.timings.push(StageTiming {
            stage,
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

fn staging_path(record_dir: &Path) -> Result<PathBuf> {
    let name = record_dir
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("record directory {} has no name", record_dir.display())))?;
    let parent = record_dir.parent().unwrap_or(Path::new("."));
    Ok(parent.join(format!(".{}.staging", name.to_string_lossy())))
}

/// Processes one asset. Output is built in a staging directory that is
/// renamed onto `record_dir` only on success and removed otherwise.
pub fn process_job(job: &AssetJob, record_dir: &Path, config: &PipelineConfig) -> Result<DatasetRecord, StageFailure> {
    let mut timer = Timer { timings: Vec::new() };
    let (bytes, mesh, load) = timer.run(Stage::Load, || {
        config.validate()?;
        let bytes = fs::read(&job.input).map_err(|e| Error::io(&job.input, e))?;
        let (mesh, report) = load_mesh(&job.input, &LoadOptions::default())?;
        Ok((bytes, mesh, report))
    })?;
    let input_sha256 = sha256_bytes(&bytes);
    drop(bytes);
    let (normalized, transform) = timer.run(Stage::Normalize, || normalize_mesh(&mesh))?;
    drop(mesh);

    let staging = timer.run(Stage::Serialize, || {
        let staging = staging_path(record_dir)?;
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(staging)
    })?;

    let result = build_record(job, config, &staging, normalized, transform, load, input_sha256, &mut timer)
        .and_then(|record| {
            timer.run(Stage::Serialize, || {
                if record_dir.exists() {
                    fs::remove_dir_all(record_dir).map_err(|e| Error::io(record_dir, e))?;
                }
                fs::rename(&staging, record_dir).map_err(|e| Error::io(record_dir, e))?;
                Ok(record)
            })
        });
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

fn surface_meta(seed: u64, rows: usize, id: StreamId) -> ArrayMeta {
    ArrayMeta {
        dtype: "f32".into(),
        order: "row-major".into(),
        shape: [rows, SURFACE_FIELDS.len()],
        fields: SURFACE_FIELDS.iter().map(|s| s.to_string()).collect(),
        seed,
        rng: RngStream::ALGORITHM.into(),
        streams: vec![StreamRef::new(seed, id)],
    }
}

fn write_rig(
    staging: &Path,
    rig: &ConditionRig,
    cameras_file: &str,
    render_dir: &str,
    bvh: Option<&crate::field::Bvh>,
    timer: &mut Timer,
    files: &mut Vec<PathBuf>,
) -> Result<(), StageFailure> {
    timer.run(Stage::Cameras, || {
        let path = staging.join(cameras_file);
        fs::write(&path, serde_json::to_string_pretty(rig)?).map_err(|e| Error::io(&path, e))?;
        files.push(path);
        Ok(())
    })?;
    if let Some(bvh) = bvh {
        timer.run(Stage::Render, || {
            let dir = staging.join(render_dir);
            for (i, cam) in rig.cameras.iter().enumerate() {
                let buffers = render(bvh, cam)?;
                files.extend(write_images(&buffers, &dir, i)?.all().map(Path::to_path_buf));
            }
            Ok(())
        })?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn build_record(
    job: &AssetJob,
    config: &PipelineConfig,
    staging: &Path,
    normalized: Mesh,
    normalization: NormalizationTransform,
    load: LoadReport,
    input_sha256: String,
    timer: &mut Timer,
) -> Result<DatasetRecord, StageFailure> {
    let seed = asset_seed(config.seed, &job.id);
    let stages = config.stages;
    let mut files: Vec<PathBuf> = Vec::new();
    let mut streams = Vec::new();

    let (geometry, watertight) = if stages.watertight {
        timer.run(Stage::Watertight, || {
            let g = config.grid_resolution;
            let mesh = make_watertight(&normalized, [g; 3])?;
            let report = check_watertight(&mesh);
            if !report.is_closed {
                return Err(Error::InvalidArgument(format!(
                    "watertight output has {} boundary edges",
                    report.boundary_edge_count
                )));
            }
            let path = staging.join(MESH_FILE);
            write_mesh(&mesh, &path, MeshFormat::PlyBinary)?;
            files.push(path);
            Ok((mesh, Some(report)))
        })?
    } else {
        (normalized.clone(), None)
    };

    let needs_bvh = stages.query;
    let geometry_bvh = if needs_bvh {
        Some(timer.run(Stage::QuerySet, || build_bvh(&geometry))?)
    } else {
        None
    };

    let mut counts = RecordCounts {
        composition: config.composition,
        ..RecordCounts::default()
    };
    if let Some(bvh) = &geometry_bvh {
        timer.run(Stage::QuerySet, || {
            let q = build_query_set(&geometry, bvh, &config.query_config(), seed)?;
            let second = match config.composition {
                QueryComposition::NearUniform => StreamId::Volume,
                QueryComposition::NearSurface => StreamId::Surface,
            };
            let meta = ArrayMeta {
                dtype: "f32".into(),
                order: "row-major".into(),
                shape: [q.len(), QUERY_FIELDS.len()],
                fields: QUERY_FIELDS.iter().map(|s| s.to_string()).collect(),
                seed,
                rng: RngStream::ALGORITHM.into(),
                streams: vec![StreamRef::new(seed, StreamId::Near), StreamRef::new(seed, second)],
            };
            files.extend(write_array(staging, QUERY_STEM, &q.to_rows(), &meta)?);
            counts.query_near = q.count(crate::sampler::Provenance::NearSurface);
            counts.query_second = q.len() - counts.query_near;
            streams.extend(meta.streams);
            Ok(())
        })?;
    }
    drop(geometry_bvh);

    let mut sharp_fallback = false;
    if stages.surface {
        let (uniform, sharp) = timer.run(Stage::SurfaceSampling, || {
            let (u, s) = sample_surface_sets(
                &geometry,
                config.n_surface_uniform,
                config.n_surface_sharp,
                &config.sharp_config(),
                seed,
            )?;
            for (stem, set, id) in [
                (SURFACE_UNIFORM_STEM, &u, StreamId::Surface),
                (SURFACE_SHARP_STEM, &s, StreamId::Sharp),
            ] {
                files.extend(write_array(staging, stem, &set.to_rows(), &surface_meta(seed, set.len(), id))?);
            }
            Ok((u, s))
        })?;
        counts.surface_uniform = uniform.len();
        counts.surface_sharp = sharp.len();
        sharp_fallback = sharp.fallback;
        for id in [StreamId::Surface, StreamId::Sharp] {
            let r = StreamRef::new(seed, id);
            if !streams.contains(&r) {
                streams.push(r);
            }
        }

        if stages.fps {
            timer.run(Stage::Fps, || {
                let pick = |set: &SurfaceSamples, k: usize| -> Result<SurfaceSamples> {
                    Ok(set.select(&farthest_point_sampling(&set.positions, k, 0)?))
                };
                let fu = pick(&uniform, config.fps_uniform)?;
                let fs_ = pick(&sharp, config.fps_sharp)?;
                for (stem, set, id) in [
                    (FPS_UNIFORM_STEM, &fu, StreamId::Surface),
                    (FPS_SHARP_STEM, &fs_, StreamId::Sharp),
                ] {
                    files.extend(write_array(staging, stem, &set.to_rows(), &surface_meta(seed, set.len(), id))?);
                }
                counts.fps_uniform = fu.len();
                counts.fps_sharp = fs_.len();
                Ok(())
            })?;
        }
    }
    drop(geometry);

    let size = (config.render_size[0], config.render_size[1]);
    let render_bvh = if stages.render {
        Some(timer.run(Stage::Render, || build_bvh(&normalized))?)
    } else {
        None
    };
    let rig = build_condition_rig(config.views, seed, size, None);
    write_rig(staging, &rig, CAMERAS_FILE, RENDER_DIR, render_bvh.as_ref(), timer, &mut files)?;
    counts.views = rig.cameras.len();
    if let Some(fov) = config.canonical_fov {
        let canonical = build_condition_rig(config.views, seed, size, Some(fov));
        write_rig(
            staging,
            &canonical,
            CANONICAL_CAMERAS_FILE,
            CANONICAL_RENDER_DIR,
            render_bvh.as_ref(),
            timer,
            &mut files,
        )?;
        counts.canonical_views = canonical.cameras.len();
    }
    streams.push(StreamRef::new(seed, StreamId::Cameras));

    timer.run(Stage::Serialize, || {
        let artifacts = describe(staging, &files)?;
        let record = DatasetRecord {
            asset_id: job.id.clone(),
            input: job.input.display().to_string(),
            input_sha256,
            load,
            normalization,
            watertight,
            sharp_fallback,
            global_seed: config.seed,
            seed,
            rng: RngStream::ALGORITHM.into(),
            streams,
            counts,
            config: config.clone(),
            artifacts,
            timings: Vec::new(),
        };
        Ok(record)
    })
    .and_then(|mut record| {
        record.timings = timer.timings.clone();
        timer.run(Stage::Serialize, || {
            let path = staging.join(RECORD_FILE);
            fs::write(&path, serde_json::to_string_pretty(&record)?).map_err(|e| Error::io(&path, e))?;
            Ok(record)
        })
    })
}
