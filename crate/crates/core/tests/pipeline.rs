use std::fs;
use std::path::Path;

use forge_core::fixtures;
use forge_core::mesh::{write_mesh, Mesh, MeshFormat};
use forge_core::pipeline::*;
use forge_core::sampler::Provenance;

fn small_config() -> PipelineConfig {
    PipelineConfig {
        grid_resolution: 40,
        n_near: 2000,
        n_uniform: 1500,
        n_surface_uniform: 1200,
        n_surface_sharp: 800,
        fps_uniform: 64,
        fps_sharp: 32,
        views: 6,
        render_size: [24, 16],
        seed: 17,
        ..PipelineConfig::default()
    }
}

fn write_fixture(dir: &Path, name: &str, mesh: &Mesh) -> std::path::PathBuf {
    let path = dir.join(name);
    write_mesh(mesh, &path, MeshFormat::Obj).unwrap();
    path
}

fn hashes(record: &DatasetRecord) -> Vec<(String, String)> {
    record.artifacts.iter().map(|a| (a.path.clone(), a.sha256.clone())).collect()
}

#[test]
fn record_has_configured_counts_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path(), "sphere.obj", &fixtures::icosphere(3, 0.5));
    let out = dir.path().join("rec");
    let cfg = small_config();
    let record = process_asset(&input, &out, &cfg).unwrap();

    assert_eq!(record.counts, RecordCounts::expected(&cfg));
    assert!(record.watertight.unwrap().is_closed);
    assert_eq!(record.asset_id, "sphere.obj");
    assert_eq!(record.seed, asset_seed(17, "sphere.obj"));
    assert!(!dir.path().join(".rec.staging").exists());

    let (meta, rows) = read_array(&out, "query").unwrap();
    assert_eq!(meta.shape, [3500, 6]);
    let near = rows.chunks(6).filter(|r| r[4] == Provenance::NearSurface.code() as f32).count();
    assert_eq!(near, 2000);
    let (meta, _) = read_array(&out, "surface_sharp").unwrap();
    assert_eq!(meta.shape, [800, 6]);
    let (meta, _) = read_array(&out, "fps_uniform").unwrap();
    assert_eq!(meta.shape, [64, 6]);
    // Three PNGs and a sidecar per view.
    assert_eq!(fs::read_dir(out.join("renders")).unwrap().count(), 24);

    let report = validate_record(&out, None).unwrap();
    assert!(report.passed(), "{:?}", report.issues);
    assert!(report.watertight.unwrap().is_closed);
}

#[test]
fn rerun_is_byte_identical_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path(), "torus.obj", &fixtures::torus(0.3, 0.12, 24, 12));
    let cfg = small_config();
    let a = process_asset(&input, &dir.path().join("a"), &cfg).unwrap();
    let b = process_asset(&input, &dir.path().join("b"), &cfg).unwrap();
    assert_eq!(hashes(&a), hashes(&b));
    let c = process_asset(
        &input,
        &dir.path().join("c"),
        &PipelineConfig {
            seed: 18,
            ..small_config()
        },
    )
    .unwrap();
    let ha = hashes(&a);
    let hc = hashes(&c);
    let query = |h: &[(String, String)]| h.iter().find(|(p, _)| p == "query.f32").unwrap().1.clone();
    assert_ne!(query(&ha), query(&hc));
    // The watertight mesh does not depend on the seed.
    let mesh = |h: &[(String, String)]| h.iter().find(|(p, _)| p == "watertight.ply").unwrap().1.clone();
    assert_eq!(mesh(&ha), mesh(&hc));
}

#[test]
fn unreadable_input_leaves_no_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rec");
    let err = process_asset(&dir.path().join("missing.obj"), &out, &small_config()).unwrap_err();
    assert_eq!(err.stage, Stage::Load);
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);

    let bad = dir.path().join("bad.obj");
    fs::write(&bad, "v 0 0 0\nv 1 0 0\nf 1 2 9\n").unwrap();
    let err = process_asset(&bad, &out, &small_config()).unwrap_err();
    assert_eq!(err.stage, Stage::Load);
    assert!(!out.exists());
}

#[test]
fn tampering_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path(), "cube.obj", &fixtures::cube(0.4));
    let out = dir.path().join("rec");
    let cfg = small_config();
    process_asset(&input, &out, &cfg).unwrap();

    let bin = out.join("query.f32");
    let bytes = fs::read(&bin).unwrap();
    fs::write(&bin, &bytes[..bytes.len() - 24]).unwrap();
    fs::write(out.join("stray.txt"), "x").unwrap();
    let report = validate_record(&out, None).unwrap();
    assert!(report
        .issues
        .iter()
        .any(|i| matches!(i, ValidationIssue::HashMismatch { path, .. } if path == "query.f32")));
    assert!(report
        .issues
        .iter()
        .any(|i| matches!(i, ValidationIssue::Unlisted { path } if path == "stray.txt")));

    // A record checked against a newer config reports expected and actual.
    let newer = PipelineConfig {
        n_near: 2500,
        ..small_config()
    };
    let report = validate_record(&out, Some(&newer)).unwrap();
    assert!(report.issues.contains(&ValidationIssue::CountMismatch {
        what: "query_near".into(),
        expected: 2500,
        actual: 2000,
    }));

    fs::remove_file(out.join("cameras.json")).unwrap();
    let report = validate_record(&out, None).unwrap();
    assert!(report
        .issues
        .iter()
        .any(|i| matches!(i, ValidationIssue::Missing { path } if path == "cameras.json")));
}

#[test]
fn stage_toggles_and_composition() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path(), "cube.obj", &fixtures::cube(0.4));
    let cfg = PipelineConfig {
        stages: StageToggles {
            render: false,
            fps: false,
            ..StageToggles::default()
        },
        composition: forge_core::sampler::QueryComposition::NearSurface,
        canonical_fov: Some(40.0),
        ..small_config()
    };
    let out = dir.path().join("rec");
    let record = process_asset(&input, &out, &cfg).unwrap();
    assert!(!out.join("renders").exists());
    assert!(!out.join("fps_uniform.f32").exists());
    assert_eq!(record.counts.canonical_views, 6);
    let (_, rows) = read_array(&out, "query").unwrap();
    let surface: Vec<&[f32]> = rows.chunks(6).filter(|r| r[4] == Provenance::Surface.code() as f32).collect();
    assert_eq!(surface.len(), 1500);
    assert!(surface.iter().all(|r| r[3].abs() < 1e-6));
    let report = validate_record(&out, None).unwrap();
    assert!(report.passed(), "{:?}", report.issues);

    let rig: forge_core::camera::ConditionRig =
        serde_json::from_str(&fs::read_to_string(out.join("cameras_canonical.json")).unwrap()).unwrap();
    assert!(rig.cameras.iter().all(|c| c.fov_deg == 40.0));
}

#[test]
fn batch_reports_failures_and_ignores_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let assets = dir.path().join("assets");
    fs::create_dir(&assets).unwrap();
    write_fixture(&assets, "a.obj", &fixtures::icosphere(2, 0.4));
    write_fixture(&assets, "b.obj", &fixtures::open_box(0.4));
    fs::write(assets.join("broken.obj"), "this is not a mesh\nf 1 2 3\n").unwrap();
    let manifest = dir.path().join("list.txt");
    fs::write(&manifest, "assets/a.obj\nassets/broken.obj\nassets/b.obj\n").unwrap();

    let cfg = small_config();
    let one = run_batch(&manifest, &dir.path().join("w1"), &cfg, 1).unwrap();
    let three = run_batch(&manifest, &dir.path().join("w3"), &cfg, 3).unwrap();
    for s in [&one, &three] {
        assert_eq!((s.ok, s.failed), (2, 1));
        assert_eq!(s.assets[1].failed_stage, Some(Stage::Load));
        assert_eq!(s.assets.iter().map(|a| a.id.as_str()).collect::<Vec<_>>(), ["assets/a.obj", "assets/broken.obj", "assets/b.obj"]);
    }
    assert!(!dir.path().join("w1/assets_broken_obj").exists());
    for name in ["assets_a_obj", "assets_b_obj"] {
        let r1 = DatasetRecord::read(&dir.path().join("w1").join(name)).unwrap();
        let r3 = DatasetRecord::read(&dir.path().join("w3").join(name)).unwrap();
        assert_eq!(hashes(&r1), hashes(&r3));
        assert!(r1.watertight.unwrap().is_closed);
    }

    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "\n").unwrap();
    assert!(run_batch(&empty, &dir.path().join("w0"), &cfg, 1).is_err());
}

#[test]
fn reordering_manifest_keeps_asset_data() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), "a.obj", &fixtures::cube(0.4));
    write_fixture(dir.path(), "b.obj", &fixtures::wedge());
    let m1 = dir.path().join("m1.txt");
    let m2 = dir.path().join("m2.txt");
    fs::write(&m1, "a.obj\nb.obj\n").unwrap();
    fs::write(&m2, "b.obj\na.obj\n").unwrap();
    let cfg = PipelineConfig {
        stages: StageToggles {
            render: false,
            ..StageToggles::default()
        },
        ..small_config()
    };
    run_batch(&m1, &dir.path().join("o1"), &cfg, 1).unwrap();
    run_batch(&m2, &dir.path().join("o2"), &cfg, 2).unwrap();
    for name in ["a_obj", "b_obj"] {
        let r1 = DatasetRecord::read(&dir.path().join("o1").join(name)).unwrap();
        let r2 = DatasetRecord::read(&dir.path().join("o2").join(name)).unwrap();
        assert_eq!(hashes(&r1), hashes(&r2));
    }
}
