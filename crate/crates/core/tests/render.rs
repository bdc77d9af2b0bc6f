use forge_core::camera::{build_condition_rig, CameraSpec};
use forge_core::field::{build_bvh, signed_distance};
use forge_core::fixtures;
use forge_core::render::*;

#[test]
fn rig_hits_lie_on_the_surface() {
    let mesh = fixtures::icosphere(4, 0.45);
    let bvh = build_bvh(&mesh).unwrap();
    let rig = build_condition_rig(12, 3, (48, 48), None);
    for cam in &rig.cameras {
        let buf = render(&bvh, cam).unwrap();
        assert!(buf.coverage() > 0.0);
        for i in 0..buf.mask.len() {
            match hit_point(&buf, i) {
                Some(p) => {
                    assert!(signed_distance(&bvh, &p).abs() < 1e-9);
                    // The hit faces the camera.
                    assert!(buf.normal[i].dot(&(cam.position - p)) > 0.0);
                }
                None => assert!(!buf.mask[i] && buf.depth[i].is_infinite()),
            }
        }
    }
}

#[test]
fn framing_keeps_the_bound_sphere_in_view() {
    // A sphere of the bounding radius exactly fills the view; the unit cube
    // inside it is never clipped at the image border.
    let bvh = build_bvh(&fixtures::cube(0.5)).unwrap();
    for cam in build_condition_rig(20, 11, (64, 64), None).cameras {
        let buf = render(&bvh, &cam).unwrap();
        let (w, h) = (buf.width as usize, buf.height as usize);
        let border = (0..w).flat_map(|x| [x, (h - 1) * w + x]).chain((0..h).flat_map(|y| [y * w, y * w + w - 1]));
        for i in border {
            assert!(!buf.mask[i], "cube touches the border at fov {}", cam.fov_deg);
        }
    }
}

#[test]
fn render_is_deterministic_and_png_decodes() {
    let bvh = build_bvh(&fixtures::torus(0.3, 0.1, 32, 16)).unwrap();
    let cam = CameraSpec::spherical(30.0, 45.0, 2.5, 40.0, (40, 30));
    let a = render(&bvh, &cam).unwrap();
    let b = render(&bvh, &cam).unwrap();
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let files = write_images(&a, dir.path(), 7).unwrap();
    let mask = image::open(&files.mask).unwrap().to_luma8();
    assert_eq!(mask.dimensions(), (40, 30));
    let depth = image::open(&files.depth).unwrap().to_luma16();
    let meta: ViewMeta = serde_json::from_str(&std::fs::read_to_string(&files.meta).unwrap()).unwrap();
    assert_eq!(meta.view, 7);
    let step = (meta.far - meta.near) / 65534.0;
    for (i, (m, d)) in mask.pixels().zip(depth.pixels()).enumerate() {
        assert_eq!(m.0[0] == 255, a.mask[i]);
        assert_eq!(d.0[0] == 0, !a.mask[i]);
        if a.mask[i] {
            assert!((decode_depth(d.0[0], meta.near, meta.far) - a.depth[i]).abs() <= 0.5 * step + 1e-12);
        }
    }
}
