use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use neused::cli::{CameraRecord, CheckpointMeta};
use neused::fields::checkpoint::save_checkpoint;
use neused::fields::{FieldBundle, ModelConfig};
use neused::render::{render_image, Camera, Intrinsics, RenderSettings};
use neused_ffi::*;

fn camera() -> Camera {
    Camera::look_at(Intrinsics::from_fov(12, 10, 0.7), [0.5, -2.8, 1.0], [0.0; 3], [0.0, 0.0, 1.0])
}

fn write_fixture(path: &Path) -> FieldBundle {
    let bundle = FieldBundle::new(ModelConfig::tiny(), 21);
    let meta = CheckpointMeta {
        seed: 21,
        config_sha256: String::new(),
        cameras: vec![CameraRecord::from_camera(&camera())],
    };
    save_checkpoint(path, &bundle, "source", serde_json::to_value(meta).unwrap()).unwrap();
    bundle
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(neused_last_error()) }.to_string_lossy().into_owned()
}

fn load(path: &Path) -> *mut NeusedBundle {
    let mut h = ptr::null_mut();
    let status = unsafe { neused_bundle_load(cstr(path).as_ptr(), &mut h) };
    assert_eq!(status, NeusedStatus::Ok, "{}", last_error());
    h
}

#[test]
fn load_query_and_free() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.ckpt");
    let bundle = write_fixture(&p);
    let h = load(&p);
    unsafe {
        assert_eq!(CStr::from_ptr(neused_bundle_stage(h)).to_str().unwrap(), "source");
        assert_eq!(neused_bundle_camera_count(h), 1);
        let mut counts = [0usize; 3];
        assert_eq!(neused_bundle_param_counts(h, counts.as_mut_ptr()), NeusedStatus::Ok);
        let (bg, src, tgt) = bundle.param_counts();
        assert_eq!(counts, [bg, src, tgt]);
        assert!(neused_sharpness(h, NeusedField::Source) > 0.0);
        neused_bundle_free(h);
    }
    assert!(!unsafe { CStr::from_ptr(neused_version()) }.to_bytes().is_empty());
}

#[test]
fn sdf_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.ckpt");
    write_fixture(&p);
    // The checkpoint stores f32; compare with the reloaded bundle.
    let (reloaded, _) = neused::fields::checkpoint::load_checkpoint(&p).unwrap();
    let h = load(&p);
    let pts = [0.0, 0.0, 0.0, 0.3, -0.2, 0.1, 0.9, 0.0, 0.0];
    let mut out = [0.0; 3];
    for field in [NeusedField::Source, NeusedField::Target] {
        let status = unsafe { neused_sdf(h, field, pts.as_ptr(), 3, out.as_mut_ptr()) };
        assert_eq!(status, NeusedStatus::Ok);
        for (k, o) in out.iter().enumerate() {
            let x = [pts[3 * k], pts[3 * k + 1], pts[3 * k + 2]];
            let expected = match field {
                NeusedField::Source => reloaded.sdf_source(&x).0,
                NeusedField::Target => reloaded.sdf_target(&x).0,
            };
            assert_eq!(o.to_bits(), expected.to_bits());
        }
    }
    unsafe { neused_bundle_free(h) };
}

#[test]
fn render_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.ckpt");
    write_fixture(&p);
    let (reloaded, _) = neused::fields::checkpoint::load_checkpoint(&p).unwrap();
    let h = load(&p);
    let cam = camera();
    let k = cam.intrinsics;
    let pose: Vec<f64> = (0..16).map(|i| cam.pose()[(i / 4, i % 4)]).collect();
    let ik = NeusedIntrinsics {
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        width: k.width as u32,
        height: k.height as u32,
    };
    let mut out = vec![0.0; 3 * k.width * k.height];
    unsafe {
        assert_eq!(neused_bundle_set_samples(h, 16, 8), NeusedStatus::Ok);
        assert_eq!(neused_render(h, NeusedField::Target, ik, pose.as_ptr(), out.as_mut_ptr()), NeusedStatus::Ok);
        neused_bundle_free(h);
    }
    let settings = RenderSettings {
        fg_samples: 16,
        bg_samples: 8,
        ..Default::default()
    };
    let img = render_image(&reloaded.target_view(), &reloaded.background, &cam, &settings, false);
    let expected: Vec<f64> = img.pixels.iter().flat_map(|p| p.rgb).collect();
    assert_eq!(out, expected);
}

#[test]
fn mesh_export_writes_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.ckpt");
    write_fixture(&p);
    let h = load(&p);
    let obj = dir.path().join("m.obj");
    unsafe {
        assert_eq!(neused_mesh_export(h, NeusedField::Target, 16, cstr(&obj).as_ptr()), NeusedStatus::Ok);
        assert_eq!(
            neused_mesh_export(h, NeusedField::Target, 7, cstr(&obj).as_ptr()),
            NeusedStatus::InvalidArgument
        );
        assert!(last_error().contains("at least 8"));
        let bad = dir.path().join("m.stl");
        assert_eq!(
            neused_mesh_export(h, NeusedField::Source, 16, cstr(&bad).as_ptr()),
            NeusedStatus::InvalidArgument
        );
        neused_bundle_free(h);
    }
    assert!(std::fs::read_to_string(&obj).unwrap().lines().any(|l| l.starts_with("f ")));
}

#[test]
fn error_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        let missing = cstr(&dir.path().join("nope.ckpt"));
        assert_eq!(neused_bundle_load(missing.as_ptr(), &mut h), NeusedStatus::NotFound);
        assert!(h.is_null());
        assert!(last_error().contains("nope.ckpt"));

        let junk = dir.path().join("junk.ckpt");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        assert_eq!(neused_bundle_load(cstr(&junk).as_ptr(), &mut h), NeusedStatus::InvalidCheckpoint);

        assert_eq!(neused_bundle_load(ptr::null(), &mut h), NeusedStatus::NullPointer);
        assert_eq!(neused_bundle_load(missing.as_ptr(), ptr::null_mut()), NeusedStatus::NullPointer);
        let mut counts = [0usize; 3];
        assert_eq!(neused_bundle_param_counts(ptr::null(), counts.as_mut_ptr()), NeusedStatus::NullPointer);
        assert!(neused_bundle_stage(ptr::null()).is_null());
        assert!(neused_sharpness(ptr::null(), NeusedField::Source).is_nan());
        neused_bundle_free(ptr::null_mut());

        let p = dir.path().join("s.ckpt");
        write_fixture(&p);
        let h = load(&p);
        assert_eq!(last_error(), "");
        assert_eq!(neused_bundle_set_samples(h, 0, 8), NeusedStatus::InvalidArgument);
        let eye = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 1.0];
        let mirrored = [-1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 1.0];
        let k = NeusedIntrinsics {
            fx: 4.0,
            fy: 4.0,
            cx: 2.0,
            cy: 2.0,
            width: 4,
            height: 4,
        };
        let mut out = [0.0; 48];
        assert_eq!(neused_render(h, NeusedField::Source, k, eye.as_ptr(), out.as_mut_ptr()), NeusedStatus::Ok);
        assert_eq!(
            neused_render(h, NeusedField::Source, k, mirrored.as_ptr(), out.as_mut_ptr()),
            NeusedStatus::InvalidArgument
        );
        neused_bundle_free(h);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/neused.h")).unwrap();
    for name in [
        "neused_last_error",
        "neused_version",
        "neused_bundle_load",
        "neused_bundle_free",
        "neused_bundle_stage",
        "neused_bundle_camera_count",
        "neused_bundle_param_counts",
        "neused_bundle_set_samples",
        "neused_sdf",
        "neused_render",
        "neused_mesh_export",
        "neused_sharpness",
        "NEUSED_STATUS_INVALID_CHECKPOINT",
        "typedef struct NeusedBundle NeusedBundle",
    ] {
        assert!(header.contains(name), "{name} missing from neused.h");
    }
}

/// The header compiles as C when a compiler is available.
#[test]
fn header_compiles_as_c() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(
        &src,
        "#include \"neused.h\"\nint main(void) { NeusedBundle *b = 0; return neused_bundle_load(\"x\", &b) == NEUSED_STATUS_OK; }\n",
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header does not compile"),
        Err(e) => eprintln!("skipping: no C compiler ({e})"),
    }
}
