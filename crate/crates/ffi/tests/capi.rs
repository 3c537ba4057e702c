use std::ffi::{c_char, CStr, CString};
use std::ptr;

use svlb::benchgen::{gen_scene, render, SceneConfig};
use svlb::cli::checkpoint;
use svlb::posenc::{apply_rope2d, RotationPlan};
use svlb::{ParamSet, Tensor};
use svlb_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let mut needed = 0;
    unsafe {
        assert_eq!(svlb_last_error(buf.as_mut_ptr(), buf.len(), &mut needed), SvlbStatus::Ok);
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(svlb_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn rope2d_matches_library() {
    let (hp, wp, dh) = (3, 2, 8);
    let x: Vec<f64> = (0..hp * wp * dh).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut out = vec![0.0; x.len()];
    let st = unsafe { svlb_rope2d_apply(x.as_ptr(), out.as_mut_ptr(), hp, wp, dh, 10_000.0) };
    assert_eq!(st, SvlbStatus::Ok);
    let plan = RotationPlan::rope2d(dh, 10_000.0).unwrap();
    let want = apply_rope2d(&Tensor::new(&[hp * wp, dh], x.clone()).unwrap(), (hp, wp), &plan).unwrap();
    assert_eq!(out, want.data());
}

#[test]
fn rope2d_rejects_bad_arguments() {
    let x = [0.0; 12];
    let mut out = vec![0.0; 12];
    let st = unsafe { svlb_rope2d_apply(x.as_ptr(), out.as_mut_ptr(), 2, 1, 6, 10_000.0) };
    assert_eq!(st, SvlbStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    let st = unsafe { svlb_rope2d_apply(ptr::null(), out.as_mut_ptr(), 2, 1, 6, 10_000.0) };
    assert_eq!(st, SvlbStatus::NullPointer);
    assert!(last_error().contains("null"));
}

#[test]
fn checkpoint_inspection() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut p = ParamSet::new();
    p.insert("w", Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), true)
        .unwrap();
    p.insert("b", Tensor::new(&[3], vec![0.5, -0.5, 0.25]).unwrap(), true).unwrap();
    checkpoint::save(&path, &p, &[0; 32]).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut h: *mut SvlbCheckpoint = ptr::null_mut();
    unsafe {
        assert_eq!(svlb_checkpoint_open(cpath.as_ptr(), &mut h), SvlbStatus::Ok);
        assert_eq!(svlb_checkpoint_len(h), 2);

        let mut needed = 0;
        let st = svlb_checkpoint_name(h, 1, ptr::null_mut(), 0, &mut needed);
        assert_eq!(st, SvlbStatus::BufferTooSmall);
        assert_eq!(needed, 2);
        let mut buf = vec![0 as c_char; needed];
        assert_eq!(svlb_checkpoint_name(h, 1, buf.as_mut_ptr(), buf.len(), ptr::null_mut()), SvlbStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "w");
        assert_eq!(svlb_checkpoint_name(h, 2, buf.as_mut_ptr(), buf.len(), ptr::null_mut()), SvlbStatus::InvalidArgument);

        let name = CString::new("w").unwrap();
        let mut dims = [0usize; 4];
        let mut ndim = 0;
        assert_eq!(svlb_checkpoint_shape(h, name.as_ptr(), dims.as_mut_ptr(), 4, &mut ndim), SvlbStatus::Ok);
        assert_eq!(&dims[..ndim], &[2, 3]);
        let mut vals = [0.0; 6];
        assert_eq!(svlb_checkpoint_read(h, name.as_ptr(), vals.as_mut_ptr(), 6), SvlbStatus::Ok);
        assert_eq!(vals, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(svlb_checkpoint_read(h, name.as_ptr(), vals.as_mut_ptr(), 5), SvlbStatus::BufferTooSmall);
        let missing = CString::new("nope").unwrap();
        assert_ne!(svlb_checkpoint_read(h, missing.as_ptr(), vals.as_mut_ptr(), 6), SvlbStatus::Ok);
        svlb_checkpoint_free(h);

        let gone = CString::new(dir.path().join("gone.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(svlb_checkpoint_open(gone.as_ptr(), &mut h), SvlbStatus::MissingArtifact);
        assert!(h.is_null());
        svlb_checkpoint_free(ptr::null_mut());
    }
}

#[test]
fn scenes_render_and_answer() {
    let mut h: *mut SvlbScene = ptr::null_mut();
    unsafe {
        assert_eq!(svlb_scene_generate(11, 64, 4, 4, 5, &mut h), SvlbStatus::Ok);
        let scene = gen_scene(11, &SceneConfig { canvas: (64, 64), rows: 4, cols: 4, max_objects: 5 }).unwrap();
        assert_eq!(svlb_scene_object_count(h), scene.objects.len());

        let mut px = vec![0u8; 64 * 64 * 3];
        assert_eq!(svlb_scene_render(h, px.as_mut_ptr(), px.len()), SvlbStatus::Ok);
        assert_eq!(px, render(&scene).data);
        assert_eq!(svlb_scene_render(h, px.as_mut_ptr(), 10), SvlbStatus::BufferTooSmall);

        let n_circles = scene.objects.iter().filter(|o| o.shape.name() == "circle").count();
        let q = CString::new("how many circles are there ?").unwrap();
        let mut buf = vec![0 as c_char; 8];
        assert_eq!(svlb_scene_answer(h, q.as_ptr(), buf.as_mut_ptr(), 8, ptr::null_mut()), SvlbStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), n_circles.to_string());

        let bad = CString::new("what colour is it ?").unwrap();
        assert_eq!(svlb_scene_answer(h, bad.as_ptr(), buf.as_mut_ptr(), 8, ptr::null_mut()), SvlbStatus::Malformed);
        svlb_scene_free(h);

        assert_eq!(svlb_scene_generate(1, 64, 4, 4, 0, &mut h), SvlbStatus::InvalidArgument);
        assert!(h.is_null());
    }
}

#[test]
fn run_command_reports_exit_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[data]\nn_train = 4\nn_eval = 4\n").unwrap();
    let c = CString::new(cfg.to_str().unwrap()).unwrap();
    let cmd = |s: &str| CString::new(s).unwrap();
    unsafe {
        assert_eq!(svlb_run_command(cmd("gen-data").as_ptr(), c.as_ptr(), ptr::null(), false), SvlbStatus::Ok);
        assert!(dir.path().join("data/manifest.json").exists());
        assert_eq!(svlb_run_command(cmd("align").as_ptr(), c.as_ptr(), ptr::null(), false), SvlbStatus::MissingArtifact);
        assert_eq!(svlb_run_command(cmd("grid-report").as_ptr(), c.as_ptr(), ptr::null(), false), SvlbStatus::EmptyResult);
        assert_eq!(svlb_run_command(cmd("train").as_ptr(), c.as_ptr(), ptr::null(), false), SvlbStatus::InvalidArgument);
        assert_eq!(svlb_run_command(ptr::null(), c.as_ptr(), ptr::null(), false), SvlbStatus::NullPointer);
    }
}

#[test]
fn header_is_current_and_compiles() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/svlb.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["svlb_rope2d_apply", "svlb_checkpoint_open", "svlb_scene_answer", "SVLB_STATUS_MISSING_ARTIFACT"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"svlb.h\"\nint main(void) { SvlbScene *s = 0; return (int)svlb_scene_object_count(s); }\n",
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header does not compile as C99"),
        Err(e) => panic!("no C compiler to check the header: {e}"),
    }
}
