use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use neused::cli::{cmd_edit, EditArgs};
use neused::diffusion::remote::requests_sent;
use neused::geometry::{import_mesh, MeshFormat};

fn neused(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neused"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    root: PathBuf,
}

impl Workspace {
    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn config(&self) -> PathBuf {
        self.path("ws/config.toml")
    }

    fn source(&self) -> PathBuf {
        self.path("stage1/source.ckpt")
    }

    /// Stage-2 output with no optimisation steps.
    fn zero_edit(&self) -> PathBuf {
        self.path("edit0/edited.ckpt")
    }
}

/// A small synthetic sphere, fitted once and edited with zero steps.
fn workspace() -> &'static Workspace {
    static WS: OnceLock<Workspace> = OnceLock::new();
    WS.get_or_init(|| {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli_workspace");
        let _ = std::fs::remove_dir_all(&root);
        std::fs::create_dir_all(&root).unwrap();
        let ws = Workspace { root };
        ok(neused(&["synth", "--out", s(&ws.path("ws")), "--views", "8", "--res", "24"]));
        ok(neused(&[
            "reconstruct", "--config", s(&ws.config()), "--out", s(&ws.path("stage1")), "--iterations", "150",
        ]));
        ok(neused(&[
            "edit", "--config", s(&ws.config()), "--checkpoint", s(&ws.source()), "--out", s(&ws.path("edit0")),
            "--iterations", "0",
        ]));
        ws
    })
}

fn fresh_dir(name: &str) -> PathBuf {
    let d = workspace().path(name);
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn reconstruct_writes_checkpoint_and_manifest() {
    let ws = workspace();
    assert!(ws.source().is_file());
    assert!(ws.path("stage1/contact_sheet.png").is_file());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ws.path("stage1/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["stage"], "source");
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ws.path("stage1/stage1.json")).unwrap()).unwrap();
    assert_eq!(summary["iterations"], 150);
}

#[test]
fn missing_dataset_exits_with_2() {
    let ws = workspace();
    let dir = fresh_dir("nodata");
    ok(neused(&["synth", "--out", s(&dir), "--views", "2", "--res", "8"]));
    std::fs::remove_dir_all(dir.join("data")).unwrap();
    let out = neused(&["reconstruct", "--config", s(&dir.join("config.toml")), "--out", s(&ws.path("x"))]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[2]"));
}

#[test]
fn bad_arguments_exit_with_2() {
    let ws = workspace();
    let missing_cfg = neused(&["reconstruct", "--config", s(&ws.path("nope.toml")), "--out", s(&ws.path("x"))]);
    assert_eq!(code(&missing_cfg), 2);

    let res7 = neused(&["mesh", "--checkpoint", s(&ws.source()), "--out", s(&ws.path("m.obj")), "--res", "7"]);
    assert_eq!(code(&res7), 2);
    assert!(String::from_utf8_lossy(&res7.stderr).contains("8"));

    let denoiser = neused(&[
        "edit", "--config", s(&ws.config()), "--checkpoint", s(&ws.source()), "--out", s(&ws.path("x")),
        "--denoiser", "oracle",
    ]);
    assert_eq!(code(&denoiser), 2);
}

#[test]
fn absent_checkpoint_exits_with_4() {
    let ws = workspace();
    let out = neused(&[
        "edit", "--config", s(&ws.config()), "--checkpoint", s(&ws.path("missing.ckpt")), "--out", s(&ws.path("x")),
    ]);
    assert_eq!(code(&out), 4);
    let render = neused(&["render", "--checkpoint", s(&ws.path("missing.ckpt")), "--out", s(&ws.path("x"))]);
    assert_eq!(code(&render), 4);
}

#[test]
fn invalid_or_wrong_stage_checkpoint_exits_with_5() {
    let ws = workspace();
    let junk = ws.path("junk.ckpt");
    std::fs::write(&junk, b"definitely not a checkpoint").unwrap();
    let out = neused(&["render", "--checkpoint", s(&junk), "--out", s(&ws.path("x"))]);
    assert_eq!(code(&out), 5);
    let edit_twice = neused(&[
        "edit", "--config", s(&ws.config()), "--checkpoint", s(&ws.zero_edit()), "--out", s(&ws.path("x")),
    ]);
    assert_eq!(code(&edit_twice), 5);
}

#[test]
fn unreachable_remote_exits_with_3() {
    let ws = workspace();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out = neused(&[
        "edit", "--config", s(&ws.config()), "--checkpoint", s(&ws.source()), "--out", s(&fresh_dir("remote")),
        "--denoiser", &format!("remote:http://127.0.0.1:{port}"), "--iterations", "2",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn analytic_edit_runs_offline_and_loss_trends_down() {
    let ws = workspace();
    let out = fresh_dir("edit_g1");
    // L_PDS scales strongly with t, so pin t = 500 to make steps comparable.
    let text = std::fs::read_to_string(ws.config()).unwrap();
    let pinned = text.replace("t_min_frac = 0.05", "t_min_frac = 0.5").replace("t_max_frac = 0.95", "t_max_frac = 0.5005");
    assert_ne!(pinned, text);
    let config = ws.path("ws/pinned_t.toml");
    std::fs::write(&config, pinned).unwrap();
    cmd_edit(&EditArgs {
        config,
        checkpoint: ws.source(),
        out: out.clone(),
        prompt: None,
        source_prompt: None,
        guidance: Some(1.0),
        denoiser: Some("analytic".into()),
        iterations: Some(60),
        mode: None,
        seed: Some(3),
    })
    .unwrap();
    assert_eq!(requests_sent(), 0);
    assert!(out.join("edited.ckpt").is_file());
    let losses: Vec<f64> = std::fs::read_to_string(out.join("edit_log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["L_PDS"].as_f64().unwrap())
        .collect();
    assert_eq!(losses.len(), 60);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (first, last) = (mean(&losses[..20]), mean(&losses[40..]));
    assert!(last < first, "L_PDS first third {first} vs last third {last}");
}

#[test]
fn render_writes_every_layer_deterministically() {
    let ws = workspace();
    let a = fresh_dir("render_a");
    let b = fresh_dir("render_b");
    for d in [&a, &b] {
        ok(neused(&[
            "render", "--checkpoint", s(&ws.zero_edit()), "--config", s(&ws.config()), "--frames", "1", "--out", s(d),
        ]));
    }
    let mut files: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    let pngs: Vec<_> = files.iter().filter(|f| f.to_string_lossy().ends_with(".png")).collect();
    assert_eq!(pngs.len(), 6, "{files:?}");
    for f in pngs {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f:?}");
    }
}

#[test]
fn fitted_sphere_mesh_is_a_sphere() {
    let ws = workspace();
    let obj = ws.path("fitted.obj");
    ok(neused(&["mesh", "--checkpoint", s(&ws.source()), "--which", "source", "--res", "32", "--out", s(&obj)]));
    let mesh = import_mesh(&obj, MeshFormat::Obj).unwrap();
    assert_eq!(mesh.euler_characteristic(), 2);
}

#[test]
fn zero_edit_meshes_match() {
    let ws = workspace();
    let (src, tgt) = (ws.path("zero_src.ply"), ws.path("zero_tgt.ply"));
    for (which, p) in [("source", &src), ("target", &tgt)] {
        ok(neused(&["mesh", "--checkpoint", s(&ws.zero_edit()), "--which", which, "--res", "24", "--out", s(p)]));
    }
    let (a, b) = (import_mesh(&src, MeshFormat::Ply).unwrap(), import_mesh(&tgt, MeshFormat::Ply).unwrap());
    assert_eq!(a.vertices.len(), b.vertices.len());
    assert!(!a.vertices.is_empty());
    for (u, v) in a.vertices.iter().zip(&b.vertices) {
        assert!((0..3).all(|i| (u[i] - v[i]).abs() <= 1e-6), "{u:?} vs {v:?}");
    }
}

#[test]
fn eval_report_matches_schema_and_is_stable() {
    let ws = workspace();
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/metrics_report.schema.json");
    let schema: serde_json::Value = serde_json::from_slice(&std::fs::read(schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let run = |ckpt: &Path| -> serde_json::Value {
        let out = ok(neused(&["eval", "--checkpoint", s(ckpt), "--config", s(&ws.config()), "--frames", "3"]));
        serde_json::from_slice(&out.stdout).unwrap()
    };

    let zero = run(&ws.zero_edit());
    assert!(validator.is_valid(&zero), "{zero}");
    assert_eq!(zero["psnr_vs_source"], "inf");

    let edited = ws.path("edit_g1_eval");
    if !edited.join("edited.ckpt").is_file() {
        ok(neused(&[
            "edit", "--config", s(&ws.config()), "--checkpoint", s(&ws.source()), "--out", s(&edited),
            "--iterations", "5", "--guidance", "100",
        ]));
    }
    let first = run(&edited.join("edited.ckpt"));
    let second = run(&edited.join("edited.ckpt"));
    assert!(validator.is_valid(&first), "{first}");
    assert!(first["psnr_vs_source"].is_number(), "{first}");
    for key in ["psnr_vs_source", "frame_consistency", "mask_coverage"] {
        let (a, b) = (first[key].as_f64().unwrap(), second[key].as_f64().unwrap());
        assert!((a - b).abs() <= 1e-9, "{key}: {a} vs {b}");
    }

    let mut broken = zero.clone();
    broken["mask_coverage"] = serde_json::json!("high");
    assert!(!validator.is_valid(&broken));
}
