use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sphere_seg::config::{Scene, SceneConfig};
use sphere_seg::masks::{box_mask_file, write_boxes, write_mask_pgm, BoxSet, Mask, ScoredBox};
use sphere_seg::oracle::{oracle_mask, OracleRule};
use sphere_seg::pipeline::{self, MaskSource};
use sphere_seg::synthetic;
use sphere_seg::{read_mapping, save_labeled_cloud, CloudFormat};

const W: u32 = 128;
const H: u32 = 64;

fn sphere_seg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sphere-seg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Occlusion scene written to `dir` with a small-image config.
fn fixture(dir: &Path) -> (PathBuf, SceneConfig) {
    let scene = synthetic::occlusion_scene(12, 10.0, 20.0);
    save_labeled_cloud(&scene.cloud, &dir.join("scene.ply"), CloudFormat::PlyAscii).unwrap();
    let mut cfg = SceneConfig::new(
        "scene.ply",
        scene.scenes.iter().map(Scene::from).collect(),
        scene.building_label,
    );
    cfg.image.width = W;
    cfg.image.height = H;
    let path = dir.join("config.json");
    cfg.save(&path).unwrap();
    (path.clone(), SceneConfig::load(&path).unwrap())
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn project_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, cfg) = fixture(dir.path());
    let out = sphere_seg(&["project", "--config", s(&cfg_path), "--out", s(&dir.path().join("cli"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let cloud = pipeline::load_cloud(&cfg).unwrap();
    pipeline::cmd_project(&cfg, &cloud, &dir.path().join("lib")).unwrap();
    for scene in &cfg.scenes {
        for f in [pipeline::image_path, pipeline::mapping_path] {
            assert_eq!(read(f(&dir.path().join("cli"), &scene.name)), read(f(&dir.path().join("lib"), &scene.name)));
        }
    }
}

#[test]
fn pipeline_matches_library_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, cfg) = fixture(dir.path());
    let args = |o: &str| {
        vec![
            "pipeline".to_string(),
            "--config".into(),
            s(&cfg_path).into(),
            "--out".into(),
            s(&dir.path().join(o)).into(),
            "--depth-mode".into(),
            "all".into(),
        ]
    };
    let run = |o: &str| {
        let a = args(o);
        sphere_seg(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let first = run("a");
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = run("b");
    assert_eq!(first.stdout, second.stdout);

    let mut lib_cfg = cfg.clone();
    lib_cfg.depth_mode = sphere_seg::config::DepthModeKind::All;
    let lib = pipeline::cmd_pipeline(
        &lib_cfg,
        &dir.path().join("lib"),
        MaskSource::Oracle {
            rule: OracleRule::Nearest,
            dilate_px: 0,
        },
    )
    .unwrap();
    assert_eq!(String::from_utf8(first.stdout).unwrap(), lib.table);
    for f in [pipeline::PREDICTION_FILE, pipeline::REPORT_FILE, pipeline::HIGHLIGHTED_FILE] {
        assert_eq!(read(dir.path().join("a").join(f)), read(dir.path().join("b").join(f)), "{f}");
        assert_eq!(read(dir.path().join("a").join(f)), read(dir.path().join("lib").join(f)), "{f}");
    }
    assert!(lib.report.total.confusion.fp > 0);
}

#[test]
fn staged_commands_match_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, _) = fixture(dir.path());
    let staged = dir.path().join("staged");
    let common = ["--config", s(&cfg_path), "--out", s(&staged)];
    for cmd in ["project", "segment-oracle", "backproject", "evaluate"] {
        let mut args = vec![cmd];
        args.extend(common);
        let out = sphere_seg(&args);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let whole = dir.path().join("whole");
    let out = sphere_seg(&["pipeline", "--config", s(&cfg_path), "--out", s(&whole)]);
    assert!(out.status.success());
    for f in [pipeline::PREDICTION_FILE, pipeline::REPORT_FILE] {
        assert_eq!(read(staged.join(f)), read(whole.join(f)), "{f}");
    }

    let summary = sphere_seg(&["summarize", s(&staged.join("report.json")), s(&whole.join("report.json"))]);
    assert!(summary.status.success());
    let text = String::from_utf8(summary.stdout).unwrap();
    assert!(text.contains("Total"), "{text}");
}

#[test]
fn config_without_scenes_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, mut cfg) = fixture(dir.path());
    cfg.scenes.clear();
    cfg.cloud_path = "scene.ply".into();
    cfg.save(&cfg_path).unwrap();
    let out = sphere_seg(&["project", "--config", s(&cfg_path), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn bad_arguments_exit_with_one() {
    assert_eq!(sphere_seg(&["project"]).status.code(), Some(1));
    assert_eq!(sphere_seg(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(sphere_seg(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, _) = fixture(dir.path());
    let out = sphere_seg(&["project", "--config", s(&cfg_path), "--epsilon-rel", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_external_masks_fail_in_segment_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, _) = fixture(dir.path());
    let empty = dir.path().join("nomasks");
    fs::create_dir_all(&empty).unwrap();
    let out = sphere_seg(&[
        "pipeline",
        "--config",
        s(&cfg_path),
        "--out",
        s(&dir.path().join("o")),
        "--masks",
        s(&empty),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("segment"), "{err}");
}

#[test]
fn external_segmenter_output_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg_path, cfg) = fixture(dir.path());
    let cloud = pipeline::load_cloud(&cfg).unwrap();
    let work = dir.path().join("work");
    pipeline::cmd_project(&cfg, &cloud, &work).unwrap();

    // One directory per scene: a confident box carrying the true mask, a weak
    // box covering the whole image, and a union mask for tools without boxes.
    let with_boxes = dir.path().join("boxes");
    let union_only = dir.path().join("union");
    for scene in &cfg.scenes {
        let mapping = read_mapping(&pipeline::mapping_path(&work, &scene.name)).unwrap();
        let truth = oracle_mask(&mapping, &cloud, cfg.building_label, OracleRule::Nearest).unwrap();
        let d = pipeline::scene_mask_dir(&with_boxes, &scene.name);
        fs::create_dir_all(&d).unwrap();
        let b = |score: f64| ScoredBox {
            x_min: -5.0,
            y_min: 0.0,
            x_max: W as f64 + 5.0,
            y_max: H as f64,
            score,
            phrase: "building".into(),
        };
        write_boxes(
            &BoxSet {
                width: W,
                height: H,
                prompt: Some("building".into()),
                boxes: vec![b(0.8), b(0.1), b(1.5)],
            },
            &d.join("boxes.json"),
        )
        .unwrap();
        write_mask_pgm(&truth, &d.join(box_mask_file(0))).unwrap();
        write_mask_pgm(&Mask::from_bits(W, H, vec![true; (W * H) as usize]).unwrap(), &d.join(box_mask_file(1)))
            .unwrap();
        let u = pipeline::scene_mask_dir(&union_only, &scene.name);
        fs::create_dir_all(&u).unwrap();
        write_mask_pgm(&truth, &u.join("mask_union.pgm")).unwrap();
    }

    let run = |masks: &Path, out: &str, extra: &[&str]| {
        let out_dir = dir.path().join(out);
        let mut args = vec!["pipeline", "--config", s(&cfg_path), "--masks", s(masks)];
        args.extend(["--out", out_dir.to_str().unwrap()]);
        args.extend(extra);
        let o = sphere_seg(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        read(out_dir.join(pipeline::PREDICTION_FILE))
    };
    let oracle_out = dir.path().join("oracle");
    let o = sphere_seg(&["pipeline", "--config", s(&cfg_path), "--out", s(&oracle_out)]);
    assert!(o.status.success());
    let oracle_pred = read(oracle_out.join(pipeline::PREDICTION_FILE));

    assert_eq!(run(&with_boxes, "b", &[]), oracle_pred);
    assert_eq!(run(&union_only, "u", &[]), oracle_pred);
    // Lowering the score threshold admits the whole-image box.
    assert_ne!(run(&with_boxes, "low", &["--min-score", "0.05"]), oracle_pred);
}

#[test]
fn synth_town_writes_a_runnable_config() {
    let dir = tempfile::tempdir().unwrap();
    let town = dir.path().join("town");
    let out = sphere_seg(&["synth-town", "--out", s(&town)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = SceneConfig::load(&town.join("config.json")).unwrap();
    assert!(cfg.scenes.len() >= 2);
    let cloud = pipeline::load_cloud(&cfg).unwrap();
    assert_eq!(cloud.len(), synthetic::town(&Default::default()).cloud.len());
}
