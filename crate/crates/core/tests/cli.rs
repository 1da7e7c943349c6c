use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use poselabel::board::{read_observations, write_observations};
use poselabel::bop_io::{read_scene, DatasetLayout};
use poselabel::calib::read_extrinsics;

const SMALL: &str = r#"
seed = 7

[tuning]
translation_range = 10.0
translation_step = 10.0
rotation_range = 0.0
rotation_step = 0.5

[synth]
tuning_scenes = [0]

[synth.rig]
camera_count = 4
width = 324
height_px = 256
focal_px = 300.0

[synth.scenario]
frames = 4
"#;

fn run(cfg: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poselabel")).arg("--config").arg(cfg).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn workspace() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let seed = dir.path().join("seed.toml");
    fs::write(&seed, SMALL).unwrap();
    let o = run(&seed, &["synth", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = dir.path().join("poselabel.toml");
    assert!(cfg.is_file());
    (dir, cfg)
}

#[test]
fn full_pipeline_round() {
    let (dir, cfg) = workspace();
    assert_eq!(fs::read_dir(dir.path().join("board")).unwrap().count(), 4);

    let o = run(&cfg, &["localize"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).matches("rms reprojection error").count(), 4);
    assert_eq!(code(&run(&cfg, &["localize"])), 2, "refuses to overwrite extrinsics");
    assert_eq!(code(&run(&cfg, &["localize", "--overwrite"])), 0);

    let o = run(&cfg, &["tune"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("best mean IoU"));
    let o = run(&cfg, &["tune"]);
    assert!(stdout(&o).contains("already tuned") || !stdout(&o).contains("accepted"));
    let o = run(&cfg, &["tune", "--force"]);
    assert_eq!(code(&o), 0);
    assert!(!stdout(&o).contains("already tuned"));

    let o = run(&cfg, &["annotate", "--workers", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("instances in"));
    assert_eq!(code(&run(&cfg, &["annotate"])), 2, "refuses a non-empty output directory");
    assert_eq!(code(&run(&cfg, &["annotate", "--overwrite"])), 0);
    assert_eq!(fs::read_dir(dir.path().join("dataset")).unwrap().count(), 4);

    let o = run(&cfg, &["validate"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("4 scene(s) checked, 0 violation(s)"));

    let o = run(&cfg, &["stats"]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert!(s.contains("Number of instances") && s.contains("Number of frames"), "{s}");
    let frames_line = s.lines().find(|l| l.starts_with("Number of frames")).unwrap();
    assert!(frames_line.trim_end().ends_with("16"), "{frames_line}");

    let o = run(&cfg, &["overlay"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let layout = DatasetLayout::new(dir.path().join("dataset"));
    let annotated: usize = (0..4).map(|s| read_scene(&layout, s).unwrap().views.iter().filter(|v| !v.annotations.is_empty()).count()).sum();
    assert!(annotated > 0);
    assert_eq!(fs::read_dir(dir.path().join("overlay")).unwrap().count(), annotated);
}

#[test]
fn degenerate_camera_is_reported_and_others_written() {
    let (dir, cfg) = workspace();
    let bad = dir.path().join("board/cam_02.json");
    let (cid, obs) = read_observations(&bad).unwrap();
    write_observations(&bad, cid, &obs[..1]).unwrap();
    let o = run(&cfg, &["localize"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("camera 2"));
    let written = read_extrinsics(&dir.path().join("extrinsics.json")).unwrap();
    assert_eq!(written.keys().copied().collect::<Vec<_>>(), vec![0, 1, 3]);
}

#[test]
fn validate_reports_corruption_with_exit_2() {
    let (dir, cfg) = workspace();
    let gt = dir.path().join("ground_truth/extrinsics.json");
    fs::copy(&gt, dir.path().join("extrinsics.json")).unwrap();
    assert_eq!(code(&run(&cfg, &["annotate"])), 0);
    let camera = dir.path().join("dataset/000001/scene_camera.json");
    fs::remove_file(&camera).unwrap();
    let o = run(&cfg, &["validate"]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("MissingFile"), "{}", stdout(&o));
}

#[test]
fn missing_or_malformed_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&dir.path().join("absent.toml"), &["stats"])), 1);

    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[paths]\nboard_observations = \"board\"\n").unwrap();
    assert_eq!(code(&run(&cfg, &["localize"])), 1, "no board directory");
    fs::create_dir(dir.path().join("board")).unwrap();
    fs::write(dir.path().join("board/cam_00.json"), "{ not json").unwrap();
    assert_eq!(code(&run(&cfg, &["localize"])), 1, "unparsable observations");

    fs::write(&cfg, "[tuning]\nrotation_step = -1.0\n").unwrap();
    assert_eq!(code(&run(&cfg, &["stats"])), 2, "invalid values are a domain error");
    assert_eq!(code(&run(&cfg, &["no-such-command"])), 1);
}

#[test]
fn help_lists_every_command() {
    let o = Command::new(env!("CARGO_BIN_EXE_poselabel")).arg("--help").output().unwrap();
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    for c in ["localize", "tune", "annotate", "stats", "validate", "synth", "overlay"] {
        assert!(s.contains(c), "{c} missing from help");
    }
}
