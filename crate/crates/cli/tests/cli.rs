use std::fs;
use std::path::Path;
use std::process::Command;

use textcontour::datasets::SynthConfig;
use textcontour::model::{BackboneConfig, ModelVariant};
use textcontour::training::{RunConfig, StageConfig, FINAL_CHECKPOINT, LOG_FILE};
use textcontour_cli::{run, EXIT_RUNTIME, EXIT_USAGE};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("textcontour").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, count: usize) {
    let cfg = SynthConfig {
        canvas: 96,
        words_per_image: [1, 2],
        font_scale_range: [12.0, 18.0],
        ..Default::default()
    };
    let cfg_path = dir.join("synth.toml");
    fs::write(&cfg_path, toml::to_string(&cfg).unwrap()).unwrap();
    let data = dir.join("data");
    let r = cli(&[
        "synth",
        "--config",
        p(&cfg_path),
        "--out-dir",
        p(&data),
        "--count",
        &count.to_string(),
        "--seed",
        "3",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(
        r.stdout.starts_with(&format!("synth: {count} images")),
        "{}",
        r.stdout
    );
}

fn tiny_config(dir: &Path, variant: ModelVariant) -> std::path::PathBuf {
    let mut cfg = RunConfig {
        variant,
        backbone: BackboneConfig {
            stage_channels: vec![4, 6, 8, 8, 8],
            decoder_channels: vec![8, 6, 4],
            merge_channels: 4,
            input_size: 64,
            ..Default::default()
        },
        stages: vec![
            StageConfig {
                input_size: 64,
                steps: 2,
                learning_rate: 1e-3,
            },
            StageConfig {
                input_size: 96,
                steps: 1,
                learning_rate: 1e-4,
            },
        ],
        batch_size: 2,
        augment: false,
        checkpoint_every: 0,
        output_dir: dir.join("run"),
        ..Default::default()
    };
    cfg.dataset.root = dir.join("data");
    cfg.decode.score_threshold = 0.0;
    let path = dir.join(format!("{variant}.toml"));
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn help_documents_every_flag() {
    let r = cli(&["--help"]);
    assert_eq!(r.code, 0);
    for cmd in [
        "train",
        "predict",
        "eval",
        "sweep-iou",
        "synth",
        "render-targets",
        "plot",
    ] {
        assert!(r.stdout.contains(cmd), "{cmd} missing from:\n{}", r.stdout);
    }
    assert!(r.stdout.contains("--deterministic"));
    let flags: &[(&str, &[&str])] = &[
        (
            "train",
            &[
                "--config",
                "--output-dir",
                "--seed",
                "--resume",
                "--max-steps",
                "--dtype",
            ],
        ),
        (
            "predict",
            &[
                "--checkpoint",
                "--input-dir",
                "--out-dir",
                "--score-threshold",
                "--nms-iou",
                "--merge-mode",
                "--overlay",
                "--contour-overlay",
            ],
        ),
        ("eval", &["--pred-dir", "--gt-dir", "--thresholds", "--out"]),
        (
            "sweep-iou",
            &["--pred-dir", "--gt-dir", "--thresholds", "--out", "--plot"],
        ),
        ("synth", &["--config", "--out-dir", "--count", "--seed"]),
        (
            "render-targets",
            &["--data-dir", "--out-dir", "--config", "--limit"],
        ),
        (
            "plot",
            &["--kind", "--log", "--image", "--gt", "--pred", "--out"],
        ),
    ];
    for (cmd, names) in flags {
        let r = cli(&[cmd, "--help"]);
        assert_eq!(r.code, 0);
        for name in names.iter().chain(&["--deterministic", "--log-level"]) {
            let line = r
                .stdout
                .lines()
                .find(|l| {
                    l.trim_start().starts_with('-') && l.split([' ', ',']).any(|tok| tok == *name)
                })
                .unwrap_or_else(|| panic!("{cmd}: {name} missing"));
            // Every flag carries a description, on its own line or the next one.
            let documented = line.trim().split("  ").filter(|s| !s.is_empty()).count() > 1
                || r.stdout
                    .lines()
                    .skip_while(|l| *l != line)
                    .nth(1)
                    .is_some_and(|n| n.starts_with("          "));
            assert!(documented, "{cmd}: {name} is undocumented: {line}");
        }
    }
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [
        &["frobnicate"][..],
        &["train"],
        &["eval", "--pred-dir", "x"],
        &[
            "predict",
            "--checkpoint",
            "a",
            "--input-dir",
            "b",
            "--out-dir",
            "c",
            "--merge-mode",
            "fancy",
        ],
        &["plot", "--kind", "loss_curves", "--out", "x.png"],
        &["synth", "--out-dir", "x", "--count", "0"],
    ] {
        let r = cli(args);
        assert_eq!(r.code, EXIT_USAGE, "{args:?}: {}", r.stderr);
        assert!(r.stderr.contains("error"), "{args:?}: {}", r.stderr);
    }
}

#[test]
fn runtime_errors_exit_with_one_and_a_category() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let r = cli(&["train", "--config", p(&missing)]);
    assert_eq!(r.code, EXIT_RUNTIME);
    assert!(r.stderr.starts_with("error[io]:"), "{}", r.stderr);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "batch_size = 0\n").unwrap();
    let r = cli(&["train", "--config", p(&bad)]);
    assert_eq!(r.code, EXIT_RUNTIME);
    assert!(r.stderr.starts_with("error[config]:"), "{}", r.stderr);

    let ck = dir.path().join("broken.ckpt");
    fs::write(&ck, b"not a checkpoint").unwrap();
    let r = cli(&[
        "predict",
        "--checkpoint",
        p(&ck),
        "--input-dir",
        p(dir.path()),
        "--out-dir",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(r.code, EXIT_RUNTIME);
    assert!(r.stderr.starts_with("error[checkpoint]:"), "{}", r.stderr);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_textcontour");
    let status = Command::new(bin).arg("--no-such-flag").output().unwrap();
    assert_eq!(status.status.code(), Some(EXIT_USAGE));
    let status = Command::new(bin)
        .args([
            "eval",
            "--pred-dir",
            "/nonexistent",
            "--gt-dir",
            "/nonexistent",
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(EXIT_RUNTIME));
    assert!(String::from_utf8_lossy(&status.stderr).starts_with("error["));
    let status = Command::new(bin).arg("--version").output().unwrap();
    assert_eq!(status.status.code(), Some(0));
}

#[test]
fn rendered_targets_have_band_values() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 3);
    let out = dir.path().join("targets");
    let r = cli(&[
        "render-targets",
        "--data-dir",
        p(&dir.path().join("data")),
        "--out-dir",
        p(&out),
        "--limit",
        "2",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.stdout.lines().count(), 1);
    let dumps: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with("_targets.json"))
        .collect();
    assert_eq!(dumps.len(), 2);
    for d in dumps {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&d).unwrap()).unwrap();
        let (h, w) = (v["height"].as_u64().unwrap(), v["width"].as_u64().unwrap());
        assert_eq!((h, w), (24, 24));
        let contour = v["contour"].as_array().unwrap();
        assert_eq!(contour.len() as u64, h * w);
        assert!(contour
            .iter()
            .all(|c| [0.0, 0.6, 0.9, 1.0].contains(&c.as_f64().unwrap())));
        assert!(contour.iter().any(|c| c.as_f64() == Some(1.0)));
        let stem = d
            .file_name()
            .unwrap()
            .to_string_lossy()
            .replace("_targets.json", "");
        for suffix in ["_contour.png", "_overlay.png"] {
            assert!(out.join(format!("{stem}{suffix}")).is_file());
        }
    }
}

#[test]
fn train_predict_eval_sweep_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, 4);
    let cfg = tiny_config(d, ModelVariant::Cascade2);
    let r = cli(&["train", "--config", p(&cfg), "--dtype", "f64"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let lines: Vec<_> = r.stdout.lines().collect();
    assert_eq!(lines.len(), 3, "{}", r.stdout);
    assert!(lines[0].starts_with("train stage 1/2: input 64"));
    assert!(lines[1].starts_with("train stage 2/2: input 96"));
    assert!(lines[2].starts_with("train: cascade2 3 steps"));
    let ck = d.join("run").join(FINAL_CHECKPOINT);
    assert!(ck.is_file());

    let preds = d.join("preds");
    let r = cli(&[
        "predict",
        "--checkpoint",
        p(&ck),
        "--input-dir",
        p(&d.join("data")),
        "--out-dir",
        p(&preds),
        "--overlay",
        "--contour-overlay",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.starts_with("predict: 4 images"), "{}", r.stdout);
    let txt = fs::read_dir(&preds)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "txt")
        .count();
    let png = fs::read_dir(&preds)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "png")
        .count();
    assert_eq!((txt, png), (4, 4));

    let table = d.join("eval.csv");
    let r = cli(&[
        "eval",
        "--pred-dir",
        p(&preds),
        "--gt-dir",
        p(&d.join("data")),
        "--thresholds",
        "0.5,0.7",
        "--out",
        p(&table),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(
        r.stdout
            .lines()
            .last()
            .unwrap()
            .starts_with("eval: 4 images, P "),
        "{}",
        r.stdout
    );
    assert!(table.is_file());

    let sweep = d.join("sweep.csv");
    let fig = d.join("f1.png");
    let r = cli(&[
        "sweep-iou",
        "--pred-dir",
        p(&preds),
        "--gt-dir",
        p(&d.join("data")),
        "--out",
        p(&sweep),
        "--plot",
        p(&fig),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(
        r.stdout.contains("sweep-iou: 4 images, 9 thresholds"),
        "{}",
        r.stdout
    );
    assert!(fig.is_file());

    let img = fs::read_dir(d.join("data").join("images"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let stem = img.file_stem().unwrap().to_string_lossy().into_owned();
    let gt = d.join("data").join("gt").join(format!("gt_{stem}.txt"));
    let pred = preds.join(format!("{stem}.txt"));
    let log = d.join("run").join(LOG_FILE);
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("loss_curves", vec!["--log", p(&log)]),
        ("f1_vs_iou", vec!["--log", p(&sweep)]),
        ("target_overlay", vec!["--image", p(&img), "--gt", p(&gt)]),
        (
            "detection_overlay",
            vec!["--image", p(&img), "--gt", p(&gt), "--pred", p(&pred)],
        ),
    ];
    for (kind, extra) in cases {
        let out = d.join(format!("{kind}.png"));
        let mut args = vec!["plot", "--kind", kind, "--out", p(&out)];
        args.extend(extra);
        let r = cli(&args);
        assert_eq!(r.code, 0, "{kind}: {}", r.stderr);
        assert_eq!(r.stdout, format!("plot: {kind} -> {}\n", out.display()));
        assert!(image::open(&out).is_ok());
    }
}

#[test]
fn contour_overlay_on_baseline_warns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, 2);
    let cfg = tiny_config(d, ModelVariant::Baseline);
    let r = cli(&["train", "--config", p(&cfg), "--max-steps", "1"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("train: baseline 1 steps"), "{}", r.stdout);
    let ck = d.join("run").join(FINAL_CHECKPOINT);
    let r = cli(&[
        "predict",
        "--checkpoint",
        p(&ck),
        "--input-dir",
        p(&d.join("data")),
        "--out-dir",
        p(&d.join("o")),
        "--contour-overlay",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(
        r.stderr.contains("warning: --contour-overlay ignored"),
        "{}",
        r.stderr
    );
}

#[test]
fn eval_counts_missing_prediction_files_as_empty() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, 2);
    let preds = d.join("preds");
    fs::create_dir_all(&preds).unwrap();
    let r = cli(&[
        "eval",
        "--pred-dir",
        p(&preds),
        "--gt-dir",
        p(&d.join("data")),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.stderr.matches("warning: no prediction file").count(), 2);
    assert!(r.stdout.contains("R 0.0000"), "{}", r.stdout);
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, 2);
    let cfg = tiny_config(d, ModelVariant::Aux1);
    let mut seen = Vec::new();
    for _ in 0..2 {
        let r = cli(&["--deterministic", "train", "--config", p(&cfg)]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        assert!(
            r.stdout.lines().last().unwrap().ends_with(FINAL_CHECKPOINT),
            "timing leaked: {}",
            r.stdout
        );
        let log = fs::read(d.join("run").join(LOG_FILE)).unwrap();
        let ck = fs::read(d.join("run").join(FINAL_CHECKPOINT)).unwrap();
        seen.push((r.stdout, log, ck));
    }
    assert!(seen[0] == seen[1], "deterministic runs differ");
}

/// The configuration examples in the README are the actual defaults.
#[test]
fn readme_documents_the_defaults() {
    let readme =
        fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap();
    let blocks: Vec<&str> = readme
        .split("```toml\n")
        .skip(1)
        .map(|b| b.split("```").next().unwrap())
        .collect();
    assert_eq!(blocks.len(), 2);
    assert_eq!(
        RunConfig::from_toml(blocks[0]).unwrap(),
        RunConfig::default()
    );
    assert_eq!(
        toml::from_str::<SynthConfig>(blocks[1]).unwrap(),
        SynthConfig::default()
    );
}
