//! End-to-end tests of the spotlight binary: every subcommand, the config
//! layering rules and the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use spotlight_core::imageio::parse_pnm;
use spotlight_core::nn::encode_weights;
use spotlight_core::{StdConfig, StdModel};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spotlight"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Narrow-model overrides keeping runtimes small.
const TINY: [&str; 10] = [
    "--set",
    "model.base_channels=4",
    "--set",
    "model.fpn_channels=8",
    "--set",
    "model.fused_channels=8",
    "--set",
    "model.head_hidden=4",
    "--set",
    "model.cpfsm_hidden=8",
];

const TINY_DATA: [&str; 4] =
    ["--set", "io.synth_count=2", "--set", "io.synth_size=64"];

fn tiny_std_config() -> StdConfig {
    StdConfig {
        base_channels: 4,
        fpn_channels: 8,
        fused_channels: 8,
        head_hidden: 4,
        cpfsm_hidden: 8,
        ..StdConfig::default()
    }
}

fn write_pgm(path: &Path, w: usize, h: usize, value: u8) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(std::iter::repeat(value).take(w * h));
    std::fs::write(path, bytes).unwrap();
}

fn write_ppm(path: &Path, w: usize, h: usize, value: u8) {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend(std::iter::repeat(value).take(w * h * 3));
    std::fs::write(path, bytes).unwrap();
}

fn s(path: &Path) -> String {
    path.to_str().unwrap().to_owned()
}

fn train_tiny_checkpoint(dir: &Path, epochs: &str, seed: &str) -> String {
    let ckpt = s(&dir.join("model.bin"));
    let mut args =
        vec!["train", &ckpt, "--synthetic", "--epochs", epochs, "--seed", seed];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(&TINY_DATA);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    ckpt
}

#[test]
fn labelgen_writes_masks_and_summary() {
    let dir = TempDir::new().unwrap();
    let ann = dir.path().join("ann");
    let img = dir.path().join("img");
    std::fs::create_dir_all(&ann).unwrap();
    std::fs::create_dir_all(&img).unwrap();
    std::fs::write(ann.join("a.txt"), "10,10,60,10,60,30,10,30\n").unwrap();
    std::fs::write(ann.join("b.txt"), "20,8,80,8,80,40,20,40,###\n8,44,40,44,40,60,8,60\n")
        .unwrap();
    std::fs::write(ann.join("c.txt"), "").unwrap();
    write_ppm(&img.join("a.ppm"), 96, 64, 128);
    write_pgm(&img.join("b.pgm"), 96, 64, 128);
    write_ppm(&img.join("c.ppm"), 48, 48, 128);
    let out_dir = dir.path().join("labels");
    let out = run(&["labelgen", &s(&ann), &s(&img), &s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let mask_a = parse_pnm(&std::fs::read(out_dir.join("a.pgm")).unwrap()).unwrap();
    assert_eq!((mask_a.width, mask_a.height, mask_a.channels), (96, 64, 1));
    assert_eq!(mask_a.sample(20, 35, 0), 255);
    assert_eq!(mask_a.sample(5, 5, 0), 0);

    // The ### instance stays out of the mask: rows 8..40 only intersect it.
    let mask_b = parse_pnm(&std::fs::read(out_dir.join("b.pgm")).unwrap()).unwrap();
    assert!((8..40).all(|y| (0..96).all(|x| mask_b.sample(y, x, 0) == 0)));
    assert!(mask_b.data.iter().any(|&v| v == 255));

    let mask_c = parse_pnm(&std::fs::read(out_dir.join("c.pgm")).unwrap()).unwrap();
    assert!(mask_c.data.iter().all(|&v| v == 0));

    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("a: instances=1 ignored=0 collapsed=0"), "{summary}");
    assert!(summary.contains("b: instances=2 ignored=1 collapsed=0"), "{summary}");
    assert!(summary.contains("c: instances=0 ignored=0 collapsed=0"), "{summary}");
    assert!(
        summary.contains("total: files=3 instances=3 ignored=1 collapsed=0 failed=0"),
        "{summary}"
    );
    assert_eq!(stdout(&out), summary);
}

#[test]
fn labelgen_reports_per_file_errors_and_fails() {
    let dir = TempDir::new().unwrap();
    let ann = dir.path().join("ann");
    let img = dir.path().join("img");
    std::fs::create_dir_all(&ann).unwrap();
    std::fs::create_dir_all(&img).unwrap();
    std::fs::write(ann.join("good.txt"), "10,10,40,10,40,30,10,30\n").unwrap();
    std::fs::write(ann.join("orphan.txt"), "10,10,40,10,40,30,10,30\n").unwrap();
    write_ppm(&img.join("good.ppm"), 64, 64, 128);
    let out_dir = dir.path().join("labels");
    let out = run(&["labelgen", &s(&ann), &s(&img), &s(&out_dir)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("orphan"), "{}", stderr(&out));
    assert!(out_dir.join("good.pgm").is_file());
    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("orphan: failed"), "{summary}");
    assert!(summary.contains("failed=1"), "{summary}");
}

#[test]
fn train_is_deterministic_across_runs() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    let ckpt_a = train_tiny_checkpoint(&a, "2", "7");
    let ckpt_b = train_tiny_checkpoint(&b, "2", "7");
    let bytes_a = std::fs::read(&ckpt_a).unwrap();
    let bytes_b = std::fs::read(&ckpt_b).unwrap();
    assert_eq!(bytes_a, bytes_b);
    assert_eq!(
        std::fs::read_to_string(format!("{ckpt_a}.losses.txt")).unwrap(),
        std::fs::read_to_string(format!("{ckpt_b}.losses.txt")).unwrap()
    );
    let other = train_tiny_checkpoint(&dir.path().join("c"), "2", "8");
    assert_ne!(bytes_a, std::fs::read(other).unwrap());
}

#[test]
fn train_epochs_zero_saves_the_initialization() {
    let dir = TempDir::new().unwrap();
    let ckpt = train_tiny_checkpoint(dir.path(), "0", "11");
    let expected = encode_weights(&StdModel::new(&tiny_std_config(), 11));
    assert_eq!(std::fs::read(&ckpt).unwrap(), expected);
    let curve = std::fs::read_to_string(format!("{ckpt}.losses.txt")).unwrap();
    assert_eq!(curve, "# step lr total coarse refined\n");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{ckpt}.json")).unwrap()).unwrap();
    assert_eq!(manifest["steps"], 0);
}

#[test]
fn train_requires_exactly_one_data_source() {
    let dir = TempDir::new().unwrap();
    let ckpt = s(&dir.path().join("m.bin"));
    let out = run(&["train", &ckpt]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let out = run(&["train", &ckpt, "--synthetic", "--data-dir", "somewhere"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn infer_blank_image_resize_arithmetic_and_determinism() {
    let dir = TempDir::new().unwrap();
    let ckpt = train_tiny_checkpoint(dir.path(), "10", "3");
    let blank = dir.path().join("blank.pgm");
    write_pgm(&blank, 1000, 500, 200);
    let dets = dir.path().join("dets");
    let dets_s = s(&dets);
    let blank_s = s(&blank);
    let mut args =
        vec!["infer", &ckpt, &dets_s, &blank_s, "--short-side", "736", "--overlay"];
    args.extend_from_slice(&TINY);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(
        stdout(&out).contains("input 1000x500 tensor 1472x736"),
        "{}",
        stdout(&out)
    );
    let det_file = dets.join("blank.txt");
    assert_eq!(std::fs::read(&det_file).unwrap(), b"");
    let overlay = parse_pnm(&std::fs::read(dets.join("blank.overlay.pgm")).unwrap()).unwrap();
    assert_eq!((overlay.width, overlay.height), (1000, 500));

    let first = std::fs::read(&det_file).unwrap();
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(std::fs::read(&det_file).unwrap(), first);
}

#[test]
fn infer_short_side_flag_overrides_config_file() {
    let dir = TempDir::new().unwrap();
    let ckpt = train_tiny_checkpoint(dir.path(), "1", "5");
    let img = dir.path().join("img.pgm");
    write_pgm(&img, 100, 50, 90);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# comment\nio.short_side=64\n").unwrap();
    let dets = s(&dir.path().join("d1"));
    let out = run(&["infer", &ckpt, &dets, &s(&img), "--config", &s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("tensor 128x64"), "{}", stdout(&out));
    let dets = s(&dir.path().join("d2"));
    let out =
        run(&["infer", &ckpt, &dets, &s(&img), "--config", &s(&cfg), "--short-side", "32"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("tensor 64x32"), "{}", stdout(&out));
}

fn write_eval_pair(dir: &Path, dets: &[(&str, &str)], gts: &[(&str, &str)]) -> (String, String) {
    let det_dir = dir.join("dets");
    let gt_dir = dir.join("gts");
    std::fs::create_dir_all(&det_dir).unwrap();
    std::fs::create_dir_all(&gt_dir).unwrap();
    for (name, text) in dets {
        std::fs::write(det_dir.join(format!("{name}.txt")), text).unwrap();
    }
    for (name, text) in gts {
        std::fs::write(gt_dir.join(format!("{name}.txt")), text).unwrap();
    }
    (s(&det_dir), s(&gt_dir))
}

#[test]
fn eval_perfect_detections_score_f_one() {
    let dir = TempDir::new().unwrap();
    let (det_dir, gt_dir) = write_eval_pair(
        dir.path(),
        &[
            ("a", "1.0;10,10,60,10,60,30,10,30\n0.9;70,40,110,40,110,58,70,58\n"),
            ("b", "0.8;20,20,50,20,50,44,20,44\n"),
        ],
        &[
            ("a", "10,10,60,10,60,30,10,30\n70,40,110,40,110,58,70,58\n"),
            ("b", "20,20,50,20,50,44,20,44\n"),
        ],
    );
    let out = run(&["eval", &det_dir, &gt_dir, "--iou", "0.5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("precision: 1.0000"), "{text}");
    assert!(text.contains("recall: 1.0000"), "{text}");
    assert!(text.contains("f_measure: 1.0000"), "{text}");
    assert!(text.contains("a: tp=2 fp=0 fn=0"), "{text}");
    assert!(text.contains("b: tp=1 fp=0 fn=0"), "{text}");
}

#[test]
fn eval_one_miss_in_ten_gives_recall_09() {
    let dir = TempDir::new().unwrap();
    let mut gt_a = String::new();
    let mut det_a = String::new();
    for i in 0..10 {
        let x = 10 + 60 * i;
        gt_a.push_str(&format!("{x},10,{},10,{},40,{x},40\n", x + 40, x + 40));
        if i < 9 {
            det_a.push_str(&format!("0.9;{x},10,{},10,{},40,{x},40\n", x + 40, x + 40));
        }
    }
    let (det_dir, gt_dir) =
        write_eval_pair(dir.path(), &[("a", &det_a)], &[("a", &gt_a)]);
    let report_dir = dir.path().join("report");
    let out = run(&["eval", &det_dir, &gt_dir, "--out", &s(&report_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("recall: 0.9000"), "{text}");
    assert!(text.contains("precision: 1.0000"), "{text}");
    assert_eq!(
        std::fs::read_to_string(report_dir.join("report.txt")).unwrap(),
        text
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(json["tp"], 9);
    assert_eq!(json["fn"], 1);
}

#[test]
fn eval_f_measure_reproduces_published_pairs() {
    // Count sets engineered so tp/(tp+fp) and tp/(tp+fn) hit published
    // precision/recall pairs exactly; F must match the printed value.
    for (tp, fp, fn_, f_printed) in [
        (678_588usize, 93_412usize, 200_412usize, 0.822),
        (718_952, 87_048, 173_048, 0.847),
        (742_646, 84_354, 155_354, 0.861),
    ] {
        let (_, _, f) = spotlight_core::eval::precision_recall_f(tp, fp, fn_);
        assert!((f - f_printed).abs() <= 5e-4, "{tp},{fp},{fn_}: {f} vs {f_printed}");
    }
}

#[test]
fn eval_lists_unmatched_files_and_fails() {
    let dir = TempDir::new().unwrap();
    let (det_dir, gt_dir) = write_eval_pair(
        dir.path(),
        &[("a", "1.0;10,10,60,10,60,30,10,30\n"), ("extra", "1.0;10,10,60,10,60,30,10,30\n")],
        &[("a", "10,10,60,10,60,30,10,30\n"), ("missing", "10,10,60,10,60,30,10,30\n")],
    );
    let out = run(&["eval", &det_dir, &gt_dir]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("no ground truth for extra"), "{err}");
    assert!(err.contains("no detections for missing"), "{err}");
}

#[test]
fn eval_discards_detections_on_dont_care_regions() {
    let dir = TempDir::new().unwrap();
    let (det_dir, gt_dir) = write_eval_pair(
        dir.path(),
        &[("a", "0.9;12,12,58,12,58,28,12,28\n")],
        &[("a", "10,10,60,10,60,30,10,30,###\n")],
    );
    let out = run(&["eval", &det_dir, &gt_dir]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("a: tp=0 fp=0 fn=0 discarded=1"), "{text}");
}

#[test]
fn eval_rejects_bad_iou() {
    let dir = TempDir::new().unwrap();
    let (det_dir, gt_dir) = write_eval_pair(
        dir.path(),
        &[("a", "1.0;10,10,60,10,60,30,10,30\n")],
        &[("a", "10,10,60,10,60,30,10,30\n")],
    );
    for bad in ["0", "1", "1.5", "-0.2"] {
        let out = run(&["eval", &det_dir, &gt_dir, "--iou", bad]);
        assert_eq!(code(&out), 1, "--iou {bad}: {}", stderr(&out));
    }
}

#[test]
fn bench_prints_cost_and_timing() {
    let mut args = vec!["bench", "--size", "64", "--warmup", "0", "--iters", "1"];
    args.extend_from_slice(&TINY);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("input: 64x64"), "{text}");
    assert!(text.contains("total.macs: "), "{text}");
    assert!(text.contains("total.params: "), "{text}");
    assert!(text.contains("timing.mean_ms: "), "{text}");
    assert!(text.contains("timing.fps: "), "{text}");
    let out = run(&["bench", "--size", "60"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn verify_passes_within_budget() {
    let start = Instant::now();
    let out = run(&["verify"]);
    let elapsed = start.elapsed();
    assert_eq!(code(&out), 0, "{}\n{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    assert!(!text.contains("FAIL"), "{text}");
    assert!(text.lines().count() >= 9, "{text}");
    assert!(text.lines().all(|l| l.contains("PASS")), "{text}");
    assert!(elapsed.as_secs() < 300, "verify took {elapsed:?}");
}

#[test]
fn exit_codes_follow_the_contract() {
    let out = run(&["nonsense"]);
    assert_eq!(code(&out), 1);
    let out = run(&["verify", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "model.typo=1\n").unwrap();
    let out = run(&["verify", "--config", &s(&cfg)]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let out = run(&["labelgen", "/nonexistent/a", "/nonexistent/b", &s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let out = run(&["infer", "/nonexistent/ckpt.bin", &s(&dir.path().join("d")), "img.pgm"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("labelgen"));
}
