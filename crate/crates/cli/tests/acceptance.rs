//! Acceptance gate: the ten published criteria, one test and one printed
//! pass/fail line per criterion. Criteria 6, 7 and 9 drive the spotlight
//! binary; the rest call the library oracles directly.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::Instant;

use spotlight_core::imageio::write_image;
use spotlight_core::labels::{format_annotations, Instance};
use spotlight_core::nn::load_weights;
use spotlight_core::selfcheck::{
    cpfsm_field_check, geometry_round_trip_stats, gradient_suite, miem_mac_widths,
    shape_contract_trials, ROUND_TRIP_COUNT, ROUND_TRIP_EXACT_PASS, ROUND_TRIP_ORACLE_PASS,
    ROUND_TRIP_SEED,
};
use spotlight_core::tensor::mutation::{with_flipped_backward, ALL_OPS};
use spotlight_core::trainer::synth_dataset;
use tempfile::TempDir;

/// Training epochs for the toy overfit (5 synthetic images, so 5 steps per
/// epoch). Chosen by measurement: comfortably past convergence for every
/// loss pairing while staying inside the step and wall-clock budgets.
const OVERFIT_EPOCHS: usize = 120;
const OVERFIT_SEED: &str = "42";

fn report(criterion: u32, pass: bool, detail: &str) {
    println!("criterion {criterion}: {} - {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spotlight")).args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(0),
        "{what}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(path: &Path) -> String {
    path.to_str().unwrap().to_owned()
}

#[test]
fn criterion_01_gradient_suite() {
    let start = Instant::now();
    let suite = gradient_suite();
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        suite.pass && secs < 180.0,
        &format!(
            "{} cases, max rel err {:.3e} (worst {}), {:.1}s of 180s budget",
            suite.cases, suite.max_rel_err, suite.worst, secs
        ),
    );
}

#[test]
fn criterion_02_shape_contracts() {
    let (ok, trials) = shape_contract_trials(100, 4101);
    report(
        2,
        ok == trials,
        &format!("{ok}/{trials} random sizes gave (H/4,W/4) coarse and (H,W) refined maps"),
    );
}

#[test]
fn criterion_03_miem_mac_accounting() {
    let widths = [8, 16, 32, 64, 128];
    report(
        3,
        miem_mac_widths(&widths),
        &format!("branch MACs equal 2.25*C^2 per pixel (25% of dense 3x3) for C in {widths:?}"),
    );
}

#[test]
fn criterion_04_cpfsm_receptive_field() {
    let check = cpfsm_field_check();
    report(4, check.passed, &check.detail);
}

#[test]
fn criterion_05_geometry_round_trip() {
    let (exact, oracle) = geometry_round_trip_stats(ROUND_TRIP_SEED, ROUND_TRIP_COUNT, true);
    let oracle = oracle.expect("rasterized oracle requested");
    let frozen_ok = exact == ROUND_TRIP_EXACT_PASS && oracle == ROUND_TRIP_ORACLE_PASS;
    let rate = exact as f64 / ROUND_TRIP_COUNT as f64;
    let detail = format!(
        "IoU >= 0.8 in {exact}/{ROUND_TRIP_COUNT} (rasterized oracle {oracle}/{ROUND_TRIP_COUNT}, \
         frozen regression {ROUND_TRIP_EXACT_PASS}/{ROUND_TRIP_COUNT} {}), published target >= 98%: \
         unattainable with gamma=0.4/beta=1.5, expansion under-recovers above aspect ~2.9; \
         see the decisions ledger",
        if frozen_ok { "holds" } else { "BROKEN" }
    );
    report(5, frozen_ok && rate >= 0.98, &detail);
}

struct PairOutcome {
    coarse: &'static str,
    refined: &'static str,
    f_measure: f64,
    alpha: f64,
    steps: usize,
    elapsed_s: f64,
}

struct Overfit {
    _dir: TempDir,
    pairs: Vec<PairOutcome>,
}

/// Runs the toy-overfit protocol once per loss pairing through the binary:
/// cmd_train --synthetic, cmd_infer on the training images, cmd_eval at
/// IoU 0.5 against the regenerated ground truth.
fn overfit() -> &'static Overfit {
    static RUNS: OnceLock<Overfit> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let img_dir = dir.path().join("images");
        let gt_dir = dir.path().join("gts");
        std::fs::create_dir_all(&img_dir).unwrap();
        std::fs::create_dir_all(&gt_dir).unwrap();
        let dataset = synth_dataset(42, 5, (256, 256), 2);
        let mut image_paths: Vec<PathBuf> = Vec::new();
        for (i, sample) in dataset.iter().enumerate() {
            let img_path = img_dir.join(format!("t{i}.ppm"));
            write_image(&sample.image, &img_path).unwrap();
            let instances: Vec<Instance> = sample
                .polygons
                .iter()
                .map(|p| Instance { polygon: p.clone(), ignore: false })
                .collect();
            std::fs::write(gt_dir.join(format!("t{i}.txt")), format_annotations(&instances))
                .unwrap();
            image_paths.push(img_path);
        }
        let epochs = OVERFIT_EPOCHS.to_string();
        let pairs = [("bce", "bce"), ("bce", "dice"), ("dice", "dice"), ("dice", "bce")]
            .into_iter()
            .map(|(coarse, refined)| {
                let tag = format!("{coarse}_{refined}");
                let ckpt = dir.path().join(format!("{tag}.bin"));
                let dets = dir.path().join(format!("{tag}_dets"));
                let rep = dir.path().join(format!("{tag}_rep"));
                let start = Instant::now();
                let coarse_set = format!("loss.coarse={coarse}");
                let refined_set = format!("loss.refined={refined}");
                let out = run(&[
                    "train",
                    &s(&ckpt),
                    "--synthetic",
                    "--seed",
                    OVERFIT_SEED,
                    "--epochs",
                    &epochs,
                    "--set",
                    "model.base_channels=16",
                    "--set",
                    &coarse_set,
                    "--set",
                    &refined_set,
                ]);
                assert_ok(&out, &format!("{tag} training (numerical failure?)"));
                let mut infer_args = vec!["infer".to_owned(), s(&ckpt), s(&dets)];
                infer_args.extend(image_paths.iter().map(|p| s(p)));
                infer_args.extend(["--short-side".to_owned(), "256".to_owned()]);
                let args: Vec<&str> = infer_args.iter().map(String::as_str).collect();
                let out = run(&args);
                assert_ok(&out, &format!("{tag} inference"));
                let out = run(&[
                    "eval",
                    &s(&dets),
                    &s(&gt_dir),
                    "--iou",
                    "0.5",
                    "--out",
                    &s(&rep),
                ]);
                assert_ok(&out, &format!("{tag} evaluation"));
                let json: serde_json::Value = serde_json::from_str(
                    &std::fs::read_to_string(rep.join("report.json")).unwrap(),
                )
                .unwrap();
                let model = load_weights(&ckpt).unwrap();
                let alpha = model.alpha.data()[0];
                let manifest: serde_json::Value = serde_json::from_str(
                    &std::fs::read_to_string(format!("{}.json", ckpt.display())).unwrap(),
                )
                .unwrap();
                PairOutcome {
                    coarse,
                    refined,
                    f_measure: json["f_measure"].as_f64().unwrap(),
                    alpha,
                    steps: manifest["steps"].as_u64().unwrap() as usize,
                    elapsed_s: start.elapsed().as_secs_f64(),
                }
            })
            .collect();
        Overfit { _dir: dir, pairs }
    })
}

#[test]
fn criterion_06_toy_overfit() {
    let bce = &overfit().pairs[0];
    assert_eq!((bce.coarse, bce.refined), ("bce", "bce"));
    let pass = bce.f_measure == 1.0
        && bce.steps <= 2000
        && bce.alpha != -1.0
        && bce.elapsed_s <= 900.0;
    report(
        6,
        pass,
        &format!(
            "BCE/BCE overfit: F={:.4} after {} steps (<=2000), alpha={:.6} (moved off -1), \
             train+infer+eval {:.0}s of 900s budget",
            bce.f_measure, bce.steps, bce.alpha, bce.elapsed_s
        ),
    );
}

#[test]
fn criterion_07_loss_scheme_matrix() {
    let runs = overfit();
    let mut pass = true;
    let mut parts = Vec::new();
    for p in &runs.pairs {
        let floor = if (p.coarse, p.refined) == ("bce", "bce") { 1.0 } else { 0.8 };
        pass &= p.f_measure >= floor;
        parts.push(format!("{}/{} F={:.4}", p.coarse, p.refined, p.f_measure));
    }
    report(
        7,
        pass,
        &format!("all pairings trained without numerical failure; {}", parts.join(", ")),
    );
}

#[test]
fn criterion_08_metric_arithmetic() {
    // Published (P, R, F) triples from the reference result tables, as percents.
    // Counts tp = P*R*1e4, tp+fp = R*1e4, tp+fn = P*1e4 reproduce each P/R
    // pair exactly; the evaluator's F must match the printed F.
    let triples: [(f64, f64, f64); 12] = [
        (87.9, 77.2, 82.2),
        (89.2, 80.6, 84.7),
        (87.1, 82.5, 84.7),
        (87.3, 82.3, 84.7),
        (85.5, 82.0, 83.7),
        (86.9, 84.5, 85.7),
        (89.8, 82.7, 86.1),
        (88.9, 84.8, 86.8),
        (84.0, 78.0, 80.9),
        (88.5, 83.8, 86.1),
        (90.7, 85.7, 88.1),
        (91.8, 86.4, 89.0),
    ];
    let mut worst = 0.0f64;
    for (p, r, f_printed) in triples {
        let (pi, ri) = ((10.0 * p).round() as usize, (10.0 * r).round() as usize);
        let tp = pi * ri;
        let (p_got, r_got, f) =
            spotlight_core::eval::precision_recall_f(tp, ri * 1000 - tp, pi * 1000 - tp);
        assert!((p_got * 1000.0 - pi as f64).abs() < 1e-9);
        assert!((r_got * 1000.0 - ri as f64).abs() < 1e-9);
        worst = worst.max((f * 100.0 - f_printed).abs());
    }
    report(
        8,
        worst <= 0.05,
        &format!(
            "{} published (P,R,F) triples reproduced, worst |F - printed| = {:.4} points (<= 0.05)",
            triples.len(),
            worst
        ),
    );
}

#[test]
fn criterion_09_determinism() {
    let dir = TempDir::new().unwrap();
    let tiny: Vec<String> = [
        "model.base_channels=4",
        "model.fpn_channels=8",
        "model.fused_channels=8",
        "model.head_hidden=4",
        "model.cpfsm_hidden=8",
        "io.synth_count=2",
        "io.synth_size=64",
    ]
    .iter()
    .flat_map(|kv| ["--set".to_owned(), (*kv).to_owned()])
    .collect();
    let train = |name: &str| {
        let ckpt = dir.path().join(name);
        let mut args =
            vec!["train".to_owned(), s(&ckpt), "--synthetic".into(), "--seed".into(), "7".into(), "--epochs".into(), "2".into()];
        args.extend(tiny.iter().cloned());
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_ok(&run(&args), "deterministic training");
        std::fs::read(&ckpt).unwrap()
    };
    let ckpt_a = train("a.bin");
    let ckpt_b = train("b.bin");
    let trains_identical = ckpt_a == ckpt_b;

    let image = dir.path().join("img.ppm");
    write_image(&synth_dataset(5, 1, (96, 64), 2)[0].image, &image).unwrap();
    let infer = |name: &str| {
        let out_dir = dir.path().join(name);
        assert_ok(
            &run(&["infer", &s(&dir.path().join("a.bin")), &s(&out_dir), &s(&image), "--short-side", "64"]),
            "deterministic inference",
        );
        std::fs::read(out_dir.join("img.txt")).unwrap()
    };
    let det_a = infer("d1");
    let det_b = infer("d2");
    let infers_identical = det_a == det_b;
    report(
        9,
        trains_identical && infers_identical,
        &format!(
            "checkpoints byte-identical across runs: {trains_identical}; \
             detection files identical across runs: {infers_identical}"
        ),
    );
}

#[test]
fn criterion_10_mutation_sensitivity() {
    let mut undetected = Vec::new();
    for op in ALL_OPS {
        let suite = with_flipped_backward(op, gradient_suite);
        if suite.pass {
            undetected.push(format!("{op:?}"));
        }
    }
    report(
        10,
        undetected.is_empty(),
        &format!(
            "flipping any of the {} backward rules makes the gradient suite fail \
             (undetected: {:?})",
            ALL_OPS.len(),
            undetected
        ),
    );
}
