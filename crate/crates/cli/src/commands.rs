//! Subcommand implementations. Every output file is written atomically and
//! every command is deterministic given config + seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use spotlight_core::eval::{count_flops_params, match_detections, timing_harness, ImageMatches};
use spotlight_core::imageio::{
    draw_overlay, read_image, to_tensor, write_atomic, write_image, ResizeInfo, TargetSize,
};
use spotlight_core::labels::{make_training_target, parse_annotations, Instance};
use spotlight_core::nn::load_weights;
use spotlight_core::postprocess::{detect, format_detections, parse_detections, Detection};
use spotlight_core::tensor::{no_grad, BnMode};
use spotlight_core::trainer::{
    prepare_samples, save_checkpoint, synth_dataset, train, TrainReport, TrainSample,
};
use spotlight_core::{CoreError, EvalReport, Image, Point, Polygon, StdModel};

use crate::config::RunConfig;

/// Failures mapped onto the exit-code contract: validation -> 1, I/O -> 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> CliError {
        match e {
            CoreError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

/// Files in `dir` with extension `ext`, sorted by name for determinism.
fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

const IMAGE_EXTS: [&str; 3] = ["ppm", "pgm", "pnm"];

fn find_image(dir: &Path, stem: &str) -> Result<PathBuf> {
    for ext in IMAGE_EXTS {
        let candidate = dir.join(format!("{stem}.{ext}"));
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(CliError::Io(format!("no image named {stem}.{{ppm,pgm,pnm}} in {}", dir.display())))
}

pub fn cmd_labelgen(
    annotations_dir: &Path,
    images_dir: &Path,
    out_dir: &Path,
    cfg: &RunConfig,
) -> Result<()> {
    let ann_files = list_files(annotations_dir, "txt")?;
    if ann_files.is_empty() {
        return Err(CliError::Validation(format!(
            "no .txt annotation files in {}",
            annotations_dir.display()
        )));
    }
    ensure_dir(out_dir)?;
    let mut summary = String::new();
    let mut failures: Vec<CliError> = Vec::new();
    let (mut instances_total, mut ignored_total, mut collapsed_total) = (0, 0, 0);
    for ann in &ann_files {
        let stem = file_stem(ann);
        let result = (|| -> Result<(usize, usize, usize)> {
            let instances = parse_annotations(&read_text(ann)?)?;
            let img = read_image(&find_image(images_dir, &stem)?)?;
            let target =
                make_training_target(&instances, cfg.model.gamma, (img.height, img.width));
            let mut mask = Image::fill(img.width, img.height, 1, 0);
            for y in 0..img.height {
                for x in 0..img.width {
                    if target.kernel.get(y, x) == 1 {
                        mask.set_sample(y, x, 0, 255);
                    }
                }
            }
            write_image(&mask, &out_dir.join(format!("{stem}.pgm")))?;
            let ignored = instances.iter().filter(|i| i.ignore).count();
            Ok((instances.len(), ignored, target.collapsed))
        })();
        match result {
            Ok((n, ig, col)) => {
                instances_total += n;
                ignored_total += ig;
                collapsed_total += col;
                let _ = writeln!(summary, "{stem}: instances={n} ignored={ig} collapsed={col}");
            }
            Err(e) => {
                eprintln!("{stem}: {e}");
                let _ = writeln!(summary, "{stem}: failed");
                failures.push(e);
            }
        }
    }
    let _ = writeln!(
        summary,
        "total: files={} instances={instances_total} ignored={ignored_total} \
         collapsed={collapsed_total} failed={}",
        ann_files.len(),
        failures.len()
    );
    write_atomic(&out_dir.join("summary.txt"), summary.as_bytes())
        .map_err(CliError::from)?;
    print!("{summary}");
    if failures.is_empty() {
        return Ok(());
    }
    let msg = format!("{} of {} files failed", failures.len(), ann_files.len());
    if failures.iter().any(|e| e.exit_code() == 2) {
        Err(CliError::Io(msg))
    } else {
        Err(CliError::Validation(msg))
    }
}

/// Maps annotation polygons into tensor coordinates and builds one training
/// sample per image found next to its .txt annotation in `dir`.
fn load_samples(dir: &Path, cfg: &RunConfig) -> Result<Vec<TrainSample>> {
    let ann_files = list_files(dir, "txt")?;
    if ann_files.is_empty() {
        return Err(CliError::Validation(format!("no .txt annotation files in {}", dir.display())));
    }
    let norm = cfg.io.normalization();
    let mut samples = Vec::new();
    for ann in &ann_files {
        let stem = file_stem(ann);
        let instances = parse_annotations(&read_text(ann)?)
            .map_err(|e| CliError::Validation(format!("{stem}: {e}")))?;
        let img = read_image(&find_image(dir, &stem)?)?;
        let (tensor, info) =
            to_tensor(&img, TargetSize::ShortSide(cfg.io.short_side), &norm);
        let mapped: Vec<Instance> = instances
            .iter()
            .map(|inst| {
                let vertices = inst
                    .polygon
                    .vertices()
                    .iter()
                    .map(|p| {
                        Point::new(
                            p.x * info.scale_x + info.pad_left as f64,
                            p.y * info.scale_y + info.pad_top as f64,
                        )
                    })
                    .collect();
                Polygon::new(vertices)
                    .map(|polygon| Instance { polygon, ignore: inst.ignore })
                    .map_err(|e| CliError::Validation(format!("{stem}: {e}")))
            })
            .collect::<Result<_>>()?;
        let target =
            make_training_target(&mapped, cfg.model.gamma, (info.tensor_h, info.tensor_w));
        samples.push(TrainSample { image: tensor, target });
    }
    Ok(samples)
}

fn losses_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".losses.txt");
    checkpoint.with_file_name(name)
}

pub fn cmd_train(
    cfg: &RunConfig,
    data_dir: Option<&Path>,
    synthetic: bool,
    out_checkpoint: &Path,
) -> Result<()> {
    let samples = match (data_dir, synthetic) {
        (Some(_), true) => {
            return Err(CliError::Validation(
                "--data-dir and --synthetic are mutually exclusive".into(),
            ))
        }
        (None, false) => {
            return Err(CliError::Validation("training needs --data-dir or --synthetic".into()))
        }
        (None, true) => {
            let ds = synth_dataset(
                cfg.train.seed,
                cfg.io.synth_count,
                (cfg.io.synth_size, cfg.io.synth_size),
                cfg.io.synth_instances,
            );
            prepare_samples(&ds, cfg.model.gamma)
        }
        (Some(dir), false) => load_samples(dir, cfg)?,
    };
    if cfg.train.batch_size > 1 {
        let first = samples[0].image.shape();
        if samples.iter().any(|s| s.image.shape() != first) {
            return Err(CliError::Validation(
                "batch_size > 1 needs equally sized images".into(),
            ));
        }
    }
    if let Some(dir) = out_checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let model = StdModel::new(&cfg.model.std_config(), cfg.train.seed);
    let report = if cfg.train.epochs == 0 {
        let report = TrainReport { losses: Vec::new() };
        save_checkpoint(out_checkpoint, &model, &cfg.train, &report)?;
        report
    } else {
        train(&model, &samples, &cfg.train, &cfg.loss, Some(out_checkpoint))?
    };
    let mut curve = String::from("# step lr total coarse refined\n");
    for l in &report.losses {
        let _ = writeln!(curve, "{} {} {} {} {}", l.step, l.lr, l.total, l.coarse, l.refined);
    }
    write_atomic(&losses_path(out_checkpoint), curve.as_bytes()).map_err(CliError::from)?;
    println!(
        "trained {} steps on {} samples; checkpoint: {}",
        report.losses.len(),
        samples.len(),
        out_checkpoint.display()
    );
    if let (Some(first), Some(last)) = (report.losses.first(), report.losses.last()) {
        println!("loss: {:.6} -> {:.6}", first.total, last.total);
    }
    Ok(())
}

/// Un-pads and un-scales one detection back to original image coordinates.
fn map_detection_back(det: &Detection, info: &ResizeInfo) -> Result<Detection> {
    let vertices = det
        .polygon
        .vertices()
        .iter()
        .map(|p| {
            Point::new(
                (p.x - info.pad_left as f64) / info.scale_x,
                (p.y - info.pad_top as f64) / info.scale_y,
            )
        })
        .collect();
    let polygon = Polygon::new(vertices)
        .map_err(|e| CliError::Validation(format!("detection degenerated under un-mapping: {e}")))?;
    Ok(Detection { score: det.score, polygon })
}

pub fn cmd_infer(
    cfg: &RunConfig,
    checkpoint: &Path,
    images: &[PathBuf],
    out_dir: &Path,
    overlay: bool,
) -> Result<()> {
    let model = load_weights(checkpoint)?;
    ensure_dir(out_dir)?;
    let params = cfg.model.detect_params();
    let norm = cfg.io.normalization();
    for path in images {
        let stem = file_stem(path);
        let img = read_image(path)?;
        let (tensor, info) =
            to_tensor(&img, TargetSize::ShortSide(cfg.io.short_side), &norm);
        let (_, m_rs) = no_grad(|| model.forward(&tensor, BnMode::Eval));
        let mapped: Vec<Detection> = detect(&m_rs, &params)
            .iter()
            .map(|d| map_detection_back(d, &info))
            .collect::<Result<_>>()?;
        write_atomic(&out_dir.join(format!("{stem}.txt")), format_detections(&mapped).as_bytes())
            .map_err(CliError::from)?;
        if overlay {
            let over = draw_overlay(&img, &mapped);
            let ext = if over.channels == 1 { "pgm" } else { "ppm" };
            write_image(&over, &out_dir.join(format!("{stem}.overlay.{ext}")))?;
        }
        println!(
            "{stem}: input {}x{} tensor {}x{} detections {}",
            info.orig_w,
            info.orig_h,
            info.tensor_w,
            info.tensor_h,
            mapped.len()
        );
    }
    Ok(())
}

pub fn cmd_eval(
    det_dir: &Path,
    gt_dir: &Path,
    iou: f64,
    out: Option<&Path>,
) -> Result<()> {
    if !(0.0 < iou && iou < 1.0) {
        return Err(CliError::Validation(format!("--iou must lie in (0,1), got {iou}")));
    }
    let det_map: BTreeMap<String, PathBuf> =
        list_files(det_dir, "txt")?.into_iter().map(|p| (file_stem(&p), p)).collect();
    let gt_map: BTreeMap<String, PathBuf> =
        list_files(gt_dir, "txt")?.into_iter().map(|p| (file_stem(&p), p)).collect();
    let mut unmatched = Vec::new();
    for stem in det_map.keys().filter(|s| !gt_map.contains_key(*s)) {
        unmatched.push(format!("no ground truth for {stem}"));
    }
    for stem in gt_map.keys().filter(|s| !det_map.contains_key(*s)) {
        unmatched.push(format!("no detections for {stem}"));
    }
    if !unmatched.is_empty() {
        for line in &unmatched {
            eprintln!("{line}");
        }
        return Err(CliError::Validation(format!("{} unmatched files", unmatched.len())));
    }
    if det_map.is_empty() {
        return Err(CliError::Validation("no detection files to score".into()));
    }
    let mut per_image: Vec<(String, ImageMatches)> = Vec::new();
    for (stem, det_path) in &det_map {
        let dets = parse_detections(&read_text(det_path)?)
            .map_err(|e| CliError::Validation(format!("{stem}: {e}")))?;
        let instances = parse_annotations(&read_text(&gt_map[stem])?)
            .map_err(|e| CliError::Validation(format!("{stem}: {e}")))?;
        let gts: Vec<Polygon> =
            instances.iter().filter(|i| !i.ignore).map(|i| i.polygon.clone()).collect();
        let dont_care: Vec<Polygon> =
            instances.iter().filter(|i| i.ignore).map(|i| i.polygon.clone()).collect();
        per_image.push((stem.clone(), match_detections(&dets, &gts, &dont_care, iou)));
    }
    let report = EvalReport::from_images(per_image.iter().map(|(_, m)| m.clone()).collect());
    let mut text = report.to_text();
    text.push_str("\nper-image:\n");
    for (stem, m) in &per_image {
        let _ = writeln!(
            text,
            "{stem}: tp={} fp={} fn={} discarded={}",
            m.tp,
            m.fp,
            m.fn_,
            m.discarded.len()
        );
    }
    print!("{text}");
    if let Some(out_dir) = out {
        ensure_dir(out_dir)?;
        write_atomic(&out_dir.join("report.txt"), text.as_bytes()).map_err(CliError::from)?;
        write_atomic(&out_dir.join("report.json"), report.to_json().as_bytes())
            .map_err(CliError::from)?;
    }
    Ok(())
}

pub fn cmd_bench(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    size: usize,
    warmup: usize,
    iters: usize,
) -> Result<()> {
    if size == 0 || size % 32 != 0 {
        return Err(CliError::Validation(format!("--size must be a positive multiple of 32, got {size}")));
    }
    if iters == 0 {
        return Err(CliError::Validation("--iters must be at least 1".into()));
    }
    let model = match checkpoint {
        Some(path) => load_weights(path)?,
        None => StdModel::new(&cfg.model.std_config(), cfg.train.seed),
    };
    let cost = count_flops_params(&model, (size, size));
    print!("{}", cost.to_text());
    let ds = synth_dataset(cfg.train.seed, 1, (size, size), cfg.io.synth_instances);
    let (tensor, _) = to_tensor(
        &ds[0].image,
        TargetSize::Exact { width: size, height: size },
        &cfg.io.normalization(),
    );
    let timing = timing_harness(&model, &[tensor], warmup, iters, &cfg.model.detect_params());
    println!("timing.mean_ms: {:.3}", timing.mean_ms);
    println!("timing.fps: {:.3}", timing.fps);
    Ok(())
}

pub fn cmd_verify() -> Result<()> {
    let results = spotlight_core::selfcheck::run_selfcheck();
    print!("{}", spotlight_core::selfcheck::render_table(&results));
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::Validation(format!("{failed} checks failed")));
    }
    Ok(())
}
