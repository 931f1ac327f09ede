use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use segkit::dataset::{
    class_histogram, generate_toy, load_annotations, load_dir, load_samples, load_toy, size_histogram,
    AnnotationRecord, CsvOptions, DatasetIndex, IngestMode, Sample, ToySpec, ANNOTATIONS_FILE, IMAGES_DIR,
    MANIFEST_FILE,
};
use segkit::losses::check::{run_gradcheck, CheckedGradient, GradcheckOptions};
use segkit::mask_codec::{
    read_class_map_png, resize_classmap, rle_encode, write_class_map_png, write_overlay_png, BinaryMask, PixelOrder,
    MAX_CLASS_ID,
};
use segkit::models::{image_to_tensor, Checkpoint, Model};
use segkit::training::{evaluate, run_stage, RunLog, Stage, TrainConfig};
use segkit::{Error, Result};

use crate::{plots, Cli, Command, CommandResult, DATA_DIR_ENV};

/// Executes one parsed invocation.
pub fn run(cli: &Cli) -> CommandResult {
    let out = match &cli.command {
        Command::Explore {
            path,
            class_offset,
            top,
        } => explore(cli, path.as_deref(), *class_offset, *top),
        Command::Decode {
            csv,
            image_id,
            out,
            size,
            class_offset,
        } => decode(cli, csv, image_id, out.as_deref(), *size, *class_offset),
        Command::Encode { mask, image_id, out } => encode(cli, mask, image_id.as_deref(), out.as_deref()),
        Command::MakeToy { count, size, spec } => make_toy(cli, *count, *size, spec.as_deref()),
        Command::Train { config } => train(cli, config),
        Command::Eval { checkpoint, data } => eval(cli, checkpoint, data.as_deref()),
        Command::Predict { checkpoint, image, out } => predict(cli, checkpoint, image, out.as_deref()),
        Command::Gradcheck { trials, inject_fault } => return gradcheck(cli, *trials, inject_fault.as_deref()),
    };
    out.unwrap_or_else(|e| CommandResult::from_error(&e))
}

fn ingest_mode(cli: &Cli) -> IngestMode {
    if cli.strict {
        IngestMode::Strict
    } else {
        IngestMode::Collect
    }
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| Error::io(&cli.out_dir, e))?;
    Ok(&cli.out_dir)
}

fn data_path(explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| Error::config(format!("no dataset given and {DATA_DIR_ENV} is not set")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn plot(result: std::result::Result<(), String>) -> Result<()> {
    result.map_err(|m| Error::Numeric(format!("plot rendering failed: {m}")))
}

/// Index plus collected row errors for a CSV file or a dataset directory.
fn load_index(cli: &Cli, path: &Path, class_offset: i64) -> Result<(DatasetIndex, Vec<Error>)> {
    let opts = CsvOptions {
        mode: ingest_mode(cli),
        class_offset,
    };
    if path.is_dir() {
        if path.join(MANIFEST_FILE).exists() {
            return Ok((load_toy(path)?.index, vec![]));
        }
        let report = load_annotations(&path.join(ANNOTATIONS_FILE), opts)?;
        return Ok((report.index, report.row_errors));
    }
    let report = load_annotations(path, opts)?;
    Ok((report.index, report.row_errors))
}

fn row_error_lines(errors: &[Error]) -> String {
    let mut s = String::new();
    if !errors.is_empty() {
        let _ = writeln!(s, "{} malformed rows skipped:", errors.len());
        for e in errors.iter().take(10) {
            let _ = writeln!(s, "  {e}");
        }
        if errors.len() > 10 {
            let _ = writeln!(s, "  ...");
        }
    }
    s
}

fn explore(cli: &Cli, path: Option<&Path>, class_offset: i64, top: usize) -> Result<CommandResult> {
    let path = data_path(path)?;
    let (index, row_errors) = load_index(cli, &path, class_offset)?;
    let hist = class_histogram(&index)?;
    let sizes = size_histogram(&index)?;
    let dir = out_dir(cli)?;
    let file_id = |c: usize| c as i64 - class_offset;

    let mut csv = String::from("class_id,images,instances,image_share,occurrence_share\n");
    for c in 1..=MAX_CLASS_ID as usize {
        let _ = writeln!(
            csv,
            "{},{},{},{:.6},{:.6}",
            file_id(c),
            hist.image_counts[c],
            hist.instance_counts[c],
            hist.image_share(c),
            hist.occurrence_share(c)
        );
    }
    let class_csv = dir.join("class_histogram.csv");
    write_text(&class_csv, &csv)?;

    let mut csv = String::from("dimension,value,count\n");
    for (name, map) in [("width", &sizes.widths), ("height", &sizes.heights)] {
        for (v, n) in map {
            let _ = writeln!(csv, "{name},{v},{n}");
        }
    }
    let size_csv = dir.join("size_histogram.csv");
    write_text(&size_csv, &csv)?;

    let ranked = hist.ranked();
    let bars: Vec<(String, f64)> = ranked
        .iter()
        .map(|&(c, _)| (file_id(c).to_string(), 100.0 * hist.occurrence_share(c)))
        .collect();
    let class_png = dir.join("class_histogram.png");
    plot(plots::bar_chart(
        &class_png,
        "Class occurrences",
        "class id",
        "% of class occurrences",
        &bars,
    ))?;
    let mut artifacts = vec![class_csv, size_csv, class_png];
    for (name, map, lo, hi) in [
        ("width", &sizes.widths, sizes.min_width, sizes.max_width),
        ("height", &sizes.heights, sizes.min_height, sizes.max_height),
    ] {
        let bins = (hi - lo + 1).min(20);
        let step = (hi - lo + 1).div_ceil(bins);
        let mut counts = vec![0u64; bins];
        for (&v, &n) in map.iter() {
            counts[((v - lo) / step).min(bins - 1)] += n;
        }
        let bars: Vec<(String, f64)> = counts
            .iter()
            .enumerate()
            .map(|(i, &n)| ((lo + i * step).to_string(), n as f64))
            .collect();
        let png = dir.join(format!("image_{name}s.png"));
        plot(plots::bar_chart(
            &png,
            &format!("Image {name}s"),
            &format!("{name} (px, bin start)"),
            "images",
            &bars,
        ))?;
        artifacts.push(png);
    }

    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} images, {} annotations, {} classes present",
        index.len(),
        index.records().count(),
        ranked.len()
    );
    let line = |s: &mut String, c: usize| {
        let _ = writeln!(
            s,
            "  class {:>3}: {:6.3}% of class occurrences, {} images ({:.2}% of images), {} instances",
            file_id(c),
            100.0 * hist.occurrence_share(c),
            hist.image_counts[c],
            100.0 * hist.image_share(c),
            hist.instance_counts[c]
        );
    };
    let _ = writeln!(s, "most frequent:");
    for &(c, _) in ranked.iter().take(top) {
        line(&mut s, c);
    }
    let _ = writeln!(s, "least frequent:");
    for &(c, _) in ranked.iter().rev().take(top).collect::<Vec<_>>().iter().rev() {
        line(&mut s, *c);
    }
    let _ = writeln!(
        s,
        "widths {}..{} px, heights {}..{} px",
        sizes.min_width, sizes.max_width, sizes.min_height, sizes.max_height
    );
    s.push_str(&row_error_lines(&row_errors));
    Ok(CommandResult::ok(s, artifacts))
}

fn decode(
    cli: &Cli,
    csv: &Path,
    image_id: &str,
    out: Option<&Path>,
    size: usize,
    class_offset: i64,
) -> Result<CommandResult> {
    let (index, row_errors) = load_index(cli, csv, class_offset)?;
    let entry = index
        .get(image_id)
        .ok_or_else(|| Error::config(format!("image id {image_id:?} not found in {}", csv.display())))?;
    let map = entry.class_map(PixelOrder::ColumnMajor)?;
    let foreground = map.labels().iter().filter(|&&l| l != 0).count();
    let resized = if size == 0 {
        map.clone()
    } else {
        resize_classmap(&map, size, size)
    };
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => out_dir(cli)?.join(format!("{image_id}_mask.png")),
    };
    write_class_map_png(&resized, &path)?;
    let labels: Vec<String> = resized.label_set().iter().map(|l| l.to_string()).collect();
    let mut s = format!(
        "{image_id}: {}x{} annotated, {foreground} foreground pixels before resizing; wrote {}x{} map with labels [{}] to {}\n",
        map.width(),
        map.height(),
        resized.width(),
        resized.height(),
        labels.join(", "),
        path.display()
    );
    s.push_str(&row_error_lines(&row_errors));
    Ok(CommandResult::ok(s, vec![path]))
}

fn encode(cli: &Cli, mask: &Path, image_id: Option<&str>, out: Option<&Path>) -> Result<CommandResult> {
    let map = read_class_map_png(mask)?;
    let id = match image_id {
        Some(id) => id.to_string(),
        None => mask
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| Error::config(format!("cannot derive an image id from {}", mask.display())))?,
    };
    let records: Vec<AnnotationRecord> = map
        .label_set()
        .into_iter()
        .filter(|&l| l != 0)
        .map(|l| {
            let bin = BinaryMask::from_fn(map.width(), map.height(), |x, y| map.get(x, y) == l);
            AnnotationRecord {
                image_id: id.clone(),
                encoded_pixels: rle_encode(&bin, PixelOrder::ColumnMajor).to_string(),
                class_id: l,
                height: map.height(),
                width: map.width(),
            }
        })
        .collect();
    let n = records.len();
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => out_dir(cli)?.join(format!("{id}.csv")),
    };
    DatasetIndex::from_records(records)?.write_csv(&path)?;
    Ok(CommandResult::ok(
        format!("{id}: {n} class masks encoded to {}\n", path.display()),
        vec![path],
    ))
}

fn make_toy(cli: &Cli, count: usize, size: usize, spec_path: Option<&Path>) -> Result<CommandResult> {
    let mut spec = match spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<ToySpec>(&text)?
        }
        None => ToySpec::default(),
    };
    spec.count = count;
    spec.width = size;
    spec.height = size;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let toy = generate_toy(&spec)?;
    let dir = out_dir(cli)?;
    toy.save(dir)?;
    let bg: f64 = toy.samples.iter().map(|s| s.target.background_fraction()).sum::<f64>() / toy.samples.len() as f64;
    Ok(CommandResult::ok(
        format!(
            "{} toy images of {size}x{size} (seed {}, mean background {:.1}%) written to {}\n",
            toy.samples.len(),
            spec.seed,
            100.0 * bg,
            dir.display()
        ),
        vec![dir.join(MANIFEST_FILE), dir.join(ANNOTATIONS_FILE)],
    ))
}

fn curves(dir: &Path, log: &RunLog) -> Result<Vec<PathBuf>> {
    let pts = |f: fn(&segkit::training::EpochRecord) -> f64| -> Vec<(f64, f64)> {
        log.records.iter().map(|r| (r.epoch as f64, f(r))).collect()
    };
    let loss = dir.join("curve_loss.png");
    plot(plots::line_chart(
        &loss,
        "Training loss",
        "epoch",
        "loss",
        &[("train", pts(|r| r.train_loss))],
    ))?;
    let acc = dir.join("curve_accuracy.png");
    plot(plots::line_chart(
        &acc,
        "Pixel accuracy",
        "epoch",
        "accuracy",
        &[("train", pts(|r| r.train_acc)), ("validation", pts(|r| r.val_acc))],
    ))?;
    let iou = dir.join("curve_iou.png");
    plot(plots::line_chart(
        &iou,
        "Binary IoU",
        "epoch",
        "IoU",
        &[("train", pts(|r| r.train_biou)), ("validation", pts(|r| r.val_biou))],
    ))?;
    Ok(vec![loss, acc, iou])
}

fn train(cli: &Cli, config_path: &Path) -> Result<CommandResult> {
    let mut config = TrainConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let data = data_path(config.data_dir.as_deref())?;
    config.data_dir = Some(data.clone());
    let (index, samples) = load_dir(&data, Some(config.image_size), ingest_mode(cli))?;
    let dir = out_dir(cli)?.to_path_buf();
    let resolved = dir.join("config.resolved.txt");
    write_text(&resolved, &config.to_text())?;
    let outcome = run_stage::<f32>(&config, &index, &samples)?;

    let runlog = dir.join("runlog.jsonl");
    outcome.log.write_jsonl(&runlog)?;
    let summary = dir.join("run_summary.json");
    write_text(&summary, &(outcome.log.summary_json() + "\n"))?;
    let ckpt = dir.join("model.ckpt");
    outcome.checkpoint.save(&ckpt)?;
    let metrics = dir.join("metrics.json");
    write_text(&metrics, &(outcome.report.to_json_pretty() + "\n"))?;
    let mut artifacts = vec![resolved, runlog, summary, ckpt, metrics];
    artifacts.extend(curves(&dir, &outcome.log)?);

    let last = outcome.log.last().expect("runs have at least one epoch");
    let mut s = format!(
        "{} stage, {} on {} training / {} validation images, {} epochs, {} updates\n",
        outcome.stage.as_str(),
        config.model,
        outcome.train_ids.len(),
        outcome.val_ids.len(),
        outcome.log.records.len(),
        outcome.log.steps
    );
    let _ = writeln!(
        s,
        "last epoch: loss {:.5}, train acc {:.4}, train IoU {:.4}, val acc {:.4}, val IoU {:.4}",
        last.train_loss, last.train_acc, last.train_biou, last.val_acc, last.val_biou
    );
    let _ = writeln!(
        s,
        "checkpoint (epoch {}): accuracy {:.4}, binary IoU {:.4}",
        outcome.checkpoint.epoch, outcome.report.pixel_accuracy, outcome.report.binary_iou
    );
    if let (Stage::OverfitOne, Some(ok)) = (outcome.stage, outcome.success) {
        let _ = writeln!(s, "success: {ok} (threshold {})", config.success_threshold);
    }
    let _ = writeln!(s, "artifacts in {}", dir.display());
    Ok(CommandResult::ok(s, artifacts))
}

/// Samples at the checkpoint's input size from a dataset directory or CSV.
fn eval_samples(cli: &Cli, data: &Path, size: usize) -> Result<Vec<Sample>> {
    if data.is_dir() {
        return Ok(load_dir(data, Some(size), ingest_mode(cli))?.1);
    }
    let (index, _) = load_index(cli, data, 0)?;
    let images = data.parent().unwrap_or(Path::new(".")).join(IMAGES_DIR);
    load_samples(&index, &images, Some(size), PixelOrder::ColumnMajor)
}

fn eval(cli: &Cli, checkpoint: &Path, data: Option<&Path>) -> Result<CommandResult> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = data_path(data)?;
    let input = ckpt.spec.input;
    if input.width != input.height {
        return Err(Error::Compatibility(format!(
            "checkpoint expects {}x{} input; only square inputs are evaluated",
            input.width, input.height
        )));
    }
    let samples = eval_samples(cli, &data, input.width)?;
    let report = evaluate(&ckpt, &samples)?;
    let path = out_dir(cli)?.join("metrics.json");
    write_text(&path, &(report.to_json_pretty() + "\n"))?;
    let mut s = String::new();
    let _ = writeln!(s, "{:<24} {:>10} {:>10}", "Model", "Accuracy", "IoU");
    let _ = writeln!(
        s,
        "{:<24} {:>10.4} {:>10.4}",
        ckpt.spec.name, report.pixel_accuracy, report.binary_iou
    );
    let _ = writeln!(s, "{} images; report written to {}", report.n_images, path.display());
    Ok(CommandResult::ok(s, vec![path]))
}

fn predict(cli: &Cli, checkpoint: &Path, image_path: &Path, out: Option<&Path>) -> Result<CommandResult> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut model = Model::<f32>::from_checkpoint(&ckpt)?;
    let mut image = image::open(image_path)?.to_rgb8();
    let input = ckpt.spec.input;
    if (image.width() as usize, image.height() as usize) != (input.width, input.height) {
        image = image::imageops::resize(
            &image,
            input.width as u32,
            input.height as u32,
            image::imageops::FilterType::Triangle,
        );
    }
    let map = model
        .predict(image_to_tensor(&image))?
        .pop()
        .expect("one image in, one map out");
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let stem = image_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            out_dir(cli)?.join(format!("{stem}_pred.png"))
        }
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_class_map_png(&map, &path)?;
    let overlay = path.with_file_name(format!(
        "{}_overlay.png",
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    ));
    write_overlay_png(&image, &map, &overlay)?;
    let labels: Vec<String> = map.label_set().iter().map(|l| l.to_string()).collect();
    Ok(CommandResult::ok(
        format!(
            "predicted labels [{}], background {:.1}%; mask {} and overlay {}\n",
            labels.join(", "),
            100.0 * map.background_fraction(),
            path.display(),
            overlay.display()
        ),
        vec![path, overlay],
    ))
}

fn gradcheck(cli: &Cli, trials: usize, inject_fault: Option<&str>) -> CommandResult {
    if trials == 0 {
        return CommandResult::usage("--trials must be at least 1");
    }
    let inject_fault = match inject_fault.map(str::parse::<CheckedGradient>).transpose() {
        Ok(f) => f,
        Err(e) => return CommandResult::usage(e),
    };
    let report = run_gradcheck(&GradcheckOptions {
        seed: cli.seed.unwrap_or(0),
        trials,
        inject_fault,
        ..Default::default()
    });
    let mut s = format!("{:<16} {:>7} {:>14}  status\n", "gradient", "trials", "max rel err");
    for e in &report.entries {
        let _ = writeln!(
            s,
            "{:<16} {:>7} {:>14.3e}  {}",
            e.gradient.name(),
            e.trials,
            e.max_relative_error,
            if e.passed { "ok" } else { "FAIL" }
        );
    }
    let _ = writeln!(s, "tolerance {:e}", report.tolerance);
    if report.all_passed() {
        CommandResult::ok(s, vec![])
    } else {
        let failed: Vec<&str> = report
            .entries
            .iter()
            .filter(|e| !e.passed)
            .map(|e| e.gradient.name())
            .collect();
        CommandResult {
            code: 1,
            artifacts: vec![],
            summary: format!("{s}error: gradient check failed for {}\n", failed.join(", ")),
        }
    }
}
