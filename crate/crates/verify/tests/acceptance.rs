//! Acceptance checks, one PASS/FAIL/SKIP line each. Exits 1 if any check fails.
//!
//! `SEGKIT_IMFD_CSV` may point at the iMaterialist annotation CSV to enable
//! the dataset statistics check.

use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segkit::dataset::{generate_toy, ToySpec};
use segkit::losses::check::{run_gradcheck, GradcheckOptions};
use segkit::losses::{focal_loss, gdl_value, FocalGamma, GdlParams, ScoreMap};
use segkit::mask_codec::{parse_rle, rle_decode, rle_encode, BinaryMask, ClassMap, PixelOrder};
use segkit::metrics::{binary_iou, pixel_accuracy};
use segkit::models::{build_segnet, Model};
use segkit::training::{fit, overfit_single, TrainConfig};
use segkit_cli::Cli;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = (&'static str, fn() -> Verdict);

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn param_counts() -> Verdict {
    let t = Instant::now();
    let report = build_segnet(47).expect("SegNet builds").param_count();
    let golden = [
        ("Simple_Block_1", 39_232),
        ("Simple_Block_2", 222_464),
        ("Complex_block_1", 1_478_400),
        ("Complex_block_2", 5_905_920),
        ("Complex_block_3", 5_905_920),
        ("Final_Block", 114_287),
    ];
    let mut wrong = vec![];
    for (name, want) in golden {
        let got = report.block(name);
        if got != Some(want) {
            wrong.push(format!("{name} = {got:?}, expected {want}"));
        }
    }
    let elapsed = t.elapsed();
    let detail = if wrong.is_empty() {
        format!("all {} rows exact in {}", golden.len(), secs(elapsed))
    } else {
        format!("{} in {}", wrong.join("; "), secs(elapsed))
    };
    verdict(wrong.is_empty() && elapsed < Duration::from_secs(1), detail)
}

fn gradient_oracles() -> Verdict {
    let t = Instant::now();
    let report = run_gradcheck(&GradcheckOptions {
        trials: 100,
        ..Default::default()
    });
    let elapsed = t.elapsed();
    let parts: Vec<String> = report
        .entries
        .iter()
        .map(|e| format!("{} {}x max {:.1e}", e.gradient.name(), e.trials, e.max_relative_error))
        .collect();
    let ok = report.tolerance <= 1e-4
        && report.entries.len() == 4
        && report
            .entries
            .iter()
            .all(|e| e.passed && e.trials >= 100 && e.max_relative_error <= 1e-4)
        && elapsed < Duration::from_secs(60);
    verdict(ok, format!("{} in {}", parts.join(", "), secs(elapsed)))
}

fn two_class(values: &[[f64; 2]]) -> ScoreMap {
    ScoreMap::from_vec(values.len(), 1, 2, values.iter().flatten().copied().collect()).unwrap()
}

fn gdl_hand_case() -> Verdict {
    let target = two_class(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
    let uniform = two_class(&[[0.5, 0.5]; 4]);
    let complement = two_class(&[[0.0, 1.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0]]);
    let params = GdlParams::default();
    let u = gdl_value(&uniform, &target, &params).unwrap();
    let p = gdl_value(&target, &target, &params).unwrap();
    let c = gdl_value(&complement, &target, &params).unwrap();
    let ok = (u - 0.5).abs() <= 1e-9 && p.abs() <= 1e-9 && (c - 1.0).abs() <= 1e-9;
    verdict(ok, format!("uniform {u}, perfect {p}, complement {c}"))
}

fn focal_reductions() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (w, h, c) = (
            rng.random_range(1..=8),
            rng.random_range(1..=8),
            rng.random_range(2..=5),
        );
        let mut p = Vec::with_capacity(w * h * c);
        let mut r = vec![0.0; w * h * c];
        let mut ce = 0.0;
        for n in 0..w * h {
            let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let label = rng.random_range(0..c);
            r[n * c + label] = 1.0;
            ce -= (raw[label] / sum).ln();
            p.extend(raw.iter().map(|v| v / sum));
        }
        ce /= (w * h) as f64;
        let p = ScoreMap::from_vec(w, h, c, p).unwrap();
        let r = ScoreMap::from_vec(w, h, c, r).unwrap();
        let fl = focal_loss(&p, &r, FocalGamma::new(0.0).unwrap(), 1e-12).unwrap().value;
        worst = worst.max((fl - ce).abs());
    }
    let half = focal_loss(
        &two_class(&[[0.5, 0.5]]),
        &two_class(&[[1.0, 0.0]]),
        FocalGamma::new(2.0).unwrap(),
        1e-12,
    )
    .unwrap()
    .value;
    let want = 0.25 * std::f64::consts::LN_2;
    let ok = worst <= 1e-12 && (half - want).abs() <= 1e-9;
    verdict(
        ok,
        format!(
            "gamma 0 vs cross entropy max |diff| {worst:.1e} over 200 maps; FL(0.5, 2) = {half:.12} (want {want:.12})"
        ),
    )
}

fn codec_roundtrips() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = 0usize;
    for i in 0..10_000 {
        let order = if i % 2 == 0 {
            PixelOrder::ColumnMajor
        } else {
            PixelOrder::RowMajor
        };
        let (w, h) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let density: f64 = rng.random();
        let values: Vec<u8> = (0..w * h).map(|_| rng.random_bool(density) as u8).collect();
        let mask = BinaryMask::from_values(w, h, &values).unwrap();
        let back = rle_decode(&rle_encode(&mask, order), w, h, order).unwrap();
        failures += (back != mask) as usize;
    }
    // "1 3" covers the first three positions of the flattened image
    let pairs = parse_rle("1 3").unwrap();
    for order in [PixelOrder::ColumnMajor, PixelOrder::RowMajor] {
        let m = rle_decode(&pairs, 4, 5, order).unwrap();
        let set: Vec<(usize, usize)> = (0..5)
            .flat_map(|y| (0..4).map(move |x| (x, y)))
            .filter(|&(x, y)| m.get(x, y))
            .collect();
        let want = match order {
            PixelOrder::ColumnMajor => vec![(0, 0), (0, 1), (0, 2)],
            PixelOrder::RowMajor => vec![(0, 0), (1, 0), (2, 0)],
        };
        failures += (set != want) as usize;
    }
    let elapsed = t.elapsed();
    verdict(
        failures == 0 && elapsed < Duration::from_secs(60),
        format!(
            "{failures} failures over 10000 random masks and the \"1 3\" case in {}",
            secs(elapsed)
        ),
    )
}

fn accuracy_blindness() -> Verdict {
    let toy = generate_toy(&ToySpec {
        count: 20,
        width: 64,
        height: 64,
        ..Default::default()
    })
    .unwrap();
    let mut worst: f64 = 0.0;
    let mut max_iou: f64 = 0.0;
    for s in &toy.samples {
        let gt = &s.target;
        let pred = ClassMap::background(gt.width(), gt.height());
        worst = worst.max((pixel_accuracy(&pred, gt).unwrap() - gt.background_fraction()).abs());
        max_iou = max_iou.max(binary_iou(&pred, gt).unwrap());
    }
    let f: f64 = toy.samples.iter().map(|s| s.target.background_fraction()).sum::<f64>() / toy.samples.len() as f64;
    verdict(
        worst <= 1e-12 && max_iou == 0.0,
        format!("mean background {f:.3}; |accuracy - f| <= {worst:.1e}, max binary IoU {max_iou}"),
    )
}

fn overfit_one_image() -> Verdict {
    let toy = generate_toy(&ToySpec {
        count: 1,
        width: 64,
        height: 64,
        ..Default::default()
    })
    .unwrap();
    let mut parts = vec![];
    let mut ok = true;
    for name in ["segnet", "unet"] {
        let config = TrainConfig {
            model: name.into(),
            image_size: 64,
            epochs: 300,
            lr: 0.01,
            ..Default::default()
        };
        let t = Instant::now();
        let mut model = Model::<f32>::new(config.model_spec().unwrap(), config.seed).unwrap();
        let out = overfit_single(&mut model, &toy.samples[0], &config).unwrap();
        let r = &out.report;
        ok &= r.pixel_accuracy >= 0.99 && r.binary_iou >= 0.90;
        parts.push(format!(
            "{name} acc {:.4} IoU {:.4} ({})",
            r.pixel_accuracy,
            r.binary_iou,
            secs(t.elapsed())
        ));
    }
    verdict(ok, format!("64x64, SGD + focal, 300 epochs: {}", parts.join(", ")))
}

fn optimizer_contrast() -> Verdict {
    let toy = generate_toy(&ToySpec {
        count: 20,
        width: 64,
        height: 64,
        seed: 7,
        extent: (0.1, 0.2),
        shapes_per_image: (1, 2),
        ..Default::default()
    })
    .unwrap();
    let bg: f64 = toy.samples.iter().map(|s| s.target.background_fraction()).sum::<f64>() / 20.0;
    let (train, val) = toy.samples.split_at(16);
    let mut wins = 0;
    let mut parts = vec![];
    for seed in [1u64, 2, 3] {
        let mut iou = [0.0; 2];
        for (slot, (optimizer, loss)) in [("sgd", "focal"), ("adam", "wce")].into_iter().enumerate() {
            let mut config = TrainConfig {
                model: "segnet-w8".into(),
                image_size: 64,
                epochs: 40,
                seed,
                lr: 0.01,
                ..Default::default()
            };
            config.set("optimizer", optimizer).unwrap();
            config.set("loss", loss).unwrap();
            let mut model = Model::<f32>::new(config.model_spec().unwrap(), seed).unwrap();
            let out = fit(&mut model, train, val, &config).unwrap();
            iou[slot] = out.log.last().unwrap().val_biou;
        }
        wins += (iou[0] > iou[1]) as usize;
        parts.push(format!("seed {seed}: {:.4} vs {:.4}", iou[0], iou[1]));
    }
    verdict(
        bg >= 0.95 && wins >= 2,
        format!(
            "background {:.1}%, SGD+focal vs Adam+CE val IoU after 40 epochs: {}; SGD ahead on {wins}/3",
            100.0 * bg,
            parts.join(", ")
        ),
    )
}

fn cli(dir: &Path, args: &[&str]) -> segkit_cli::CommandResult {
    let mut argv = vec!["segkit", "--out-dir"];
    let out = dir.to_str().unwrap();
    argv.push(out);
    argv.extend_from_slice(args);
    segkit_cli::run(&Cli::parse_from(argv))
}

fn train_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let r = cli(&root.join("toy"), &["make-toy", "--count", "8", "--size", "64"]);
    assert_eq!(r.code, 0, "{}", r.summary);
    let config = root.join("train.txt");
    std::fs::write(
        &config,
        format!(
            "model = segnet-w8\nstage = full\ndata_dir = {}\nimage_size = 64\nnum_classes = 6\nepochs = 3\nbatch_size = 2\n",
            root.join("toy").display()
        ),
    )
    .unwrap();
    let mut logs = vec![];
    for run in ["a", "b"] {
        let r = cli(&root.join(run), &["train", config.to_str().unwrap()]);
        if r.code != 0 {
            return Verdict::Fail(format!("train exited {}: {}", r.code, r.summary));
        }
        logs.push(std::fs::read(root.join(run).join("runlog.jsonl")).unwrap());
    }
    verdict(
        logs[0] == logs[1] && !logs[0].is_empty(),
        format!(
            "two runs wrote {} and {} byte run logs, identical: {}",
            logs[0].len(),
            logs[1].len(),
            logs[0] == logs[1]
        ),
    )
}

fn imfd_statistics() -> Verdict {
    let Some(csv) = std::env::var_os("SEGKIT_IMFD_CSV") else {
        return Verdict::Skip("SEGKIT_IMFD_CSV not set".into());
    };
    let tmp = tempfile::tempdir().unwrap();
    let r = cli(tmp.path(), &["explore", csv.to_str().unwrap(), "--class-offset", "1"]);
    if r.code != 0 {
        return Verdict::Fail(format!("explore exited {}: {}", r.code, r.summary));
    }
    let table = std::fs::read_to_string(tmp.path().join("class_histogram.csv")).unwrap();
    let row = |id: &str| -> Option<Vec<String>> {
        table
            .lines()
            .map(|l| l.split(',').map(String::from).collect::<Vec<_>>())
            .find(|f| f[0] == id)
    };
    let (Some(sleeve), Some(umbrella)) = (row("31"), row("26")) else {
        return Verdict::Fail("class 31 or 26 missing from the histogram".into());
    };
    let share = 100.0 * sleeve[4].parse::<f64>().unwrap();
    let count: u64 = umbrella[1].parse().unwrap();
    verdict(
        (share - 17.8).abs() <= 0.2 && count == 35,
        format!("class 31 share {share:.3}%, class 26 count {count}"),
    )
}

fn main() {
    let checks: [Check; 10] = [
        ("SegNet parameter counts per block", param_counts),
        ("loss gradients vs central differences", gradient_oracles),
        ("generalized Dice hand cases", gdl_hand_case),
        ("focal loss reductions", focal_reductions),
        ("RLE codec round trips", codec_roundtrips),
        ("all-background predictor", accuracy_blindness),
        ("SegNet and U-Net overfit one image", overfit_one_image),
        ("SGD+focal beats Adam+CE on imbalanced data", optimizer_contrast),
        ("identical training runs give identical logs", train_determinism),
        ("iMaterialist class statistics", imfd_statistics),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let (tag, detail) = match check() {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {:>2} {name}: {detail}", i + 1);
    }
    println!("{failed} of {} checks failed", checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
