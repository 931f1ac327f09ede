use std::path::Path;
use std::process::{Command, Output};

fn segkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segkit"))
        .current_dir(dir)
        .env_remove("SEGKIT_DATA_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn make_toy(dir: &Path) {
    let o = segkit(dir, &["--out-dir", "toy", "make-toy", "--count", "6", "--size", "32"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

const CONFIG: &str = "model = segnet-w4\nstage = full\ndata_dir = toy\nimage_size = 32\nnum_classes = 6\nepochs = 2\n";

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(segkit(tmp.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        segkit(tmp.path(), &["gradcheck", "--trials", "x"]).status.code(),
        Some(2)
    );
}

#[test]
fn invalid_loss_name_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("c.txt"), "loss = hinge\n").unwrap();
    let o = segkit(tmp.path(), &["train", "c.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hinge"));
}

#[test]
fn semantic_config_problem_is_a_domain_error() {
    let tmp = tempfile::tempdir().unwrap();
    make_toy(tmp.path());
    std::fs::write(tmp.path().join("c.txt"), CONFIG.replace("epochs = 2", "epochs = 0")).unwrap();
    assert_eq!(segkit(tmp.path(), &["train", "c.txt"]).status.code(), Some(1));
}

#[test]
fn empty_csv_reports_empty_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("e.csv"), "ImageId,EncodedPixels,Height,Width,ClassId\n").unwrap();
    let o = segkit(tmp.path(), &["explore", "e.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("empty dataset"));
}

#[test]
fn explore_without_path_or_env_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = segkit(tmp.path(), &["explore"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("SEGKIT_DATA_DIR"));
}

#[test]
fn malformed_rows_are_collected_or_fatal_in_strict_mode() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("m.csv"),
        "ImageId,EncodedPixels,Height,Width,ClassId\na,1 3,4,4,1\nb,1 x,4,4,1\n",
    )
    .unwrap();
    let o = segkit(tmp.path(), &["explore", "m.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("1 malformed rows skipped"));
    assert_eq!(
        segkit(tmp.path(), &["--strict", "explore", "m.csv"]).status.code(),
        Some(1)
    );
}

#[test]
fn decode_writes_the_first_three_pixels_down_the_first_column() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("one.csv"),
        "ImageId,EncodedPixels,Height,Width,ClassId\nimg,1 3,4,4,7\n",
    )
    .unwrap();
    let o = segkit(
        tmp.path(),
        &["decode", "one.csv", "img", "--size", "0", "--out", "m.png"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("3 foreground pixels"));
    let map = segkit::mask_codec::read_class_map_png(&tmp.path().join("m.png")).unwrap();
    // row-major readout of a column-major run of 3 from pixel 1
    let want = [7, 0, 0, 0, 7, 0, 0, 0, 7, 0, 0, 0, 0, 0, 0, 0];
    assert_eq!(map.labels(), &want);
}

#[test]
fn decode_default_size_is_256() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("one.csv"),
        "ImageId,EncodedPixels,Height,Width,ClassId\nimg,1 3,4,4,1\n",
    )
    .unwrap();
    let o = segkit(tmp.path(), &["decode", "one.csv", "img", "--out", "m.png"]);
    assert_eq!(o.status.code(), Some(0));
    let img = image::open(tmp.path().join("m.png")).unwrap();
    assert_eq!((img.width(), img.height()), (256, 256));
}

#[test]
fn decode_unknown_id_fails() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("one.csv"),
        "ImageId,EncodedPixels,Height,Width,ClassId\nimg,1 3,4,4,1\n",
    )
    .unwrap();
    let o = segkit(tmp.path(), &["decode", "one.csv", "other"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("other"));
}

#[test]
fn encode_then_decode_reproduces_the_mask() {
    let tmp = tempfile::tempdir().unwrap();
    make_toy(tmp.path());
    let o = segkit(
        tmp.path(),
        &[
            "decode",
            "toy/annotations.csv",
            "toy_00002",
            "--size",
            "0",
            "--out",
            "a.png",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = segkit(tmp.path(), &["encode", "a.png", "--image-id", "x", "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = segkit(tmp.path(), &["decode", "x.csv", "x", "--size", "0", "--out", "b.png"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let a = std::fs::read(tmp.path().join("a.png")).unwrap();
    let b = std::fs::read(tmp.path().join("b.png")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn train_eval_predict_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    make_toy(tmp.path());
    std::fs::write(tmp.path().join("c.txt"), CONFIG).unwrap();
    let o = segkit(tmp.path(), &["--out-dir", "run", "train", "c.txt"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in [
        "config.resolved.txt",
        "runlog.jsonl",
        "run_summary.json",
        "model.ckpt",
        "metrics.json",
        "curve_loss.png",
        "curve_accuracy.png",
        "curve_iou.png",
    ] {
        assert!(tmp.path().join("run").join(f).is_file(), "missing {f}");
    }
    let log = std::fs::read_to_string(tmp.path().join("run/runlog.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut want = vec![
            "epoch",
            "train_loss",
            "train_acc",
            "train_biou",
            "val_acc",
            "val_biou",
            "lr",
        ];
        want.sort();
        let mut keys = keys;
        keys.sort();
        assert_eq!(keys, want);
    }

    let o = segkit(tmp.path(), &["--out-dir", "ev", "eval", "run/model.ckpt", "toy"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("Accuracy"));
    let o = segkit(
        tmp.path(),
        &[
            "--out-dir",
            "pr",
            "predict",
            "run/model.ckpt",
            "toy/images/toy_00000.png",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(tmp.path().join("pr/toy_00000_pred.png").is_file());
    assert!(tmp.path().join("pr/toy_00000_pred_overlay.png").is_file());
}

#[test]
fn bad_checkpoints_and_inputs_are_domain_errors() {
    let tmp = tempfile::tempdir().unwrap();
    make_toy(tmp.path());
    std::fs::write(tmp.path().join("c.txt"), CONFIG).unwrap();
    assert_eq!(
        segkit(tmp.path(), &["--out-dir", "run", "train", "c.txt"])
            .status
            .code(),
        Some(0)
    );

    let mut bytes = std::fs::read(tmp.path().join("run/model.ckpt")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(tmp.path().join("bad.ckpt"), &bytes).unwrap();
    let o = segkit(tmp.path(), &["eval", "bad.ckpt", "toy"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("integrity"), "{}", stderr(&o));

    let o = segkit(tmp.path(), &["predict", "run/model.ckpt", "c.txt"]);
    assert_eq!(o.status.code(), Some(1));

    // a checkpoint at another input size cannot score these 32x32 samples via CSV
    std::fs::write(
        tmp.path().join("c64.txt"),
        CONFIG.replace("image_size = 32", "image_size = 64"),
    )
    .unwrap();
    assert_eq!(
        segkit(tmp.path(), &["--out-dir", "run64", "train", "c64.txt"])
            .status
            .code(),
        Some(0)
    );
    let o = segkit(tmp.path(), &["eval", "run64/model.ckpt", "toy/annotations.csv"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "CSV input is resized to the checkpoint: {}",
        stderr(&o)
    );
}

#[test]
fn gradcheck_passes_and_reports_injected_faults() {
    let tmp = tempfile::tempdir().unwrap();
    let o = segkit(tmp.path(), &["gradcheck", "--trials", "10"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = segkit(
        tmp.path(),
        &["gradcheck", "--trials", "10", "--inject-fault", "gdl-multiclass"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gradient check failed for gdl-multiclass"));
    let o = segkit(tmp.path(), &["gradcheck", "--inject-fault", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    make_toy(tmp.path());
    std::fs::write(tmp.path().join("c.txt"), CONFIG).unwrap();
    for run in ["a", "b"] {
        let o = segkit(
            tmp.path(),
            &[
                "--out-dir",
                &format!("{run}/toy"),
                "make-toy",
                "--count",
                "6",
                "--size",
                "32",
            ],
        );
        assert_eq!(o.status.code(), Some(0));
        let o = segkit(tmp.path(), &["--out-dir", &format!("{run}/ex"), "explore", "toy"]);
        assert_eq!(o.status.code(), Some(0));
        let o = segkit(tmp.path(), &["--out-dir", &format!("{run}/tr"), "train", "c.txt"]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in [
        "toy/annotations.csv",
        "toy/images/toy_00003.png",
        "toy/masks/toy_00003.png",
        "ex/class_histogram.csv",
        "ex/class_histogram.png",
        "tr/runlog.jsonl",
        "tr/model.ckpt",
        "tr/curve_loss.png",
    ] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn seed_flag_overrides_the_toy_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let a = segkit(
        tmp.path(),
        &["--out-dir", "a", "make-toy", "--count", "3", "--size", "32"],
    );
    let b = segkit(
        tmp.path(),
        &[
            "--seed",
            "9",
            "--out-dir",
            "b",
            "make-toy",
            "--count",
            "3",
            "--size",
            "32",
        ],
    );
    assert_eq!((a.status.code(), b.status.code()), (Some(0), Some(0)));
    let a = std::fs::read(tmp.path().join("a/annotations.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/annotations.csv")).unwrap();
    assert_ne!(a, b);
}
