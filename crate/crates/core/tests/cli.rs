use std::path::{Path, PathBuf};
use std::process::Command;

use cellnas::cli::run_args;
use cellnas::datapipe::{synthetic_stripes, Label};
use cellnas::genotype::ArchPair;
use image::GrayImage;

const IDENTITY_CELLS: &str = r#"{"B": 2,
  "normal": [[0, "identity", 1, "identity"], [2, "identity", 1, "identity"]],
  "reduction": [[0, "identity", 1, "identity"], [2, "identity", 1, "identity"]]}"#;

const DESK: &str = "synthetic_per_class = 10
synthetic_side = 16
input_side = 16
augment = false
B = 3
search_base_channels = 4
base_channels = 4
controller_epochs = 5
candidates_per_epoch = 2
epochs = 1
batch_size = 16
";

fn run(dir: &Path, args: &[&str]) -> i32 {
    let mut full = vec!["cellnas".to_string()];
    full.extend(args.iter().map(|a| a.replace("{}", dir.to_str().unwrap())));
    run_args(full)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// `root/benign/*.png` and `root/malignant/*.png` from the stripe generator.
fn png_dataset(root: &Path, per_class: usize) {
    for img in synthetic_stripes(per_class, 16, 1) {
        let dir = root.join(img.label.dir_name());
        std::fs::create_dir_all(&dir).unwrap();
        let name = img.source_id.rsplit('/').next().unwrap().to_string() + ".png";
        GrayImage::from_raw(16, 16, img.pixels).unwrap().save(dir.join(name)).unwrap();
    }
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn augment_writes_eight_per_original_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::create_dir_all(d.join("one/benign")).unwrap();
    GrayImage::from_fn(5, 4, |x, y| image::Luma([(x * 40 + y * 7) as u8])).save(d.join("one/benign/a.png")).unwrap();
    assert_eq!(run(d, &["augment", "{}/one", "--out", "{}/aug"]), 0);
    let pngs = std::fs::read_dir(d.join("aug/images/benign")).unwrap().count();
    assert_eq!(pngs, 8);
    assert_eq!(read(d.join("aug/manifest.csv")).lines().count(), 9);
    let manifest = read(d.join("aug/manifest.csv"));
    let experiment = read(d.join("aug/experiment.json"));

    // refuses to overwrite, then reproduces byte for byte
    assert_eq!(run(d, &["augment", "{}/one", "--out", "{}/aug"]), 2);
    assert_eq!(run(d, &["augment", "{}/one", "--out", "{}/aug", "--force"]), 0);
    assert_eq!(read(d.join("aug/manifest.csv")), manifest);
    assert_eq!(read(d.join("aug/experiment.json")), experiment);
    assert!(d.join("aug/experiment.timestamps.json").is_file());
}

#[test]
fn augment_carries_folds_into_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    png_dataset(&d.join("data"), 10);
    assert_eq!(run(d, &["augment", "{}/data", "--out", "{}/aug"]), 0);
    let mut rdr = csv::Reader::from_path(d.join("aug/manifest.csv")).unwrap();
    let rows: Vec<cellnas::datapipe::ManifestRow> = rdr.deserialize().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 160);
    assert!(rows.iter().all(|r| r.fold.is_some()));
    let exp: serde_json::Value = serde_json::from_str(&read(d.join("aug/experiment.json"))).unwrap();
    assert_eq!(exp["dataset"]["per_class"][Label::Malignant.dir_name()], 10);
    assert_eq!(exp["dataset"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn folds_then_search_then_cv_then_train_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    png_dataset(&d.join("data"), 10);
    assert_eq!(run(d, &["folds", "{}/data", "--out", "{}/folds"]), 0);
    let cfg = DESK.replace("synthetic_per_class = 10\n", "")
        + &format!("dataset = {:?}\nfolds = {:?}\n", d.join("data"), d.join("folds/folds.json"));
    write(d, "desk.toml", &cfg);

    assert_eq!(run(d, &["search", "--config", "{}/desk.toml", "--out", "{}/search"]), 0);
    let arch = ArchPair::from_json(&read(d.join("search/genotype.json"))).unwrap();
    assert_eq!(arch.nodes(), 3);
    let report: serde_json::Value = serde_json::from_str(&read(d.join("search/search_report.json"))).unwrap();
    assert_eq!(report["candidates"].as_array().unwrap().len(), 10);
    assert!(d.join("search/controller.bin").is_file() && d.join("search/controller.json").is_file());

    assert_eq!(run(d, &["cv", "{}/search/genotype.json", "ENAS7", "--config", "{}/desk.toml", "--out", "{}/cv"]), 0);
    let csv = read(d.join("cv/metrics.csv"));
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["0", "1", "2", "3", "4", "pooled", "mean"]);
    for f in 0..5 {
        assert!(d.join(format!("cv/fold{f}.ckpt")).is_file());
    }
    assert_eq!(run(d, &["eval", "{}/cv/fold0.ckpt", "--config", "{}/desk.toml", "--out", "{}/eval"]), 0);
    let m: serde_json::Value = serde_json::from_str(&read(d.join("eval/eval.json"))).unwrap();
    assert_eq!(m["tn"].as_u64().unwrap() + m["fp"].as_u64().unwrap(), 10);

    assert_eq!(run(d, &["train", "{}/search/genotype.json", "ENAS7", "--config", "{}/desk.toml", "--out", "{}/train"]), 0);
    for f in ["model.ckpt", "model.json", "curve.json", "experiment.json"] {
        assert!(d.join("train").join(f).is_file(), "{f}");
    }
}

#[test]
fn cv_echoes_the_seventeen_cell_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "desk.toml", DESK);
    write(d, "g.json", IDENTITY_CELLS);
    assert_eq!(run(d, &["cv", "{}/g.json", "enas17", "--config", "{}/desk.toml", "--out", "{}/cv"]), 0);
    let exp: serde_json::Value = serde_json::from_str(&read(d.join("cv/experiment.json"))).unwrap();
    assert_eq!(exp["arguments"]["plan"], "NNNNNRNNNNNRNNNNN");
    assert_eq!(exp["arguments"]["variant"], "ENAS17");
}

#[test]
fn missing_inputs_fail_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "nodata.toml", "dataset = \"/definitely/not/here\"\n");
    assert_eq!(run(d, &["search", "--config", "{}/nodata.toml", "--out", "{}/s"]), 2);
    assert!(!d.join("s").exists());
    write(d, "desk.toml", DESK);
    assert_eq!(run(d, &["cv", "{}/missing.json", "ENAS7", "--config", "{}/desk.toml", "--out", "{}/cv"]), 2);
    assert!(!d.join("cv").exists());
}

#[test]
fn default_settings_echo_search_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "g.json", IDENTITY_CELLS);
    assert_eq!(run(d, &["params", "{}/g.json", "ENAS7", "--out", "{}/p"]), 0);
    let exp: serde_json::Value = serde_json::from_str(&read(d.join("p/experiment.json"))).unwrap();
    assert_eq!(exp["config"]["controller_epochs"], 150);
    assert_eq!(exp["config"]["candidates_per_epoch"], 10);
    assert_eq!(exp["config"]["validation_fraction"], 0.1);
    assert_eq!(exp["versions"].as_object().unwrap().len(), 6);
}

#[test]
fn identity_cells_without_projections_count_by_hand() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "g.json", IDENTITY_CELLS);
    assert_eq!(run(d, &["params", "{}/g.json", "ENAS7", "--no-projections", "--out", "{}/p"]), 0);
    let r: serde_json::Value = serde_json::from_str(&read(d.join("p/params.json"))).unwrap();
    // stem 3x3 conv 1->36 plus batchnorm scale and shift; head 144->2 with bias
    let expect = 9 * 36 + 2 * 36 + 144 * 2 + 2;
    assert_eq!(r["analytic"], expect);
    assert_eq!(r["enumerated"], expect);
    assert_eq!(r["published"], 2_342_484);
}

#[test]
fn alexnet_params_report_the_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(run(d, &["params", "--alexnet", "--out", "{}/a"]), 0);
    let r: serde_json::Value = serde_json::from_str(&read(d.join("a/params.json"))).unwrap();
    assert_eq!(r["published"], 56_858_656);
    assert_eq!(r["analytic"], r["enumerated"]);
    assert!(r["deviation_percent"].as_f64().unwrap().is_finite());
}

#[test]
fn render_is_deterministic_and_validates_first() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "g.json", IDENTITY_CELLS);
    assert_eq!(run(d, &["render", "{}/g.json", "--out", "{}/r"]), 0);
    let normal = read(d.join("r/normal.dot"));
    assert!(normal.starts_with("digraph \"normal\""));
    assert!(d.join("r/reduction.dot").is_file());
    assert_eq!(run(d, &["render", "{}/g.json", "--out", "{}/r", "--force"]), 0);
    assert_eq!(read(d.join("r/normal.dot")), normal);

    write(d, "bad.json", &IDENTITY_CELLS.replacen("[2, \"identity\"", "[3, \"identity\"", 1));
    assert_eq!(run(d, &["render", "{}/bad.json", "--out", "{}/bad"]), 1);
    assert!(!d.join("bad").exists());
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_cellnas");
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    for cmd in ["augment", "folds", "search", "cv", "train", "eval", "params", "render"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    assert_eq!(Command::new(bin).arg("frobnicate").output().unwrap().status.code(), Some(1));

    let cfg = write(tmp.path(), "bad.toml", "epochz = 1\nB = \"three\"\nbatch_size = 0\n");
    let out = Command::new(bin).args(["search", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for key in ["epochz", "`B`", "batch_size"] {
        assert!(err.contains(key), "{key} not reported in {err}");
    }
}
