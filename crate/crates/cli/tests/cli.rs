use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gadaboost"));
    cmd.env_remove("GADABOOST_SEED").env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small synthetic corpus shared by every test (read-only).
fn corpus() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        ok(run(&[
            "synth", "--out", p(dir.path()), "--seed", "3", "--window", "12", "--positives", "240",
            "--negatives", "20", "--test-images", "6", "--size", "48",
        ]));
        dir
    })
    .path()
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let c = corpus();
    let text = format!(
        "positives = {:?}\nnegatives = {:?}\ntest_images = {:?}\nannotations = {:?}\n\
         window_w = 12\nwindow_h = 12\nnum_stages = 3\npos_per_stage = 100\nneg_per_stage = 100\n\
         registry_scope = \"stage\"\n",
        c.join("positives"),
        c.join("negatives"),
        c.join("test"),
        c.join("test/annotations.txt"),
    );
    // Keys in `extra` replace the defaults above.
    let key = |l: &str| l.split('=').next().unwrap_or("").trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let merged: String = text
        .lines()
        .filter(|l| !overridden.contains(&key(l)))
        .map(|l| format!("{l}\n"))
        .collect::<String>()
        + extra;
    let path = dir.join("run.toml");
    fs::write(&path, merged).unwrap();
    path
}

fn train(dir: &Path, extra: &str, args: &[&str]) -> (PathBuf, serde_json::Value) {
    let cfg = write_config(dir, extra);
    let out = dir.join("out");
    let mut full = vec!["train", "--config", p(&cfg), "--out", p(&out)];
    full.extend_from_slice(args);
    ok(run(&full));
    let report = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    (out, report)
}

fn features(report: &serde_json::Value) -> u64 {
    report["stages"].as_array().unwrap().iter().map(|s| s["features_evaluated"].as_u64().unwrap()).sum()
}

#[test]
fn enumerate_prints_the_feature_count() {
    assert_eq!(ok(run(&["enumerate"])).trim(), "162336");
    assert_eq!(ok(run(&["enumerate", "--width", "6", "--height", "6"])).trim(), "669");
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
    assert_eq!(run(&["enumerate", "--width", "x"]).status.code(), Some(1));
    assert_eq!(run(&["enumerate", "--width", "0"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "num_stagez = 3\n");
    let out = run(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_stagez"));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "positives = \"missing\"\nnegatives = \"missing\"\n").unwrap();
    let out = run(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));

    let model = dir.path().join("model.txt");
    fs::write(&model, "gadaboost-cascade 1\nwindow 12 12\nstages x\n").unwrap();
    let out = run(&["detect", "--model", p(&model), "--images", p(dir.path()), "--out", p(&dir.path().join("d.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn baseline_training_is_deterministic_and_round_trips() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (out_a, report) = train(a.path(), "", &["--seed", "5"]);
    let (out_b, _) = train(b.path(), "", &["--seed", "5", "--threads", "2"]);
    let model = fs::read(out_a.join("model.txt")).unwrap();
    assert_eq!(model, fs::read(out_b.join("model.txt")).unwrap());
    assert_eq!(report["mode"], "baseline");
    assert_eq!(report["seed"], 5);

    let stages = fs::read_to_string(out_a.join("stages.csv")).unwrap();
    assert_eq!(stages.lines().count(), 1 + report["stages"].as_array().unwrap().len());
    let trace = fs::read_to_string(out_a.join("ga_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1, "baseline has no GA trace");

    // A model reloaded by `detect` behaves like the one just trained.
    let d1 = a.path().join("d1.csv");
    let d2 = b.path().join("d2.csv");
    let test = corpus().join("test");
    ok(run(&["detect", "--model", p(&out_a.join("model.txt")), "--images", p(&test), "--out", p(&d1)]));
    ok(run(&["detect", "--model", p(&out_b.join("model.txt")), "--images", p(&test), "--out", p(&d2)]));
    assert_eq!(fs::read(d1).unwrap(), fs::read(d2).unwrap());
}

#[test]
fn ga_training_evaluates_fewer_features() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (_, base) = train(a.path(), "", &[]);
    let (out, ga) = train(b.path(), "mode = \"ga\"\npopulation_size = 200\nmax_iterations = 10\n", &[]);
    assert!(features(&ga) < features(&base), "{} vs {}", features(&ga), features(&base));
    let trace = fs::read_to_string(out.join("ga_trace.csv")).unwrap();
    assert!(trace.starts_with("stage,generation,best_fitness,mean_fitness,dedup_drops,refill_count\n"));
    assert!(trace.lines().count() > 1);
}

#[test]
fn seed_precedence_is_flag_then_env_then_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 4\nnum_stages = 1\n");
    let report = |extra: &[&str], env: Option<&str>| {
        let out = dir.path().join("o");
        let mut cmd = bin();
        cmd.args(["train", "--config", p(&cfg), "--out", p(&out)]).args(extra);
        if let Some(v) = env {
            cmd.env("GADABOOST_SEED", v);
        }
        ok(cmd.output().unwrap());
        let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        r["seed"].as_u64().unwrap()
    };
    assert_eq!(report(&[], None), 4);
    assert_eq!(report(&[], Some("9")), 9);
    assert_eq!(report(&["--seed", "11"], Some("9")), 11);

    let bad = bin()
        .args(["train", "--config", p(&cfg), "--out", p(&dir.path().join("o"))])
        .env("GADABOOST_SEED", "nine")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

fn trained_model() -> &'static Path {
    static DIR: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    let (_, model) = DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let (out, _) = train(dir.path(), "num_stages = 4\n", &[]);
        let model = out.join("model.txt");
        (dir, model)
    });
    model
}

#[test]
fn detect_on_an_empty_directory_writes_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("empty");
    fs::create_dir(&images).unwrap();
    let csv = dir.path().join("d.csv");
    ok(run(&["detect", "--model", p(trained_model()), "--images", p(&images), "--out", p(&csv)]));
    assert_eq!(fs::read_to_string(csv).unwrap(), "image,x,y,w,h,score\n");
}

#[test]
fn corrupt_images_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("broken.pgm"), b"P5\n40 40\n255\nshort").unwrap();
    fs::copy(corpus().join("test/test_000.pgm"), dir.path().join("good.pgm")).unwrap();
    let csv = dir.path().join("d.csv");
    let out = run(&["detect", "--model", p(trained_model()), "--images", p(dir.path()), "--out", p(&csv)]);
    let stdout = ok(out.clone());
    assert!(stdout.contains("in 1 images (1 skipped)"), "{stdout}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.pgm"));
}

#[test]
fn positives_mosaic_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let mut tiles: Vec<PathBuf> = fs::read_dir(corpus().join("positives")).unwrap().map(|e| e.unwrap().path()).collect();
    tiles.sort();
    let mut mosaic = image::GrayImage::from_pixel(64, 64, image::Luma([128]));
    for (k, path) in tiles.iter().take(9).enumerate() {
        let tile = image::open(path).unwrap().to_luma8();
        let big = image::imageops::resize(&tile, 18, 18, image::imageops::FilterType::Triangle);
        image::imageops::replace(&mut mosaic, &big, 3 + 20 * (k % 3) as i64, 3 + 20 * (k / 3) as i64);
    }
    // PNG input goes through the same loader.
    mosaic.save(dir.path().join("mosaic.png")).unwrap();
    let csv = dir.path().join("d.csv");
    ok(run(&[
        "detect", "--model", p(trained_model()), "--images", p(dir.path()), "--out", p(&csv), "--step", "1",
        "--min-neighbors", "1",
    ]));
    let rows = fs::read_to_string(csv).unwrap().lines().count() - 1;
    assert!(rows >= 1, "no detections on the mosaic");
}

fn eval(dir: &Path, dets: &str, annotations: &str) -> (String, String) {
    let (d, a, r) = (dir.join("d.csv"), dir.join("a.txt"), dir.join("roc.csv"));
    fs::write(&d, dets).unwrap();
    fs::write(&a, annotations).unwrap();
    let stdout = ok(run(&["eval", "--detections", p(&d), "--annotations", p(&a), "--out", p(&r), "--fp", "0"]));
    (fs::read_to_string(r).unwrap(), stdout)
}

#[test]
fn eval_scores_perfect_detections() {
    let dir = tempfile::tempdir().unwrap();
    let ann = "a.pgm 2 0 0 10 10 30 30 12 12\nb.pgm 1 5 5 20 20\n";
    let dets = "image,x,y,w,h,score\na.pgm,0,0,10,10,1\na.pgm,30,30,12,12,1\nb.pgm,5,5,20,20,1\n";
    let (roc, stdout) = eval(dir.path(), dets, ann);
    assert_eq!(roc, "threshold,false_positives,true_positive_rate\n1.0,0,1.0\n");
    assert!(stdout.contains("tpr at fp 0: 1.0000"), "{stdout}");
}

#[test]
fn eval_ignores_row_order() {
    let dir = tempfile::tempdir().unwrap();
    let ann = "a.pgm 2 0 0 10 10 30 30 12 12\n";
    let rows = [
        "a.pgm,0,0,10,10,0.9",
        "a.pgm,1,1,10,10,0.8",
        "a.pgm,31,30,12,12,0.5",
        "a.pgm,60,60,8,8,0.7",
    ];
    let forward = format!("image,x,y,w,h,score\n{}\n", rows.join("\n"));
    let mut reversed_rows = rows;
    reversed_rows.reverse();
    let reversed = format!("image,x,y,w,h,score\n{}\n", reversed_rows.join("\n"));
    let (a, _) = eval(dir.path(), &forward, ann);
    let (b, _) = eval(dir.path(), &reversed, ann);
    assert_eq!(a, b);
    // 0.9 hits, 0.8 duplicates it, 0.7 misses, 0.5 hits the second face.
    assert_eq!(a, "threshold,false_positives,true_positive_rate\n0.9,0,0.5\n0.8,1,0.5\n0.5,2,1.0\n");
}

#[test]
fn eval_matches_the_library_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    // Half-shifted box has IoU 1/3 and does not count.
    let (roc, _) = eval(dir.path(), "image,x,y,w,h,score\na.pgm,5,0,10,10,1\n", "a.pgm 1 0 0 10 10\n");
    assert_eq!(roc, "threshold,false_positives,true_positive_rate\n1.0,1,0.0\n");
}

#[test]
fn convert_eyes_writes_square_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let (input, out) = (dir.path().join("eyes.txt"), dir.path().join("ann.txt"));
    fs::write(&input, "# left then right eye\nimg.pgm 1 40 50 60 50\nother.pgm 0\n").unwrap();
    ok(run(&["convert-eyes", "--input", p(&input), "--out", p(&out)]));
    assert_eq!(fs::read_to_string(out).unwrap(), "img.pgm 1 30 38 40 40\nother.pgm 0\n");
}

#[test]
fn bench_writes_tables_for_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "population_size = 150\nmax_iterations = 4\nbench_seeds = [1, 2]\nbench_iterations = [2]\nbench_populations = [50, 100]\n",
    );
    let out = dir.path().join("bench");
    let stdout = ok(run(&["bench", "--config", p(&cfg), "--out", p(&out)]));
    assert!(stdout.contains("baseline") && stdout.contains("ga-pop-100"), "{stdout}");

    let mut reader = csv::Reader::from_path(out.join("bench.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2 * 4);
    for row in &rows {
        if &row[0] != "baseline" {
            let ratio: f64 = row[8].parse().unwrap();
            assert!(ratio < 1.0, "{row:?}");
        }
    }
    for cell in ["baseline", "ga-2", "ga-pop-50", "ga-pop-100"] {
        let agg = fs::read_to_string(out.join(format!("aggregate_{cell}.csv"))).unwrap();
        assert!(agg.starts_with("fp,min_tpr,mean_tpr,max_tpr\n"));
        assert!(out.join(format!("roc_{cell}_seed2.csv")).exists());
    }
}

#[test]
fn bench_rejects_annotations_for_missing_images() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.txt");
    fs::write(&ann, "nowhere.pgm 1 0 0 5 5\n").unwrap();
    let cfg = write_config(dir.path(), &format!("annotations = {ann:?}\n"));
    let out = run(&["bench", "--config", p(&cfg), "--out", p(&dir.path().join("b"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.pgm"));
}
