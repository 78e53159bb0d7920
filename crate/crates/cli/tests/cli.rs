use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--height",
    "32",
    "--width",
    "32",
    "--source-train",
    "160",
    "--source-val",
    "40",
    "--target-train",
    "80",
    "--target-val",
    "40",
    "--target-test",
    "40",
    "--pretrain-epochs",
    "2",
];

const SMALL_DATA: &[&str] = &[
    "--height",
    "32",
    "--width",
    "32",
    "--source-train",
    "160",
    "--source-val",
    "40",
    "--target-train",
    "80",
    "--target-val",
    "40",
    "--target-test",
    "40",
];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promptforge"))
        .args(args)
        .env_remove("PROMPTFORGE_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Trains a small prompt and returns its output directory.
fn train(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["train", "--seed", "4", "--out", p(&out)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", text(&o));
    out
}

fn read(path: PathBuf) -> Vec<u8> {
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn zero_epoch_train_reports_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let mut args = vec!["train", "--variant", "acavp", "--seed", "1", "--epochs", "0", "--out", p(&out)];
    args.extend_from_slice(SMALL);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("epoch 0 val accuracy"));
    assert!(text(&o).contains("affine raw"));
    let csv = String::from_utf8(read(out.join("metrics.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 2);
    for f in ["prompt.tf", "model.tf", "manifest.txt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn training_is_reproducible_and_replayable_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = train(dir.path(), "a", &["--epochs", "2", "--augment", "trivial"]);
    let b = train(dir.path(), "b", &["--epochs", "2", "--augment", "trivial"]);
    assert_eq!(read(a.join("metrics.csv")), read(b.join("metrics.csv")));
    assert_eq!(read(a.join("prompt.tf")), read(b.join("prompt.tf")));

    let c = dir.path().join("c");
    let o = run(&["train", "--config", p(&a.join("manifest.txt")), "--out", p(&c)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(read(a.join("metrics.csv")), read(c.join("metrics.csv")));
    assert_eq!(read(a.join("prompt.tf")), read(c.join("prompt.tf")));
}

#[test]
fn usage_errors_exit_two_and_name_the_key() {
    let o = run(&["train", "--bogus", "1"]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("--bogus"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# test\nepochs=1\nlearning_rate=3\n").unwrap();
    let o = run(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("learning_rate"), "{}", text(&o));

    std::fs::write(&cfg, "epochs=many\n").unwrap();
    let o = run(&["train", "--config", p(&cfg)]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("epochs"));

    let o = run(&["train", "--variant", "nope"]);
    assert_eq!(code(&o), 2);

    let o = run(&["eval", "--model", p(&dir.path().join("missing.tf"))]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("missing.tf"));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e");
    let o = Command::new(env!("CARGO_BIN_EXE_promptforge"))
        .args(["embed-check", "--images", "1", "--configs", "1"])
        .env("PROMPTFORGE_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", text(&o));
    let mut args = vec!["train", "--epochs", "0", "--variant", "vp", "--out", p(&out)];
    args.extend_from_slice(SMALL);
    let o = Command::new(env!("CARGO_BIN_EXE_promptforge")).args(&args).env("PROMPTFORGE_SEED", "77").output().unwrap();
    assert_eq!(code(&o), 0, "{}", text(&o));
    let manifest = String::from_utf8(read(out.join("manifest.txt"))).unwrap();
    assert!(manifest.lines().any(|l| l == "seed=77"), "{manifest}");
}

#[test]
fn eval_corrupt_and_identity_prompt() {
    let dir = tempfile::tempdir().unwrap();
    // a zero-epoch VP prompt has a zero additive pattern: the identity
    let t = train(dir.path(), "vp", &["--epochs", "0", "--variant", "vp"]);
    let model = t.join("model.tf");
    let prompt = t.join("prompt.tf");

    let eval = |name: &str, with_prompt: bool| {
        let out = dir.path().join(name);
        let mut args = vec!["eval", "--seed", "4", "--model", p(&model), "--out", p(&out)];
        if with_prompt {
            args.extend(["--prompt", p(&prompt)]);
        }
        args.extend_from_slice(SMALL_DATA);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", text(&o));
        read(out.join("eval.csv"))
    };
    let bare = eval("bare", false);
    assert_eq!(bare, eval("prompted", true));
    assert_eq!(bare, eval("bare2", false));

    let corrupt = |name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["corrupt", "--seed", "4", "--model", p(&model), "--prompt", p(&prompt)];
        args.extend(["--kinds", "gaussian-noise", "--out", p(&out)]);
        args.extend_from_slice(SMALL_DATA);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", text(&o));
        read(out.join("corruption.csv"))
    };
    let csv = corrupt("c1");
    let s = String::from_utf8(csv.clone()).unwrap();
    assert_eq!(s.lines().count(), 6, "{s}");
    assert!(s.lines().skip(1).all(|l| l.starts_with("gaussian-noise,")));
    assert_eq!(csv, corrupt("c2"));

    let mut args = vec!["corrupt", "--model", p(&model), "--kinds", "frost"];
    args.extend_from_slice(SMALL_DATA);
    assert_eq!(code(&run(&args)), 2);
}

#[test]
fn bench_lists_four_variants() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let o = run(&["bench", "--size", "32", "--batch", "2", "--reps", "10", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let csv = String::from_utf8(read(out.join("timing.csv"))).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for v in ["vp,", "evp,", "autovp,", "acavp,"] {
        assert!(rows.iter().any(|r| r.starts_with(v)), "{v}");
    }
    assert_eq!(code(&run(&["bench", "--reps", "3"])), 2);
}

#[test]
fn visualize_writes_ppm_panels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = run(&["visualize", "--seed", "2", "--target-test", "10", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let mask = read(out.join("mask.ppm"));
    let header = b"P6\n64 64\n255\n";
    assert!(mask.starts_with(header));
    let white = mask[header.len()..].chunks(3).filter(|px| px == &[255, 255, 255]).count();
    let fraction = white as f64 / (64.0 * 64.0);
    assert!((fraction - (1.0 - 0.73f64.powi(2))).abs() < 0.02, "{fraction}");
    for f in ["original.ppm", "affine.ppm", "prompted.ppm"] {
        assert!(read(out.join(f)).starts_with(header), "{f}");
    }

    // identity prompt: original and final panels agree byte for byte
    let t = train(dir.path(), "vp", &["--epochs", "0", "--variant", "vp"]);
    let out2 = dir.path().join("v2");
    let vp = t.join("prompt.tf");
    let o = run(&["visualize", "--prompt", p(&vp), "--input", p(&out.join("original.ppm"))]);
    assert_eq!(code(&o), 2, "prompt and image sizes differ: {}", text(&o));
    let mut args = vec!["visualize", "--seed", "4", "--prompt", p(&vp), "--out", p(&out2)];
    args.extend_from_slice(SMALL_DATA);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(read(out2.join("original.ppm")), read(out2.join("prompted.ppm")));

    // an output path that cannot be a directory is a runtime failure
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let o = run(&["visualize", "--target-test", "10", "--out", p(&blocker.join("sub"))]);
    assert_eq!(code(&o), 3, "{}", text(&o));
}

#[test]
fn embed_check_exit_codes() {
    let o = run(&["embed-check"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("200 cases"));
    let o = run(&["embed-check", "--images", "2", "--perturb", "0.3", "--seed", "9"]);
    assert_eq!(code(&o), 1, "{}", text(&o));
    assert!(text(&o).contains("seed 9"));
    assert_eq!(code(&run(&["embed-check", "--images", "0"])), 2);
}
