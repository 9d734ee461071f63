mod common;

use common::*;
use tempfile::tempdir;
use tfformer::color::RgbImage;
use tfformer::data::{load_image, save_image, MANIFEST_HEADER};
use tfformer::model::load_checkpoint;
use tfformer_cli::commands::{self, LOSS_LOG_FILE, MANIFEST_FILE, RESULTS_FILE};
use tfformer_cli::config::ECHO_FILE;
use tfformer_cli::{resolve, CliError, EXIT_DATA, EXIT_OK, EXIT_USAGE, EXIT_VERIFY};

fn small_checkpoint(dir: &std::path::Path) -> std::path::PathBuf {
    assert_eq!(run_with(dir, true, &["train", "--synthetic", "--steps", "0"]), EXIT_OK);
    dir.join("checkpoint.tff")
}

#[test]
fn curate_reports_counts_and_writes_manifest() {
    let t = tempdir().unwrap();
    let corpus = t.path().join("corpus");
    let valid = filter_fixture(&corpus);
    let out = t.path().join("out");
    let cli = parse(&["--out", out.to_str().unwrap(), "curate", corpus.to_str().unwrap(), "--patch", "16"]);
    let summary = commands::curate(&resolve(&cli).unwrap()).unwrap();
    assert_eq!((summary.extracted, summary.accepted, summary.rejected), (6, 2, 4));

    let manifest = std::fs::read_to_string(out.join(MANIFEST_FILE)).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines[0], MANIFEST_HEADER);
    assert_eq!(lines.len(), 7);
    let accepted: Vec<&str> = lines[1..]
        .iter()
        .filter(|l| l.ends_with("accept"))
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(accepted, valid);
    for id in &valid {
        let stem = id.trim_end_matches(".png");
        assert!(out.join("patches/low").join(format!("{stem}_r0_c0.png")).exists());
        assert!(out.join("patches/ref").join(format!("{stem}_r0_c0.png")).exists());
    }
}

#[test]
fn curate_empty_corpus_writes_header_only() {
    let t = tempdir().unwrap();
    let corpus = t.path().join("empty");
    std::fs::create_dir_all(corpus.join("low")).unwrap();
    std::fs::create_dir_all(corpus.join("ref")).unwrap();
    let out = t.path().join("out");
    assert_eq!(run_with(&out, false, &["curate", corpus.to_str().unwrap()]), EXIT_OK);
    assert_eq!(std::fs::read_to_string(out.join(MANIFEST_FILE)).unwrap(), format!("{MANIFEST_HEADER}\n"));

    let bare = t.path().join("bare");
    std::fs::create_dir_all(&bare).unwrap();
    assert_eq!(run_with(&out, false, &["curate", bare.to_str().unwrap()]), EXIT_OK);
}

#[test]
fn curate_skips_missing_partner() {
    let t = tempdir().unwrap();
    let corpus = t.path().join("corpus");
    filter_fixture(&corpus);
    save_image(&textured(16, 16, 9, 0.2, 0.8), corpus.join("low/orphan.png")).unwrap();
    let out = t.path().join("out");
    let cli = parse(&["--out", out.to_str().unwrap(), "curate", corpus.to_str().unwrap(), "--patch", "16"]);
    let summary = commands::curate(&resolve(&cli).unwrap()).unwrap();
    assert_eq!(summary.skipped.len(), 1);
    assert_eq!(summary.skipped[0].0, "orphan.png");
    assert!(summary.skipped[0].1.contains("missing partner"));
    assert_eq!(summary.accepted, 2);
}

#[test]
fn curate_without_corpus_is_a_usage_error() {
    let t = tempdir().unwrap();
    assert_eq!(run_with(t.path(), false, &["curate"]), EXIT_USAGE);
    let missing = t.path().join("nowhere");
    assert_eq!(run_with(t.path(), false, &["curate", missing.to_str().unwrap()]), EXIT_DATA);
}

#[test]
fn echo_is_written_before_work_and_lists_overrides() {
    let t = tempdir().unwrap();
    let cfg_file = t.path().join("run.conf");
    std::fs::write(&cfg_file, "# experiment\nsteps = 3\nlr = 0.0005\n").unwrap();
    let out = t.path().join("out");
    let code = run(&[
        "--config",
        cfg_file.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "11",
        "train",
        "--steps",
        "0",
        "--synthetic",
    ]);
    assert_eq!(code, EXIT_OK);
    let echo = std::fs::read_to_string(out.join(ECHO_FILE)).unwrap();
    assert!(echo.starts_with("# command = train\nseed = 11\n"));
    assert!(echo.contains("\nsteps = 0\n"));
    assert!(echo.contains("\nlr = 0.0005\n"));
}

#[test]
fn invalid_training_field_is_named() {
    let err = resolve(&parse(&["--set", "beta2=2", "train", "--synthetic"])).unwrap_err();
    assert!(matches!(&err, CliError::Config { field, .. } if field == "beta2"), "{err}");
    assert!(err.to_string().contains("[0, 1)"));
    assert_eq!(err.exit_code(), EXIT_USAGE);

    let err = resolve(&parse(&["train", "--lr", "-1"])).unwrap_err();
    assert!(matches!(&err, CliError::Config { field, .. } if field == "lr"), "{err}");
}

#[test]
fn train_needs_data() {
    let t = tempdir().unwrap();
    assert_eq!(run_with(t.path(), true, &["train", "--steps", "1"]), EXIT_USAGE);
}

#[test]
fn zero_steps_writes_init_checkpoint() {
    let t = tempdir().unwrap();
    let ckpt = small_checkpoint(t.path());
    let model = load_checkpoint(&ckpt).unwrap();
    assert_eq!(model.config.base_width, 4);
    assert_eq!(std::fs::read_to_string(t.path().join(LOSS_LOG_FILE)).unwrap(), "step\tloss\n");
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let t = tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let common = ["--set", "checkpoint_interval=2", "--set", "val_interval=2", "--set", "synthetic_size=16"];
    let train = |dir: &std::path::Path, steps: &str, resume: bool| {
        let mut args: Vec<&str> = common.to_vec();
        args.extend(["train", "--synthetic", "--batch", "2", "--patch", "8", "--steps", steps]);
        if resume {
            args.push("--resume");
        }
        run_with(dir, true, &args)
    };
    assert_eq!(train(&a, "4", false), EXIT_OK);
    assert_eq!(train(&b, "2", false), EXIT_OK);
    assert_eq!(train(&b, "4", true), EXIT_OK);
    for f in [LOSS_LOG_FILE, "metrics.tsv", "checkpoint.tff", "state.tfs"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let losses = std::fs::read_to_string(a.join(LOSS_LOG_FILE)).unwrap();
    assert_eq!(losses.lines().count(), 5);

    assert_eq!(train(&t.path().join("c"), "4", true), EXIT_DATA);
}

#[test]
fn enhance_keeps_size_name_and_bits() {
    let t = tempdir().unwrap();
    let ckpt = small_checkpoint(&t.path().join("model"));
    let input = t.path().join("scene.png");
    save_image(&textured(33, 45, 4, 0.0, 0.3), &input).unwrap();
    let (o1, o2) = (t.path().join("o1"), t.path().join("o2"));
    for o in [&o1, &o2] {
        let code = run_with(o, false, &["enhance", input.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(), "--rec"]);
        assert_eq!(code, EXIT_OK);
    }
    let out = load_image(o1.join("scene.png")).unwrap();
    assert_eq!((out.height(), out.width()), (33, 45));
    assert_eq!(load_image(o1.join("rec/scene.png")).unwrap().height(), 33);
    assert_eq!(std::fs::read(o1.join("scene.png")).unwrap(), std::fs::read(o2.join("scene.png")).unwrap());
}

#[test]
fn enhance_directory_with_corrupt_file() {
    let t = tempdir().unwrap();
    let ckpt = small_checkpoint(&t.path().join("model"));
    let dir = t.path().join("in");
    std::fs::create_dir_all(&dir).unwrap();
    save_image(&textured(12, 10, 1, 0.0, 0.2), dir.join("a.png")).unwrap();
    save_image(&textured(9, 14, 2, 0.0, 0.2), dir.join("c.ppm")).unwrap();
    std::fs::write(dir.join("b.png"), b"not an image").unwrap();
    std::fs::write(dir.join("notes.txt"), b"ignored").unwrap();

    let out = t.path().join("out");
    let args = ["enhance", dir.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()];
    assert_eq!(run_with(&out, false, &args), EXIT_DATA);
    assert!(out.join("a.png").exists() && out.join("c.ppm").exists());
    assert!(!out.join("b.png").exists());

    let cli = parse(&["--out", out.to_str().unwrap(), "enhance", dir.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
    let summary = commands::enhance(&resolve(&cli).unwrap(), &dir, false).unwrap();
    assert_eq!(summary.written.len(), 2);
    assert_eq!(summary.failed.len(), 1);
    assert!(summary.failed[0].0.ends_with("b.png"));
    assert!(summary.to_string().contains("b.png"));
}

#[test]
fn enhance_without_checkpoint_fails() {
    let t = tempdir().unwrap();
    let input = t.path().join("x.png");
    save_image(&RgbImage::filled(8, 8, [0.1; 3]), &input).unwrap();
    assert_eq!(run_with(&t.path().join("out"), false, &["enhance", input.to_str().unwrap()]), EXIT_DATA);
}

#[test]
fn eval_identity_scores_perfectly() {
    let t = tempdir().unwrap();
    let dir = t.path().join("test");
    for (i, name) in ["p1.png", "p2.png"].iter().enumerate() {
        let r = textured(16, 16, i, 0.1, 0.9);
        write_pair(&dir, name, &RgbImage::filled(16, 16, [0.0; 3]), &r);
    }
    let out = t.path().join("out");
    assert_eq!(run_with(&out, false, &["eval", dir.to_str().unwrap(), "--identity"]), EXIT_OK);
    let table = std::fs::read_to_string(out.join(RESULTS_FILE)).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows, ["p1.png\t100.000000\t1.000000", "p2.png\t100.000000\t1.000000", "mean\t100.000000\t1.000000"]);
}

#[test]
fn eval_with_model_reports_means_and_unmatched() {
    let t = tempdir().unwrap();
    let ckpt = small_checkpoint(&t.path().join("model"));
    let dir = t.path().join("test");
    for (i, name) in ["p1.png", "p2.png"].iter().enumerate() {
        let r = textured(16, 16, i, 0.1, 0.9);
        write_pair(&dir, name, &textured(16, 16, i + 5, 0.0, 0.1), &r);
    }
    save_image(&RgbImage::filled(16, 16, [0.5; 3]), dir.join("ref/lonely.png")).unwrap();
    let out = t.path().join("out");
    let cli = parse(&["--out", out.to_str().unwrap(), "eval", dir.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
    let summary = commands::eval(&resolve(&cli).unwrap(), &dir, false).unwrap();
    assert_eq!(summary.unmatched, vec!["lonely.png"]);
    assert_eq!(summary.table.rows.len(), 2);
    let (p, s) = summary.table.means().unwrap();
    let rows = &summary.table.rows;
    assert!((p - (rows[0].psnr + rows[1].psnr) / 2.0).abs() < 1e-9);
    assert!((s - (rows[0].ssim + rows[1].ssim) / 2.0).abs() < 1e-9);
    let table = std::fs::read_to_string(out.join(RESULTS_FILE)).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().last().unwrap().starts_with("mean\t"));
}

#[test]
fn gradcheck_exit_codes() {
    let t = tempdir().unwrap();
    assert_eq!(run_with(t.path(), false, &["gradcheck", "--only", "losses"]), EXIT_OK);
    let faulty = ["gradcheck", "--only", "lcgab", "--only", "lc_map_luminance", "--inject-fault", "softmax"];
    assert_eq!(run_with(t.path(), false, &faulty), EXIT_VERIFY);
    let tsv = std::fs::read_to_string(t.path().join("gradcheck.tsv")).unwrap();
    assert!(tsv.lines().any(|l| l.starts_with("lcgab\t") && l.ends_with("fail")));
    assert!(tsv.lines().any(|l| l.starts_with("lc_map_luminance\t") && l.ends_with("pass")));
    assert_eq!(run_with(t.path(), false, &["gradcheck", "--only", "nonsense"]), EXIT_USAGE);
    assert_eq!(run_with(t.path(), false, &["gradcheck", "--inject-fault", "relu"]), EXIT_USAGE);
}

#[test]
fn binary_exit_codes() {
    let t = tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_tfformer");
    let status = |args: &[&str]| std::process::Command::new(bin).args(args).output().unwrap().status.code();
    let out = t.path().to_str().unwrap();
    assert_eq!(status(&["--out", out, "gradcheck", "--only", "losses"]), Some(EXIT_OK));
    assert_eq!(status(&["frobnicate"]), Some(EXIT_USAGE));
    assert_eq!(status(&["--help"]), Some(EXIT_OK));
    assert_eq!(status(&["--out", out, "--set", "steps=x", "train"]), Some(EXIT_USAGE));
}
