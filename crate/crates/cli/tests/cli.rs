use std::path::Path;
use std::process::{Command, Output};

fn oazr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oazr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = oazr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(oazr(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(oazr(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(oazr(&["eval", "--mode", "both"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = oazr(&["project", "--motions", p(&dir.path().join("missing")), "--out", p(&dir.path().join("v"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "colour = red\n").unwrap();
    let m = dir.path().join("m.jsonl");
    ok(&["gen-synth", "--out", p(&m), "--per-class", "1", "--classes", "wave"]);
    let out = oazr(&["project", "--motions", p(&m), "--out", p(&dir.path().join("v")), "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}

#[test]
fn help_lists_every_flag() {
    let cases: &[(&str, &[&str])] = &[
        ("gen-synth", &["--out", "--per-class", "--classes", "--yaw", "--seed"]),
        ("project", &["--motions", "--out", "--config", "--seed"]),
        ("embed-text", &["--out", "--catalog", "--actions", "--config", "--seed"]),
        (
            "train",
            &["--config", "--data", "--table", "--catalog", "--out", "--metrics", "--classes", "--seed"],
        ),
        (
            "eval",
            &[
                "--model", "--data", "--table", "--catalog", "--mode", "--view-mode", "--candidates", "--split-name",
                "--out", "--seed",
            ],
        ),
        (
            "infer",
            &["--model", "--data", "--table", "--catalog", "--candidates", "--view-mode", "--out", "--seed"],
        ),
        ("selftest", &["--scenes", "--samples", "--seed"]),
    ];
    for (cmd, flags) in cases {
        let help = ok(&[cmd, "--help"]);
        for f in *flags {
            assert!(help.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn selftest_passes() {
    let out = ok(&["selftest", "--scenes", "300", "--samples", "40", "--seed", "3"]);
    assert!(out.starts_with("selftest ok"), "{out}");
}

fn pipeline(dir: &Path, seed: &str) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let motions = dir.join("m.jsonl");
    let views = dir.join("v.jsonl");
    let table = dir.join("t.tsv");
    let ckpt = dir.join("model.ckpt");
    let cfg = dir.join("run.cfg");
    std::fs::write(
        &cfg,
        "# small run\nframes = 24\nL = 16\nD = 16\nD_e = 8\nD_j = 16\nD_t = 32\n\
         epochs = 2\nfinetune_epochs = 1\nrecord_wall_time = false\n",
    )
    .unwrap();
    ok(&["gen-synth", "--out", p(&motions), "--per-class", "2", "--classes", "wave,squat,march", "--seed", seed]);
    ok(&["project", "--motions", p(&motions), "--out", p(&views), "--config", p(&cfg), "--seed", seed]);
    ok(&["embed-text", "--out", p(&table), "--config", p(&cfg), "--seed", seed]);
    let s = ok(&[
        "train", "--config", p(&cfg), "--data", p(&views), "--table", p(&table), "--out", p(&ckpt), "--classes",
        "wave,squat", "--seed", seed,
    ]);
    assert!(s.starts_with("train items=48 classes=2 epochs=2"), "{s}");
    let report = dir.join("report.tsv");
    let s = ok(&[
        "eval", "--model", p(&ckpt), "--data", p(&views), "--table", p(&table), "--mode", "zsl", "--view-mode", "sv",
        "--out", p(&report), "--seed", seed,
    ]);
    assert!(s.contains("n_items=2"), "{s}");
    let pred = ok(&[
        "infer", "--model", p(&ckpt), "--data", p(&views), "--table", p(&table), "--candidates", "wave,squat,march",
        "--seed", seed,
    ]);
    (
        std::fs::read(ckpt.with_extension("ckpt.metrics.tsv")).unwrap(),
        std::fs::read(&report).unwrap(),
        pred.into_bytes(),
    )
}

#[test]
fn pipeline_runs_and_repeats_bit_for_bit() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path(), "5");
    let second = pipeline(b.path(), "5");
    assert_eq!(first, second);
    let report = String::from_utf8(first.1).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("mode\tview_mode\tsplit_name\ttop1\ttop5\tn_items"));
    assert!(lines.next().unwrap().starts_with("zsl\tsv\tdefault\t"));
    assert_eq!(lines.next().unwrap().split('\t').next(), Some("march"));
    let metrics = String::from_utf8(first.0).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(metrics.lines().all(|l| l.split('\t').count() == 6 && l.ends_with("\t0.000")));
    let pred = String::from_utf8(first.2).unwrap();
    // 6 motions plus header and summary
    assert_eq!(pred.lines().count(), 8, "{pred}");
}
