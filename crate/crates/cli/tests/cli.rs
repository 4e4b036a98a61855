use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vmseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vmseg"))
        .args(args)
        .env_remove("VMSEG_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn vmseg")
}

fn ok(args: &[&str]) -> String {
    let out = vmseg(args);
    assert!(
        out.status.success(),
        "vmseg {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every file under `root`, relative path and bytes, sorted.
fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generate_count_determinism_and_empty_masks() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    for d in [&a, &b] {
        ok(&[
            "generate",
            "--out",
            p(d),
            "--count",
            "5",
            "--size",
            "32",
            "--seed",
            "7",
        ]);
    }
    let sa = snapshot(&a);
    assert_eq!(sa, snapshot(&b));
    let pngs = |sub: &str| sa.iter().filter(|(f, _)| f.starts_with(sub)).count();
    assert_eq!((pngs("images"), pngs("masks")), (5, 5));
    assert!(sa.iter().any(|(f, _)| f == Path::new("gen_config.txt")));

    ok(&[
        "generate",
        "--out",
        p(&c),
        "--count",
        "3",
        "--size",
        "32",
        "--cracks",
        "0",
    ]);
    for e in fs::read_dir(c.join("masks")).unwrap() {
        let m = image::open(e.unwrap().path()).unwrap().to_luma8();
        assert!(m.pixels().all(|px| px.0[0] == 0));
    }
}

#[test]
fn generate_split_layout() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "generate",
        "--out",
        p(dir.path()),
        "--count",
        "6",
        "--size",
        "32",
        "--split",
        "3,2,1",
    ]);
    for (name, n) in [("train", 3), ("val", 2), ("test", 1)] {
        assert_eq!(
            fs::read_dir(dir.path().join(name).join("images"))
                .unwrap()
                .count(),
            n
        );
    }
    let out = vmseg(&[
        "generate",
        "--out",
        p(dir.path()),
        "--count",
        "6",
        "--split",
        "3,2",
    ]);
    assert!(!out.status.success());
}

#[test]
fn train_eval_segment_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run, pred) = (
        dir.path().join("data"),
        dir.path().join("run"),
        dir.path().join("pred"),
    );
    ok(&[
        "generate",
        "--out",
        p(&data),
        "--count",
        "8",
        "--size",
        "32",
        "--split",
        "5,2,1",
    ]);
    ok(&[
        "train",
        "--data",
        p(&data.join("train")),
        "--val",
        p(&data.join("val")),
        "--out",
        p(&run),
        "--epochs",
        "1",
        "--embed-dim",
        "8",
    ]);
    for f in ["model.vmck", "train_log.csv", "config.txt"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let config = fs::read_to_string(run.join("config.txt")).unwrap();
    // defaults are the reference optimizer settings
    assert!(
        config.contains("lr=0.00005") && config.contains("batch_size=2"),
        "{config}"
    );

    let csv = ok(&[
        "eval",
        "--checkpoint",
        p(&run.join("model.vmck")),
        "--data",
        p(&data.join("train")),
    ]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "image_id,ds,iou");
    assert_eq!(lines.len(), 1 + 5 + 1);
    assert!(lines[6].starts_with("mean,"));

    ok(&[
        "segment",
        "--checkpoint",
        p(&run.join("model.vmck")),
        "--input",
        p(&data.join("test")),
        "--out",
        p(&pred),
    ]);
    let masks: Vec<_> = fs::read_dir(&pred)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(masks.len(), 1);
    let m = image::open(&masks[0]).unwrap();
    assert_eq!(m.color(), image::ColorType::L8);
    assert_eq!((m.width(), m.height()), (32, 32));
    assert!(m
        .to_luma8()
        .pixels()
        .all(|px| px.0[0] == 0 || px.0[0] == 255));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.txt");
    fs::write(&cfg, "# small set\ncount=4\nsize=32\nseed=3\n").unwrap();
    let out = dir.path().join("d");
    ok(&[
        "--config",
        p(&cfg),
        "generate",
        "--out",
        p(&out),
        "--count",
        "2",
    ]);
    assert_eq!(fs::read_dir(out.join("images")).unwrap().count(), 2);
    let rec = fs::read_to_string(out.join("gen_config.txt")).unwrap();
    assert!(rec.contains("seed=3") && rec.contains("size=32"), "{rec}");

    fs::write(&cfg, "colour=red\n").unwrap();
    let bad = vmseg(&["--config", p(&cfg), "generate", "--out", p(&out)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("colour"));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str, env: Option<&str>, flag: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_vmseg"));
        cmd.env_remove("VMSEG_SEED").args([
            "generate",
            "--count",
            "2",
            "--size",
            "32",
            "--out",
            p(&out),
        ]);
        if let Some(s) = env {
            cmd.env("VMSEG_SEED", s);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        assert!(cmd.output().unwrap().status.success());
        snapshot(&out)
    };
    let by_env = gen("env", Some("9"), None);
    assert_eq!(by_env, gen("flag", None, Some("9")));
    assert_ne!(by_env, gen("default", None, None));
    // the flag wins over the environment
    assert_eq!(gen("both", Some("1"), Some("9")), by_env);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.vmck");
    for args in [
        vec!["eval", "--checkpoint", p(&missing), "--data", p(dir.path())],
        vec![
            "segment",
            "--checkpoint",
            p(&missing),
            "--input",
            p(dir.path()),
            "--out",
            p(dir.path()),
        ],
        vec![
            "train",
            "--data",
            p(&dir.path().join("none")),
            "--out",
            p(dir.path()),
        ],
        vec!["flops", "--arch", "resnet"],
        vec!["verify", "--suite", "speed"],
        vec!["eval"],
    ] {
        let out = vmseg(&args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty(), "{args:?} printed no diagnostic");
    }
}

#[test]
fn flops_table_and_convention() {
    let out = vmseg(&["flops", "--arch", "vmunet,vit-core"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiply-accumulate = 2 FLOPs"));
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<(usize, String, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].parse().unwrap(),
                f[1].to_string(),
                f[2].parse().unwrap(),
            )
        })
        .collect();
    assert_eq!(rows.len(), 8);
    let vm: Vec<f64> = rows
        .iter()
        .filter(|r| r.1 == "vmunet")
        .map(|r| r.2)
        .collect();
    assert!(vm.windows(2).all(|w| w[1] > w[0]));
    // linear in pixel count: each doubling of side quadruples the cost
    for w in vm.windows(2) {
        assert!((w[1] / w[0] - 4.0).abs() < 0.05, "{vm:?}");
    }
}

#[test]
fn verify_metrics_suite() {
    let out = ok(&["verify", "--suite", "metrics"]);
    assert!(out.contains("PASS metrics/dice_iou_identity"));
    assert!(out.trim_end().ends_with("suite metrics: PASS"));
}
