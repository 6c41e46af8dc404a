use std::path::Path;
use std::process::{Command, Output};

use hvc_core::data::{save_idx, ImageSet, MNIST_FILES, PIXELS};
use hvc_core::ensemble::PredictionMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hvc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = hvc(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

/// A small MNIST-format directory: a vertical bar whose column encodes the class.
fn fake_mnist(dir: &Path, train: usize, test: usize) {
    let make = |n: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut px = vec![0u8; n * PIXELS];
        let mut labels = Vec::new();
        for i in 0..n {
            let label: u8 = rng.gen_range(0..10);
            let col = 5 + 2 * label as usize;
            for row in 6..22 {
                px[i * PIXELS + row * 28 + col] = 255;
            }
            labels.push(label);
        }
        ImageSet::new(px, labels).unwrap()
    };
    save_idx(&make(train, 1), dir.join(MNIST_FILES[0]), dir.join(MNIST_FILES[1])).unwrap();
    save_idx(&make(test, 2), dir.join(MNIST_FILES[2]), dir.join(MNIST_FILES[3])).unwrap();
}

const TINY: [&str; 4] = [
    "--set",
    "conv_filters=4,4,4,6,6,6,8,8,8",
    "--set",
    "custom_ladder=true",
];

#[test]
fn params_reports_core_weight_total() {
    let out = ok(&["params", "--head", "hvc-z", "--branches", "3"]);
    assert!(out.lines().any(|l| l.starts_with("core weights") && l.ends_with("1512480")));
    assert!(out.lines().any(|l| l.starts_with("conv weights") && l.ends_with("756000")));
}

#[test]
fn help_lists_every_config_key() {
    let out = ok(&["--help"]);
    for (key, _, _) in hvc_core::config::KEYS {
        assert!(out.contains(key), "{key} missing from --help");
    }
    assert!(ok(&["train", "--help"]).contains("width_squeeze_max"));
}

#[test]
fn exit_codes_follow_error_class() {
    assert_eq!(hvc(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(hvc(&["params", "--set", "sead=3"]).status.code(), Some(1));
    assert_eq!(hvc(&["params", "--set", "branches"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    let o = hvc(&["eval", "--checkpoint", missing.to_str().unwrap(), "--data", "."]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.ckpt"));

    let bad = dir.path().join("bad.hvcp");
    std::fs::write(&bad, b"HVCQ\x01\0\0\0").unwrap();
    let o = hvc(&["ensemble", "troublesome", "--matrix", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("offset 0"));
}

#[test]
fn init_eval_and_dump_preds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fake_mnist(d, 10, 60);
    let data = d.to_str().unwrap();
    let mut args = vec!["init", "--out"];
    let a = d.join("a.ckpt");
    args.push(a.to_str().unwrap());
    args.extend(TINY);
    ok(&args);
    let b = d.join("b.ckpt");
    args[2] = b.to_str().unwrap();
    args.extend(["--seed", "5"]);
    ok(&args);

    let e1 = ok(&["eval", "--checkpoint", a.to_str().unwrap(), "--data", data]);
    let e2 = ok(&["eval", "--checkpoint", a.to_str().unwrap(), "--data", data]);
    assert_eq!(e1, e2);
    assert!(e1.starts_with("accuracy ") && e1.contains("/60)"));

    let m = d.join("preds.hvcp");
    ok(&[
        "dump-preds",
        "--checkpoints",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--data",
        data,
        "--out",
        m.to_str().unwrap(),
    ]);
    let matrix = PredictionMatrix::load(&m).unwrap();
    assert_eq!((matrix.models(), matrix.samples()), (2, 60));
    let vote = ok(&["ensemble", "vote", "--matrix", m.to_str().unwrap(), "--models", "0"]);
    let acc: f64 = e1.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(vote.contains(&format!("accuracy {acc:.4}")), "{vote} vs {e1}");
}

#[test]
fn fresh_checkpoint_is_at_chance_on_mnist() {
    let Some(dir) = std::env::var_os("MNIST_DIR") else {
        eprintln!("MNIST_DIR not set; skipping");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let ck = tmp.path().join("fresh.ckpt");
    ok(&["init", "--out", ck.to_str().unwrap(), "--seed", "0"]);
    let out = ok(&[
        "eval",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--data",
        dir.to_str().unwrap(),
        "--limit",
        "2000",
    ]);
    let acc: f64 = out.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((0.05..=0.15).contains(&acc), "{out}");
}

/// Subset histogram by brute force, printed the way the report prints levels.
fn oracle_levels(m: &PredictionMatrix) -> Vec<(u32, u64)> {
    let k = m.models();
    let n = m.samples();
    let mut hist = vec![0u64; n + 1];
    for mask in 1u32..(1 << k) {
        if mask.count_ones() < 2 {
            continue;
        }
        let mut correct = 0;
        for s in 0..n {
            let mut counts = [0u32; 10];
            for j in (0..k).filter(|j| mask >> j & 1 == 1) {
                counts[m.row(j)[s] as usize] += 1;
            }
            let max = *counts.iter().max().unwrap();
            let winner = counts.iter().position(|&c| c == max).unwrap();
            correct += (winner == m.labels()[s] as usize) as usize;
        }
        hist[correct] += 1;
    }
    let mut levels: Vec<(u32, u64)> = Vec::new();
    for (c, &h) in hist.iter().enumerate().rev().filter(|(_, &h)| h > 0) {
        let l = (c * 10_000 / n) as u32;
        match levels.last_mut() {
            Some((x, cnt)) if *x == l => *cnt += h,
            _ => levels.push((l, h)),
        }
    }
    levels
}

#[test]
fn ensemble_count_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 1000;
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..10)).collect();
    let rows = (0..12)
        .map(|_| {
            labels
                .iter()
                .map(|&l| if rng.gen_bool(0.9) { l } else { rng.gen_range(0..10) })
                .collect()
        })
        .collect();
    let m = PredictionMatrix::unnamed(10, labels, rows).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k12.hvcp");
    m.save(&path).unwrap();
    let out = ok(&[
        "ensemble",
        "count",
        "--matrix",
        path.to_str().unwrap(),
        "--thresholds",
        "0,95.5",
    ]);
    assert!(out.contains("family      at-least-2"));
    assert!(out.contains("subsets     4083"));
    let levels: Vec<(u32, u64)> = out
        .split("accuracy%   subsets\n")
        .nth(1)
        .unwrap()
        .lines()
        .map(|l| {
            let mut it = l.split_whitespace();
            let pct = it.next().unwrap().replace('.', "").parse().unwrap();
            (pct, it.next().unwrap().parse().unwrap())
        })
        .collect();
    assert_eq!(levels, oracle_levels(&m));
    assert!(out.lines().any(|l| l.trim() == "0.00  4083"));
}

#[test]
fn troublesome_report() {
    let m = PredictionMatrix::unnamed(10, vec![1, 2, 3], vec![vec![1, 2, 0], vec![1, 5, 0], vec![1, 2, 3]])
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.hvcp");
    m.save(&path).unwrap();
    let out = ok(&["ensemble", "troublesome", "--matrix", path.to_str().unwrap()]);
    assert!(out.contains("full agreement    1"));
    assert!(out.contains("majority wrong    1 [2]"));
}

#[test]
fn augment_preview_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    fake_mnist(dir.path(), 6, 2);
    let data = dir.path().to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let log_a = ok(&["augment-preview", "--data", data, "--out", a.to_str().unwrap(), "--seed", "3", "--count", "4"]);
    let log_b = ok(&[
        "--threads", "1", "augment-preview", "--data", data, "--out", b.to_str().unwrap(), "--seed", "3", "--count", "4",
    ]);
    assert_eq!(log_a, log_b);
    for i in 0..4 {
        let name = format!("{i:05}_aug.pgm");
        let pa = std::fs::read(a.join(&name)).unwrap();
        assert!(pa.starts_with(b"P5\n28 28\n255\n"));
        assert_eq!(pa, std::fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn train_resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fake_mnist(d, 24, 20);
    let data = d.to_str().unwrap();
    let run = |out: &str, epochs: &str, resume: Option<&Path>| {
        let out = d.join(out);
        let mut args = vec![
            "--threads", "1", "train", "--data", data, "--out", out.to_str().unwrap(), "--epochs", epochs,
            "--set", "batch_size=8", "--set", "augment=none",
        ];
        args.extend(TINY);
        if let Some(r) = resume {
            args.extend(["--resume", r.to_str().unwrap()]);
        }
        ok(&args)
    };
    let straight = run("straight", "2", None);
    run("split", "1", None);
    let resumed = run("split", "2", Some(&d.join("split/last.ckpt")));
    let last = |s: &str| s.lines().last().unwrap().to_string();
    assert_eq!(last(&straight), last(&resumed));
    let log = std::fs::read_to_string(d.join("split/metrics.log")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().nth(1).unwrap().starts_with("1, 1.000000e-3"));
    assert!(d.join("straight/best.ckpt").exists());
}
