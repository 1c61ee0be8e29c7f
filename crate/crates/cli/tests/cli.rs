mod common;

use std::fs;

use common::*;

#[test]
fn end_to_end_run_writes_inspectable_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, &Setup::default());
    let cfg = config(d, "run", "sas", 3, "");
    sas_ok(&["pretrain", "--config", cfg.to_str().unwrap()], d);
    let run = d.join("run");
    for f in ["ckpt-e001.bin", "ckpt-e002.bin", "ckpt-e003.bin", "metrics.csv", "eval.csv", "config.frozen"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    assert!(!run.join(".lock").exists());

    // Stored replacements match an independent decoding of the spill file.
    let records = decode_spill(&fs::read(run.join("cache-e1.bin")).unwrap());
    assert_eq!(records.len(), Setup::default().train);
    let vocab: Vec<String> = fs::read_to_string(d.join("vocab.txt"))
        .unwrap()
        .lines()
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect();
    for (id, positions, ids) in records.iter().take(5) {
        let out = sas_ok(
            &["inspect-aug", "--run", "run", "--epoch", "1", "--instance", &id.to_string(), "--vocab", "vocab.txt"],
            d,
        );
        let mut lines = out.lines();
        assert_eq!(lines.next().unwrap(), "instance,epoch,slot,position,token_id,token");
        let rows: Vec<String> = lines.map(str::to_string).collect();
        let expect: Vec<String> = positions
            .iter()
            .zip(ids)
            .enumerate()
            .map(|(s, (p, t))| format!("{id},1,{s},{p},{t},{}", vocab[*t as usize]))
            .collect();
        assert_eq!(rows, expect);
    }

    // λ is fixed within an epoch and ramps 50 → 200 across three epochs.
    for (_, epoch, mlm, rtd, lambda, total) in metrics_rows(&run.join("metrics.csv")) {
        assert_eq!(lambda, [50.0, 125.0, 200.0][epoch as usize]);
        assert!((total - (mlm + lambda * rtd)).abs() <= 1e-6 * total.abs().max(1.0));
    }

    let eval = fs::read_to_string(run.join("eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 4);

    // Probe appends to a CSV, writing the header once.
    for _ in 0..2 {
        sas_ok(&["probe", "--checkpoint", "run/ckpt-e003.bin", "--config", "run.cfg", "--out", "probe.csv"], d);
    }
    let probe = fs::read_to_string(d.join("probe.csv")).unwrap();
    let lines: Vec<&str> = probe.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("checkpoint,strategy,epoch,mlm_ce"));
    assert_eq!(lines[1], lines[2]);
    assert!(lines[1].starts_with("run/ckpt-e003.bin,SAS,3,"));
}

#[test]
fn resuming_reproduces_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, &Setup::default());
    let cfg = config(d, "run", "sas_c", 3, "");
    sas_ok(&["pretrain", "--config", cfg.to_str().unwrap()], d);
    let run = d.join("run");
    let metrics = without_wall_clock(&run.join("metrics.csv"));
    let ckpt = fs::read(run.join("ckpt-e003.bin")).unwrap();
    fs::remove_file(run.join("ckpt-e003.bin")).unwrap();
    sas_ok(&["pretrain", "--config", cfg.to_str().unwrap(), "--resume", "run/ckpt-e002.bin"], d);
    assert_eq!(without_wall_clock(&run.join("metrics.csv")), metrics);
    assert_eq!(fs::read(run.join("ckpt-e003.bin")).unwrap(), ckpt);
    assert_eq!(fs::read_to_string(run.join("eval.csv")).unwrap().lines().count(), 4);
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, &Setup { train: 32, ..Setup::default() });

    let missing = sas(&["pretrain", "--config", "absent.cfg"], d);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("absent.cfg"));

    let bad = config(d, "bad", "sas", 1, "train.warp = 9\n");
    let out = sas(&["pretrain", "--config", bad.to_str().unwrap()], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.warp"));

    let bad = config(d, "bad2", "no_such_strategy", 1, "");
    assert_eq!(sas(&["pretrain", "--config", bad.to_str().unwrap()], d).status.code(), Some(1));

    assert_eq!(sas(&["frobnicate"], d).status.code(), Some(2));
    assert_eq!(sas(&["pretrain"], d).status.code(), Some(2));

    let cfg = config(d, "run", "mask_mlm", 1, "");
    sas_ok(&["pretrain", "--config", cfg.to_str().unwrap()], d);
    let again = sas(&["pretrain", "--config", cfg.to_str().unwrap()], d);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("already holds a run"));

    // A run directory held by another process is refused.
    let cfg = config(d, "locked", "sas", 1, "");
    fs::create_dir_all(d.join("locked")).unwrap();
    fs::write(d.join("locked/.lock"), "").unwrap();
    assert_eq!(sas(&["pretrain", "--config", cfg.to_str().unwrap()], d).status.code(), Some(1));

    assert_eq!(
        sas(&["inspect-aug", "--run", "run", "--epoch", "0", "--instance", "0"], d).status.code(),
        Some(1)
    );
}

#[test]
fn environment_overrides_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, &Setup { train: 32, ..Setup::default() });
    let cfg = config(d, "run", "sas", 1, "");
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_sas"))
        .args(["pretrain", "--config", cfg.to_str().unwrap()])
        .current_dir(d)
        .env("SAS_OUT_DIR", d.join("elsewhere"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.join("elsewhere/ckpt-e001.bin").exists());
    assert!(!d.join("run").exists());
}

#[test]
fn flops_table_lists_published_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, &Setup { train: 32, ..Setup::default() });
    let cfg = config(d, "run", "sas", 2, "");
    let out = sas_ok(&["flops", "--config", cfg.to_str().unwrap()], d);
    let rows: Vec<Vec<&str>> = out.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let reference: Vec<_> = rows.iter().filter(|r| r[1] == "reference").collect();
    assert_eq!(reference.len(), 3);
    for r in reference {
        let ours: f64 = r[7].parse().unwrap();
        let published: f64 = r[8].parse().unwrap();
        assert!((ours / published - 1.0).abs() < 1e-3, "{r:?}");
    }
    let desk: Vec<_> = rows.iter().filter(|r| r[0] == "desk").collect();
    assert_eq!(desk.len(), 8);
    assert!(desk.iter().all(|r| r[5] == "4"));
}
