#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn sas(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sas"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("SAS_OUT_DIR")
        .output()
        .expect("spawn sas")
}

/// Run and require success, returning stdout.
pub fn sas_ok(args: &[&str], cwd: &Path) -> String {
    let out = sas(args, cwd);
    assert!(
        out.status.success(),
        "sas {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Corpus sizes and model shape for a workspace built through the binary.
pub struct Setup {
    pub train: usize,
    pub heldout: usize,
    pub words: usize,
    pub states: usize,
}

impl Default for Setup {
    fn default() -> Self {
        Setup {
            train: 96,
            heldout: 48,
            words: 14,
            states: 8,
        }
    }
}

/// Generate oracle, corpora and vocabulary in `dir` using the CLI.
pub fn prepare(dir: &Path, s: &Setup) {
    let n = |v: usize| v.to_string();
    sas_ok(
        &[
            "gen-corpus", "--out", "train.txt", "--num-seqs", &n(s.train), "--seq-len", &n(s.words),
            "--seed", "11", "--states", &n(s.states), "--concentration", "0.3", "--oracle-seed", "5",
            "--oracle-out", "oracle.txt",
        ],
        dir,
    );
    for (out, seed) in [("heldout.txt", "12"), ("probe_a.txt", "13")] {
        sas_ok(
            &[
                "gen-corpus", "--out", out, "--num-seqs", &n(s.heldout), "--seq-len", &n(s.words),
                "--seed", seed, "--oracle-in", "oracle.txt",
            ],
            dir,
        );
    }
    sas_ok(
        &[
            "gen-corpus", "--out", "probe_b.txt", "--num-seqs", &n(s.heldout), "--seq-len", &n(s.words),
            "--seed", "14", "--states", &n(s.states), "--concentration", "0.3", "--oracle-seed", "6",
        ],
        dir,
    );
    sas_ok(
        &["build-vocab", "--corpus", "train.txt", "--corpus", "heldout.txt", "--corpus", "probe_b.txt", "--out", "vocab.txt"],
        dir,
    );
}

/// A small run config over the files written by [`prepare`].
pub fn config(dir: &Path, name: &str, strategy: &str, epochs: u32, extra: &str) -> PathBuf {
    let text = format!(
        "# test run\n\
         corpus.train = train.txt\n\
         corpus.heldout = heldout.txt\n\
         corpus.vocab = vocab.txt\n\
         corpus.oracle = oracle.txt\n\
         corpus.seq_len = 16\n\
         model.layers = 1\n\
         model.hidden = 16\n\
         model.heads = 2\n\
         model.ffn = 32\n\
         train.strategy = {strategy}\n\
         train.epochs = {epochs}\n\
         train.batch_size = 16\n\
         train.log_every = 1\n\
         probe.a = probe_a.txt\n\
         probe.b = probe_b.txt\n\
         run.out_dir = {name}\n\
         {extra}"
    );
    let path = dir.join(format!("{name}.cfg"));
    fs::write(&path, text).unwrap();
    path
}

/// Independent reader of a replacement spill file: little-endian `u32`
/// records of instance id, count, positions, ids.
pub fn decode_spill(bytes: &[u8]) -> Vec<(u32, Vec<u32>, Vec<u32>)> {
    assert_eq!(bytes.len() % 4, 0);
    let w: Vec<u32> = bytes.chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < w.len() {
        let (id, n) = (w[i], w[i + 1] as usize);
        out.push((id, w[i + 2..i + 2 + n].to_vec(), w[i + 2 + n..i + 2 + 2 * n].to_vec()));
        i += 2 + 2 * n;
    }
    out
}

/// Metrics rows as `(step, epoch, mlm, rtd, lambda, total)` read without the library.
pub fn metrics_rows(path: &Path) -> Vec<(u64, u32, f64, f64, f64, f64)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("step,epoch,mlm_loss,rtd_loss,lambda,total"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].parse().unwrap(),
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
                f[4].parse().unwrap(),
                f[5].parse().unwrap(),
            )
        })
        .collect()
}

/// Metrics text without the wall-clock column.
pub fn without_wall_clock(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(8);
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
