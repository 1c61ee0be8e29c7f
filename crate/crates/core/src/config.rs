//! Run configuration files: flat `key = value` lines grouped by dotted
//! prefixes (`corpus.`, `model.`, `train.`, `lambda.`, `electra.`, `probe.`,
//! `run.`).
//! `#` starts a comment. Unknown keys and repeated keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::corpus::ColdStart;
use crate::error::{Error, Result};
use crate::model::EncoderConfig;
use crate::objective::LambdaSchedule;
use crate::strategy::Strategy;
use crate::trainer::{AdamConfig, TrainConfig};

/// Environment variable that replaces `run.out_dir`.
pub const OUT_DIR_ENV: &str = "SAS_OUT_DIR";
/// Name of the resolved config copy written into every run directory.
pub const FROZEN_CONFIG: &str = "config.frozen";

const KEYS: &[&str] = &[
    "corpus.train",
    "corpus.heldout",
    "corpus.vocab",
    "corpus.oracle",
    "corpus.seq_len",
    "corpus.cold_start",
    "model.layers",
    "model.hidden",
    "model.heads",
    "model.ffn",
    "model.dropout",
    "model.tied",
    "train.strategy",
    "train.epochs",
    "train.batch_size",
    "train.peak_lr",
    "train.warmup_fraction",
    "train.seed",
    "train.checkpoint_every",
    "train.log_every",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_eps",
    "train.weight_decay",
    "lambda.schedule",
    "electra.generator_fraction",
    "probe.a",
    "probe.b",
    "probe.seed",
    "run.out_dir",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train_corpus: PathBuf,
    pub heldout_corpus: Option<PathBuf>,
    pub vocab: PathBuf,
    pub oracle: Option<PathBuf>,
    pub seq_len: usize,
    pub cold_start: ColdStart,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub dropout: f64,
    pub tied: bool,
    pub strategy: Strategy,
    pub epochs: u32,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub checkpoint_every: u32,
    pub log_every: u64,
    pub adam: AdamConfig,
    /// `None` selects the strategy's default schedule.
    pub lambda: Option<LambdaSchedule>,
    pub generator_fraction: f64,
    /// Corpora of the two linear-probe classes.
    pub probe_a: Option<PathBuf>,
    pub probe_b: Option<PathBuf>,
    /// Seed of the fixed evaluation draw and probe split.
    pub eval_seed: u64,
    pub out_dir: PathBuf,
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    /// Parse config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key {k:?}", n + 1)));
            }
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
        }
        let mut take = |k: &str| kv.remove(k);
        let path = |v: String| -> PathBuf {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        macro_rules! req {
            ($k:expr) => {
                take($k).ok_or_else(|| Error::Config(format!("missing required key {:?}", $k)))?
            };
        }
        macro_rules! opt {
            ($k:expr, $default:expr) => {
                match take($k) {
                    Some(v) => parse_value($k, &v)?,
                    None => $default,
                }
            };
        }
        let defaults = AdamConfig::default();
        let strategy: Strategy = parse_value("train.strategy", &req!("train.strategy"))?;
        let cfg = RunConfig {
            train_corpus: path(req!("corpus.train")),
            heldout_corpus: take("corpus.heldout").map(path),
            vocab: path(req!("corpus.vocab")),
            oracle: take("corpus.oracle").map(path),
            seq_len: opt!("corpus.seq_len", 32),
            cold_start: opt!("corpus.cold_start", ColdStart::Unigram),
            layers: opt!("model.layers", 4),
            hidden: opt!("model.hidden", 64),
            heads: opt!("model.heads", 4),
            ffn: opt!("model.ffn", 256),
            dropout: opt!("model.dropout", 0.1),
            tied: opt!("model.tied", true),
            strategy,
            epochs: opt!("train.epochs", 10),
            batch_size: opt!("train.batch_size", 64),
            peak_lr: opt!("train.peak_lr", 1e-3),
            warmup_fraction: opt!("train.warmup_fraction", 0.05),
            seed: opt!("train.seed", 1),
            checkpoint_every: opt!("train.checkpoint_every", 1),
            log_every: opt!("train.log_every", 50),
            adam: AdamConfig {
                beta1: opt!("train.adam_beta1", defaults.beta1),
                beta2: opt!("train.adam_beta2", defaults.beta2),
                eps: opt!("train.adam_eps", defaults.eps),
                weight_decay: opt!("train.weight_decay", defaults.weight_decay),
            },
            lambda: match take("lambda.schedule") {
                Some(v) => Some(parse_value("lambda.schedule", &v)?),
                None => None,
            },
            generator_fraction: opt!("electra.generator_fraction", 0.25),
            probe_a: take("probe.a").map(path),
            probe_b: take("probe.b").map(path),
            eval_seed: opt!("probe.seed", 7),
            out_dir: path(take("run.out_dir").unwrap_or_else(|| "run".into())),
        };
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Apply the output-directory override from the environment, if set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.out_dir = PathBuf::from(dir);
        }
        self
    }

    /// Every key with its resolved value, in a form `parse` reads back to an
    /// equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let p = |p: &Path| p.display().to_string();
        put("corpus.train", p(&self.train_corpus));
        if let Some(h) = &self.heldout_corpus {
            put("corpus.heldout", p(h));
        }
        put("corpus.vocab", p(&self.vocab));
        if let Some(o) = &self.oracle {
            put("corpus.oracle", p(o));
        }
        put("corpus.seq_len", self.seq_len.to_string());
        put("corpus.cold_start", self.cold_start.to_string());
        put("model.layers", self.layers.to_string());
        put("model.hidden", self.hidden.to_string());
        put("model.heads", self.heads.to_string());
        put("model.ffn", self.ffn.to_string());
        put("model.dropout", self.dropout.to_string());
        put("model.tied", self.tied.to_string());
        put("train.strategy", self.strategy.name().to_string());
        put("train.epochs", self.epochs.to_string());
        put("train.batch_size", self.batch_size.to_string());
        put("train.peak_lr", self.peak_lr.to_string());
        put("train.warmup_fraction", self.warmup_fraction.to_string());
        put("train.seed", self.seed.to_string());
        put("train.checkpoint_every", self.checkpoint_every.to_string());
        put("train.log_every", self.log_every.to_string());
        put("train.adam_beta1", self.adam.beta1.to_string());
        put("train.adam_beta2", self.adam.beta2.to_string());
        put("train.adam_eps", self.adam.eps.to_string());
        put("train.weight_decay", self.adam.weight_decay.to_string());
        put("lambda.schedule", self.schedule().to_string());
        put("electra.generator_fraction", self.generator_fraction.to_string());
        for (k, v) in [("probe.a", &self.probe_a), ("probe.b", &self.probe_b)] {
            if let Some(v) = v {
                put(k, p(v));
            }
        }
        put("probe.seed", self.eval_seed.to_string());
        put("run.out_dir", p(&self.out_dir));
        s
    }

    pub fn schedule(&self) -> LambdaSchedule {
        self.lambda
            .unwrap_or_else(|| self.strategy.default_lambda(self.epochs))
            .with_epochs(self.epochs)
    }

    pub fn encoder(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            ffn: self.ffn,
            vocab: vocab_size,
            seq_len: self.seq_len,
            dropout: self.dropout,
            tied: self.tied,
        }
    }

    pub fn train_config(&self, vocab_size: usize) -> Result<TrainConfig> {
        let mut t = TrainConfig::new(self.encoder(vocab_size), self.strategy, self.epochs);
        t.batch_size = self.batch_size;
        t.peak_lr = self.peak_lr;
        t.warmup_fraction = self.warmup_fraction;
        t.adam = self.adam;
        t.seed = self.seed;
        t.checkpoint_every = self.checkpoint_every;
        t.log_every = self.log_every;
        t.lambda = self.schedule();
        t.cold_start = self.cold_start.clone();
        t.generator_fraction = self.generator_fraction;
        t.validate()?;
        Ok(t)
    }
}

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub const FILE: &'static str = ".lock";

    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(Self::FILE);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "run directory {} is locked by another writer (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
