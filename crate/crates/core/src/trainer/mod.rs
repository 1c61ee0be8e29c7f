//! Training loop, optimizer, metrics and checkpoint/resume.

mod augmenter;
mod metrics;
mod optim;


pub use augmenter::Augmenter;
pub use metrics::{append_metrics, read_metrics, strip_wall_clock, truncate_metrics, MetricsRecord, METRICS_HEADER};
pub use optim::{AdamConfig, AdamW, LrSchedule};

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::augment::{apply_augmentation, sample_next_epoch, select_positions, AugmentedBatch, ReplacementCache};
use crate::corpus::{batch_iter, batches_per_epoch, ColdStart, Corpus, TokenSequence, UnigramTable};
use crate::error::{Error, Result};
use crate::flops::{CostModel, FlopsBreakdown, StepShape};
use crate::model::{
    encoder_forward, flat_rows, mlm_log_probs, rtd_logits, Checkpoint, EncoderConfig, EncoderInput, ForwardCounter,
    Mode, Model, ParamId,
};
use crate::numerics::{Tape, Tensor, Var};
use crate::objective::{combined_loss, mlm_weights, rtd_loss_node, LambdaSchedule, LossBreakdown};
use crate::rng::{stream_rng, Stream};
use crate::strategy::Strategy;

pub const CHECKPOINT_FORMAT: &str = "sas-checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: EncoderConfig,
    pub strategy: Strategy,
    pub epochs: u32,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (the last epoch always).
    pub checkpoint_every: u32,
    pub lambda: LambdaSchedule,
    pub cold_start: ColdStart,
    /// Generator width relative to the discriminator (two-network baseline).
    pub generator_fraction: f64,
    pub log_every: u64,
}

impl TrainConfig {
    pub fn new(model: EncoderConfig, strategy: Strategy, epochs: u32) -> Self {
        TrainConfig {
            model,
            strategy,
            epochs,
            batch_size: 32,
            peak_lr: 1e-3,
            warmup_fraction: 0.05,
            adam: AdamConfig::default(),
            seed: 1,
            checkpoint_every: 1,
            lambda: strategy.default_lambda(epochs),
            cold_start: ColdStart::Unigram,
            generator_fraction: 0.25,
            log_every: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup fraction must lie in [0, 1]");
        }
        if !(0.0 < self.generator_fraction && self.generator_fraction <= 1.0) {
            return bad("generator fraction must lie in (0, 1]");
        }
        if self.log_every == 0 {
            return bad("log interval must be at least 1");
        }
        Ok(())
    }

    /// λ schedule with the epoch count of this run.
    pub fn schedule(&self) -> LambdaSchedule {
        self.lambda.with_epochs(self.epochs)
    }

    pub fn generator_config(&self) -> EncoderConfig {
        self.model.generator(self.generator_fraction)
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel::new(&self.model, self.generator_fraction)
    }

    /// Fresh parameters for this configuration.
    pub fn init_model(&self) -> Result<Model> {
        if self.strategy.two_network() {
            Model::two_network(&self.model, &self.generator_config(), self.seed)
        } else {
            Model::single(&self.model, self.strategy.uses_rtd(), self.seed)
        }
    }
}

/// Everything that changes during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub optim: AdamW,
    /// Completed optimizer steps.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u32,
    pub cache: ReplacementCache,
    pub forward_count: u64,
    pub cumulative_flops: f64,
    /// Not checkpointed; a resumed run counts from zero.
    pub wall_seconds: f64,
}

/// What one training step did, passed to observers.
pub struct StepReport<'a> {
    pub step: u64,
    pub epoch: u32,
    /// Input the main network saw.
    pub batch: &'a AugmentedBatch,
    /// `[MASK]`ed generator input (two-network baseline only).
    pub generator_input: Option<&'a AugmentedBatch>,
    pub loss: LossBreakdown,
    pub rtd_accuracy: f64,
    pub forwards: u64,
    pub flops: FlopsBreakdown,
    /// Next-epoch samples written to the cache: instance, positions, ids.
    pub sampled: &'a [(u64, Vec<usize>, Vec<u32>)],
}

pub trait Observer {
    fn on_step(&mut self, _report: &StepReport<'_>) -> Result<()> {
        Ok(())
    }
    fn on_epoch_end(&mut self, _epoch: u32, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

struct StepOutcome {
    loss: LossBreakdown,
    rtd_accuracy: f64,
    shape: StepShape,
    sampled: Vec<(u64, Vec<usize>, Vec<u32>)>,
    main_input: Option<AugmentedBatch>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub table: UnigramTable,
    pub state: TrainState,
    cost: CostModel,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(config: TrainConfig, table: UnigramTable) -> Result<Self> {
        config.validate()?;
        let model = config.init_model()?;
        let optim = AdamW::new(config.adam, &model.store);
        let cost = config.cost_model();
        Ok(Trainer {
            config,
            table,
            state: TrainState {
                model,
                optim,
                step: 0,
                epoch: 0,
                cache: ReplacementCache::new(),
                forward_count: 0,
                cumulative_flops: 0.0,
                wall_seconds: 0.0,
            },
            cost,
            out_dir: None,
        })
    }

    /// Write metrics and checkpoints into `dir`.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn out_dir(&self) -> Option<&Path> {
        self.out_dir.as_deref()
    }

    pub fn metrics_path(&self) -> Option<PathBuf> {
        self.out_dir.as_ref().map(|d| d.join("metrics.csv"))
    }

    /// Train until `config.epochs` epochs are complete.
    pub fn run(&mut self, corpus: &Corpus, obs: &mut dyn Observer) -> Result<Vec<MetricsRecord>> {
        self.run_until(corpus, self.config.epochs, obs)
    }

    /// Train until `end_epoch` epochs are complete (at most `config.epochs`).
    pub fn run_until(&mut self, corpus: &Corpus, end_epoch: u32, obs: &mut dyn Observer) -> Result<Vec<MetricsRecord>> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if corpus.seq_len() != self.config.model.seq_len {
            return Err(Error::Config(format!(
                "corpus sequence length {} differs from model seq_len {}",
                corpus.seq_len(),
                self.config.model.seq_len
            )));
        }
        let cfg = self.config.clone();
        let per_epoch = batches_per_epoch(corpus.len(), cfg.batch_size) as u64;
        let lr = LrSchedule::new(cfg.peak_lr, cfg.warmup_fraction, per_epoch * cfg.epochs as u64);
        let schedule = cfg.schedule();
        let end_epoch = end_epoch.min(cfg.epochs);
        let mut all = Vec::new();
        while self.state.epoch < end_epoch {
            let epoch = self.state.epoch;
            let started = Instant::now();
            let wall0 = self.state.wall_seconds;
            let lambda = if cfg.strategy.uses_rtd() { schedule.value(epoch) } else { 0.0 };
            let sampling = cfg.strategy.self_augmenting() && epoch + 1 < cfg.epochs;
            let plan = batch_iter(corpus.len(), cfg.batch_size, epoch, cfg.seed)?;
            let mut rows = Vec::new();
            let n_batches = plan.num_batches();
            for (bi, idx) in plan.iter().enumerate() {
                let seqs: Vec<&TokenSequence> = idx.iter().map(|&i| &corpus.sequences[i]).collect();
                let augmenter = Augmenter {
                    strategy: cfg.strategy,
                    seed: cfg.seed,
                    vocab_size: cfg.model.vocab,
                    table: &self.table,
                };
                let batch = augmenter.build(&seqs, epoch, &mut self.state.cache)?;
                let before = self.state.forward_count;
                let rate = lr.at(self.state.step + 1);
                let out = if cfg.strategy.two_network() {
                    self.step_two_network(&batch, &seqs, epoch, lambda, rate)?
                } else {
                    self.step_single(&batch, &seqs, epoch, lambda, sampling, rate)?
                };
                let forwards = self.state.forward_count - before;
                if forwards != cfg.strategy.forwards_per_batch() {
                    return Err(Error::Invalid(format!(
                        "{} encoder forwards in one batch, expected {}",
                        forwards,
                        cfg.strategy.forwards_per_batch()
                    )));
                }
                let flops = self.cost.step(cfg.strategy, &out.shape);
                self.state.cumulative_flops += flops.total;
                self.state.step += 1;
                if out.loss.empty_positions {
                    log::warn!("step {}: no augmented positions in batch", self.state.step);
                }
                let main_input = out.main_input.as_ref();
                obs.on_step(&StepReport {
                    step: self.state.step,
                    epoch,
                    batch: main_input.unwrap_or(&batch),
                    generator_input: main_input.map(|_| &batch),
                    loss: out.loss,
                    rtd_accuracy: out.rtd_accuracy,
                    forwards,
                    flops,
                    sampled: &out.sampled,
                })?;
                if self.state.step.is_multiple_of(cfg.log_every) || bi == 0 || bi + 1 == n_batches {
                    rows.push(MetricsRecord {
                        step: self.state.step,
                        epoch,
                        mlm_loss: out.loss.mlm_loss,
                        rtd_loss: out.loss.rtd_loss,
                        lambda: out.loss.lambda,
                        total: out.loss.total,
                        rtd_accuracy: out.rtd_accuracy,
                        encoder_forward_count: self.state.forward_count,
                        wall_seconds: wall0 + started.elapsed().as_secs_f64(),
                        cumulative_flops: self.state.cumulative_flops,
                    });
                }
            }
            if sampling && self.state.cache.len() != corpus.len() {
                return Err(Error::Invalid(format!(
                    "epoch {epoch} ended with {} cache entries for {} instances",
                    self.state.cache.len(),
                    corpus.len()
                )));
            }
            self.state.epoch += 1;
            self.state.wall_seconds = wall0 + started.elapsed().as_secs_f64();
            if let Some(last) = rows.last() {
                log::info!(
                    "epoch {} done: step {} mlm {:.4} rtd {:.4} lambda {} ({:.1}s)",
                    epoch,
                    last.step,
                    last.mlm_loss,
                    last.rtd_loss,
                    last.lambda,
                    self.state.wall_seconds
                );
            }
            if let Some(path) = self.metrics_path() {
                append_metrics(&path, &rows)?;
            }
            let done = self.state.epoch;
            if self.out_dir.is_some() && (done == cfg.epochs || done.is_multiple_of(cfg.checkpoint_every.max(1))) {
                self.save_checkpoint()?;
            }
            obs.on_epoch_end(epoch, &self.state)?;
            all.extend(rows);
        }
        Ok(all)
    }

    fn dropout_rng(&self) -> rand_chacha::ChaCha8Rng {
        stream_rng(self.config.seed, Stream::Dropout, &[self.state.step])
    }

    fn step_single(
        &mut self,
        batch: &AugmentedBatch,
        seqs: &[&TokenSequence],
        epoch: u32,
        lambda: f64,
        sampling: bool,
        lr: f64,
    ) -> Result<StepOutcome> {
        let cfg = &self.config;
        let net = &self.state.model.main;
        let k = batch.seq_len;
        let counter = ForwardCounter::new(self.state.forward_count);
        let mut tape: Tape = Tape::new();
        let vars = self.state.model.store.bind(&mut tape);
        let mut rng = self.dropout_rng();
        let ids = batch.augmented_ids();
        let pad = batch.pad_mask();
        let input = EncoderInput {
            ids: &ids,
            pad_mask: &pad,
            batch: batch.len(),
        };
        let hidden = encoder_forward(&mut tape, &vars, net, &input, &mut Mode { train: true, rng: &mut rng }, &counter)?;

        // MLM head rows: loss positions first, then next-epoch positions not
        // already among them.
        let positions = batch.positions();
        let mut rows = flat_rows(&positions, k)?;
        let n_loss = rows.len();
        let mut next = Vec::new();
        if sampling {
            let mut offset = 0;
            for (b, inst) in batch.instances.iter().enumerate() {
                let s = select_positions(seqs[b], epoch + 1, cfg.seed)?;
                let idx: Vec<usize> = s
                    .positions
                    .iter()
                    .map(|&p| match inst.positions.iter().position(|&q| q == p) {
                        Some(j) => offset + j,
                        None => {
                            rows.push(b * k + p);
                            rows.len() - 1
                        }
                    })
                    .collect();
                offset += inst.positions.len();
                next.push((inst.instance_id, s.positions, idx));
            }
        }
        let extra = rows.len() - n_loss;
        let mut sampled = Vec::with_capacity(next.len());

        let (mlm, empty) = if rows.is_empty() {
            (tape.constant(Tensor::scalar(0.0)), true)
        } else {
            let lp = mlm_log_probs(&mut tape, &vars, net, hidden, &rows)?;
            let (w, empty) = mlm_weights(&positions);
            let mut w: Vec<f32> = w.into_iter().map(|x| x as f32).collect();
            w.resize(rows.len(), 0.0);
            let mut targets = batch.targets();
            targets.resize(rows.len(), 0);
            let node = tape.weighted_nll(lp, &targets, &w)?;
            for (inst, positions, idx) in &next {
                let ids = sample_next_epoch(tape.value(lp), idx, cfg.seed, *inst, epoch)?;
                sampled.push((*inst, positions.clone(), ids));
            }
            (node, empty)
        };

        let (total, rtd_val, acc) = if cfg.strategy.uses_rtd() {
            let z = rtd_logits(&mut tape, &vars, net, hidden)?;
            let labels = batch.labels();
            let rtd = rtd_loss_node(&mut tape, z, &labels, &pad, k)?;
            let acc = rtd_accuracy(tape.value(z).data(), &labels, &pad);
            let val = tape.value(rtd).item() as f64;
            (crate::objective::combined_node(&mut tape, mlm, rtd, lambda)?, val, acc)
        } else {
            (mlm, 0.0, f64::NAN)
        };
        let mut loss = combined_loss(tape.value(mlm).item() as f64, rtd_val, lambda);
        loss.empty_positions = empty;
        self.check_finite(&loss)?;
        tape.backward(total)?;
        self.apply_update(&tape, &vars, lr);
        for (inst, positions, ids) in &sampled {
            self.state.cache.store(*inst, epoch, positions.clone(), ids.clone())?;
        }
        self.state.forward_count = counter.get();
        Ok(StepOutcome {
            loss,
            rtd_accuracy: acc,
            shape: StepShape {
                batch: batch.len(),
                mlm_rows: n_loss as f64,
                sample_rows: extra as f64,
            },
            sampled,
            main_input: None,
        })
    }

    fn step_two_network(
        &mut self,
        masked: &AugmentedBatch,
        seqs: &[&TokenSequence],
        epoch: u32,
        lambda: f64,
        lr: f64,
    ) -> Result<StepOutcome> {
        let cfg = &self.config;
        let model = &self.state.model;
        let gen = model
            .generator
            .as_ref()
            .ok_or_else(|| Error::Invalid("two-network strategy without generator".into()))?;
        let k = masked.seq_len;
        let counter = ForwardCounter::new(self.state.forward_count);
        let mut tape: Tape = Tape::new();
        let vars = model.store.bind(&mut tape);
        let mut rng = self.dropout_rng();
        let pad = masked.pad_mask();

        let gen_ids = masked.augmented_ids();
        let input = EncoderInput {
            ids: &gen_ids,
            pad_mask: &pad,
            batch: masked.len(),
        };
        let hg = encoder_forward(&mut tape, &vars, gen, &input, &mut Mode { train: true, rng: &mut rng }, &counter)?;
        let positions = masked.positions();
        let rows = flat_rows(&positions, k)?;
        let (gen_loss, empty, disc_batch) = if rows.is_empty() {
            (tape.constant(Tensor::scalar(0.0)), true, masked.clone())
        } else {
            let lp = mlm_log_probs(&mut tape, &vars, gen, hg, &rows)?;
            let (w, empty) = mlm_weights(&positions);
            let w: Vec<f32> = w.into_iter().map(|x| x as f32).collect();
            let node = tape.weighted_nll(lp, &masked.targets(), &w)?;
            let mut offset = 0;
            let mut instances = Vec::with_capacity(masked.len());
            for (b, inst) in masked.instances.iter().enumerate() {
                let idx: Vec<usize> = (offset..offset + inst.positions.len()).collect();
                offset += inst.positions.len();
                let ids = sample_next_epoch(tape.value(lp), &idx, cfg.seed, inst.instance_id, epoch)?;
                instances.push(apply_augmentation(seqs[b], &inst.positions, &ids, cfg.model.vocab)?);
            }
            (node, empty, AugmentedBatch { seq_len: k, instances })
        };

        let disc_ids = disc_batch.augmented_ids();
        let input = EncoderInput {
            ids: &disc_ids,
            pad_mask: &pad,
            batch: disc_batch.len(),
        };
        let hd = encoder_forward(&mut tape, &vars, &model.main, &input, &mut Mode { train: true, rng: &mut rng }, &counter)?;
        let z = rtd_logits(&mut tape, &vars, &model.main, hd)?;
        let labels = disc_batch.labels();
        let rtd = rtd_loss_node(&mut tape, z, &labels, &pad, k)?;
        let acc = rtd_accuracy(tape.value(z).data(), &labels, &pad);
        let total = crate::objective::combined_node(&mut tape, gen_loss, rtd, lambda)?;
        let mut loss = combined_loss(tape.value(gen_loss).item() as f64, tape.value(rtd).item() as f64, lambda);
        loss.empty_positions = empty;
        self.check_finite(&loss)?;
        tape.backward(total)?;
        self.apply_update(&tape, &vars, lr);
        self.state.forward_count = counter.get();
        Ok(StepOutcome {
            loss,
            rtd_accuracy: acc,
            shape: StepShape {
                batch: masked.len(),
                mlm_rows: rows.len() as f64,
                sample_rows: 0.0,
            },
            sampled: Vec::new(),
            main_input: Some(disc_batch),
        })
    }

    fn check_finite(&self, loss: &LossBreakdown) -> Result<()> {
        if loss.mlm_loss.is_finite() && loss.rtd_loss.is_finite() && loss.total.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteLoss {
                step: self.state.step + 1,
                mlm: loss.mlm_loss,
                rtd: loss.rtd_loss,
            })
        }
    }

    fn apply_update(&mut self, tape: &Tape, vars: &[Var], lr: f64) {
        let grads: Vec<Option<&[f32]>> = vars.iter().map(|&v| tape.grad(v)).collect();
        self.state.optim.update(&mut self.state.model.store, &grads, lr);
    }

    /// Serialize parameters, optimizer moments and counters.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let cfg = &self.config;
        let s = &self.state;
        let mut c = Checkpoint::default();
        c.set("format", CHECKPOINT_FORMAT);
        c.set("strategy", cfg.strategy);
        c.set("seed", cfg.seed);
        c.set("epochs", cfg.epochs);
        c.set("batch_size", cfg.batch_size);
        for (k, v) in model_echo(&cfg.model) {
            c.set(&k, v);
        }
        c.set("generator_fraction", cfg.generator_fraction);
        c.set("step", s.step);
        c.set("epoch", s.epoch);
        c.set("adam_step", s.optim.step);
        c.set("forward_count", s.forward_count);
        c.set("cumulative_flops", s.cumulative_flops);
        if s.cache.is_empty() {
            c.set("cache_file", "");
        } else {
            c.set("cache_file", cache_file_name(s.epoch.saturating_sub(1)));
        }
        c.set("cache_digest", s.cache.digest());
        let store = &s.model.store;
        for (n, t) in store.names().iter().zip(store.tensors()) {
            c.arrays.push((n.clone(), t.clone()));
        }
        for (i, n) in store.names().iter().enumerate() {
            c.arrays.push((format!("adam.m.{n}"), s.optim.m[i].clone()));
        }
        for (i, n) in store.names().iter().enumerate() {
            c.arrays.push((format!("adam.v.{n}"), s.optim.v[i].clone()));
        }
        Ok(c)
    }

    /// Write `ckpt-eNNN.bin` (plus the cache spill) into the output directory.
    pub fn save_checkpoint(&self) -> Result<PathBuf> {
        let dir = self
            .out_dir
            .as_ref()
            .ok_or_else(|| Error::Invalid("no output directory".into()))?;
        let ckpt = self.checkpoint()?;
        if !self.state.cache.is_empty() {
            self.state
                .cache
                .save(&dir.join(cache_file_name(self.state.epoch.saturating_sub(1))))?;
        }
        let path = dir.join(checkpoint_file_name(self.state.epoch));
        ckpt.save(&path)?;
        Ok(path)
    }

    /// Rebuild a trainer from a checkpoint written by [`Trainer::save_checkpoint`].
    pub fn resume(config: TrainConfig, table: UnigramTable, path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let mut t = Trainer::new(config, table)?;
        t.restore(&ckpt, path.parent().unwrap_or(Path::new(".")))?;
        Ok(t)
    }

    fn restore(&mut self, ckpt: &Checkpoint, dir: &Path) -> Result<()> {
        let cfg = &self.config;
        if ckpt.get("format")? != CHECKPOINT_FORMAT {
            return Err(Error::CorruptCheckpoint("not a training checkpoint".into()));
        }
        let mut expect = vec![
            ("strategy".to_string(), cfg.strategy.to_string()),
            ("seed".to_string(), cfg.seed.to_string()),
            ("generator_fraction".to_string(), cfg.generator_fraction.to_string()),
        ];
        expect.extend(model_echo(&cfg.model));
        for (k, v) in expect {
            let found = ckpt.get(&k)?;
            if found != v {
                return Err(Error::Config(format!("checkpoint {k}={found} but config has {v}")));
            }
        }
        let s = &mut self.state;
        s.model.load_params(ckpt)?;
        for i in 0..s.model.store.len() {
            let name = s.model.store.name(ParamId(i)).to_string();
            s.optim.m[i] = ckpt.array(&format!("adam.m.{name}"))?.clone();
            s.optim.v[i] = ckpt.array(&format!("adam.v.{name}"))?.clone();
        }
        s.optim.step = ckpt.parse("adam_step")?;
        s.step = ckpt.parse("step")?;
        s.epoch = ckpt.parse("epoch")?;
        s.forward_count = ckpt.parse("forward_count")?;
        s.cumulative_flops = ckpt.parse("cumulative_flops")?;
        let cache_file = ckpt.get("cache_file")?;
        s.cache = if cache_file.is_empty() {
            ReplacementCache::new()
        } else {
            ReplacementCache::load(&dir.join(cache_file), s.epoch.saturating_sub(1))?
        };
        if s.cache.digest() != ckpt.get("cache_digest")? {
            return Err(Error::CorruptCheckpoint(format!("cache file {cache_file} does not match its digest")));
        }
        Ok(())
    }
}

pub fn checkpoint_file_name(epochs_done: u32) -> String {
    format!("ckpt-e{epochs_done:03}.bin")
}

/// Spill file for the samples produced during epoch `epoch`.
pub fn cache_file_name(epoch: u32) -> String {
    format!("cache-e{epoch}.bin")
}

/// Model configuration as `model.*` header entries.
pub fn model_echo(m: &EncoderConfig) -> Vec<(String, String)> {
    vec![
        ("model.layers".into(), m.layers.to_string()),
        ("model.hidden".into(), m.hidden.to_string()),
        ("model.heads".into(), m.heads.to_string()),
        ("model.ffn".into(), m.ffn.to_string()),
        ("model.vocab".into(), m.vocab.to_string()),
        ("model.seq_len".into(), m.seq_len.to_string()),
        ("model.dropout".into(), m.dropout.to_string()),
        ("model.tied".into(), m.tied.to_string()),
    ]
}

/// Rebuild the model configuration from a checkpoint header.
pub fn model_from_checkpoint(c: &Checkpoint) -> Result<EncoderConfig> {
    let cfg = EncoderConfig {
        layers: c.parse("model.layers")?,
        hidden: c.parse("model.hidden")?,
        heads: c.parse("model.heads")?,
        ffn: c.parse("model.ffn")?,
        vocab: c.parse("model.vocab")?,
        seq_len: c.parse("model.seq_len")?,
        dropout: c.parse("model.dropout")?,
        tied: c.parse("model.tied")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Parameters only, in the layout of the checkpointed run.
pub fn load_model(c: &Checkpoint) -> Result<(Model, Strategy)> {
    let cfg = model_from_checkpoint(c)?;
    let strategy: Strategy = c.get("strategy")?.parse()?;
    let seed = c.parse("seed")?;
    let mut model = if strategy.two_network() {
        let frac: f64 = c.parse("generator_fraction")?;
        Model::two_network(&cfg, &cfg.generator(frac), seed)?
    } else {
        Model::single(&cfg, strategy.uses_rtd(), seed)?
    };
    model.load_params(c)?;
    Ok((model, strategy))
}

/// Fraction of real positions where `σ(z) ≥ 0.5` agrees with the label.
pub fn rtd_accuracy(z: &[f32], labels: &[bool], pad: &[bool]) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for ((&z, &y), &m) in z.iter().zip(labels).zip(pad) {
        if m {
            n += 1;
            hit += ((z >= 0.0) == y) as usize;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        hit as f64 / n as f64
    }
}
