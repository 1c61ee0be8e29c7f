//! Evaluation probes: intrinsic MLM/RTD metrics on a fixed augmentation draw,
//! generator KL against a Markov oracle, and a frozen-encoder linear probe.

mod logistic;


use rand::seq::SliceRandom;

use crate::augment::{apply_augmentation, cold_start_for, select_positions, AugmentedBatch};
use crate::corpus::{Corpus, MarkovOracle, TokenSequence, UnigramTable, Vocab, MASK};
use crate::error::{Error, Result};
use crate::model::{encoder_forward, flat_rows, mlm_log_probs, rtd_logits, EncoderInput, ForwardCounter, Mode, Model, Network};
use crate::numerics::{Tape, Tensor};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::strategy::{Replacement, Strategy};

pub use logistic::LogisticRegression;

/// Sequences per evaluation forward pass.
const EVAL_CHUNK: usize = 256;

/// Metrics of one checkpoint. Entries that do not apply to a strategy (RTD
/// metrics without an RTD head, for instance) are NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub mlm_ce: f64,
    pub mlm_ppl: f64,
    pub rtd_accuracy: f64,
    pub rtd_auc: f64,
    pub generator_mean_kl: f64,
    pub probe_accuracy: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "mlm_ce,mlm_ppl,rtd_accuracy,rtd_auc,generator_mean_kl,probe_accuracy";

    pub fn new(intrinsic: Intrinsic, generator_mean_kl: f64, probe_accuracy: f64) -> Self {
        EvalReport {
            mlm_ce: intrinsic.mlm_ce,
            mlm_ppl: intrinsic.mlm_ce.exp(),
            rtd_accuracy: intrinsic.rtd_accuracy,
            rtd_auc: intrinsic.rtd_auc,
            generator_mean_kl,
            probe_accuracy,
        }
    }

    pub fn csv_fields(&self) -> String {
        [
            self.mlm_ce,
            self.mlm_ppl,
            self.rtd_accuracy,
            self.rtd_auc,
            self.generator_mean_kl,
            self.probe_accuracy,
        ]
        .iter()
        .map(|v| format_metric(*v))
        .collect::<Vec<_>>()
        .join(",")
    }
}

/// Fixed-precision CSV cell; NaN becomes an empty cell.
pub fn format_metric(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsic {
    pub mlm_ce: f64,
    pub rtd_accuracy: f64,
    pub rtd_auc: f64,
}

/// The evaluation augmentation: positions and cold-start replacements drawn
/// from streams derived from `seed`, independent of any model.
pub fn eval_draw(seqs: &[TokenSequence], table: &UnigramTable, vocab_size: usize, seed: u64) -> Result<AugmentedBatch> {
    let root = derive_seed(seed, Stream::Eval, &[]);
    let k = seqs.first().map_or(0, TokenSequence::len);
    let instances = seqs
        .iter()
        .map(|seq| {
            let s = select_positions(seq, 0, root)?;
            let ids = cold_start_for(table, s.positions.len(), root, seq.instance_id, 0);
            apply_augmentation(seq, &s.positions, &ids, vocab_size)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AugmentedBatch { seq_len: k, instances })
}

/// Same positions as `batch`, every one replaced by `[MASK]`.
pub fn masked(batch: &AugmentedBatch, vocab_size: usize) -> Result<AugmentedBatch> {
    let instances = batch
        .instances
        .iter()
        .map(|a| {
            let seq = TokenSequence {
                instance_id: a.instance_id,
                ids: a.original.clone(),
                pad_mask: a.pad_mask.clone(),
            };
            apply_augmentation(&seq, &a.positions, &vec![MASK; a.positions.len()], vocab_size)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AugmentedBatch {
        seq_len: batch.seq_len,
        instances,
    })
}

/// Input the MLM network of `strategy` is evaluated on: `[MASK]`ed for
/// networks trained on masks, the cold-start draw otherwise.
fn mlm_input(strategy: Strategy, draw: &AugmentedBatch, vocab_size: usize) -> Result<AugmentedBatch> {
    match strategy.replacement() {
        Replacement::Mask | Replacement::Generator => masked(draw, vocab_size),
        Replacement::ColdStart | Replacement::SelfAugment => Ok(draw.clone()),
    }
}

struct Outputs {
    /// `[rows, V]` log-probabilities at the requested MLM rows.
    logp: Option<Tensor>,
    /// RTD logits for every position.
    rtd: Option<Vec<f32>>,
    /// `[batch, H]` final hidden state at `[CLS]`.
    cls: Option<Vec<f32>>,
}

/// Eval-mode forward of `net` over `batch` flattened sequences.
#[allow(clippy::too_many_arguments)]
fn forward(
    model: &Model,
    net: &Network,
    ids: &[u32],
    pad: &[bool],
    batch: usize,
    mlm_rows: Option<&[usize]>,
    want_rtd: bool,
    want_cls: bool,
) -> Result<Outputs> {
    let mut tape: Tape = Tape::new();
    let vars = model.store.bind_frozen(&mut tape);
    let mut rng = stream_rng(0, Stream::Eval, &[]);
    let counter = ForwardCounter::new(0);
    let input = EncoderInput { ids, pad_mask: pad, batch };
    let hidden = encoder_forward(&mut tape, &vars, net, &input, &mut Mode { train: false, rng: &mut rng }, &counter)?;
    let logp = match mlm_rows {
        Some(rows) if !rows.is_empty() => {
            let lp = mlm_log_probs(&mut tape, &vars, net, hidden, rows)?;
            Some(tape.value(lp).clone())
        }
        _ => None,
    };
    let rtd = if want_rtd {
        let z = rtd_logits(&mut tape, &vars, net, hidden)?;
        Some(tape.value(z).data().to_vec())
    } else {
        None
    };
    let cls = want_cls.then(|| {
        let h = tape.value(hidden);
        let k = ids.len() / batch;
        (0..batch).flat_map(|b| h.row(b * k).to_vec()).collect()
    });
    Ok(Outputs { logp, rtd, cls })
}

/// MLM log-probabilities at the positions of `batch`, one `Vec` per instance
/// holding one row per position.
fn mlm_rows_of(model: &Model, batch: &AugmentedBatch) -> Result<Vec<Vec<Vec<f32>>>> {
    let net = model.mlm_network();
    let k = batch.seq_len;
    let mut out = Vec::with_capacity(batch.len());
    for chunk in batch.instances.chunks(EVAL_CHUNK) {
        let sub = AugmentedBatch {
            seq_len: k,
            instances: chunk.to_vec(),
        };
        let rows = flat_rows(&sub.positions(), k)?;
        let o = forward(model, net, &sub.augmented_ids(), &sub.pad_mask(), sub.len(), Some(&rows), false, false)?;
        let mut r = 0;
        for inst in chunk {
            let mut per = Vec::with_capacity(inst.positions.len());
            for _ in &inst.positions {
                per.push(o.logp.as_ref().expect("rows are non-empty").row(r).to_vec());
                r += 1;
            }
            out.push(per);
        }
    }
    Ok(out)
}

/// MLM cross-entropy (nats per evaluated position), RTD accuracy at the 0.5
/// threshold and RTD AUC, all on the fixed evaluation draw.
pub fn intrinsic_eval(
    model: &Model,
    strategy: Strategy,
    heldout: &Corpus,
    table: &UnigramTable,
    seed: u64,
) -> Result<Intrinsic> {
    if heldout.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab_size = model.main.config.vocab;
    let draw = eval_draw(&heldout.sequences, table, vocab_size, seed)?;
    let input = mlm_input(strategy, &draw, vocab_size)?;
    let logp = mlm_rows_of(model, &input)?;
    let (mut nll, mut n) = (0.0, 0usize);
    for (inst, rows) in input.instances.iter().zip(&logp) {
        for (&p, row) in inst.positions.iter().zip(rows) {
            nll -= row[inst.original[p] as usize] as f64;
            n += 1;
        }
    }
    let mlm_ce = if n == 0 { f64::NAN } else { nll / n as f64 };

    let (rtd_accuracy, rtd_auc) = if model.main.rtd.is_some() {
        let mut z = Vec::new();
        for chunk in draw.instances.chunks(EVAL_CHUNK) {
            let sub = AugmentedBatch {
                seq_len: draw.seq_len,
                instances: chunk.to_vec(),
            };
            let o = forward(model, &model.main, &sub.augmented_ids(), &sub.pad_mask(), sub.len(), None, true, false)?;
            z.extend(o.rtd.expect("requested"));
        }
        let labels = draw.labels();
        let pad = draw.pad_mask();
        let (mut scores, mut replaced) = (Vec::new(), Vec::new());
        let (mut hit, mut total) = (0usize, 0usize);
        for ((&zi, &y), &m) in z.iter().zip(&labels).zip(&pad) {
            if m {
                total += 1;
                hit += ((zi >= 0.0) == y) as usize;
                scores.push(-(zi as f64));
                replaced.push(!y);
            }
        }
        let acc = hit as f64 / total as f64;
        let auc = if replaced.iter().all(|&r| r) || replaced.iter().all(|&r| !r) {
            f64::NAN
        } else {
            auc(&scores, &replaced)?
        };
        (acc, auc)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(Intrinsic {
        mlm_ce,
        rtd_accuracy,
        rtd_auc,
    })
}

/// Area under the ROC curve of `scores` for the `positive` class via the
/// Mann-Whitney rank statistic, with tied scores sharing their mean rank.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Invalid("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUC score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Invalid("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean.
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += order[i..=j].iter().filter(|&&o| positive[o]).count() as f64 * mean_rank;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// `KL(q ‖ p̂)` where `p̂` is the model distribution restricted to `ids` and
/// renormalized there. `q[i]` is the truth's mass on `ids[i]`.
pub fn kl_restricted(q: &[f64], log_probs: &[f32], ids: &[u32]) -> Result<f64> {
    let lp: Vec<f64> = ids.iter().map(|&i| log_probs[i as usize] as f64).collect();
    let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::ZeroMass);
    }
    let lse = max + lp.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    let mut kl = 0.0;
    for (&qi, &li) in q.iter().zip(&lp) {
        if qi > 0.0 {
            kl += qi * (qi.ln() - (li - lse));
        }
    }
    // Rounding can leave a tiny negative total for identical distributions.
    Ok(kl.max(0.0))
}

/// Mean `KL(truth ‖ model)` over evaluated positions of the fixed draw. The
/// truth at word index `j ≥ 1` is the oracle's exact conditional given the
/// original neighbours at `j−1` and, when present, `j+1`; the model
/// distribution is the MLM softmax on the evaluation input, restricted to the
/// oracle's tokens.
pub fn generator_kl(
    model: &Model,
    strategy: Strategy,
    heldout: &Corpus,
    vocab: &Vocab,
    oracle: &MarkovOracle,
    table: &UnigramTable,
    seed: u64,
) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let ids = oracle.vocab_ids(vocab)?;
    let mut state_of = vec![None; vocab.len()];
    for (s, &id) in ids.iter().enumerate() {
        state_of[id as usize] = Some(s);
    }
    let vocab_size = model.main.config.vocab;
    let draw = eval_draw(&heldout.sequences, table, vocab_size, seed)?;
    let input = mlm_input(strategy, &draw, vocab_size)?;
    let logp = mlm_rows_of(model, &input)?;
    let state = |id: u32| -> Result<usize> {
        state_of
            .get(id as usize)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Invalid(format!("token id {id} is not an oracle state")))
    };
    let (mut total, mut n) = (0.0, 0usize);
    for (inst, rows) in input.instances.iter().zip(&logp) {
        for (&p, row) in inst.positions.iter().zip(rows) {
            // Position 0 is [CLS]; word index p-1 needs a real predecessor.
            if p < 2 {
                continue;
            }
            let prev = state(inst.original[p - 1])?;
            let next = if p + 1 < inst.original.len() && inst.pad_mask[p + 1] {
                Some(state(inst.original[p + 1])?)
            } else {
                None
            };
            let q = oracle.posterior(Some(prev), next, &[]);
            total += kl_restricted(&q, row, &ids)?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Invalid("no evaluable positions for generator KL".into()));
    }
    Ok(total / n as f64)
}

/// Final hidden state at `[CLS]` for every sequence, `[n, H]` row-major.
pub fn cls_features(model: &Model, corpus: &Corpus) -> Result<Vec<f32>> {
    let mut out = Vec::new();
    for chunk in corpus.sequences.chunks(EVAL_CHUNK) {
        let ids: Vec<u32> = chunk.iter().flat_map(|s| s.ids.iter().copied()).collect();
        let pad: Vec<bool> = chunk.iter().flat_map(|s| s.pad_mask.iter().copied()).collect();
        let o = forward(model, &model.main, &ids, &pad, chunk.len(), None, false, true)?;
        out.extend(o.cls.expect("requested"));
    }
    Ok(out)
}

/// Held-out accuracy of a logistic classifier on frozen `[CLS]` features,
/// separating sequences of corpus `a` (label 0) from corpus `b` (label 1).
pub fn linear_probe(model: &Model, a: &Corpus, b: &Corpus, train_fraction: f64, seed: u64) -> Result<f64> {
    let h = model.main.config.hidden;
    let mut x = cls_features(model, a)?;
    x.extend(cls_features(model, b)?);
    let y: Vec<bool> = (0..a.len()).map(|_| false).chain((0..b.len()).map(|_| true)).collect();
    let features: Vec<Vec<f64>> = x.chunks(h).map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    probe_accuracy(&features, &y, train_fraction, seed)
}

/// Shuffle, split, fit and score a logistic classifier on precomputed
/// features.
pub fn probe_accuracy(features: &[Vec<f64>], labels: &[bool], train_fraction: f64, seed: u64) -> Result<f64> {
    if features.len() != labels.len() {
        return Err(Error::Invalid("features and labels differ in length".into()));
    }
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(Error::Invalid(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Probe, &[]));
    let n_train = (train_fraction * labels.len() as f64).round() as usize;
    let (train, test) = order.split_at(n_train);
    for (name, split) in [("train", train), ("test", test)] {
        let pos = split.iter().filter(|&&i| labels[i]).count();
        if pos == 0 || pos == split.len() {
            return Err(Error::Invalid(format!("{name} split has a single class")));
        }
    }
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>) {
        (idx.iter().map(|&i| features[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
    };
    let (xtr, ytr) = pick(train);
    let (xte, yte) = pick(test);
    let clf = LogisticRegression::fit(&xtr, &ytr)?;
    let hits = xte.iter().zip(&yte).filter(|(x, &y)| clf.predict(x) == y).count();
    Ok(hits as f64 / yte.len() as f64)
}

/// Everything a full evaluation needs besides the model.
#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub heldout: &'a Corpus,
    pub vocab: &'a Vocab,
    pub table: &'a UnigramTable,
    /// Source of the heldout corpus; enables the generator KL.
    pub oracle: Option<&'a MarkovOracle>,
    /// Two labelled corpora for the linear probe.
    pub probe: Option<(&'a Corpus, &'a Corpus)>,
    pub seed: u64,
}

/// Fraction of probe data used to fit the classifier.
pub const PROBE_TRAIN_FRACTION: f64 = 0.5;

impl EvalContext<'_> {
    pub fn evaluate(&self, model: &Model, strategy: Strategy) -> Result<EvalReport> {
        let intrinsic = intrinsic_eval(model, strategy, self.heldout, self.table, self.seed)?;
        let kl = match self.oracle {
            Some(o) => generator_kl(model, strategy, self.heldout, self.vocab, o, self.table, self.seed)?,
            None => f64::NAN,
        };
        let probe = match self.probe {
            Some((a, b)) => linear_probe(model, a, b, PROBE_TRAIN_FRACTION, self.seed)?,
            None => f64::NAN,
        };
        Ok(EvalReport::new(intrinsic, kl, probe))
    }
}

/// Header of the per-epoch evaluation CSV.
pub fn epoch_eval_header() -> String {
    format!("epoch,{}", EvalReport::CSV_HEADER)
}

/// Trainer observer that evaluates the model after every epoch, optionally
/// appending rows to a CSV file.
pub struct EpochEvaluator<'a> {
    pub context: EvalContext<'a>,
    pub strategy: Strategy,
    pub csv: Option<std::path::PathBuf>,
    pub records: Vec<(u32, EvalReport)>,
}

impl<'a> EpochEvaluator<'a> {
    pub fn new(context: EvalContext<'a>, strategy: Strategy) -> Self {
        EpochEvaluator {
            context,
            strategy,
            csv: None,
            records: Vec::new(),
        }
    }
}

impl crate::trainer::Observer for EpochEvaluator<'_> {
    fn on_epoch_end(&mut self, epoch: u32, state: &crate::trainer::TrainState) -> Result<()> {
        let report = self.context.evaluate(&state.model, self.strategy)?;
        log::info!(
            "epoch {epoch} eval: mlm_ce {:.4} rtd_auc {:.4} kl {:.4}",
            report.mlm_ce,
            report.rtd_auc,
            report.generator_mean_kl
        );
        if let Some(path) = &self.csv {
            use std::io::Write;
            let fresh = !path.exists();
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let mut text = String::new();
            if fresh {
                text.push_str(&epoch_eval_header());
                text.push('\n');
            }
            text.push_str(&format!("{epoch},{}\n", report.csv_fields()));
            f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        self.records.push((epoch, report));
        Ok(())
    }
}
