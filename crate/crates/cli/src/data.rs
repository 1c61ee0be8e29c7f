use std::path::Path;

use anyhow::{Context, Result};
use sas_core::config::RunConfig;
use sas_core::corpus::{read_documents, Corpus, MarkovOracle, UnigramTable, Vocab};
use sas_core::probe::EvalContext;

/// Everything a run config points at, loaded and encoded.
pub struct RunData {
    pub vocab: Vocab,
    pub table: UnigramTable,
    pub train: Corpus,
    pub heldout: Option<Corpus>,
    pub oracle: Option<MarkovOracle>,
    pub probe: Option<(Corpus, Corpus)>,
}

fn corpus(path: &Path, vocab: &Vocab, k: usize) -> Result<Corpus> {
    let docs = read_documents(path).with_context(|| format!("reading corpus {}", path.display()))?;
    Ok(Corpus::encode(&docs, vocab, k)?)
}

impl RunData {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let vocab = Vocab::load(&cfg.vocab).with_context(|| format!("reading vocabulary {}", cfg.vocab.display()))?;
        let table = UnigramTable::from_vocab(&vocab, &cfg.cold_start)?;
        let train = corpus(&cfg.train_corpus, &vocab, cfg.seq_len)?;
        let heldout = cfg
            .heldout_corpus
            .as_deref()
            .map(|p| corpus(p, &vocab, cfg.seq_len))
            .transpose()?;
        let oracle = cfg
            .oracle
            .as_deref()
            .map(|p| MarkovOracle::load(p).with_context(|| format!("reading oracle {}", p.display())))
            .transpose()?;
        let probe = match (&cfg.probe_a, &cfg.probe_b) {
            (Some(a), Some(b)) => Some((corpus(a, &vocab, cfg.seq_len)?, corpus(b, &vocab, cfg.seq_len)?)),
            (None, None) => None,
            _ => anyhow::bail!("probe.a and probe.b must be given together"),
        };
        Ok(RunData {
            vocab,
            table,
            train,
            heldout,
            oracle,
            probe,
        })
    }

    /// Evaluation context, if a heldout corpus is configured.
    pub fn eval_context(&self, seed: u64) -> Option<EvalContext<'_>> {
        self.heldout.as_ref().map(|heldout| EvalContext {
            heldout,
            vocab: &self.vocab,
            table: &self.table,
            oracle: self.oracle.as_ref(),
            probe: self.probe.as_ref().map(|(a, b)| (a, b)),
            seed,
        })
    }
}
