use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sas_core::augment::ReplacementCache;
use sas_core::config::{DirLock, RunConfig, FROZEN_CONFIG};
use sas_core::corpus::{batches_per_epoch, read_documents, write_documents, MarkovOracle, Vocab};
use sas_core::flops::{CostModel, Convention};
use sas_core::model::Checkpoint;
use sas_core::probe::{EpochEvaluator, EvalReport};
use sas_core::strategy::Strategy;
use sas_core::trainer::{cache_file_name, checkpoint_file_name, load_model, truncate_metrics, Trainer};

use crate::data::RunData;
use crate::{AblationArgs, BuildVocabArgs, FlopsArgs, GenCorpusArgs, InspectAugArgs, PretrainArgs, ProbeArgs};

/// Rungs of the single-network ablation, in table order.
pub const ABLATION: [Strategy; 6] = [
    Strategy::MaskMlm,
    Strategy::UnigMlm,
    Strategy::UnigMlmSas,
    Strategy::UnigMlmRtd,
    Strategy::SasC,
    Strategy::Sas,
];

pub fn gen_corpus(a: GenCorpusArgs) -> Result<()> {
    let oracle = match &a.oracle_in {
        Some(p) => MarkovOracle::load(p).with_context(|| format!("reading oracle {}", p.display()))?,
        None => {
            let o = MarkovOracle::random(a.states.unwrap_or(16), a.concentration.unwrap_or(0.3), a.oracle_seed.unwrap_or(1))?;
            if let Some(p) = &a.oracle_out {
                o.save(p)?;
            }
            o
        }
    };
    let docs = oracle.generate(a.num_seqs, a.seq_len, a.seed)?;
    write_documents(&a.out, &docs)?;
    println!(
        "wrote {} documents to {} (conditional entropy {:.4} nats)",
        docs.len(),
        a.out.display(),
        oracle.conditional_entropy()
    );
    Ok(())
}

pub fn build_vocab(a: BuildVocabArgs) -> Result<()> {
    let mut docs = Vec::new();
    for p in &a.corpora {
        docs.extend(read_documents(p).with_context(|| format!("reading corpus {}", p.display()))?);
    }
    let vocab = Vocab::build(&docs, a.max_size)?;
    vocab.save(&a.out)?;
    println!("wrote {} tokens to {}", vocab.len(), a.out.display());
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

pub fn pretrain(a: PretrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(s) = a.strategy {
        cfg.strategy = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(d) = a.out_dir {
        cfg.out_dir = d;
    }
    let cfg = cfg.with_env_overrides();
    let data = RunData::load(&cfg)?;
    let out = train(&cfg, &data, a.resume.as_deref())?;
    println!(
        "{}: {} steps, {:.4e} FLOPs, checkpoint {}",
        cfg.strategy,
        out.steps,
        out.cumulative_flops,
        out.checkpoint.display()
    );
    Ok(())
}

pub struct RunOutcome {
    pub checkpoint: PathBuf,
    pub steps: u64,
    pub cumulative_flops: f64,
}

const EVAL_CSV: &str = "eval.csv";

/// Train one run into `cfg.out_dir`, holding the directory lock throughout.
pub fn train(cfg: &RunConfig, data: &RunData, resume: Option<&Path>) -> Result<RunOutcome> {
    let dir = &cfg.out_dir;
    let _lock = DirLock::acquire(dir)?;
    let frozen = dir.join(FROZEN_CONFIG);
    let text = cfg.to_text();
    let metrics = dir.join("metrics.csv");
    let eval = dir.join(EVAL_CSV);
    let tc = cfg.train_config(data.vocab.len())?;
    let trainer = match resume {
        Some(ckpt) => {
            if frozen.exists() && fs::read_to_string(&frozen)? != text {
                bail!("config differs from the frozen copy in {}", dir.display());
            }
            let t = Trainer::resume(tc, data.table.clone(), ckpt)
                .with_context(|| format!("resuming from {}", ckpt.display()))?;
            truncate_metrics(&metrics, t.state.epoch)?;
            truncate_eval(&eval, t.state.epoch)?;
            t
        }
        None => {
            if metrics.exists() {
                bail!(
                    "{} already holds a run; pass --resume <checkpoint> or choose another output directory",
                    dir.display()
                );
            }
            Trainer::new(tc, data.table.clone())?
        }
    };
    fs::write(&frozen, &text).with_context(|| format!("writing {}", frozen.display()))?;
    let mut trainer = trainer.with_output(dir);
    match data.eval_context(cfg.eval_seed) {
        Some(ctx) => {
            let mut obs = EpochEvaluator::new(ctx, cfg.strategy);
            obs.csv = Some(eval);
            trainer.run(&data.train, &mut obs)?;
        }
        None => {
            trainer.run(&data.train, &mut ())?;
        }
    }
    Ok(RunOutcome {
        checkpoint: dir.join(checkpoint_file_name(trainer.state.epoch)),
        steps: trainer.state.step,
        cumulative_flops: trainer.state.cumulative_flops,
    })
}

/// Keep the header and rows of epochs before `epoch`.
fn truncate_eval(path: &Path, epoch: u32) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    let kept: String = text
        .lines()
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|e| e.parse::<u32>().ok())
                .is_none_or(|e| e < epoch)
        })
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(path, kept)?;
    Ok(())
}

fn append_csv(path: Option<&Path>, header: &str, row: &str) -> Result<()> {
    match path {
        Some(p) => {
            let fresh = fs::metadata(p).map(|m| m.len() == 0).unwrap_or(true);
            let mut f = fs::OpenOptions::new().create(true).append(true).open(p)?;
            if fresh {
                writeln!(f, "{header}")?;
            }
            writeln!(f, "{row}")?;
        }
        None => println!("{header}\n{row}"),
    }
    Ok(())
}

pub fn probe(a: ProbeArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let data = RunData::load(&cfg)?;
    let ctx = data
        .eval_context(cfg.eval_seed)
        .context("probing needs corpus.heldout in the config")?;
    let ckpt = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let (model, strategy) = load_model(&ckpt)?;
    let report = ctx.evaluate(&model, strategy)?;
    let header = format!("checkpoint,strategy,epoch,{}", EvalReport::CSV_HEADER);
    let row = format!(
        "{},{},{},{}",
        a.checkpoint.display(),
        strategy,
        ckpt.get("epoch")?,
        report.csv_fields()
    );
    append_csv(a.out.as_deref(), &header, &row)
}

pub const FLOPS_HEADER: &str = "shape,convention,strategy,label,batch,steps,step_flops,run_flops,published";

pub fn flops(a: FlopsArgs) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{FLOPS_HEADER}")?;
    let published = [
        (Strategy::MaskMlm, "1.274e18"),
        (Strategy::Sas, "1.279e18"),
        (Strategy::Electra2Net, "1.294e18"),
    ];
    let (batch, steps) = (512usize, 250_000u64);
    for (conv_name, conv) in [("reference", Convention::REFERENCE), ("default", Convention::DEFAULT)] {
        let m = CostModel::small_reference(128).with_convention(conv);
        for (s, figure) in published {
            writeln!(
                out,
                "small,{conv_name},{},{},{batch},{steps},{:.6e},{:.6e},{}",
                s.name(),
                s.label(),
                m.nominal_step(s, batch, true).total,
                m.run_flops(s, batch, steps),
                if conv_name == "reference" { figure } else { "" }
            )?;
        }
    }
    if let Some(path) = &a.config {
        let cfg = load_config(path)?;
        let vocab = Vocab::load(&cfg.vocab)?;
        let n_docs = read_documents(&cfg.train_corpus)?.len();
        let per_epoch = batches_per_epoch(n_docs, cfg.batch_size) as u64;
        for s in Strategy::ALL {
            let mut c = cfg.clone();
            c.strategy = s;
            c.lambda = None;
            let m = c.train_config(vocab.len())?.cost_model();
            writeln!(
                out,
                "desk,default,{},{},{},{},{:.6e},{:.6e},",
                s.name(),
                s.label(),
                cfg.batch_size,
                per_epoch * cfg.epochs as u64,
                m.nominal_step(s, cfg.batch_size, true).total,
                m.run_flops_epochs(s, cfg.batch_size, per_epoch, cfg.epochs)
            )?;
        }
    }
    print!("{out}");
    Ok(())
}

pub const INSPECT_HEADER: &str = "instance,epoch,slot,position,token_id,token";

pub fn inspect_aug(a: InspectAugArgs) -> Result<()> {
    let path = match (&a.cache, &a.run) {
        (Some(c), _) => c.clone(),
        (None, Some(r)) => r.join(cache_file_name(a.epoch)),
        (None, None) => bail!("pass --run or --cache"),
    };
    let cache = ReplacementCache::load(&path, a.epoch).with_context(|| format!("reading cache {}", path.display()))?;
    let entry = cache
        .get(a.instance)
        .with_context(|| format!("instance {} has no entry in {}", a.instance, path.display()))?;
    let vocab = a.vocab.as_deref().map(Vocab::load).transpose()?;
    println!("{INSPECT_HEADER}");
    for (slot, (&p, &id)) in entry.positions.iter().zip(&entry.ids).enumerate() {
        let token = vocab.as_ref().map_or("", |v| v.token(id));
        println!("{},{},{slot},{p},{id},{token}", a.instance, entry.epoch);
    }
    Ok(())
}

pub fn ablation_header() -> String {
    format!("strategy,label,steps,cumulative_flops,{}", EvalReport::CSV_HEADER)
}

pub fn ablation(a: AblationArgs) -> Result<()> {
    let mut base = load_config(&a.config)?;
    if let Some(d) = a.out_dir {
        base.out_dir = d;
    }
    let base = base.with_env_overrides();
    let strategies = if a.strategies.is_empty() { ABLATION.to_vec() } else { a.strategies };
    let data = RunData::load(&base)?;
    let ctx = data
        .eval_context(base.eval_seed)
        .context("the ablation needs corpus.heldout in the config")?;
    fs::create_dir_all(&base.out_dir)?;
    let mut table = String::new();
    writeln!(table, "{}", ablation_header())?;
    for s in strategies {
        let mut cfg = base.clone();
        cfg.strategy = s;
        cfg.lambda = None;
        cfg.out_dir = base.out_dir.join(s.name());
        let final_ckpt = cfg.out_dir.join(checkpoint_file_name(cfg.epochs));
        let (steps, flops) = if final_ckpt.exists() {
            log::info!("{s}: reusing {}", final_ckpt.display());
            let c = Checkpoint::load(&final_ckpt)?;
            (c.parse::<u64>("step")?, c.parse::<f64>("cumulative_flops")?)
        } else {
            log::info!("{s}: training into {}", cfg.out_dir.display());
            let out = train(&cfg, &data, None)?;
            (out.steps, out.cumulative_flops)
        };
        let (model, strategy) = load_model(&Checkpoint::load(&final_ckpt)?)?;
        let report = ctx.evaluate(&model, strategy)?;
        writeln!(table, "{},{},{steps},{flops:.6e},{}", s.name(), s.label(), report.csv_fields())?;
    }
    let path = base.out_dir.join("ablation.csv");
    fs::write(&path, &table)?;
    print!("{table}");
    log::info!("wrote {}", path.display());
    Ok(())
}
