//! Transformer encoder, heads, parameter storage and checkpoints.

mod checkpoint;
mod config;
mod network;
mod params;


pub use checkpoint::{sha256_hex, Checkpoint};
pub use config::{EncoderConfig, MASK_PERCENT};
pub use network::{
    encoder_forward, flat_rows, mlm_log_probs, mlm_logits, rtd_logits, rtd_probs, EncoderInput, EncoderParams,
    ForwardCounter, LayerParams, MlmHeadParams, Mode, Network, RtdHeadParams, LN_EPS,
};
pub use params::{ParamId, ParamStore};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Parameters of a run: the main network and, for the two-network baseline,
/// a generator whose parameter names start with `gen.`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub store: ParamStore,
    pub main: Network,
    pub generator: Option<Network>,
}

impl Model {
    /// One encoder with an MLM head and, if `with_rtd`, an RTD head.
    pub fn single(config: &EncoderConfig, with_rtd: bool, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, Stream::Init, &[0]);
        let mut store = ParamStore::default();
        let main = Network::init(config, true, with_rtd, &mut store, "", &mut rng)?;
        Ok(Model {
            store,
            main,
            generator: None,
        })
    }

    /// Discriminator (RTD head only) plus a smaller MLM generator.
    pub fn two_network(config: &EncoderConfig, generator: &EncoderConfig, seed: u64) -> Result<Self> {
        if generator.vocab != config.vocab || generator.seq_len != config.seq_len {
            return Err(Error::Config("generator must share vocabulary and sequence length".into()));
        }
        let mut rng = stream_rng(seed, Stream::Init, &[0]);
        let mut store = ParamStore::default();
        let main = Network::init(config, false, true, &mut store, "", &mut rng)?;
        let mut grng = stream_rng(seed, Stream::Init, &[1]);
        let gen = Network::init(generator, true, false, &mut store, "gen.", &mut grng)?;
        Ok(Model {
            store,
            main,
            generator: Some(gen),
        })
    }

    /// Network that produces MLM distributions (the generator if present).
    pub fn mlm_network(&self) -> &Network {
        self.generator.as_ref().unwrap_or(&self.main)
    }

    /// Replace parameter values from checkpoint arrays, matching by name and shape.
    pub fn load_params(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for i in 0..self.store.len() {
            let id = ParamId(i);
            let name = self.store.name(id).to_string();
            let t = ckpt.array(&name)?;
            if t.shape() != self.store.get(id).shape() {
                return Err(Error::CorruptCheckpoint(format!(
                    "array {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    self.store.get(id).shape()
                )));
            }
            *self.store.get_mut(id) = t.clone();
        }
        Ok(())
    }
}
