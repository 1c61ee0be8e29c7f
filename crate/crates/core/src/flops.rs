//! Analytic FLOPs accounting.
//!
//! Counting follows the ELECTRA accounting script: a matmul of `a×b` by `b×c`
//! costs `2abc`, elementwise ops carry fixed per-element charges, the input
//! embedding is charged as a dense one-hot multiply, and the MLM output layer
//! is charged only at the augmented positions.

use crate::augment::budget;
use crate::model::EncoderConfig;
use crate::strategy::Strategy;

const DROPOUT: f64 = 4.0;
const LAYER_NORM: f64 = 5.0;
const ACTIVATION: f64 = 8.0;
const SOFTMAX: f64 = 5.0;

/// Architecture dimensions that enter the count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostShape {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab: usize,
    pub seq_len: usize,
    /// Embedding width; a projection to `hidden` is charged when they differ.
    pub embedding: usize,
}

impl From<&EncoderConfig> for CostShape {
    fn from(c: &EncoderConfig) -> Self {
        CostShape {
            layers: c.layers,
            hidden: c.hidden,
            heads: c.heads,
            ffn: c.ffn,
            vocab: c.vocab,
            seq_len: c.seq_len,
            embedding: c.hidden,
        }
    }
}

impl CostShape {
    /// Forward FLOPs of one transformer block over one sequence.
    pub fn block(&self) -> f64 {
        let (h, f, a, s) = (self.hidden as f64, self.ffn as f64, self.heads as f64, self.seq_len as f64);
        let per_token = 3.0 * 2.0 * h * h
            + 3.0 * h
            + 2.0 * h * s
            + SOFTMAX * s * a
            + DROPOUT * s * a
            + s * a
            + 2.0 * h * s
            + 2.0 * h * h
            + h
            + DROPOUT * h
            + h
            + LAYER_NORM * h
            + 2.0 * h * f
            + ACTIVATION * f
            + f
            + 2.0 * h * f
            + h
            + DROPOUT * h
            + h
            + LAYER_NORM * h;
        per_token * s
    }

    /// Forward FLOPs of the input embedding over one sequence.
    pub fn input_embedding(&self) -> f64 {
        let (e, h, v, s) = (
            self.embedding as f64,
            self.hidden as f64,
            self.vocab as f64,
            self.seq_len as f64,
        );
        let mut per_token = 2.0 * e * v + 2.0 * e * (s + 2.0) + 2.0 * e + LAYER_NORM * e + DROPOUT * e;
        if self.embedding != self.hidden {
            per_token += 2.0 * h * e + h;
        }
        per_token * s
    }

    /// Forward FLOPs of the MLM head at one position.
    pub fn mlm_position(&self) -> f64 {
        let (e, h, v) = (self.embedding as f64, self.hidden as f64, self.vocab as f64);
        2.0 * h * e + e + ACTIVATION * e + LAYER_NORM * e + 2.0 * e * v + SOFTMAX * v + 2.0 * v
    }

    /// Forward FLOPs of the RTD head at one position.
    pub fn rtd_position(&self) -> f64 {
        let h = self.hidden as f64;
        2.0 * h * h + h + ACTIVATION * h + 2.0 * h
    }

    /// Encoder (embedding plus blocks) over one sequence.
    pub fn encoder(&self) -> f64 {
        self.input_embedding() + self.layers as f64 * self.block()
    }
}

/// How forward work is turned into training cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Convention {
    /// Backward FLOPs as a multiple of forward FLOPs.
    pub backward_multiplier: f64,
    /// Charge the forward-only MLM head rows evaluated just for sampling.
    pub count_sampling: bool,
}

impl Convention {
    /// Backward = 2 × forward; every executed head row counted.
    pub const DEFAULT: Convention = Convention {
        backward_multiplier: 2.0,
        count_sampling: true,
    };
    /// Training = 2 × forward with sampling free, as in the published cost table.
    pub const REFERENCE: Convention = Convention {
        backward_multiplier: 1.0,
        count_sampling: false,
    };
}

/// Shapes of one training step. Row counts are totals over the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepShape {
    pub batch: usize,
    /// Positions with MLM loss.
    pub mlm_rows: f64,
    /// Extra forward-only MLM head rows used for sampling.
    pub sample_rows: f64,
}

impl StepShape {
    /// Expected shape for full-length sequences: `m = ⌈0.15·(k−1)⌉` per
    /// instance, plus `m·(1 − m/k_eff)` expected new rows when sampling.
    pub fn nominal(batch: usize, seq_len: usize, sampling: bool) -> Self {
        let k_eff = seq_len.saturating_sub(1).max(1);
        let m = budget(k_eff) as f64;
        let extra = if sampling { m * (1.0 - m / k_eff as f64) } else { 0.0 };
        StepShape {
            batch,
            mlm_rows: m * batch as f64,
            sample_rows: extra * batch as f64,
        }
    }
}

/// Forward FLOPs per component, plus the training totals.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FlopsBreakdown {
    pub embedding: f64,
    pub encoder_blocks: f64,
    pub mlm_head: f64,
    pub rtd_head: f64,
    pub sampling_head: f64,
    pub generator: f64,
    pub forward: f64,
    pub backward: f64,
    pub total: f64,
}

/// Everything needed to price a step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModel {
    pub main: CostShape,
    /// Main network of the two-network baseline.
    pub discriminator: CostShape,
    pub generator: CostShape,
    pub convention: Convention,
}

impl CostModel {
    pub fn new(config: &EncoderConfig, generator_fraction: f64) -> Self {
        CostModel {
            main: config.into(),
            discriminator: config.into(),
            generator: (&config.generator(generator_fraction)).into(),
            convention: Convention::DEFAULT,
        }
    }

    /// Small shapes of the published comparison: 12 layers, hidden 256,
    /// 4 heads, FFN 1024, k=128, 30522 tokens. The two-network baseline
    /// uses 128-wide embeddings and a quarter-width generator.
    pub fn small_reference(electra_embedding: usize) -> Self {
        let main = CostShape {
            layers: 12,
            hidden: 256,
            heads: 4,
            ffn: 1024,
            vocab: 30522,
            seq_len: 128,
            embedding: 256,
        };
        let generator = CostShape {
            hidden: 64,
            heads: 1,
            ffn: 256,
            embedding: electra_embedding,
            ..main
        };
        CostModel {
            main,
            discriminator: CostShape {
                embedding: electra_embedding,
                ..main
            },
            generator,
            convention: Convention::DEFAULT,
        }
    }

    pub fn with_convention(self, convention: Convention) -> Self {
        CostModel { convention, ..self }
    }

    fn main_for(&self, strategy: Strategy) -> CostShape {
        if strategy.two_network() {
            self.discriminator
        } else {
            self.main
        }
    }

    pub fn step(&self, strategy: Strategy, shape: &StepShape) -> FlopsBreakdown {
        let b = shape.batch as f64;
        let main = self.main_for(strategy);
        let k = main.seq_len as f64;
        let mut f = FlopsBreakdown {
            embedding: b * main.input_embedding(),
            encoder_blocks: b * main.layers as f64 * main.block(),
            ..Default::default()
        };
        if strategy.two_network() {
            f.rtd_head = b * k * main.rtd_position();
            f.generator = b * self.generator.encoder() + shape.mlm_rows * self.generator.mlm_position();
        } else {
            f.mlm_head = shape.mlm_rows * main.mlm_position();
            if strategy.uses_rtd() {
                f.rtd_head = b * k * main.rtd_position();
            }
            if strategy.self_augmenting() && self.convention.count_sampling {
                f.sampling_head = shape.sample_rows * main.mlm_position();
            }
        }
        let trained = f.embedding + f.encoder_blocks + f.mlm_head + f.rtd_head + f.generator;
        f.forward = trained + f.sampling_head;
        f.backward = self.convention.backward_multiplier * trained;
        f.total = f.forward + f.backward;
        f
    }

    /// Nominal step for full-length sequences.
    pub fn nominal_step(&self, strategy: Strategy, batch: usize, sampling: bool) -> FlopsBreakdown {
        let sampling = sampling && strategy.self_augmenting();
        self.step(strategy, &StepShape::nominal(batch, self.main.seq_len, sampling))
    }

    /// `steps` nominal steps, all of which sample for the next epoch.
    pub fn run_flops(&self, strategy: Strategy, batch: usize, steps: u64) -> f64 {
        steps as f64 * self.nominal_step(strategy, batch, true).total
    }

    /// A run of `epochs` epochs of `steps_per_epoch` nominal steps; the last
    /// epoch does not sample.
    pub fn run_flops_epochs(&self, strategy: Strategy, batch: usize, steps_per_epoch: u64, epochs: u32) -> f64 {
        if epochs == 0 {
            return 0.0;
        }
        let sampling = self.nominal_step(strategy, batch, true).total;
        let last = self.nominal_step(strategy, batch, false).total;
        steps_per_epoch as f64 * ((epochs - 1) as f64 * sampling + last)
    }
}

/// Forward FLOPs of a dense `[b, m] × [m, n]` product.
pub fn linear_flops(b: usize, m: usize, n: usize) -> f64 {
    2.0 * b as f64 * m as f64 * n as f64
}
