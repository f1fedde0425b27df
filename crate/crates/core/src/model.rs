//! The full recommender: embedding, spectral filter, stacked bidirectional
//! SSM layers and tied-embedding scoring.

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn::{EmbeddingTable, LayerNormParams};
use crate::params::{ParamStore, Session};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::spectral::SpectralFilterLayer;
use crate::ssm::{EchoMambaLayer, SsmConfig};
use crate::tensor::{BackwardArgs, Function, Tape, Var};

/// Where the spectral filter sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterPlacement {
    /// Once, between the embedding and the first layer.
    #[default]
    Once,
    /// In front of every layer.
    PerLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_items: usize,
    pub d_model: usize,
    pub max_len: usize,
    pub layers: usize,
    pub dropout: f64,
    /// Dropout inside the filter layer. Defaults to `dropout`.
    pub filter_dropout: Option<f64>,
    pub filter_enabled: bool,
    pub filter_placement: FilterPlacement,
    pub bidirectional: bool,
    pub ssm: SsmConfig,
}

impl ModelConfig {
    pub fn new(n_items: usize, d_model: usize, max_len: usize) -> Self {
        ModelConfig {
            n_items,
            d_model,
            max_len,
            layers: 1,
            dropout: 0.2,
            filter_dropout: None,
            filter_enabled: true,
            filter_placement: FilterPlacement::Once,
            bidirectional: true,
            ssm: SsmConfig::default(),
        }
    }

    pub fn filter_dropout(&self) -> f64 {
        self.filter_dropout.unwrap_or(self.dropout)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EchoMambaModel {
    pub config: ModelConfig,
    pub embedding: EmbeddingTable,
    pub embed_norm: LayerNormParams,
    /// One filter when placed once, one per layer otherwise, none when off.
    pub filters: Vec<SpectralFilterLayer>,
    pub layers: Vec<EchoMambaLayer>,
}

impl EchoMambaModel {
    /// Registers every parameter in `store`. Parameters are created in a
    /// fixed order so the same rng state gives the same weights.
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        if config.n_items == 0 || config.d_model == 0 || config.max_len == 0 || config.layers == 0 {
            return Err(Error::contract("model dimensions must be positive"));
        }
        let embedding = EmbeddingTable::new(store, "item_embedding", config.n_items, config.d_model, rng);
        let embed_norm = LayerNormParams::new(store, "embed_norm", config.d_model);
        let n_filters = match (config.filter_enabled, config.filter_placement) {
            (false, _) => 0,
            (true, FilterPlacement::Once) => 1,
            (true, FilterPlacement::PerLayer) => config.layers,
        };
        let mut filters = Vec::with_capacity(n_filters);
        let mut layers = Vec::with_capacity(config.layers);
        for i in 0..n_filters {
            filters.push(SpectralFilterLayer::new(
                store,
                &format!("filter{i}"),
                config.max_len,
                config.d_model,
                config.filter_dropout(),
                rng,
            ));
        }
        for i in 0..config.layers {
            layers.push(EchoMambaLayer::new(
                store,
                &format!("layer{i}"),
                config.d_model,
                config.ssm,
                config.bidirectional,
                config.dropout,
                rng,
            ));
        }
        Ok(EchoMambaModel {
            config,
            embedding,
            embed_norm,
            filters,
            layers,
        })
    }

    /// Per-position representations `[B × L × D]`.
    pub fn encode<F: Scalar>(&self, s: &mut Session<'_, F>, batch: &Batch) -> Result<Var> {
        let (b, l) = (batch.size(), batch.max_len);
        if l != self.config.max_len {
            return Err(Error::shape("forward", &[b, l], &[b, self.config.max_len]));
        }
        let e = self.embedding.embed(s, &batch.item_ids, b, l)?;
        let e = s.dropout(e, self.config.dropout)?;
        let mut h = self.embed_norm.forward(s, e)?;
        let per_layer = self.config.filter_placement == FilterPlacement::PerLayer;
        if !per_layer {
            if let Some(f) = self.filters.first() {
                h = f.forward(s, h)?;
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if per_layer {
                if let Some(f) = self.filters.get(i) {
                    h = f.forward(s, h)?;
                }
            }
            h = layer.forward(s, h, &batch.lengths)?;
        }
        Ok(h)
    }

    /// Representation at the last position of each row, `[B × D]`.
    /// Rows are left-padded, so that is always index `L − 1`.
    pub fn final_state<F: Scalar>(&self, s: &mut Session<'_, F>, batch: &Batch) -> Result<Var> {
        let h = self.encode(s, batch)?;
        let last = s.tape.narrow(h, 1, batch.max_len - 1, 1)?;
        s.tape.reshape(last, vec![batch.size(), self.config.d_model])
    }

    /// Raw logits `[B × (|V|+1)]` against the tied item embeddings. Column 0
    /// is the padding item: it is finite here, excluded by [`cross_entropy`]
    /// and set to −∞ by [`EchoMambaModel::scores`].
    pub fn logits<F: Scalar>(&self, s: &mut Session<'_, F>, batch: &Batch) -> Result<Var> {
        let y = self.final_state(s, batch)?;
        let table = s.param(self.embedding.matrix);
        let t = s.tape.transpose(table)?;
        s.tape.matmul(y, t)
    }

    /// Prediction scores with the padding column forced to −∞.
    pub fn scores<F: Scalar>(&self, store: &ParamStore<F>, batch: &Batch) -> Result<Vec<F>> {
        let mut s = Session::eval(store);
        let l = self.logits(&mut s, batch)?;
        let mut out = s.tape.value(l).to_vec();
        let width = self.config.n_items + 1;
        for row in out.chunks_mut(width) {
            row[0] = F::neg_infinity();
        }
        Ok(out)
    }

    /// Closed-form parameter count from the configuration alone.
    pub fn analytic_param_count(config: &ModelConfig) -> usize {
        let d = config.d_model;
        let di = config.ssm.d_inner(d);
        let n = config.ssm.d_state;
        let r = config.ssm.dt_rank(d);
        let k = config.ssm.kernel;
        let block = di * n                   // a_log
            + d * 2 * di + 2 * di             // proj_in
            + di * k + di                     // conv
            + di * (2 * n + r) + 2 * n + r    // proj_bcd
            + r * di + di                     // delta_proj
            + di * d + d                      // proj_out
            + di; // d_skip
        let norm = 2 * d;
        let glu = 2 * (d * d + d);
        let layer = if config.bidirectional {
            2 * block + 2 * norm + (2 * d * d + d) + glu + norm
        } else {
            block + norm + glu + norm
        };
        let filter = 2 * (config.max_len / 2 + 1) * d + norm;
        let n_filters = match (config.filter_enabled, config.filter_placement) {
            (false, _) => 0,
            (true, FilterPlacement::Once) => 1,
            (true, FilterPlacement::PerLayer) => config.layers,
        };
        (config.n_items + 1) * d + norm + n_filters * filter + config.layers * layer
    }
}

struct CrossEntropy {
    targets: Vec<usize>,
    /// Softmax over columns `1..`, column 0 left at zero.
    probs: Vec<f64>,
}

impl<F: Scalar> Function<F> for CrossEntropy {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(&self, args: BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> {
        let b = self.targets.len();
        let width = self.probs.len() / b;
        let g = args.grad[0].f64() / b as f64;
        let mut out: Vec<F> = self.probs.iter().map(|&p| F::of(p * g)).collect();
        for (row, &t) in self.targets.iter().enumerate() {
            out[row * width + t] -= F::of(g);
        }
        vec![Some(out)]
    }
}

/// Mean softmax cross-entropy of `logits: [B × (|V|+1)]` against targets in
/// `1..=|V|`. Column 0 is left out of the normalizer.
pub fn cross_entropy<F: Scalar>(tape: &mut Tape<F>, logits: Var, targets: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    let [b, width] = shape[..] else {
        return Err(Error::shape("cross_entropy", &shape, &[targets.len()]));
    };
    if b != targets.len() || b == 0 {
        return Err(Error::shape("cross_entropy", &shape, &[targets.len()]));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t == 0 || t >= width) {
        return Err(Error::contract(format!("target {bad} outside 1..{width}")));
    }
    let v = tape.value(logits);
    let mut probs = vec![0.0; b * width];
    let mut total = 0.0;
    for (row, &t) in targets.iter().enumerate() {
        let z = &v[row * width + 1..(row + 1) * width];
        let max = z.iter().map(|x| x.f64()).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|x| (x.f64() - max).exp()).sum();
        let lse = max + sum.ln();
        for (j, x) in z.iter().enumerate() {
            probs[row * width + 1 + j] = (x.f64() - lse).exp();
        }
        total += lse - v[row * width + t].f64();
    }
    let loss = F::of(total / b as f64);
    tape.push(
        vec![loss],
        vec![],
        vec![logits],
        Box::new(CrossEntropy {
            targets: targets.to_vec(),
            probs,
        }),
    )
}
