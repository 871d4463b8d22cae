//! Model configuration, parameter layout, and the per-pass [`Session`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::{AttentionParams, DecoderParams, GruParams, MlpParams};
use crate::error::{MogError, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// Number of reserved token indices at the start of every vocabulary.
pub const NUM_SPECIAL: usize = 4;

/// Which coordination components the chair may weight. The chair's own
/// distribution is always available.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantFlags {
    pub use_retro: bool,
    pub use_prosp: bool,
}

impl Default for VariantFlags {
    fn default() -> Self {
        VariantFlags {
            use_retro: true,
            use_prosp: true,
        }
    }
}

impl VariantFlags {
    /// Support of the coordination weights, ordered `[C, R_1..R_k, P_1..P_k]`.
    pub fn beta_mask(&self, k: usize) -> Vec<bool> {
        let mut mask = Vec::with_capacity(2 * k + 1);
        mask.push(true);
        mask.extend(std::iter::repeat_n(self.use_retro, k));
        mask.extend(std::iter::repeat_n(self.use_prosp, k));
        mask
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embedding: usize,
    pub hidden: usize,
    pub n_belief: usize,
    pub n_db: usize,
    pub experts: usize,
    pub max_src_len: usize,
    pub max_len: usize,
    pub init_scale: f64,
    pub flags: VariantFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 40,
            embedding: 8,
            hidden: 16,
            n_belief: 6,
            n_db: 3,
            experts: 3,
            max_src_len: 24,
            max_len: 20,
            init_scale: 0.08,
            flags: VariantFlags::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embedding", self.embedding),
            ("hidden", self.hidden),
            ("n_belief", self.n_belief),
            ("n_db", self.n_db),
            ("experts", self.experts),
            ("max_src_len", self.max_src_len),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(MogError::Config(format!("model.{name} must be positive")));
            }
        }
        if self.vocab_size <= NUM_SPECIAL {
            return Err(MogError::Config("vocabulary has no room beyond the special tokens".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(MogError::Config("model.init_scale must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Width of the chair's coordination input: chair distribution plus both pools.
    pub fn coordination_width(&self) -> usize {
        self.vocab_size * (2 * self.experts + 1)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub gru: GruParams,
    pub w_u: ParamId,
    pub w_b: ParamId,
    pub w_d: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug)]
pub struct ModelIds {
    pub embedding: ParamId,
    pub encoder: EncoderParams,
    pub experts: Vec<DecoderParams>,
    pub chair: DecoderParams,
    pub mlp: MlpParams,
}

/// Shared encoder, `k` expert decoders, and the chair decoder with its
/// coordination network.
#[derive(Clone, Debug)]
pub struct MogNet {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub ids: ModelIds,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    scale: f64,
}

impl Init<'_> {
    fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let data = (0..rows * cols)
            .map(|_| {
                if self.scale > 0.0 {
                    self.rng.gen_range(-self.scale..=self.scale)
                } else {
                    0.0
                }
            })
            .collect();
        self.store.insert(name, Tensor::matrix(rows, cols, data)?)
    }

    fn vector(&mut self, name: &str, len: usize) -> Result<ParamId> {
        let data = (0..len)
            .map(|_| {
                if self.scale > 0.0 {
                    self.rng.gen_range(-self.scale..=self.scale)
                } else {
                    0.0
                }
            })
            .collect();
        self.store.insert(name, Tensor::vector(data))
    }

    fn bias(&mut self, name: &str, len: usize) -> Result<ParamId> {
        self.store.insert(name, Tensor::zeros(&[len]))
    }

    fn gru(&mut self, prefix: &str, input: usize, hidden: usize) -> Result<GruParams> {
        Ok(GruParams {
            hidden,
            w_x: self.weight(&format!("{prefix}.gru.w_x"), 3 * hidden, input)?,
            w_h: self.weight(&format!("{prefix}.gru.w_h"), 3 * hidden, hidden)?,
            b_x: self.bias(&format!("{prefix}.gru.b_x"), 3 * hidden)?,
            b_h: self.bias(&format!("{prefix}.gru.b_h"), 3 * hidden)?,
        })
    }

    fn decoder(&mut self, prefix: &str, cfg: &ModelConfig) -> Result<DecoderParams> {
        let d = cfg.hidden;
        Ok(DecoderParams {
            gru: self.gru(prefix, cfg.embedding + d, d)?,
            attn: AttentionParams {
                w_enc: self.weight(&format!("{prefix}.attn.w_enc"), d, d)?,
                w_dec: self.weight(&format!("{prefix}.attn.w_dec"), d, d)?,
                b: self.bias(&format!("{prefix}.attn.b"), d)?,
                v: self.vector(&format!("{prefix}.attn.v"), d)?,
            },
            out_w: self.weight(&format!("{prefix}.out.w"), cfg.vocab_size, d)?,
            out_b: self.bias(&format!("{prefix}.out.b"), cfg.vocab_size)?,
        })
    }
}

impl MogNet {
    /// Weights uniform in `[-init_scale, init_scale]` from a seeded generator;
    /// biases zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            scale: config.init_scale,
        };
        let cfg = &config;
        let d = cfg.hidden;
        let embedding = init.weight("embedding", cfg.vocab_size, cfg.embedding)?;
        let encoder = EncoderParams {
            gru: init.gru("encoder", cfg.embedding, d)?,
            w_u: init.weight("encoder.fuse.w_u", d, d)?,
            w_b: init.weight("encoder.fuse.w_b", d, cfg.n_belief)?,
            w_d: init.weight("encoder.fuse.w_d", d, cfg.n_db)?,
            b: init.bias("encoder.fuse.b", d)?,
        };
        let experts = (0..cfg.experts)
            .map(|l| init.decoder(&format!("expert.{l}"), cfg))
            .collect::<Result<Vec<_>>>()?;
        let chair = init.decoder("chair", cfg)?;
        let mlp = MlpParams {
            w1: init.weight("chair.mlp.w1", d, cfg.coordination_width())?,
            b1: init.bias("chair.mlp.b1", d)?,
            w2: init.weight("chair.mlp.w2", 2 * cfg.experts + 1, d)?,
            b2: init.bias("chair.mlp.b2", 2 * cfg.experts + 1)?,
        };
        Ok(MogNet {
            config,
            params: store,
            ids: ModelIds {
                embedding,
                encoder,
                experts,
                chair,
                mlp,
            },
        })
    }

    /// Rebuilds a model around parameters loaded from elsewhere, checking that
    /// every expected tensor is present with the expected shape.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let template = MogNet::new(config.clone(), 0)?;
        if template.params.len() != params.len() {
            return Err(MogError::invalid(format!(
                "expected {} parameter tensors, found {}",
                template.params.len(),
                params.len()
            )));
        }
        let mut ordered = ParamStore::new();
        for (name, t) in template.params.iter() {
            let loaded = params
                .by_name(name)
                .ok_or_else(|| MogError::invalid(format!("missing parameter `{name}`")))?;
            if loaded.shape() != t.shape() {
                return Err(MogError::invalid(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    loaded.shape(),
                    t.shape()
                )));
            }
            ordered.insert(name, Tensor::new(loaded.shape().to_vec(), loaded.data().to_vec())?)?;
        }
        Ok(MogNet {
            config,
            params: ordered,
            ids: template.ids,
        })
    }

    pub fn experts(&self) -> usize {
        self.config.experts
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn decoder(&self, role: DecoderRole) -> &DecoderParams {
        match role {
            DecoderRole::Expert(l) => &self.ids.experts[l],
            DecoderRole::Chair => &self.ids.chair,
        }
    }

    /// Parameter name prefix owned by `role`.
    pub fn role_prefix(role: DecoderRole) -> String {
        match role {
            DecoderRole::Expert(l) => format!("expert.{l}."),
            DecoderRole::Chair => "chair.".to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecoderRole {
    Expert(usize),
    Chair,
}

/// Recurrent cell invocations during one pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub encoder_cells: usize,
    pub expert_cells: usize,
    pub chair_cells: usize,
}

/// One forward pass over one sample: a fresh tape bound to a model.
pub struct Session<'m> {
    pub tape: Tape,
    pub model: &'m MogNet,
    pub calls: CallCounts,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m MogNet) -> Self {
        Session {
            tape: Tape::new(),
            model,
            calls: CallCounts::default(),
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(&self.model.params, id)
    }

    pub fn config(&self) -> &'m ModelConfig {
        &self.model.config
    }
}
