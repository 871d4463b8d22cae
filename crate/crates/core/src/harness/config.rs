//! Run configuration: one TOML file with flat dotted keys such as
//! `model.hidden = 16` or `train.lr = 0.005`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{GrammarConfig, ToyGrammar};
use crate::error::{MogError, Result};
use crate::learning::{MuMode, OptimizerConfig, PartitionMode, TrainConfig};
use crate::model::{ModelConfig, VariantFlags};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub seed: u64,
    pub n_samples: usize,
    pub multi_intent_rate: f64,
    pub vocab_size: usize,
    pub domains: Vec<String>,
    pub actions: Vec<String>,
    pub requestable_rate: f64,
    pub db_available_rate: f64,
    pub max_target_len: usize,
    pub shared_domain_vocab: bool,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let g = GrammarConfig::default();
        CorpusSection {
            seed: g.seed,
            n_samples: 3000,
            multi_intent_rate: 0.674,
            vocab_size: g.vocab_size,
            domains: g.domains,
            actions: g.actions,
            requestable_rate: g.requestable_rate,
            db_available_rate: g.db_available_rate,
            max_target_len: g.max_target_len,
            shared_domain_vocab: g.shared_domain_vocab,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embedding: usize,
    pub hidden: usize,
    pub max_src_len: usize,
    pub max_len: usize,
    pub init_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            embedding: m.embedding,
            hidden: m.hidden,
            max_src_len: m.max_src_len,
            max_len: m.max_len,
            init_scale: m.init_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantSection {
    pub use_retro: bool,
    pub use_prosp: bool,
    pub lambda: f64,
}

impl Default for VariantSection {
    fn default() -> Self {
        Variant::MogNet.section()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub mode: PartitionMode,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub mu: MuMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
    pub l2_weight: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let o = t.optimizer;
        TrainSection {
            seed: t.seed,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            clip: o.clip,
            l2_weight: o.l2_weight,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub out_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub variant: VariantSection,
    pub partition: PartitionSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub paths: PathsSection,
}

/// The four named model variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "mognet")]
    MogNet,
    #[serde(rename = "mognet-p")]
    MogNetP,
    #[serde(rename = "mognet-p-r")]
    MogNetPR,
    #[serde(rename = "mognet-gl")]
    MogNetGL,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::MogNet, Variant::MogNetP, Variant::MogNetPR, Variant::MogNetGL];

    pub fn name(self) -> &'static str {
        match self {
            Variant::MogNet => "mognet",
            Variant::MogNetP => "mognet-p",
            Variant::MogNetPR => "mognet-p-r",
            Variant::MogNetGL => "mognet-gl",
        }
    }

    /// `(use_retro, use_prosp, lambda)`.
    pub fn section(self) -> VariantSection {
        let (use_retro, use_prosp, lambda) = match self {
            Variant::MogNet => (true, true, 0.5),
            Variant::MogNetP => (true, false, 0.5),
            Variant::MogNetPR => (false, false, 0.5),
            Variant::MogNetGL => (true, true, 0.0),
        };
        VariantSection {
            use_retro,
            use_prosp,
            lambda,
        }
    }

    /// The named variant matching `section`, if any.
    pub fn of(section: &VariantSection) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.section() == *section)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = MogError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| MogError::Config(format!("unknown variant `{s}`")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| MogError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MogError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            MogError::Config(msg) => MogError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MogError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.variant;
        if !(0.0..=1.0).contains(&v.lambda) {
            return Err(MogError::Config(format!("variant.lambda {} outside [0, 1]", v.lambda)));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(MogError::Config("train.epochs and train.batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.corpus.multi_intent_rate) {
            return Err(MogError::Config("corpus.multi_intent_rate outside [0, 1]".into()));
        }
        self.optimizer().validate()?;
        let k = match self.partition.mode {
            PartitionMode::Domain => self.corpus.domains.len(),
            PartitionMode::Action => self.corpus.actions.len(),
        };
        self.model_config(k).validate()
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant.section();
        self
    }

    pub fn variant_name(&self) -> String {
        Variant::of(&self.variant).map_or_else(
            || {
                format!(
                    "custom(retro={},prosp={},lambda={})",
                    self.variant.use_retro, self.variant.use_prosp, self.variant.lambda
                )
            },
            |v| v.name().to_string(),
        )
    }

    /// SHA-256 over the canonical JSON form of everything except `paths`.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsSection::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    /// [`Self::config_hash`] with `train.epochs` cleared: configurations that
    /// differ only in their epoch budget describe the same training run.
    pub fn run_key(&self) -> String {
        let mut c = self.clone();
        c.train.epochs = 0;
        c.config_hash()
    }

    pub fn grammar_config(&self) -> GrammarConfig {
        let c = &self.corpus;
        GrammarConfig {
            domains: c.domains.clone(),
            actions: c.actions.clone(),
            vocab_size: c.vocab_size,
            requestable_rate: c.requestable_rate,
            db_available_rate: c.db_available_rate,
            max_target_len: c.max_target_len,
            shared_domain_vocab: c.shared_domain_vocab,
            seed: c.seed,
        }
    }

    pub fn grammar(&self) -> Result<ToyGrammar> {
        ToyGrammar::new(self.grammar_config())
    }

    pub fn intent_set(&self, grammar: &ToyGrammar) -> Vec<String> {
        match self.partition.mode {
            PartitionMode::Domain => grammar.domain_labels(),
            PartitionMode::Action => grammar.action_labels(),
        }
    }

    pub fn flags(&self) -> VariantFlags {
        VariantFlags {
            use_retro: self.variant.use_retro,
            use_prosp: self.variant.use_prosp,
        }
    }

    pub fn model_config(&self, experts: usize) -> ModelConfig {
        let m = &self.model;
        let domains = self.corpus.domains.len();
        ModelConfig {
            vocab_size: self.corpus.vocab_size,
            embedding: m.embedding,
            hidden: m.hidden,
            n_belief: 2 * domains,
            n_db: domains,
            experts,
            max_src_len: m.max_src_len,
            max_len: m.max_len,
            init_scale: m.init_scale,
            flags: self.flags(),
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        let t = &self.train;
        OptimizerConfig {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            clip: t.clip,
            l2_weight: t.l2_weight,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.train.seed,
            optimizer: self.optimizer(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_parse() {
        let cfg = RunConfig::from_toml_str(
            "model.hidden = 12\ntrain.lr = 0.01\nvariant.lambda = 0.0\npartition.mode = \"action\"\nloss.mu = \"balanced\"\n",
        )
        .unwrap();
        assert_eq!(cfg.model.hidden, 12);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.partition.mode, PartitionMode::Action);
        assert_eq!(cfg.loss.mu, MuMode::Balanced);
        assert_eq!(cfg.model.embedding, ModelSection::default().embedding);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(RunConfig::from_toml_str("model.hiden = 3"), Err(MogError::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("variant.lambda = 1.5"), Err(MogError::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("model.hidden = 0"), Err(MogError::Config(_))));
    }

    #[test]
    fn variants_map_to_flags() {
        let rows: Vec<_> = Variant::ALL
            .iter()
            .map(|v| {
                let s = v.section();
                (v.name(), s.use_retro, s.use_prosp, s.lambda)
            })
            .collect();
        assert_eq!(
            rows,
            vec![
                ("mognet", true, true, 0.5),
                ("mognet-p", true, false, 0.5),
                ("mognet-p-r", false, false, 0.5),
                ("mognet-gl", true, true, 0.0),
            ]
        );
        assert_eq!("mognet-gl".parse::<Variant>().unwrap(), Variant::MogNetGL);
        assert!("moe".parse::<Variant>().is_err());
    }

    #[test]
    fn hash_ignores_paths_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.out_dir = "elsewhere".into();
        assert_eq!(a.config_hash(), b.config_hash());
        b.train.seed += 1;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn toml_round_trip() {
        let a = RunConfig::default().with_variant(Variant::MogNetP);
        let back = RunConfig::from_toml_str(&a.to_toml_string().unwrap()).unwrap();
        assert_eq!(a, back);
    }
}
