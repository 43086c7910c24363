//! Run configuration: one flat TOML table, unknown keys rejected.

use std::path::Path;

use hud_core::alignment::SimilarityReading;
use hud_core::encoder::EncoderDims;
use hud_core::model::{Ablation, ModelConfig};
use hud_core::optim::AdamConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};
use crate::synthbench::SynthConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reading {
    #[default]
    MaxOverTarget,
    MatchedIndex,
}

impl From<Reading> for SimilarityReading {
    fn from(r: Reading) -> Self {
        match r {
            Reading::MaxOverTarget => SimilarityReading::MaxOverTarget,
            Reading::MatchedIndex => SimilarityReading::MatchedIndex,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Model shape.
    pub frames: usize,
    pub queries: usize,
    pub atom_dim: usize,
    pub holistic_dim: usize,
    pub mlp_hidden: usize,
    pub vocab: usize,
    pub max_text_len: usize,
    pub samples: usize,
    pub tau: f64,
    pub kappa: f64,
    pub reading: Reading,
    pub share_qformer: bool,
    pub self_attention: bool,

    // Optimization.
    pub seed: u64,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub steps: u64,
    pub eval_every: u64,
    pub freeze_embeddings: bool,
    /// Reuse one noise draw for every step.
    pub freeze_noise: bool,
    /// Record wall time in metrics (makes metric files run dependent).
    pub timing: bool,

    // Synthetic data.
    pub objects: usize,
    pub attributes: usize,
    pub families: usize,
    pub objects_per_scene: usize,
    pub tokens_per_frame: usize,
    pub detail_fraction: f64,
    pub ambiguous: bool,
    pub train_triplets: usize,
    pub eval_queries: usize,
    pub distractors: usize,

    // Ablation derivatives 1 through 9.
    pub no_h_prob: bool,
    pub no_h_compose: bool,
    pub no_holistic: bool,
    pub no_a_detail: bool,
    pub no_a_compose: bool,
    pub no_atomistic: bool,
    pub no_bias: bool,
    pub no_kl: bool,
    pub no_rank: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dims = EncoderDims::default();
        let model = ModelConfig::default();
        let synth = SynthConfig::default();
        Self {
            frames: dims.frames,
            queries: dims.queries,
            atom_dim: dims.atom_dim,
            holistic_dim: dims.holistic_dim,
            mlp_hidden: dims.mlp_hidden,
            vocab: dims.vocab,
            max_text_len: dims.max_text_len,
            samples: model.samples,
            tau: model.tau,
            kappa: model.kappa,
            reading: Reading::default(),
            share_qformer: model.share_qformer,
            self_attention: model.self_attention,
            seed: 0,
            batch: 16,
            lr: 1e-3,
            weight_decay: 0.0,
            steps: 500,
            eval_every: 100,
            freeze_embeddings: false,
            freeze_noise: false,
            timing: false,
            objects: synth.objects,
            attributes: synth.attributes,
            families: synth.families,
            objects_per_scene: synth.objects_per_scene,
            tokens_per_frame: synth.tokens_per_frame,
            detail_fraction: synth.detail_fraction,
            ambiguous: synth.ambiguous,
            train_triplets: 2000,
            eval_queries: 100,
            distractors: 200,
            no_h_prob: false,
            no_h_compose: false,
            no_holistic: false,
            no_a_detail: false,
            no_a_compose: false,
            no_atomistic: false,
            no_bias: false,
            no_kl: false,
            no_rank: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("a flat table of scalars always serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            no_h_prob: self.no_h_prob,
            no_h_compose: self.no_h_compose,
            no_holistic: self.no_holistic,
            no_a_detail: self.no_a_detail,
            no_a_compose: self.no_a_compose,
            no_atomistic: self.no_atomistic,
            no_bias: self.no_bias,
            no_kl: self.no_kl,
            no_rank: self.no_rank,
        }
    }

    /// Switches on ablation derivative `n` (1 through 9). Derivative 1 also
    /// sets `U = 0`.
    pub fn with_derivative(mut self, n: u8) -> Result<Self> {
        let a = Ablation::derivative(n)?;
        self.no_h_prob |= a.no_h_prob;
        self.no_h_compose |= a.no_h_compose;
        self.no_holistic |= a.no_holistic;
        self.no_a_detail |= a.no_a_detail;
        self.no_a_compose |= a.no_a_compose;
        self.no_atomistic |= a.no_atomistic;
        self.no_bias |= a.no_bias;
        self.no_kl |= a.no_kl;
        self.no_rank |= a.no_rank;
        if n == 1 {
            self.samples = 0;
        }
        Ok(self)
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            frames: self.frames,
            queries: self.queries,
            atom_dim: self.atom_dim,
            holistic_dim: self.holistic_dim,
            mlp_hidden: self.mlp_hidden,
            vocab: self.vocab,
            max_text_len: self.max_text_len,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            dims: self.dims(),
            samples: self.samples,
            tau: self.tau,
            kappa: self.kappa,
            reading: self.reading.into(),
            share_qformer: self.share_qformer,
            self_attention: self.self_attention,
            ablation: self.ablation(),
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            objects: self.objects,
            attributes: self.attributes,
            families: self.families,
            objects_per_scene: self.objects_per_scene,
            frames: self.frames,
            tokens_per_frame: self.tokens_per_frame,
            detail_fraction: self.detail_fraction,
            ambiguous: self.ambiguous,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        let synth = self.synth();
        synth.validate()?;
        let bad = |msg: String| Err(BenchError::Config(msg));
        if synth.vocab_size() > self.vocab {
            return bad(format!(
                "synthetic data needs {} symbols, vocab is {}",
                synth.vocab_size(),
                self.vocab
            ));
        }
        if self.max_text_len < 2 {
            return bad("max_text_len must fit a two-token modification".into());
        }
        if self.batch == 0 || self.eval_every == 0 {
            return bad("batch and eval_every must be at least 1".into());
        }
        if self.batch > self.train_triplets {
            return bad(format!(
                "batch {} exceeds the {} training triplets",
                self.batch, self.train_triplets
            ));
        }
        if self.eval_queries == 0 {
            return bad("eval_queries must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!(
                "bad learning rate {} or weight decay {}",
                self.lr, self.weight_decay
            ));
        }
        Ok(())
    }
}
