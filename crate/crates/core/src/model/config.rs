use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::BugType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Source positions including the leading CLS.
    pub max_src_len: usize,
    /// Decoder positions including START.
    pub max_tgt_len: usize,
    #[serde(default = "default_head_layers")]
    pub head_mlp_layers: usize,
    #[serde(default = "default_bug_types")]
    pub n_bug_types: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub dropout: f64,
}

fn default_head_layers() -> usize {
    3
}

fn default_bug_types() -> usize {
    BugType::COUNT
}

impl ModelConfig {
    /// 4 + 4 layers, d = 256, 4 heads.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers_enc: 4,
            n_layers_dec: 4,
            d_model: 256,
            n_heads: 4,
            d_ff: 1024,
            max_src_len: 512,
            max_tgt_len: 64,
            head_mlp_layers: 3,
            n_bug_types: BugType::COUNT,
            vocab_size,
            dropout: 0.0,
        }
    }

    /// 24 + 24 layers, d = 1024, 16 heads.
    pub fn reference(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers_enc: 24,
            n_layers_dec: 24,
            d_model: 1024,
            n_heads: 16,
            d_ff: 4096,
            max_src_len: 512,
            max_tgt_len: 256,
            head_mlp_layers: 3,
            n_bug_types: BugType::COUNT,
            vocab_size,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.head_mlp_layers == 0 {
            return bad("head_mlp_layers must be at least 1".into());
        }
        if self.max_src_len < 2 || self.max_tgt_len < 2 {
            return bad("max_src_len and max_tgt_len must be at least 2".into());
        }
        if self.vocab_size < super::Vocab::N_SPECIAL {
            return bad(format!("vocab_size {} is smaller than the special set", self.vocab_size));
        }
        if self.n_bug_types == 0 || self.d_ff == 0 {
            return bad("n_bug_types and d_ff must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
