//! Encoder-decoder bug localization and correction network.

mod config;
mod net;
pub mod vocab;

use std::collections::BTreeMap;

pub use config::ModelConfig;
pub use net::{sigmoid, softmax, EncoderOutput, Forward, Model, Prediction};
pub use vocab::Vocab;

use crate::error::{Error, Result};
use crate::lex::TokenStream;

/// Max-pools token probabilities onto the line each token starts on.
pub fn line_scores(probs: &[f64], stream: &TokenStream) -> Result<BTreeMap<usize, f64>> {
    if probs.len() != stream.n_tokens() {
        return Err(Error::arg(format!(
            "{} probabilities for {} tokens",
            probs.len(),
            stream.n_tokens()
        )));
    }
    let mut out: BTreeMap<usize, f64> = BTreeMap::new();
    for (tok, &p) in stream.tokens.iter().zip(probs) {
        out.entry(tok.line).and_modify(|s| *s = s.max(p)).or_insert(p);
    }
    Ok(out)
}
