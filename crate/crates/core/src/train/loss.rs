use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Var};

/// Scaling factors of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha_type: f64,
    pub alpha_bug: f64,
    pub alpha_decoder: f64,
    pub alpha_encoder: f64,
    /// Weight of buggy (label 1) tokens in the location loss.
    pub alpha_true: f64,
    /// Weight of clean (label 0) tokens in the location loss.
    pub alpha_false: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_type: 0.2,
            alpha_bug: 2.0,
            alpha_decoder: 10.0,
            alpha_encoder: 1.0,
            alpha_true: 0.05,
            alpha_false: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha_type,
            self.alpha_bug,
            self.alpha_decoder,
            self.alpha_encoder,
            self.alpha_true,
            self.alpha_false,
        ];
        if all.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if self.alpha_true + self.alpha_false <= 0.0 {
            return Err(Error::Config("alpha_true + alpha_false must be positive".into()));
        }
        Ok(())
    }
}

/// Softmax cross-entropy of `[B, C]` logits, averaged over the batch.
pub fn loss_type<T: Real>(t: &mut Tape<'_, T>, logits: Var, labels: &[usize]) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::arg("bug-type loss over an empty batch"));
    }
    let w = T::one() / T::from_usize(labels.len()).expect("batch fits");
    t.cross_entropy(logits, labels, &vec![w; labels.len()])
}

/// Class-weighted sigmoid cross-entropy over unmasked positions, divided by
/// the total weight.
pub fn loss_bug<T: Real>(
    t: &mut Tape<'_, T>,
    logits: Var,
    labels: &[u8],
    mask: &[bool],
    weights: &LossWeights,
) -> Result<Var> {
    if labels.len() != mask.len() {
        return Err(Error::arg(format!("{} labels for {} mask entries", labels.len(), mask.len())));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::arg("bug-location loss over a batch with no real tokens"));
    }
    let a_t = T::from_f64_lossy(weights.alpha_true);
    let a_f = T::from_f64_lossy(weights.alpha_false);
    let y: Vec<T> = labels.iter().map(|&l| if l == 1 { T::one() } else { T::zero() }).collect();
    let w: Vec<T> = labels
        .iter()
        .zip(mask)
        .map(|(&l, &m)| match (m, l == 1) {
            (false, _) => T::zero(),
            (true, true) => a_t,
            (true, false) => a_f,
        })
        .collect();
    t.weighted_bce_with_logits(logits, &y, &w)
}

/// Teacher-forced decoder loss over `[B * K, V]` logits. `targets[b]` is the
/// snippet followed by END; each sample contributes the mean over its steps
/// and samples are averaged.
pub fn loss_decoder<T: Real>(t: &mut Tape<'_, T>, logits: Var, targets: &[Vec<usize>], k: usize) -> Result<Var> {
    if targets.is_empty() || targets.iter().any(Vec::is_empty) {
        return Err(Error::arg("decoder loss needs non-empty targets"));
    }
    if let Some(long) = targets.iter().find(|r| r.len() > k) {
        return Err(Error::arg(format!("target of {} steps exceeds {k} decoder positions", long.len())));
    }
    let b = T::from_usize(targets.len()).expect("batch fits");
    let mut ids = Vec::with_capacity(targets.len() * k);
    let mut w = Vec::with_capacity(targets.len() * k);
    for row in targets {
        let per = T::one() / (b * T::from_usize(row.len()).expect("length fits"));
        for j in 0..k {
            ids.push(row.get(j).copied().unwrap_or(0));
            w.push(if j < row.len() { per } else { T::zero() });
        }
    }
    t.cross_entropy(logits, &ids, &w)
}

/// `alpha_encoder * (alpha_type * type + alpha_bug * bug) + alpha_decoder * decoder`.
pub fn loss_all(l_type: f64, l_bug: f64, l_decoder: f64, w: &LossWeights) -> Result<f64> {
    if ![l_type, l_bug, l_decoder].iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite loss term: type {l_type}, bug {l_bug}, decoder {l_decoder}"
        )));
    }
    Ok(w.alpha_encoder * (w.alpha_type * l_type + w.alpha_bug * l_bug) + w.alpha_decoder * l_decoder)
}

/// [`loss_all`] on the tape.
pub fn loss_all_var<T: Real>(t: &mut Tape<'_, T>, l_type: Var, l_bug: Var, l_decoder: Var, w: &LossWeights) -> Result<Var> {
    let f = T::from_f64_lossy;
    let a = t.scale(l_type, f(w.alpha_type));
    let b = t.scale(l_bug, f(w.alpha_bug));
    let enc = t.add(a, b)?;
    let enc = t.scale(enc, f(w.alpha_encoder));
    let dec = t.scale(l_decoder, f(w.alpha_decoder));
    t.add(enc, dec)
}
