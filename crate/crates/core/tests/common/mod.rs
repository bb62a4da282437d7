#![allow(dead_code)]

use hlsdbg::tensor::{Tape, Tensor, Var};
use hlsdbg::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Relative error with a small floor so near-zero gradients compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central finite-difference check of `f` with respect to every element of
/// every input. `f` must build a scalar on the given tape. Returns the
/// maximum relative error seen.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        let zeros = vec![0.0; t.numel()];
        let analytic = grads.get(vars[i]).unwrap_or(&zeros).to_vec();
        for j in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    Ok(worst)
}

/// Reduces any tensor to a scalar with fixed pseudo-random weights so that
/// every output element contributes a distinct gradient.
pub fn weighted_sum(tape: &mut Tape<'_, f64>, y: Var) -> Result<Var> {
    let n: usize = tape.shape(y).iter().product();
    let shape = tape.shape(y).to_vec();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7531 + 0.1).sin()).collect();
    let w = tape.constant(shape, w)?;
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}
