mod common;

use common::{gradcheck, random_tensor, rng, weighted_sum};

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn check<F>(name: &str, shapes: &[&[usize]], f: F)
where
    F: Fn(&mut hlsdbg::tensor::Tape<'_, f64>, &[hlsdbg::tensor::Var]) -> hlsdbg::Result<hlsdbg::tensor::Var>,
{
    let mut r = rng(name.len() as u64 * 7919);
    let inputs: Vec<_> = shapes.iter().map(|s| random_tensor(&mut r, s)).collect();
    let err = gradcheck(&inputs, H, f).unwrap();
    assert!(err < TOL, "{name}: max relative error {err:e}");
}

#[test]
fn matmul_grad() {
    check("matmul", &[&[3, 4], &[4, 5]], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        weighted_sum(t, y)
    });
}

#[test]
fn matmul_shared_rhs_grad() {
    check("matmul3x2", &[&[2, 3, 4], &[4, 2]], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        weighted_sum(t, y)
    });
}

#[test]
fn batched_matmul_grads() {
    check("bmm", &[&[2, 3, 4], &[2, 4, 5]], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        weighted_sum(t, y)
    });
    check("bmm_nt", &[&[2, 3, 4], &[2, 5, 4]], |t, v| {
        let y = t.matmul_nt(v[0], v[1])?;
        weighted_sum(t, y)
    });
}

#[test]
fn add_mul_scale_grads() {
    check("add_bcast", &[&[3, 4], &[4]], |t, v| {
        let y = t.add(v[0], v[1])?;
        weighted_sum(t, y)
    });
    check("mul", &[&[3, 4], &[3, 4]], |t, v| {
        let y = t.mul(v[0], v[1])?;
        weighted_sum(t, y)
    });
    check("mul_self", &[&[5]], |t, v| {
        let y = t.mul(v[0], v[0])?;
        let y = t.scale(y, 1.5);
        weighted_sum(t, y)
    });
}

#[test]
fn layout_grads() {
    check("transpose", &[&[2, 3, 4]], |t, v| {
        let y = t.transpose(v[0], 0, 2)?;
        weighted_sum(t, y)
    });
    check("permute", &[&[2, 3, 2, 2]], |t, v| {
        let y = t.permute(v[0], &[0, 2, 1, 3])?;
        weighted_sum(t, y)
    });
    check("reshape", &[&[2, 6]], |t, v| {
        let y = t.reshape(v[0], &[3, 4])?;
        weighted_sum(t, y)
    });
    check("concat", &[&[2, 3], &[2, 2]], |t, v| {
        let y = t.concat(&[v[0], v[1], v[0]], 1)?;
        weighted_sum(t, y)
    });
    check("slice", &[&[3, 5, 2]], |t, v| {
        let y = t.slice(v[0], 1, 1, 3)?;
        weighted_sum(t, y)
    });
    check("embedding", &[&[5, 3]], |t, v| {
        let y = t.embedding(v[0], &[4, 0, 4, 2])?;
        weighted_sum(t, y)
    });
}

#[test]
fn nonlinear_grads() {
    check("softmax_last", &[&[3, 5]], |t, v| {
        let y = t.softmax(v[0], 1)?;
        weighted_sum(t, y)
    });
    check("softmax_mid", &[&[2, 4, 3]], |t, v| {
        let y = t.softmax(v[0], 1)?;
        weighted_sum(t, y)
    });
    check("layer_norm", &[&[4, 6], &[6], &[6]], |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
        weighted_sum(t, y)
    });
    check("gelu", &[&[3, 7]], |t, v| {
        let y = t.gelu(v[0]);
        weighted_sum(t, y)
    });
    check("mean", &[&[3, 7]], |t, v| {
        let y = t.gelu(v[0]);
        Ok(t.mean(y))
    });
}

#[test]
fn attention_mask_grad() {
    // 2 batch elements x 2 heads, 3 queries, 4 keys; causal-ish mask.
    let keep: Vec<bool> = (0..2 * 3 * 4).map(|i| (i % 4) <= (i / 4) % 3 + (i / 12)).collect();
    check("attention_mask", &[&[4, 3, 4]], move |t, v| {
        let y = t.attention_mask(v[0], &keep, 0.5, 2)?;
        let y = t.softmax(y, 2)?;
        weighted_sum(t, y)
    });
}

#[test]
fn loss_grads() {
    check("cross_entropy", &[&[4, 6]], |t, v| {
        t.cross_entropy(v[0], &[5, 0, 2, 2], &[0.25, 0.5, 0.0, 1.0])
    });
    check("bce", &[&[7]], |t, v| {
        t.weighted_bce_with_logits(
            v[0],
            &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            &[0.05, 1.0, 1.0, 0.05, 1.0, 0.0, 1.0],
        )
    });
}

#[test]
fn repeated_backward_accumulates_into_store() {
    use hlsdbg::tensor::{ParamStore, Tape, Tensor};
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    for _ in 0..2 {
        let grads = {
            let mut tape = Tape::with_params(&store);
            let w = tape.param(id);
            let sq = tape.mul(w, w).unwrap();
            let s = tape.sum(sq);
            tape.backward(s).unwrap()
        };
        grads.accumulate_into(&mut store).unwrap();
    }
    assert_eq!(store.get(id).grad().unwrap(), &[4.0, 8.0]);
    store.zero_grad();
    assert!(store.get(id).grad().is_none());
}
