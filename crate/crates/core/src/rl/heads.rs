use diffcore::{Graph, Inputs, NodeId, ParamSet, Tensor};
use rand::Rng;

use crate::encoder::EMBED_DIM;
use crate::error::Result;
use crate::nets::{init_mlp, mlp};

const HIDDEN: usize = 64;

pub fn policy_dims(num_actions: usize) -> [usize; 3] {
    [EMBED_DIM, HIDDEN, num_actions]
}

pub const VALUE_DIMS: [usize; 3] = [EMBED_DIM, HIDDEN, 1];

/// Policy (`pi.*`) and value (`vf.*`) heads. The policy's output layer starts
/// small so the initial policy is close to uniform.
pub fn init_heads<R: Rng + ?Sized>(params: &mut ParamSet, num_actions: usize, rng: &mut R) {
    init_mlp(params, "pi", &policy_dims(num_actions), rng);
    init_mlp(params, "vf", &VALUE_DIMS, rng);
    for name in ["pi.l1.w", "pi.l1.b"] {
        if let Some(t) = params.get_mut(name) {
            t.data_mut().iter_mut().for_each(|x| *x *= 0.01);
        }
    }
}

/// Logits `[n, A]` and values `[n, 1]` from embeddings `[n, 64]`. The
/// embedding passes a stop-gradient marker first, so even a graph that builds
/// the encoder upstream sends no head gradient into it.
pub fn heads(
    g: &mut Graph,
    embedding: NodeId,
    num_actions: usize,
) -> diffcore::Result<(NodeId, NodeId)> {
    let e = g.stop_gradient(embedding)?;
    let logits = mlp(g, "pi", &policy_dims(num_actions), e)?;
    let value = mlp(g, "vf", &VALUE_DIMS, e)?;
    Ok((logits, value))
}

/// Numeric logits and values for a batch of embeddings.
pub fn evaluate_heads(
    params: &ParamSet,
    embeddings: &Tensor,
    num_actions: usize,
) -> Result<(Tensor, Vec<f64>)> {
    let n = embeddings.rows();
    let mut g = Graph::new();
    let e = g.input("emb", &[n, EMBED_DIM]);
    let (logits, value) = heads(&mut g, e, num_actions)?;
    let eval = g.evaluate(params, &Inputs::new().with("emb", embeddings.clone()))?;
    Ok((
        eval.value(logits).clone(),
        eval.value(value).data().to_vec(),
    ))
}

/// Log-probabilities of one logit row.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

/// Inverse-CDF draw from `softmax(logits)`.
pub fn sample_action<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> (usize, f64) {
    let logp = log_softmax(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return (a, *lp);
        }
    }
    let last = logp.len() - 1;
    (last, logp[last])
}

/// Highest-logit action, lowest index on ties.
pub fn greedy_action(logits: &[f64]) -> usize {
    let mut best = 0;
    for (a, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = a;
        }
    }
    best
}
