use diffcore::{Adam, Graph, Inputs, NodeId, ParamSet, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use super::heads::heads;
use crate::encoder::EMBED_DIM;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PpoSettings {
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub minibatches: usize,
}

/// Per-sample inputs of one PPO update. Advantages are expected normalized.
#[derive(Clone, Debug)]
pub struct PpoSamples {
    pub embeddings: Tensor,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoSamples {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> PpoSamples {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let emb = idx
            .iter()
            .flat_map(|&i| self.embeddings.row(i).iter().copied())
            .collect();
        PpoSamples {
            embeddings: Tensor::new(vec![idx.len(), EMBED_DIM], emb).expect("embedding rows"),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            old_log_probs: pick(&self.old_log_probs),
            advantages: pick(&self.advantages),
            returns: pick(&self.returns),
        }
    }
}

/// Loss nodes of one PPO graph. `total = policy + c_v · value − c_e · entropy`.
#[derive(Clone, Copy, Debug)]
pub struct PpoNodes {
    pub total: NodeId,
    pub policy: NodeId,
    pub value: NodeId,
    pub entropy: NodeId,
    pub ratio: NodeId,
}

/// Clipped surrogate, value regression and entropy bonus on top of `embedding`.
pub fn ppo_loss_graph(
    g: &mut Graph,
    embedding: NodeId,
    samples: &PpoSamples,
    num_actions: usize,
    settings: &PpoSettings,
) -> Result<PpoNodes> {
    let n = samples.len();
    let (logits, value) = heads(g, embedding, num_actions)?;
    let logp_all = g.log_softmax(logits)?;
    let logp = g.pick_columns(logp_all, &samples.actions)?;
    let old = g.constant(Tensor::vector(samples.old_log_probs.clone()));
    let diff = g.sub(logp, old)?;
    let ratio = g.exp(diff)?;
    let adv = g.constant(Tensor::vector(samples.advantages.clone()));
    let unclipped = g.mul(ratio, adv)?;
    let clipped_ratio = g.clamp(ratio, 1.0 - settings.clip, 1.0 + settings.clip)?;
    let clipped = g.mul(clipped_ratio, adv)?;
    let surrogate = g.minimum(unclipped, clipped)?;
    let mean_surrogate = g.mean(surrogate)?;
    let policy = g.scale(mean_surrogate, -1.0)?;

    let probs = g.softmax(logits)?;
    let per_row_entropy = g.cross_entropy(probs, logp_all)?;
    let entropy = g.mean(per_row_entropy)?;

    let targets = g.constant(Tensor::new(vec![n, 1], samples.returns.clone())?);
    let sq = g.squared_distance(value, targets)?;
    let value_loss = g.mean(sq)?;

    let weighted_value = g.scale(value_loss, settings.value_coef)?;
    let bonus = g.scale(entropy, -settings.entropy_coef)?;
    let partial = g.add(policy, weighted_value)?;
    let total = g.add(partial, bonus)?;
    Ok(PpoNodes {
        total,
        policy,
        value: value_loss,
        entropy,
        ratio,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub updates: usize,
}

/// One pass over the samples in shuffled minibatches, one Adam step each.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut ParamSet,
    adam: &mut Adam,
    samples: &PpoSamples,
    num_actions: usize,
    settings: &PpoSettings,
    rng: &mut R,
) -> Result<PpoStats> {
    if samples.is_empty() {
        return Err(Error::Empty("ppo batch"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let parts = settings.minibatches.clamp(1, samples.len());
    let size = samples.len().div_ceil(parts);
    let mut stats = PpoStats::default();
    let mut clipped = 0usize;
    for chunk in order.chunks(size) {
        let mb = samples.subset(chunk);
        let mut g = Graph::new();
        let emb = g.input("emb", &[mb.len(), EMBED_DIM]);
        let nodes = ppo_loss_graph(&mut g, emb, &mb, num_actions, settings)?;
        let eval = g.evaluate(params, &Inputs::new().with("emb", mb.embeddings.clone()))?;
        let grads = g.backward(&eval, nodes.total)?;
        let w = mb.len() as f64 / samples.len() as f64;
        stats.loss += w * eval.scalar(nodes.total);
        stats.policy_loss += w * eval.scalar(nodes.policy);
        stats.value_loss += w * eval.scalar(nodes.value);
        stats.entropy += w * eval.scalar(nodes.entropy);
        clipped += eval
            .value(nodes.ratio)
            .data()
            .iter()
            .filter(|r| (**r - 1.0).abs() > settings.clip)
            .count();
        adam.step(params, &grads);
        stats.updates += 1;
    }
    stats.clip_fraction = clipped as f64 / samples.len() as f64;
    Ok(stats)
}
