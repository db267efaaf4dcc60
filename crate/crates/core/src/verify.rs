//! Randomized self-checks shared by the CLI and the test suites: finite
//! difference checks of every loss and the perturbation theorem.

use diffcore::{
    freeze_stop_gradients, grad_check_coords, kink_margin, GradCheckReport, Graph, Inputs, NodeId,
    ParamSet, Tensor,
};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::analysis::check_perturbation_invariance;
use crate::clustering::{init_cluster_branch, normalize_rows_in_place};
use crate::encoder::{EncoderSpec, ViewMode};
use crate::envs::Transition;
use crate::error::Result;
use crate::mining::init_pred_branch;
use crate::objective::{build_ctrl_graph, CtrlSettings, ViewBatch};
use crate::rl::{heads, init_heads, log_softmax, ppo_loss_graph, PpoSamples, PpoSettings};

/// Relative error bound for every loss.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Instances closer than this to a ReLU, clamp or min kink are redrawn.
pub const KINK_MARGIN: f64 = 1e-4;
/// Coordinates probed per parameter tensor and instance.
pub const COORDS_PER_PARAM: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Clustering,
    Prediction,
    Surrogate,
    Value,
    Entropy,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Clustering,
        LossKind::Prediction,
        LossKind::Surrogate,
        LossKind::Value,
        LossKind::Entropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Clustering => "L_clust",
            LossKind::Prediction => "L_pred",
            LossKind::Surrogate => "ppo surrogate",
            LossKind::Value => "value loss",
            LossKind::Entropy => "entropy",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossCheckSummary {
    pub loss: LossKind,
    pub instances: usize,
    pub failures: usize,
    pub redraws: usize,
    pub max_relative_error: f64,
}

impl LossCheckSummary {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct Instance {
    graph: Graph,
    params: ParamSet,
    inputs: Inputs,
    loss: NodeId,
    margin: f64,
}

fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("shape")
}

fn ctrl_instance<R: Rng>(kind: LossKind, rng: &mut R) -> Result<Option<Instance>> {
    let side = rng.gen_range(4..7);
    let actions = rng.gen_range(2..5);
    let spec = EncoderSpec::new([rng.gen_range(1..3), side, side], actions);
    let clusters = rng.gen_range(3..7);
    let settings = CtrlSettings {
        keypoints: rng.gen_range(1..3),
        mode: if rng.gen() {
            ViewMode::Sampled
        } else {
            ViewMode::Consecutive
        },
        no_action: rng.gen_bool(0.2),
        no_cluster: false,
        no_pred: false,
        clusters,
        temperature: rng.gen_range(0.2..1.0),
        sinkhorn_iters: 3,
        neighbors: rng.gen_range(1..clusters),
        anchors: None,
    };
    let mut params = spec.init(rng);
    init_cluster_branch(&mut params, settings.view_dim(), clusters, rng);
    init_pred_branch(&mut params, settings.view_dim(), rng);
    let trajectories: Vec<Vec<Transition>> = (0..rng.gen_range(4..9))
        .map(|_| {
            (0..4)
                .map(|_| Transition {
                    observation: random_tensor(rng, &spec.obs_shape),
                    action: rng.gen_range(0..actions),
                    reward: 0.0,
                    done: false,
                    value_estimate: 0.0,
                    log_prob: 0.0,
                })
                .collect()
        })
        .collect();
    let refs: Vec<&[Transition]> = trajectories.iter().map(Vec::as_slice).collect();
    let batch = ViewBatch::sample(&spec, &refs, settings.keypoints, settings.mode, rng)?;
    let built = build_ctrl_graph(&spec, &settings, &params, &batch, rng)?;
    let loss = match kind {
        LossKind::Clustering => built.l_clust,
        _ => built.l_pred,
    };
    let Some(loss) = loss else { return Ok(None) };
    if kind == LossKind::Prediction && built.plan.pairs() == 0 {
        return Ok(None);
    }
    // The mined targets sit behind a stop-gradient; hold them fixed so the
    // differences see the same function backward differentiates.
    Ok(Some(Instance {
        margin: kink_margin(&built.graph, &built.eval),
        graph: freeze_stop_gradients(&built.graph, &built.eval),
        params,
        inputs: built.inputs,
        loss,
    }))
}

fn ppo_instance<R: Rng>(kind: LossKind, rng: &mut R) -> Result<Option<Instance>> {
    let actions = rng.gen_range(2..6);
    let n = rng.gen_range(3..9);
    let mut params = ParamSet::new();
    init_heads(&mut params, actions, rng);
    // Larger policy weights than at initialization so ratios spread.
    for name in ["pi.l1.w", "pi.l1.b"] {
        if let Some(t) = params.get_mut(name) {
            t.data_mut().iter_mut().for_each(|x| *x *= 100.0);
        }
    }
    let emb = random_tensor(rng, &[n, crate::encoder::EMBED_DIM]);

    let mut g = Graph::new();
    let x = g.input("emb", &[n, crate::encoder::EMBED_DIM]);
    let (logits, _) = heads(&mut g, x, actions)?;
    let inputs = Inputs::new().with("emb", emb);
    let head_eval = g.evaluate(&params, &inputs)?;
    let relu_margin = kink_margin(&g, &head_eval);
    let chosen: Vec<usize> = (0..n).map(|_| rng.gen_range(0..actions)).collect();
    let logp: Vec<f64> = (0..n)
        .map(|i| log_softmax(head_eval.value(logits).row(i))[chosen[i]])
        .collect();
    let settings = PpoSettings {
        clip: 0.2,
        entropy_coef: 0.01,
        value_coef: 0.5,
        minibatches: 1,
    };
    let samples = PpoSamples {
        embeddings: inputs.get("emb").expect("bound").clone(),
        old_log_probs: logp.iter().map(|l| l + rng.gen_range(-0.4..0.4)).collect(),
        actions: chosen,
        advantages: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        returns: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    };
    let mut g = Graph::new();
    let x = g.input("emb", &[n, crate::encoder::EMBED_DIM]);
    let nodes = ppo_loss_graph(&mut g, x, &samples, actions, &settings)?;
    let eval = g.evaluate(&params, &inputs)?;
    // Inside the clip range both branches of the minimum coincide and share a
    // derivative, so only the clamp bounds and ReLUs count as kinks here.
    let lo = 1.0 - settings.clip;
    let hi = 1.0 + settings.clip;
    let min_adv = samples
        .advantages
        .iter()
        .fold(f64::INFINITY, |m, a| m.min(a.abs()));
    let clamp_margin = eval
        .value(nodes.ratio)
        .data()
        .iter()
        .fold(f64::INFINITY, |m, r| {
            m.min((r - lo).abs()).min((r - hi).abs())
        });
    let loss = match kind {
        LossKind::Surrogate => nodes.policy,
        LossKind::Value => nodes.value,
        _ => nodes.entropy,
    };
    Ok(Some(Instance {
        margin: relu_margin.min(clamp_margin * min_adv.min(1.0)),
        graph: g,
        params,
        inputs,
        loss,
    }))
}

fn check_instance<R: Rng>(inst: &Instance, rng: &mut R) -> Result<GradCheckReport> {
    let mut select = |_: &str, len: usize| -> Vec<usize> {
        let k = COORDS_PER_PARAM.min(len);
        sample(rng, len, k).into_vec()
    };
    Ok(grad_check_coords(
        &inst.graph,
        &inst.params,
        &inst.inputs,
        inst.loss,
        GRAD_TOLERANCE,
        &mut select,
    )?)
}

/// Finite-difference checks of one loss over `instances` random small
/// networks and batches.
pub fn check_loss(kind: LossKind, instances: usize, seed: u64) -> Result<LossCheckSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = LossCheckSummary {
        loss: kind,
        instances: 0,
        failures: 0,
        redraws: 0,
        max_relative_error: 0.0,
    };
    while summary.instances < instances {
        let inst = match kind {
            LossKind::Clustering | LossKind::Prediction => ctrl_instance(kind, &mut rng)?,
            _ => ppo_instance(kind, &mut rng)?,
        };
        let Some(inst) = inst.filter(|i| i.margin > KINK_MARGIN) else {
            summary.redraws += 1;
            continue;
        };
        let report = check_instance(&inst, &mut rng)?;
        summary.instances += 1;
        summary.max_relative_error = summary.max_relative_error.max(report.max_relative_error());
        if !report.passed {
            summary.failures += 1;
        }
    }
    Ok(summary)
}

pub fn check_all_losses(instances: usize, seed: u64) -> Result<Vec<LossCheckSummary>> {
    LossKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &k)| check_loss(k, instances, seed.wrapping_add(i as u64)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TheoremSummary {
    pub trials: usize,
    pub same_argmax: usize,
    pub redraws: usize,
}

/// Draws unit-row `E`, a point `v` and a perturbation `δ = α e_j + r`, keeps
/// those satisfying the half-plane condition, and counts how often the
/// argmax cluster survives.
pub fn verify_theorem(trials: usize, seed: u64) -> Result<TheoremSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TheoremSummary {
        trials: 0,
        same_argmax: 0,
        redraws: 0,
    };
    while out.trials < trials {
        let c = rng.gen_range(2..12);
        let d = rng.gen_range(2..17);
        let mut e = Tensor::new(
            vec![c, d],
            (0..c * d).map(|_| rng.sample(StandardNormal)).collect(),
        )?;
        normalize_rows_in_place(&mut e);
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let j = (0..c)
            .map(|k| e.row(k).iter().zip(&v).map(|(a, b)| a * b).sum::<f64>())
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, s)| {
                if s > best.1 {
                    (k, s)
                } else {
                    best
                }
            })
            .0;
        let alpha = rng.gen_range(0.0..5.0);
        let noise = rng.gen_range(0.0..2.0);
        let delta: Vec<f64> = e
            .row(j)
            .iter()
            .map(|x| alpha * x + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let r = check_perturbation_invariance(&e, &v, &delta)?;
        if !r.holds_condition {
            out.redraws += 1;
            continue;
        }
        out.trials += 1;
        if r.same_argmax {
            out.same_argmax += 1;
        }
    }
    Ok(out)
}
