//! The CTRL objective: `L_clust + L_pred` on one batch of trajectory views.

use diffcore::{Evaluation, Gradients, Graph, Inputs, NodeId, ParamSet, Tensor};
use rand::Rng;

use crate::clustering::{
    clustering_loss_graph, occupancy, psi_dims, sinkhorn, soft_assign, THETA_DIMS,
};
use crate::encoder::{sample_keypoints, EncoderSpec, ViewMode, EMBED_DIM};
use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::mining::{
    centroid_distances, hard_assign, plan_mining, prediction_loss_graph, MiningPlan,
};
use crate::nets::mlp;

/// Knobs of the CTRL loss, including the four ablations.
#[derive(Clone, Debug, PartialEq)]
pub struct CtrlSettings {
    pub keypoints: usize,
    pub mode: ViewMode,
    pub no_action: bool,
    pub no_cluster: bool,
    pub no_pred: bool,
    pub clusters: usize,
    pub temperature: f64,
    pub sinkhorn_iters: usize,
    pub neighbors: usize,
    /// Anchors per step; `None` means a quarter of the batch (at least one).
    pub anchors: Option<usize>,
}

impl CtrlSettings {
    pub fn view_dim(&self) -> usize {
        self.keypoints * EMBED_DIM
    }

    pub fn anchor_count(&self, batch: usize) -> usize {
        self.anchors.unwrap_or((batch / 4).max(1))
    }

    /// Both encoder losses disabled: nothing trains φ.
    pub fn is_inert(&self) -> bool {
        self.no_cluster && self.no_pred
    }
}

/// Keypoint observations of `b` trajectories, `t` per trajectory, trajectory-major.
#[derive(Clone, Debug)]
pub struct ViewBatch {
    pub observations: Tensor,
    pub actions: Vec<usize>,
    pub sources: Vec<Vec<usize>>,
    pub trajectories: usize,
    pub keypoints: usize,
}

impl ViewBatch {
    /// One view per trajectory. Trajectories shorter than `t` are skipped.
    pub fn sample<R: Rng + ?Sized>(
        spec: &EncoderSpec,
        trajectories: &[&[Transition]],
        t: usize,
        mode: ViewMode,
        rng: &mut R,
    ) -> Result<ViewBatch> {
        let mut obs = Vec::new();
        let mut actions = Vec::new();
        let mut sources = Vec::new();
        for traj in trajectories.iter().filter(|tr| tr.len() >= t) {
            let idx = sample_keypoints(traj.len(), t, mode, rng)?;
            for &i in &idx {
                obs.push(&traj[i].observation);
                actions.push(traj[i].action);
            }
            sources.push(idx);
        }
        if sources.is_empty() {
            return Err(Error::Empty("view batch"));
        }
        Ok(ViewBatch {
            observations: spec.stack(&obs)?,
            actions,
            trajectories: sources.len(),
            sources,
            keypoints: t,
        })
    }
}

/// The built loss graph together with its evaluated values.
pub struct CtrlGraph {
    pub graph: Graph,
    pub inputs: Inputs,
    pub eval: Evaluation,
    pub views: NodeId,
    pub projections: NodeId,
    pub l_clust: Option<NodeId>,
    pub l_pred: Option<NodeId>,
    pub total: Option<NodeId>,
    pub labels: Vec<usize>,
    pub plan: MiningPlan,
}

/// Builds and evaluates the CTRL graph. Balanced targets, hard labels and the
/// mining plan are computed from the forward values and enter the graph as
/// constants, so no gradient flows through them.
pub fn build_ctrl_graph<R: Rng + ?Sized>(
    spec: &EncoderSpec,
    settings: &CtrlSettings,
    params: &ParamSet,
    batch: &ViewBatch,
    rng: &mut R,
) -> Result<CtrlGraph> {
    let [c, h, w] = spec.obs_shape;
    let mut g = Graph::new();
    let obs = g.input("obs", &[batch.actions.len(), c, h, w]);
    let u = spec.views(
        &mut g,
        obs,
        &batch.actions,
        batch.keypoints,
        settings.no_action,
    )?;
    let v = mlp(&mut g, "clust.psi", &psi_dims(settings.view_dim()), u)?;
    let inputs = Inputs::new().with("obs", batch.observations.clone());
    let mut eval = g.evaluate(params, &inputs)?;

    let e = params
        .get("clust.E")
        .ok_or_else(|| Error::Diff(diffcore::DiffError::MissingParameter("clust.E".into())))?;
    let q = soft_assign(eval.value(v), e, settings.temperature)?;
    let targets = if settings.no_cluster {
        q
    } else {
        sinkhorn(&q, settings.sinkhorn_iters)?
    };
    let labels = hard_assign(&targets);

    let l_clust = if settings.no_cluster {
        None
    } else {
        let wproj = mlp(&mut g, "clust.theta", &THETA_DIMS, v)?;
        let e_node = g.param("clust.E", &[settings.clusters, crate::clustering::PROJ_DIM]);
        Some(clustering_loss_graph(
            &mut g,
            wproj,
            e_node,
            targets,
            settings.temperature,
        )?)
    };

    let (l_pred, plan) = if settings.no_pred || batch.trajectories < 2 {
        (None, MiningPlan::default())
    } else {
        let d = centroid_distances(e);
        let n = settings.anchor_count(batch.trajectories);
        let plan = plan_mining(&labels, &d, n, settings.neighbors, rng)?;
        (Some(prediction_loss_graph(&mut g, u, u, &plan)?), plan)
    };

    let total = match (l_clust, l_pred) {
        (Some(a), Some(b)) => Some(g.add(a, b)?),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    };
    g.extend_evaluation(&mut eval, params, &inputs)?;
    Ok(CtrlGraph {
        graph: g,
        inputs,
        eval,
        views: u,
        projections: v,
        l_clust,
        l_pred,
        total,
        labels,
        plan,
    })
}

/// Loss values, gradients and batch statistics of one CTRL step.
#[derive(Clone, Debug)]
pub struct CtrlOutcome {
    pub l_clust: f64,
    pub l_pred: f64,
    pub total: f64,
    pub grads: Gradients,
    pub labels: Vec<usize>,
    pub occupancy: Vec<usize>,
    pub projections: Tensor,
    pub anchors: usize,
    pub mined_pairs: usize,
}

pub fn ctrl_step<R: Rng + ?Sized>(
    spec: &EncoderSpec,
    settings: &CtrlSettings,
    params: &ParamSet,
    batch: &ViewBatch,
    rng: &mut R,
) -> Result<CtrlOutcome> {
    let built = build_ctrl_graph(spec, settings, params, batch, rng)?;
    let value = |n: Option<NodeId>| n.map_or(0.0, |id| built.eval.scalar(id));
    let grads = match built.total {
        Some(total) => built.graph.backward(&built.eval, total)?,
        None => Gradients::default(),
    };
    Ok(CtrlOutcome {
        l_clust: value(built.l_clust),
        l_pred: value(built.l_pred),
        total: value(built.total),
        grads,
        occupancy: occupancy(&built.labels, settings.clusters),
        projections: built.eval.value(built.projections).clone(),
        anchors: built.plan.anchors,
        mined_pairs: built.plan.pairs(),
        labels: built.labels,
    })
}

/// Views of fixed keypoint windows together with their cluster labels
/// (argmax of the soft assignment).
pub struct AssignedViews {
    pub views: Tensor,
    pub projections: Tensor,
    pub labels: Vec<usize>,
}

/// `windows[k]` lists the transitions of view `k`; all windows share a length.
pub fn assign_windows(
    spec: &EncoderSpec,
    settings: &CtrlSettings,
    params: &ParamSet,
    windows: &[&[Transition]],
) -> Result<AssignedViews> {
    let t = windows.first().map_or(0, |w| w.len());
    if t == 0 {
        return Err(Error::Empty("window batch"));
    }
    if let Some(w) = windows.iter().find(|w| w.len() != t) {
        return Err(Error::LengthMismatch {
            what: "window lengths",
            left: w.len(),
            right: t,
        });
    }
    let obs: Vec<&Tensor> = windows
        .iter()
        .flat_map(|w| w.iter().map(|s| &s.observation))
        .collect();
    let actions: Vec<usize> = windows
        .iter()
        .flat_map(|w| w.iter().map(|s| s.action))
        .collect();
    let [c, h, w] = spec.obs_shape;
    let mut g = Graph::new();
    let x = g.input("obs", &[obs.len(), c, h, w]);
    let u = spec.views(&mut g, x, &actions, t, settings.no_action)?;
    let v = mlp(&mut g, "clust.psi", &psi_dims(t * EMBED_DIM), u)?;
    let eval = g.evaluate(params, &Inputs::new().with("obs", spec.stack(&obs)?))?;
    let e = params
        .get("clust.E")
        .ok_or_else(|| Error::Diff(diffcore::DiffError::MissingParameter("clust.E".into())))?;
    let labels = hard_assign(&soft_assign(eval.value(v), e, settings.temperature)?);
    Ok(AssignedViews {
        views: eval.value(u).clone(),
        projections: eval.value(v).clone(),
        labels,
    })
}
