//! Cross-cluster mining: nearby-cluster lookup and the predictive loss that
//! pulls each anchor's prediction toward views mined from neighboring clusters.

use diffcore::{Graph, NodeId, ParamSet, Tensor};
use rand::Rng;

use crate::clustering::{psi_dims, THETA_DIMS};
use crate::error::{Error, Result};
use crate::nets::{init_mlp, mlp};

/// ψ_pred and θ_pred.
pub fn init_pred_branch<R: Rng + ?Sized>(params: &mut ParamSet, view_dim: usize, rng: &mut R) {
    init_mlp(params, "pred.psi", &psi_dims(view_dim), rng);
    init_mlp(params, "pred.theta", &THETA_DIMS, rng);
}

/// `D_kl = ‖e_k − e_l‖²`, exactly symmetric with a zero diagonal.
pub fn centroid_distances(e: &Tensor) -> Tensor {
    let c = e.rows();
    let mut d = vec![0.0; c * c];
    for k in 0..c {
        for l in k + 1..c {
            let v: f64 = e
                .row(k)
                .iter()
                .zip(e.row(l))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[k * c + l] = v;
            d[l * c + k] = v;
        }
    }
    Tensor::new(vec![c, c], d).expect("square matrix")
}

/// Row-wise argmax, lowest index on ties.
pub fn hard_assign(q: &Tensor) -> Vec<usize> {
    (0..q.rows())
        .map(|i| {
            let row = q.row(i);
            let mut best = 0;
            for (k, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Up to `k` occupied clusters closest to `c`, excluding `c`, nearest first
/// (index order on equal distance).
pub fn neighbor_clusters(d: &Tensor, c: usize, k: usize, occupancy: &[usize]) -> Vec<usize> {
    let row = d.row(c);
    let mut candidates: Vec<usize> = (0..row.len())
        .filter(|&l| l != c && occupancy[l] > 0)
        .collect();
    candidates.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    candidates.truncate(k);
    candidates
}

/// Which batch members act as anchors and which members are mined for each.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MiningPlan {
    /// One entry per (anchor draw, neighbor cluster) pair.
    pub anchor_rows: Vec<usize>,
    pub mined_rows: Vec<usize>,
    pub anchors: usize,
    /// Anchors with no occupied neighbor cluster.
    pub skipped: usize,
}

impl MiningPlan {
    pub fn pairs(&self) -> usize {
        self.anchor_rows.len()
    }
}

/// Draws `n` anchors uniformly (with replacement) and, for each of their
/// nearest occupied clusters, one member uniformly.
pub fn plan_mining<R: Rng + ?Sized>(
    labels: &[usize],
    d: &Tensor,
    n: usize,
    k: usize,
    rng: &mut R,
) -> Result<MiningPlan> {
    if labels.len() < 2 {
        return Err(Error::Empty("mining batch (needs at least two views)"));
    }
    let c = d.rows();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let occupancy: Vec<usize> = members.iter().map(Vec::len).collect();
    let mut plan = MiningPlan {
        anchors: n,
        ..Default::default()
    };
    for _ in 0..n {
        let anchor = rng.gen_range(0..labels.len());
        let neighbors = neighbor_clusters(d, labels[anchor], k, &occupancy);
        if neighbors.is_empty() {
            plan.skipped += 1;
        }
        for nb in neighbors {
            let pool = &members[nb];
            plan.anchor_rows.push(anchor);
            plan.mined_rows.push(pool[rng.gen_range(0..pool.len())]);
        }
    }
    Ok(plan)
}

/// `L_pred = Σ_pairs ‖θ_pred(ψ_pred(u_anchor)) − StopGrad(ψ_pred(u_mined))‖²`.
///
/// `anchor_u` and `mined_u` are `[B, view_dim]` and may be the same node.
/// An empty plan yields a constant zero.
pub fn prediction_loss_graph(
    g: &mut Graph,
    anchor_u: NodeId,
    mined_u: NodeId,
    plan: &MiningPlan,
) -> Result<NodeId> {
    if plan.pairs() == 0 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let view_dim = g.shape(anchor_u)[1];
    let dims = psi_dims(view_dim);
    let a = g.gather_rows(anchor_u, &plan.anchor_rows)?;
    let a = mlp(g, "pred.psi", &dims, a)?;
    let prediction = mlp(g, "pred.theta", &THETA_DIMS, a)?;
    let m = g.gather_rows(mined_u, &plan.mined_rows)?;
    let m = mlp(g, "pred.psi", &dims, m)?;
    let target = g.stop_gradient(m)?;
    let d = g.squared_distance(prediction, target)?;
    Ok(g.sum(d)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffcore::Inputs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn distances_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = random(&mut rng, &[3, 4]);
        let d = centroid_distances(&e);
        for k in 0..3 {
            assert_eq!(d.row(k)[k], 0.0);
            for l in 0..3 {
                let mut s = 0.0;
                for j in 0..4 {
                    s += (e.row(k)[j] - e.row(l)[j]).powi(2);
                }
                assert!((d.row(k)[l] - s).abs() < 1e-15);
            }
        }
        let unit = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(centroid_distances(&unit).row(0)[1], 2.0);
    }

    #[test]
    fn hard_assign_cases() {
        let one_hot = Tensor::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(hard_assign(&one_hot), vec![1, 0]);
        assert_eq!(hard_assign(&Tensor::filled(&[1, 4], 0.25)), vec![0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random(&mut rng, &[5, 3]);
        let scan: Vec<usize> = (0..5)
            .map(|i| {
                let r = q.row(i);
                let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                r.iter().position(|&x| x == m).unwrap()
            })
            .collect();
        assert_eq!(hard_assign(&q), scan);
    }

    #[test]
    fn collinear_neighbors() {
        // Centroids at 0, 1 and 2 on a line: from cluster 0, distances 1 and 4.
        let e = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let d = centroid_distances(&e);
        assert_eq!(neighbor_clusters(&d, 0, 2, &[1, 1, 1]), vec![1, 2]);
        assert_eq!(neighbor_clusters(&d, 0, 1, &[1, 1, 1]), vec![1]);
        assert!(neighbor_clusters(&d, 0, 2, &[3, 0, 0]).is_empty());
    }

    #[test]
    fn neighbors_match_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let e = random(&mut rng, &[8, 3]);
            let d = centroid_distances(&e);
            let occ: Vec<usize> = (0..8).map(|_| rng.gen_range(0..3)).collect();
            let c = rng.gen_range(0..8);
            let mut oracle: Vec<(f64, usize)> = (0..8)
                .filter(|&l| l != c && occ[l] > 0)
                .map(|l| (d.row(c)[l], l))
                .collect();
            oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want: Vec<usize> = oracle.into_iter().take(3).map(|x| x.1).collect();
            assert_eq!(neighbor_clusters(&d, c, 3, &occ), want);
        }
    }

    #[test]
    fn mined_members_are_uniform_within_cluster() {
        // Batch: member 0 in cluster 0, members 1..=4 in cluster 1.
        let labels = [0, 1, 1, 1, 1];
        let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let d = centroid_distances(&e);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let mut counts = [0usize; 5];
        let mut total = 0;
        while total < 100_000 {
            let plan = plan_mining(&labels, &d, 1, 1, &mut rng).unwrap();
            if plan.anchor_rows.first() == Some(&0) {
                counts[plan.mined_rows[0]] += 1;
                total += 1;
            }
        }
        let p = 0.25;
        let sigma = (total as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts[1..] {
            assert!(
                (c as f64 - total as f64 * p).abs() <= 3.0 * sigma,
                "{counts:?}"
            );
        }
    }

    fn tiny_params(view_dim: usize) -> ParamSet {
        let mut p = ParamSet::new();
        init_pred_branch(&mut p, view_dim, &mut ChaCha8Rng::seed_from_u64(4));
        p
    }

    #[test]
    fn identity_predictor_on_equal_views_gives_zero() {
        let mut p = tiny_params(4);
        // θ_pred = identity: ReLU hidden layer passes non-negative ψ outputs unchanged.
        let mut eye = Tensor::zeros(&[32, 32]);
        for i in 0..32 {
            eye.data_mut()[i * 32 + i] = 1.0;
        }
        p.insert("pred.theta.l0.w", eye.clone());
        p.insert("pred.theta.l1.w", eye);
        p.insert("pred.theta.l0.b", Tensor::zeros(&[32]));
        p.insert("pred.theta.l1.b", Tensor::zeros(&[32]));
        let psi_b = p
            .get("pred.psi.l1.b")
            .unwrap()
            .data()
            .iter()
            .map(|x| x.abs() + 1.0)
            .collect();
        p.insert("pred.psi.l1.b", Tensor::vector(psi_b));
        p.insert("pred.psi.l1.w", Tensor::zeros(&[64, 32]));
        let mut g = Graph::new();
        let u = g.input("u", &[2, 4]);
        let plan = MiningPlan {
            anchor_rows: vec![0, 1],
            mined_rows: vec![1, 0],
            anchors: 2,
            skipped: 0,
        };
        let loss = prediction_loss_graph(&mut g, u, u, &plan).unwrap();
        let row = vec![0.3, -0.2, 0.9, 0.1];
        let inputs = Inputs::new().with("u", Tensor::from_rows(&[row.clone(), row]).unwrap());
        assert_eq!(g.evaluate(&p, &inputs).unwrap().scalar(loss), 0.0);
    }

    #[test]
    fn mined_branch_receives_no_gradient() {
        let p = tiny_params(4);
        let mut g = Graph::new();
        let a = g.differentiable_input("anchor", &[2, 4]);
        let m = g.differentiable_input("mined", &[2, 4]);
        let plan = MiningPlan {
            anchor_rows: vec![0],
            mined_rows: vec![1],
            anchors: 1,
            skipped: 0,
        };
        let loss = prediction_loss_graph(&mut g, a, m, &plan).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = Inputs::new()
            .with("anchor", random(&mut rng, &[2, 4]))
            .with("mined", random(&mut rng, &[2, 4]));
        let (_, grads) = g.value_and_grad(&p, &inputs, loss).unwrap();
        assert!(grads
            .input("mined")
            .is_none_or(|t| t.data().iter().all(|&x| x == 0.0)));
        assert!(grads
            .input("anchor")
            .unwrap()
            .data()
            .iter()
            .any(|&x| x != 0.0));
    }

    #[test]
    fn single_pair_matches_scalar_oracle() {
        let p = tiny_params(3);
        let mut g = Graph::new();
        let u = g.input("u", &[2, 3]);
        let plan = MiningPlan {
            anchor_rows: vec![0],
            mined_rows: vec![1],
            anchors: 1,
            skipped: 0,
        };
        let loss = prediction_loss_graph(&mut g, u, u, &plan).unwrap();
        let rows = [vec![0.5, -1.0, 0.25], vec![-0.3, 0.8, 0.1]];
        let value = g
            .evaluate(
                &p,
                &Inputs::new().with("u", Tensor::from_rows(&rows).unwrap()),
            )
            .unwrap()
            .scalar(loss);

        let layer = |x: &[f64], w: &str, b: &str, relu: bool| -> Vec<f64> {
            let w = p.get(w).unwrap();
            let b = p.get(b).unwrap().data();
            let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
            (0..n_out)
                .map(|j| {
                    let s = b[j]
                        + (0..n_in)
                            .map(|i| x[i] * w.data()[i * n_out + j])
                            .sum::<f64>();
                    if relu {
                        s.max(0.0)
                    } else {
                        s
                    }
                })
                .collect()
        };
        let psi = |x: &[f64]| {
            let h = layer(x, "pred.psi.l0.w", "pred.psi.l0.b", true);
            layer(&h, "pred.psi.l1.w", "pred.psi.l1.b", false)
        };
        let theta = |x: &[f64]| {
            let h = layer(x, "pred.theta.l0.w", "pred.theta.l0.b", true);
            layer(&h, "pred.theta.l1.w", "pred.theta.l1.b", false)
        };
        let w = theta(&psi(&rows[0]));
        let v = psi(&rows[1]);
        let want: f64 = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!((value - want).abs() < 1e-12, "{value} vs {want}");
    }

    #[test]
    fn isolated_anchor_is_skipped() {
        let labels = [2, 2, 2];
        let d = centroid_distances(&Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap());
        let plan = plan_mining(&labels, &d, 4, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(plan.pairs(), 0);
        assert_eq!(plan.skipped, 4);
    }
}
