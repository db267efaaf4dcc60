//! Prototype clustering branch: soft assignments, Sinkhorn balancing and the
//! swapped-prediction loss between balanced targets and projected log-scores.

use diffcore::{Graph, NodeId, ParamSet, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nets::init_mlp;

pub const PROJ_DIM: usize = 32;
const HIDDEN: usize = 64;

/// Layer widths of ψ_clust / ψ_pred for a view of `view_dim` entries.
pub fn psi_dims(view_dim: usize) -> [usize; 3] {
    [view_dim, HIDDEN, PROJ_DIM]
}

pub const THETA_DIMS: [usize; 3] = [PROJ_DIM, PROJ_DIM, PROJ_DIM];

/// ψ_clust, θ_clust and `C` unit-norm centroids.
pub fn init_cluster_branch<R: Rng + ?Sized>(
    params: &mut ParamSet,
    view_dim: usize,
    clusters: usize,
    rng: &mut R,
) {
    assert!(clusters >= 2, "need at least two clusters");
    init_mlp(params, "clust.psi", &psi_dims(view_dim), rng);
    init_mlp(params, "clust.theta", &THETA_DIMS, rng);
    let data: Vec<f64> = (0..clusters * PROJ_DIM)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let mut e = Tensor::new(vec![clusters, PROJ_DIM], data).expect("centroid shape");
    normalize_rows_in_place(&mut e);
    params.insert("clust.E", e);
}

pub fn normalize_rows_in_place(t: &mut Tensor) {
    let d = t.last_dim();
    for row in t.data_mut().chunks_mut(d) {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
}

/// Rescales every centroid to unit length; call after each optimizer step.
pub fn renormalize_centroids(params: &mut ParamSet) {
    if let Some(e) = params.get_mut("clust.E") {
        normalize_rows_in_place(e);
    }
}

fn row_norms(what: &'static str, t: &Tensor) -> Result<Vec<f64>> {
    (0..t.rows())
        .map(|i| {
            let n = t.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                Ok(n)
            } else {
                Err(Error::ZeroNorm { what, row: i })
            }
        })
        .collect()
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    row.iter_mut().for_each(|x| *x /= s);
}

/// `Q_ic = softmax_c(cos(v_i, e_c) / β)`.
pub fn soft_assign(v: &Tensor, e: &Tensor, beta: f64) -> Result<Tensor> {
    check_cols("soft_assign", v, e)?;
    let vn = row_norms("views", v)?;
    let en = row_norms("centroids", e)?;
    let (b, c) = (v.rows(), e.rows());
    let mut q = vec![0.0; b * c];
    for i in 0..b {
        let row = &mut q[i * c..(i + 1) * c];
        for (k, slot) in row.iter_mut().enumerate() {
            let dot: f64 = v.row(i).iter().zip(e.row(k)).map(|(x, y)| x * y).sum();
            *slot = dot / (vn[i] * en[k]) / beta;
        }
        softmax_in_place(row);
    }
    Ok(Tensor::new(vec![b, c], q)?)
}

fn check_cols(what: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.last_dim() != b.last_dim() {
        return Err(Error::LengthMismatch {
            what,
            left: a.last_dim(),
            right: b.last_dim(),
        });
    }
    Ok(())
}

/// Factor `f` with `|f - 1|` inside the rounding error of an `n`-term sum is taken as exactly 1.
fn snap(f: f64, n: usize) -> f64 {
    if (f - 1.0).abs() <= n as f64 * f64::EPSILON {
        1.0
    } else {
        f
    }
}

/// Alternating column (to `B/C`) and row (to 1) rescaling, `iters` rounds,
/// finishing on rows. `iters = 0` only row-normalizes.
pub fn sinkhorn(q: &Tensor, iters: usize) -> Result<Tensor> {
    if q.shape().len() != 2 || q.is_empty() {
        return Err(Error::Empty("assignment matrix"));
    }
    let (b, c) = (q.rows(), q.last_dim());
    for i in 0..b {
        for (k, &x) in q.row(i).iter().enumerate() {
            if x.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::NonPositive {
                    what: "sinkhorn input",
                    row: i,
                    col: k,
                });
            }
        }
    }
    let mut m = q.data().to_vec();
    let target = b as f64 / c as f64;
    let normalize_rows = |m: &mut [f64]| {
        for row in m.chunks_mut(c) {
            let s: f64 = row.iter().sum();
            let f = snap(1.0 / s, c);
            if f != 1.0 {
                row.iter_mut().for_each(|x| *x *= f);
            }
        }
    };
    for _ in 0..iters {
        for k in 0..c {
            let s: f64 = (0..b).map(|i| m[i * c + k]).sum();
            let f = snap(target / s, b);
            if f != 1.0 {
                (0..b).for_each(|i| m[i * c + k] *= f);
            }
        }
        normalize_rows(&mut m);
    }
    if iters == 0 {
        normalize_rows(&mut m);
    }
    Ok(Tensor::new(vec![b, c], m)?)
}

/// `P_ic = log softmax_c(w_i · e_c / β)` on raw dot products.
pub fn log_assign(w: &Tensor, e: &Tensor, beta: f64) -> Result<Tensor> {
    check_cols("log_assign", w, e)?;
    let (b, c) = (w.rows(), e.rows());
    let mut p = vec![0.0; b * c];
    for i in 0..b {
        let row = &mut p[i * c..(i + 1) * c];
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = w
                .row(i)
                .iter()
                .zip(e.row(k))
                .map(|(x, y)| x * y)
                .sum::<f64>()
                / beta;
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|x| *x -= lse);
    }
    Ok(Tensor::new(vec![b, c], p)?)
}

/// `-(1/B) Σ_i Σ_c Q̃_ic P_ic`.
pub fn clustering_loss(q_tilde: &Tensor, p: &Tensor) -> Result<f64> {
    if q_tilde.shape() != p.shape() || q_tilde.rows() == 0 {
        return Err(Error::LengthMismatch {
            what: "clustering loss operands",
            left: q_tilde.len(),
            right: p.len(),
        });
    }
    let total: f64 = q_tilde
        .data()
        .iter()
        .zip(p.data())
        .map(|(q, l)| q * l)
        .sum();
    Ok(-total / q_tilde.rows() as f64)
}

/// Graph nodes for `L_clust` given projections `w: [B, 32]` and fixed targets.
pub fn clustering_loss_graph(
    g: &mut Graph,
    w: NodeId,
    e: NodeId,
    q_tilde: Tensor,
    beta: f64,
) -> Result<NodeId> {
    let scores = g.matmul_t(w, e)?;
    let scaled = g.scale(scores, 1.0 / beta)?;
    let p = g.log_softmax(scaled)?;
    let targets = g.constant(q_tilde);
    let ce = g.cross_entropy(targets, p)?;
    Ok(g.mean(ce)?)
}

/// Number of batch members with each label.
pub fn occupancy(labels: &[usize], clusters: usize) -> Vec<usize> {
    let mut counts = vec![0; clusters];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    fn softmax2(a: f64, b: f64) -> [f64; 2] {
        let m = a.max(b);
        let (x, y) = ((a - m).exp(), (b - m).exp());
        [x / (x + y), y / (x + y)]
    }

    #[test]
    fn sharp_temperature_gives_one_hot() {
        let e = t(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let v = t(&[vec![0.0, 1.0, 0.0]]);
        let q = soft_assign(&v, &e, 1e-3).unwrap();
        assert!(q.row(0)[1] > 1.0 - 1e-6);
    }

    #[test]
    fn identical_centroids_give_uniform_rows() {
        let e = t(&vec![vec![0.6, 0.8]; 4]);
        let v = t(&[vec![3.0, -1.0], vec![0.1, 2.0]]);
        let q = soft_assign(&v, &e, 0.3).unwrap();
        assert!(q.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn two_by_two_hand_case() {
        let e = t(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let v = t(&[vec![2.0, 0.0], vec![0.0, 5.0]]);
        let q = soft_assign(&v, &e, 0.3).unwrap();
        let r0 = softmax2(1.0 / 0.3, 0.0);
        let r1 = softmax2(0.0, 1.0 / 0.3);
        for k in 0..2 {
            assert!((q.row(0)[k] - r0[k]).abs() < 1e-15);
            assert!((q.row(1)[k] - r1[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_norm_rows_are_rejected() {
        let e = t(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let v = t(&[vec![1.0, 1.0]]);
        assert!(matches!(
            soft_assign(&v, &e, 0.3),
            Err(Error::ZeroNorm {
                what: "centroids",
                row: 1
            })
        ));
        assert!(matches!(
            soft_assign(&e, &v, 0.3),
            Err(Error::ZeroNorm {
                what: "views",
                row: 1
            })
        ));
    }

    #[test]
    fn uniform_input_is_a_fixed_point() {
        for (b, c) in [(64, 8), (7, 3), (5, 200), (3, 10)] {
            let q = Tensor::filled(&[b, c], 1.0 / c as f64);
            for iters in [0, 1, 3, 50] {
                assert_eq!(sinkhorn(&q, iters).unwrap(), q, "{b}x{c} iters {iters}");
            }
        }
    }

    #[test]
    fn one_sided_rows_balance_after_three_rounds() {
        let q = t(&vec![vec![0.9, 0.1]; 4]);
        let out = sinkhorn(&q, 3).unwrap();
        for k in 0..2 {
            let s: f64 = (0..4).map(|i| out.row(i)[k]).sum();
            assert!((s - 2.0).abs() <= 0.2, "column {k} sums to {s}");
        }
        // With identical rows one column pass already balances exactly.
        let mut by_hand = [0.9 * 2.0 / 3.6, 0.1 * 2.0 / 0.4];
        let s = by_hand[0] + by_hand[1];
        by_hand.iter_mut().for_each(|x| *x /= s);
        assert!((out.row(0)[0] - by_hand[0]).abs() < 1e-12);
    }

    #[test]
    fn zero_iterations_only_normalize_rows() {
        let q = t(&[vec![1.0, 3.0], vec![2.0, 2.0]]);
        let out = sinkhorn(&q, 0).unwrap();
        assert_eq!(out.data(), &[0.25, 0.75, 0.5, 0.5]);
    }

    #[test]
    fn non_positive_entries_are_rejected() {
        let q = t(&[vec![0.5, 0.5], vec![1.0, 0.0]]);
        assert!(matches!(
            sinkhorn(&q, 3),
            Err(Error::NonPositive { row: 1, col: 1, .. })
        ));
        let q = t(&[vec![f64::NAN, 1.0]]);
        assert!(sinkhorn(&q, 3).is_err());
    }

    #[test]
    fn orthogonal_projection_gives_uniform_log_row() {
        let e = t(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let w = t(&[vec![0.0, 0.0, 4.0]]);
        let p = log_assign(&w, &e, 0.3).unwrap();
        assert!(p.data().iter().all(|&x| (x + 2f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn log_assign_hand_case() {
        let e = t(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let w = t(&[vec![2.0, 0.0]]);
        let p = log_assign(&w, &e, 1.0).unwrap();
        let s = 2f64.exp() / (2f64.exp() + 1.0);
        assert!((p.row(0)[0] - s.ln()).abs() < 1e-14);
        assert!((p.row(0)[1] - (1.0 - s).ln()).abs() < 1e-14);
    }

    #[test]
    fn log_assign_rows_exponentiate_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = Tensor::new(
            vec![6, 5],
            (0..30).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        )
        .unwrap();
        let e = Tensor::new(
            vec![4, 5],
            (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let p = log_assign(&w, &e, 0.3).unwrap();
        for i in 0..6 {
            let s: f64 = p.row(i).iter().map(|x| x.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_hand_cases() {
        let q = t(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p = t(&[
            vec![0.9f64.ln(), 0.1f64.ln()],
            vec![0.2f64.ln(), 0.8f64.ln()],
        ]);
        let l = clustering_loss(&q, &p).unwrap();
        assert!((l - 0.164_252_033_486_018).abs() < 1e-12, "{l}");
        let uq = Tensor::filled(&[3, 4], 0.25);
        let up = Tensor::filled(&[3, 4], -(4f64.ln()));
        assert!((clustering_loss(&uq, &up).unwrap() - 4f64.ln()).abs() < 1e-15);
        let eps: f64 = 1e-3;
        let one_hot = t(&[vec![0.0, 1.0]]);
        let near = t(&[vec![eps.ln(), (1.0 - eps).ln()]]);
        assert!((clustering_loss(&one_hot, &near).unwrap() - eps).abs() < 1e-6);
    }

    #[test]
    fn centroid_renormalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamSet::new();
        init_cluster_branch(&mut p, 8, 5, &mut rng);
        p.get_mut("clust.E")
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|x| *x *= 3.7);
        renormalize_centroids(&mut p);
        let e = p.get("clust.E").unwrap();
        for i in 0..5 {
            let n: f64 = e.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }
}
