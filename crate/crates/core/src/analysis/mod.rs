//! Diagnostics: cluster quality, temporal consistency, the perturbation
//! theorem check and Wasserstein-1 distances between views.

mod probe;
mod silhouette;
mod wasserstein;

pub use probe::{bisim_consistency_probe, view_distribution, BisimReport};
pub use silhouette::silhouette;
pub use wasserstein::{
    wasserstein1, wasserstein1_line, DiscreteDistribution, GroundMetric, MAX_SUPPORT,
};

use diffcore::Tensor;

use crate::error::{Error, Result};

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm {
            what: "centroids",
            row: if na == 0.0 { 0 } else { 1 },
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Cosine similarity between the centroids of consecutive window labels.
pub fn temporal_cluster_similarity(labels: &[usize], e: &Tensor) -> Result<Vec<f64>> {
    let c = e.rows();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LengthMismatch {
            what: "label vs centroid count",
            left: bad,
            right: c,
        });
    }
    labels
        .windows(2)
        .map(|w| cosine(e.row(w[0]), e.row(w[1])))
        .collect()
}

/// Result of the directional perturbation check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PerturbationCheck {
    /// `(e_j - e_j') . delta >= 0` for every other centroid `j'`.
    pub holds_condition: bool,
    /// `v + delta` keeps the argmax cluster of `v`.
    pub same_argmax: bool,
}

fn argmax_dot(e: &Tensor, v: &[f64]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for j in 0..e.rows() {
        let s: f64 = e.row(j).iter().zip(v).map(|(a, b)| a * b).sum();
        if s > best.1 {
            best = (j, s);
        }
    }
    best.0
}

/// Evaluates the half-plane condition and the argmax outcome on raw dot
/// products `E v`. Ties resolve to the lowest index.
pub fn check_perturbation_invariance(
    e: &Tensor,
    v: &[f64],
    delta: &[f64],
) -> Result<PerturbationCheck> {
    let d = e.last_dim();
    for (what, len) in [("v", v.len()), ("delta", delta.len())] {
        if len != d {
            return Err(Error::LengthMismatch {
                what,
                left: len,
                right: d,
            });
        }
    }
    let j = argmax_dot(e, v);
    let ej = e.row(j);
    let holds_condition = (0..e.rows()).filter(|&k| k != j).all(|k| {
        let margin: f64 = ej
            .iter()
            .zip(e.row(k))
            .zip(delta)
            .map(|((a, b), x)| (a - b) * x)
            .sum();
        margin >= 0.0
    });
    let moved: Vec<f64> = v.iter().zip(delta).map(|(a, b)| a + b).collect();
    Ok(PerturbationCheck {
        holds_condition,
        same_argmax: argmax_dot(e, &moved) == j,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::normalize_rows_in_place;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::new(vec![n, n], data).unwrap()
    }

    #[test]
    fn constant_label_gives_unit_similarity() {
        let mut e = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
        normalize_rows_in_place(&mut e);
        let s = temporal_cluster_similarity(&[1, 1, 1, 1], &e).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn alternating_orthogonal_centroids_give_zero() {
        let s = temporal_cluster_similarity(&[0, 2, 0, 2, 0], &identity(3)).unwrap();
        assert_eq!(s, vec![0.0; 4]);
    }

    #[test]
    fn similarity_matches_direct_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = Tensor::new(
            vec![5, 6],
            (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..20).map(|_| rng.gen_range(0..5)).collect();
        let s = temporal_cluster_similarity(&labels, &e).unwrap();
        for (t, w) in labels.windows(2).enumerate() {
            let (a, b) = (e.row(w[0]), e.row(w[1]));
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((s[t] - dot / (na * nb)).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        assert!(temporal_cluster_similarity(&[0, 3], &identity(3)).is_err());
    }

    #[test]
    fn zero_perturbation_keeps_everything() {
        let e = identity(3);
        let r = check_perturbation_invariance(&e, &[0.1, 0.9, 0.2], &[0.0; 3]).unwrap();
        assert!(r.holds_condition && r.same_argmax);
    }

    #[test]
    fn push_toward_own_centroid_keeps_cluster() {
        let e = identity(4);
        let v = [0.1, 0.2, 0.8, 0.3];
        let delta: Vec<f64> = e.row(2).iter().map(|x| 2.5 * x).collect();
        let r = check_perturbation_invariance(&e, &v, &delta).unwrap();
        assert!(r.holds_condition && r.same_argmax);
    }

    #[test]
    fn large_push_toward_other_centroid_breaks_condition() {
        let e = identity(3);
        let r = check_perturbation_invariance(&e, &[0.1, 0.9, 0.2], &[50.0, 0.0, 0.0]).unwrap();
        assert!(!r.holds_condition);
        assert!(!r.same_argmax);
    }

    #[test]
    fn mismatched_lengths_are_errors() {
        assert!(check_perturbation_invariance(&identity(3), &[1.0, 0.0], &[0.0; 3]).is_err());
    }
}
