use diffcore::Tensor;

use super::wasserstein::wasserstein1_line;
use crate::error::{Error, Result};

/// Mean W1 between same-cluster and cross-cluster view pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct BisimReport {
    pub same_cluster_mean: f64,
    pub cross_cluster_mean: f64,
    pub same_pairs: usize,
    pub cross_pairs: usize,
}

impl BisimReport {
    /// Same-cluster views are at least as close as cross-cluster ones.
    /// Vacuously true when either pair set is empty.
    pub fn consistent(&self) -> bool {
        self.same_pairs == 0
            || self.cross_pairs == 0
            || self.same_cluster_mean <= self.cross_cluster_mean
    }
}

/// Softmax over the coordinates of a view.
pub fn view_distribution(view: &[f64]) -> Vec<f64> {
    let m = view.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = view.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|x| x / s).collect()
}

/// Compares W1 distances (ground metric `|i - j|` on coordinate indices)
/// within and across clusters over all view pairs.
pub fn bisim_consistency_probe(views: &Tensor, labels: &[usize]) -> Result<BisimReport> {
    let n = views.rows();
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            what: "probe labels",
            left: labels.len(),
            right: n,
        });
    }
    let dists: Vec<Vec<f64>> = (0..n).map(|i| view_distribution(views.row(i))).collect();
    let (mut same, mut cross) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..n {
        for j in i + 1..n {
            let w = wasserstein1_line(&dists[i], &dists[j])?;
            let slot = if labels[i] == labels[j] {
                &mut same
            } else {
                &mut cross
            };
            slot.0 += w;
            slot.1 += 1;
        }
    }
    let mean = |(s, c): (f64, usize)| if c == 0 { 0.0 } else { s / c as f64 };
    Ok(BisimReport {
        same_cluster_mean: mean(same),
        cross_cluster_mean: mean(cross),
        same_pairs: same.1,
        cross_pairs: cross.1,
    })
}
