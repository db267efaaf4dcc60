use std::collections::BTreeMap;

use diffcore::Tensor;

use crate::error::{Error, Result};

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean silhouette coefficient with Euclidean distances. Points alone in
/// their cluster score 0.
pub fn silhouette(points: &Tensor, labels: &[usize]) -> Result<f64> {
    let n = points.rows();
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            what: "silhouette labels",
            left: labels.len(),
            right: n,
        });
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    if members.len() < 2 {
        return Err(Error::SingleCluster);
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = &members[&labels[i]];
        if own.len() == 1 {
            continue;
        }
        let mean_to = |idx: &[usize]| {
            let s: f64 = idx
                .iter()
                .filter(|&&k| k != i)
                .map(|&k| distance(points.row(i), points.row(k)))
                .sum();
            s / idx.iter().filter(|&&k| k != i).count() as f64
        };
        let a = mean_to(own);
        let b = members
            .iter()
            .filter(|(&l, _)| l != labels[i])
            .map(|(_, idx)| mean_to(idx))
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}
