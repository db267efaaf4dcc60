use diffcore::Tensor;

use crate::error::{Error, Result};

/// Largest support the exact solver accepts.
pub const MAX_SUPPORT: usize = 64;

const MASS_TOL: f64 = 1e-9;
const FLOW_EPS: f64 = 1e-15;

/// Probability vector over `0..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("distribution"));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InfeasibleMarginals(format!(
                "entry {i} is {}",
                probs[i]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InfeasibleMarginals(format!("mass sums to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Symmetric non-negative cost matrix with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundMetric {
    n: usize,
    d: Vec<f64>,
}

impl GroundMetric {
    pub fn new(d: &Tensor) -> Result<Self> {
        let shape = d.shape();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(Error::InvalidMetric(format!(
                "shape {shape:?} is not square"
            )));
        }
        let n = shape[0];
        let data = d.data();
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::InvalidMetric(format!(
                    "diagonal entry {i} is nonzero"
                )));
            }
            for j in 0..n {
                let x = data[i * n + j];
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::InvalidMetric(format!("entry ({i}, {j}) is {x}")));
                }
                if x != data[j * n + i] {
                    return Err(Error::InvalidMetric(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            n,
            d: data.to_vec(),
        })
    }

    /// `|i - j|` on `0..n`.
    pub fn line(n: usize) -> Self {
        let d = (0..n * n).map(|k| (k / n).abs_diff(k % n) as f64).collect();
        Self { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

struct Arc {
    to: usize,
    cap: f64,
    cost: f64,
}

/// Exact optimal transport cost, solved as a min-cost flow with successive
/// shortest paths (Bellman-Ford on the residual graph).
pub fn wasserstein1(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
    d: &GroundMetric,
) -> Result<f64> {
    let n = p.len();
    if q.len() != n || d.len() != n {
        return Err(Error::LengthMismatch {
            what: "wasserstein supports",
            left: n,
            right: if q.len() != n { q.len() } else { d.len() },
        });
    }
    if n > MAX_SUPPORT {
        return Err(Error::SupportTooLarge {
            size: n,
            limit: MAX_SUPPORT,
        });
    }
    let (src, sink) = (2 * n, 2 * n + 1);
    let mut arcs: Vec<Arc> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); 2 * n + 2];
    let mut add = |arcs: &mut Vec<Arc>, a: usize, b: usize, cap: f64, cost: f64| {
        adj[a].push(arcs.len());
        arcs.push(Arc { to: b, cap, cost });
        adj[b].push(arcs.len());
        arcs.push(Arc {
            to: a,
            cap: 0.0,
            cost: -cost,
        });
    };
    for i in 0..n {
        add(&mut arcs, src, i, p.probs()[i], 0.0);
        add(&mut arcs, n + i, sink, q.probs()[i], 0.0);
        for j in 0..n {
            add(&mut arcs, i, n + j, f64::INFINITY, d.get(i, j));
        }
    }

    let mut remaining: f64 = p.probs().iter().sum::<f64>().min(q.probs().iter().sum());
    let mut cost = 0.0;
    let nodes = 2 * n + 2;
    while remaining > FLOW_EPS {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut via: Vec<Option<usize>> = vec![None; nodes];
        dist[src] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if dist[u].is_infinite() {
                    continue;
                }
                for &a in &adj[u] {
                    let arc = &arcs[a];
                    if arc.cap > FLOW_EPS && dist[u] + arc.cost < dist[arc.to] - 1e-15 {
                        dist[arc.to] = dist[u] + arc.cost;
                        via[arc.to] = Some(a);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink].is_infinite() {
            if remaining > MASS_TOL {
                return Err(Error::InfeasibleMarginals(format!(
                    "{remaining} mass cannot be routed"
                )));
            }
            break;
        }
        let mut push = remaining;
        let mut v = sink;
        while let Some(a) = via[v] {
            push = push.min(arcs[a].cap);
            v = arcs[a ^ 1].to;
        }
        let mut v = sink;
        while let Some(a) = via[v] {
            arcs[a].cap -= push;
            arcs[a ^ 1].cap += push;
            cost += push * arcs[a].cost;
            v = arcs[a ^ 1].to;
        }
        remaining -= push;
    }
    Ok(cost.max(0.0))
}

/// Closed-form W1 under `|i - j|`: the L1 distance between the two CDFs.
pub fn wasserstein1_line(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            what: "wasserstein supports",
            left: p.len(),
            right: q.len(),
        });
    }
    let mut acc = 0.0;
    let mut total = 0.0;
    for (a, b) in p.iter().zip(q) {
        acc += a - b;
        total += acc.abs();
    }
    // The final term is the mass difference, which is zero for distributions.
    Ok(total - acc.abs())
}
