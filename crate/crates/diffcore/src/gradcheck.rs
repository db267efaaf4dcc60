//! Central finite-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::exec::{Evaluation, Inputs};
use crate::graph::{Graph, NodeId, Op};
use crate::params::ParamSet;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative errors. Keeps round-off on near-zero
/// gradients from dominating the report.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<32} n={:<6} max_rel={:.3e} max_abs={:.3e}",
                p.name, p.coordinates, p.max_relative_error, p.max_absolute_error
            )?;
        }
        write!(
            f,
            "{} (tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.tolerance
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares analytic gradients of `loss` against central differences for
/// every parameter the graph references.
pub fn grad_check(
    graph: &Graph,
    params: &ParamSet,
    inputs: &Inputs,
    loss: NodeId,
    tolerance: f64,
) -> Result<GradCheckReport> {
    grad_check_coords(graph, params, inputs, loss, tolerance, &mut |_, n| {
        (0..n).collect()
    })
}

/// Like [`grad_check`], but only probes the coordinates `select(name, len)`
/// returns for each parameter. Useful when full sweeps are too slow.
pub fn grad_check_coords(
    graph: &Graph,
    params: &ParamSet,
    inputs: &Inputs,
    loss: NodeId,
    tolerance: f64,
    select: &mut dyn FnMut(&str, usize) -> Vec<usize>,
) -> Result<GradCheckReport> {
    let eval = graph.evaluate(params, inputs)?;
    let grads = graph.backward(&eval, loss)?;
    let mut names: Vec<&str> = graph.param_names();
    names.sort_unstable();
    names.dedup();

    let mut work = params.clone();
    let mut reports = Vec::with_capacity(names.len());
    for name in names {
        // Parameters the loss does not depend on get no entry; their true
        // gradient is zero and the differences should agree.
        let analytic = match grads.param(name) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; work.get(name).expect("bound param").len()],
        };
        let coords = select(name, analytic.len());
        let mut max_rel = 0.0_f64;
        let mut max_abs = 0.0_f64;
        for &i in &coords {
            let a = analytic[i];
            let original = work.get(name).expect("bound param").data()[i];
            let mut probe = |delta: f64| -> Result<f64> {
                work.get_mut(name).unwrap().data_mut()[i] = original + delta;
                Ok(graph.evaluate(&work, inputs)?.scalar(loss))
            };
            let plus = probe(FD_STEP)?;
            let minus = probe(-FD_STEP)?;
            work.get_mut(name).unwrap().data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        reports.push(ParamCheck {
            name: name.to_string(),
            coordinates: coords.len(),
            max_relative_error: max_rel,
            max_absolute_error: max_abs,
        });
    }
    let passed = reports.iter().all(|r| r.max_relative_error < tolerance);
    Ok(GradCheckReport {
        params: reports,
        tolerance,
        passed,
    })
}

/// Copy of `graph` with every stop-gradient node replaced by a constant
/// holding its value in `eval`. Central differences on the copy measure the
/// gradient that `backward` reports for the original.
pub fn freeze_stop_gradients(graph: &Graph, eval: &Evaluation) -> Graph {
    let mut frozen = graph.clone();
    for (i, node) in frozen.nodes.iter_mut().enumerate() {
        if matches!(node.op, Op::StopGradient(_)) {
            node.op = Op::Constant(eval.value(NodeId(i)).clone());
        }
    }
    frozen
}

/// Distance of the evaluated point from the nearest non-differentiable kink
/// (relu at 0, clamp bounds, ties in `minimum`). Central differences are only
/// meaningful when this exceeds the finite-difference step by a wide margin.
pub fn kink_margin(graph: &Graph, eval: &Evaluation) -> f64 {
    let mut margin = f64::INFINITY;
    for node in &graph.nodes {
        match &node.op {
            Op::Relu(x) => {
                for v in eval.value(*x).data() {
                    margin = margin.min(v.abs());
                }
            }
            Op::Clamp { x, lo, hi } => {
                for v in eval.value(*x).data() {
                    margin = margin.min((v - lo).abs()).min((v - hi).abs());
                }
            }
            Op::Minimum(a, b) => {
                for (p, q) in eval.value(*a).data().iter().zip(eval.value(*b).data()) {
                    margin = margin.min((p - q).abs());
                }
            }
            _ => {}
        }
    }
    margin
}
