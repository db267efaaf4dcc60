//! Parameter initialisation and graph builders shared by every network.

use diffcore::{Graph, NodeId, ParamSet, Result, Tensor};
use rand::Rng;

/// Uniform `±1/sqrt(fan_in)` initialisation.
pub fn uniform_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Parameters `{prefix}.l{i}.w` (`[in, out]`) and `{prefix}.l{i}.b` for a
/// fully connected stack with layer widths `dims`.
pub fn init_mlp<R: Rng + ?Sized>(params: &mut ParamSet, prefix: &str, dims: &[usize], rng: &mut R) {
    for (i, pair) in dims.windows(2).enumerate() {
        params.insert(
            format!("{prefix}.l{i}.w"),
            uniform_tensor(rng, &[pair[0], pair[1]], pair[0]),
        );
        params.insert(
            format!("{prefix}.l{i}.b"),
            uniform_tensor(rng, &[pair[1]], pair[0]),
        );
    }
}

/// Affine layers with ReLU between them and a linear output.
pub fn mlp(g: &mut Graph, prefix: &str, dims: &[usize], x: NodeId) -> Result<NodeId> {
    let mut h = x;
    let layers = dims.len() - 1;
    for (i, pair) in dims.windows(2).enumerate() {
        let w = g.param(&format!("{prefix}.l{i}.w"), &[pair[0], pair[1]]);
        let b = g.param(&format!("{prefix}.l{i}.b"), &[pair[1]]);
        h = g.affine(h, w, b)?;
        if i + 1 < layers {
            h = g.relu(h)?;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffcore::Inputs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_matches_hand_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamSet::new();
        init_mlp(&mut p, "m", &[3, 4, 2], &mut rng);
        let mut g = Graph::new();
        let x = g.input("x", &[1, 3]);
        let y = mlp(&mut g, "m", &[3, 4, 2], x).unwrap();
        let input = [0.3, -1.2, 0.7];
        let e = g
            .evaluate(
                &p,
                &Inputs::new().with("x", Tensor::new(vec![1, 3], input.to_vec()).unwrap()),
            )
            .unwrap();
        let w0 = p.get("m.l0.w").unwrap().data();
        let b0 = p.get("m.l0.b").unwrap().data();
        let w1 = p.get("m.l1.w").unwrap().data();
        let b1 = p.get("m.l1.b").unwrap().data();
        let h: Vec<f64> = (0..4)
            .map(|j| (b0[j] + (0..3).map(|i| input[i] * w0[i * 4 + j]).sum::<f64>()).max(0.0))
            .collect();
        for k in 0..2 {
            let want = b1[k] + (0..4).map(|j| h[j] * w1[j * 2 + k]).sum::<f64>();
            assert!((e.value(y).data()[k] - want).abs() < 1e-12);
        }
    }
}
