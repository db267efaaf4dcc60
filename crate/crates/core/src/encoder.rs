//! Observation encoder φ, per-action FiLM conditioning and trajectory views.

use diffcore::{Graph, Inputs, NodeId, ParamSet, Tensor};
use rand::seq::index::sample;
use rand::Rng;

use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::nets::uniform_tensor;

pub const EMBED_DIM: usize = 64;
const CONV1: usize = 16;
const CONV2: usize = 32;
const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PADDING: usize = 1;
/// Observations encoded per graph evaluation when embedding large batches.
const ENCODE_CHUNK: usize = 256;

/// How keypoints are drawn from a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewMode {
    /// `T` distinct steps uniformly without replacement, sorted ascending.
    Sampled,
    /// `T` adjacent steps starting at a uniform offset.
    Consecutive,
}

/// Static architecture of φ for one task family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderSpec {
    pub obs_shape: [usize; 3],
    pub num_actions: usize,
}

fn conv_out(n: usize) -> usize {
    (n + 2 * PADDING - KERNEL) / STRIDE + 1
}

impl EncoderSpec {
    pub fn new(obs_shape: [usize; 3], num_actions: usize) -> Self {
        Self {
            obs_shape,
            num_actions,
        }
    }

    fn flat_dim(&self) -> usize {
        let [_, h, w] = self.obs_shape;
        CONV2 * conv_out(conv_out(h)) * conv_out(conv_out(w))
    }

    /// Fresh φ and FiLM parameters. FiLM scales start near 1 and shifts near 0.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let c = self.obs_shape[0];
        let mut p = ParamSet::new();
        let fan1 = c * KERNEL * KERNEL;
        let fan2 = CONV1 * KERNEL * KERNEL;
        p.insert(
            "phi.conv1.w",
            uniform_tensor(rng, &[CONV1, c, KERNEL, KERNEL], fan1),
        );
        p.insert("phi.conv1.b", uniform_tensor(rng, &[CONV1], fan1));
        p.insert(
            "phi.conv2.w",
            uniform_tensor(rng, &[CONV2, CONV1, KERNEL, KERNEL], fan2),
        );
        p.insert("phi.conv2.b", uniform_tensor(rng, &[CONV2], fan2));
        p.insert(
            "phi.fc.w",
            uniform_tensor(rng, &[self.flat_dim(), EMBED_DIM], self.flat_dim()),
        );
        p.insert(
            "phi.fc.b",
            uniform_tensor(rng, &[EMBED_DIM], self.flat_dim()),
        );
        let mut gamma = uniform_tensor(rng, &[self.num_actions, EMBED_DIM], 100);
        gamma.data_mut().iter_mut().for_each(|g| *g += 1.0);
        p.insert("film.gamma", gamma);
        p.insert(
            "film.beta",
            uniform_tensor(rng, &[self.num_actions, EMBED_DIM], 100),
        );
        p
    }

    /// φ applied to `obs: [n, C, H, W]`, giving `[n, 64]`.
    pub fn encode(&self, g: &mut Graph, obs: NodeId) -> diffcore::Result<NodeId> {
        let c = self.obs_shape[0];
        let n = g.shape(obs)[0];
        let w1 = g.param("phi.conv1.w", &[CONV1, c, KERNEL, KERNEL]);
        let b1 = g.param("phi.conv1.b", &[CONV1]);
        let w2 = g.param("phi.conv2.w", &[CONV2, CONV1, KERNEL, KERNEL]);
        let b2 = g.param("phi.conv2.b", &[CONV2]);
        let wf = g.param("phi.fc.w", &[self.flat_dim(), EMBED_DIM]);
        let bf = g.param("phi.fc.b", &[EMBED_DIM]);
        let h = g.conv2d(obs, w1, b1, STRIDE, PADDING)?;
        let h = g.relu(h)?;
        let h = g.conv2d(h, w2, b2, STRIDE, PADDING)?;
        let h = g.relu(h)?;
        let h = g.reshape(h, &[n, self.flat_dim()])?;
        g.affine(h, wf, bf)
    }

    /// `γ_a ⊙ e + β_a` row by row, `actions[i]` selecting the table row for row `i`.
    pub fn film(&self, g: &mut Graph, embedding: NodeId, actions: &[usize]) -> Result<NodeId> {
        if let Some(&a) = actions.iter().find(|&&a| a >= self.num_actions) {
            return Err(Error::ActionOutOfRange {
                action: a,
                num_actions: self.num_actions,
            });
        }
        let gamma = g.param("film.gamma", &[self.num_actions, EMBED_DIM]);
        let beta = g.param("film.beta", &[self.num_actions, EMBED_DIM]);
        let ga = g.gather_rows(gamma, actions)?;
        let ba = g.gather_rows(beta, actions)?;
        let scaled = g.mul(ga, embedding)?;
        Ok(g.add(scaled, ba)?)
    }

    /// Views for `b` trajectories from an observation input holding their
    /// `b * t` keypoints row-major (trajectory-major). Returns `[b, t * 64]`.
    pub fn views(
        &self,
        g: &mut Graph,
        obs: NodeId,
        actions: &[usize],
        t: usize,
        no_action: bool,
    ) -> Result<NodeId> {
        let rows = g.shape(obs)[0];
        if rows != actions.len() || t == 0 || !rows.is_multiple_of(t) {
            return Err(Error::LengthMismatch {
                what: "view keypoints",
                left: rows,
                right: actions.len(),
            });
        }
        let e = self.encode(g, obs)?;
        let e = if no_action {
            e
        } else {
            self.film(g, e, actions)?
        };
        Ok(g.reshape(e, &[rows / t, t * EMBED_DIM])?)
    }

    fn check_obs(&self, obs: &Tensor) -> Result<()> {
        if obs.shape() != self.obs_shape {
            return Err(Error::ObservationShape {
                expected: self.obs_shape.to_vec(),
                actual: obs.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Stacks observations into one `[n, C, H, W]` tensor.
    pub fn stack(&self, observations: &[&Tensor]) -> Result<Tensor> {
        let mut data =
            Vec::with_capacity(observations.len() * self.obs_shape.iter().product::<usize>());
        for o in observations {
            self.check_obs(o)?;
            data.extend_from_slice(o.data());
        }
        let [c, h, w] = self.obs_shape;
        Ok(Tensor::new(vec![observations.len(), c, h, w], data)?)
    }

    /// Embeddings `[n, 64]` for a batch of observations, evaluated in chunks.
    pub fn embed(&self, params: &ParamSet, observations: &[&Tensor]) -> Result<Tensor> {
        let mut out = Vec::with_capacity(observations.len() * EMBED_DIM);
        for chunk in observations.chunks(ENCODE_CHUNK) {
            let [c, h, w] = self.obs_shape;
            let mut g = Graph::new();
            let x = g.input("obs", &[chunk.len(), c, h, w]);
            let e = self.encode(&mut g, x)?;
            let eval = g.evaluate(params, &Inputs::new().with("obs", self.stack(chunk)?))?;
            out.extend_from_slice(eval.value(e).data());
        }
        Ok(Tensor::new(vec![observations.len(), EMBED_DIM], out)?)
    }

    pub fn encode_observation(&self, params: &ParamSet, obs: &Tensor) -> Result<Vec<f64>> {
        Ok(self.embed(params, &[obs])?.into_data())
    }

    pub fn film_condition(
        &self,
        params: &ParamSet,
        embedding: &[f64],
        action: usize,
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.input("e", &[1, EMBED_DIM]);
        let y = self.film(&mut g, x, &[action])?;
        let e = Tensor::new(vec![1, EMBED_DIM], embedding.to_vec())?;
        let eval = g.evaluate(params, &Inputs::new().with("e", e))?;
        Ok(eval.value(y).data().to_vec())
    }

    /// Numeric view of one trajectory.
    #[allow(clippy::too_many_arguments)]
    pub fn build_view<R: Rng + ?Sized>(
        &self,
        params: &ParamSet,
        trajectory: &[Transition],
        trajectory_id: usize,
        t: usize,
        mode: ViewMode,
        no_action: bool,
        rng: &mut R,
    ) -> Result<TrajectoryView> {
        let idx = sample_keypoints(trajectory.len(), t, mode, rng)?;
        let obs: Vec<&Tensor> = idx.iter().map(|&i| &trajectory[i].observation).collect();
        let actions: Vec<usize> = idx.iter().map(|&i| trajectory[i].action).collect();
        let [c, h, w] = self.obs_shape;
        let mut g = Graph::new();
        let x = g.input("obs", &[t, c, h, w]);
        let u = self.views(&mut g, x, &actions, t, no_action)?;
        let eval = g.evaluate(params, &Inputs::new().with("obs", self.stack(&obs)?))?;
        Ok(TrajectoryView {
            u: eval.value(u).data().to_vec(),
            source_indices: idx,
            trajectory_id,
        })
    }
}

/// Concatenated keypoint embeddings `u` of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryView {
    pub u: Vec<f64>,
    pub source_indices: Vec<usize>,
    pub trajectory_id: usize,
}

/// Keypoint indices into a trajectory of length `len`, strictly increasing.
pub fn sample_keypoints<R: Rng + ?Sized>(
    len: usize,
    t: usize,
    mode: ViewMode,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if t == 0 || t > len {
        return Err(Error::ViewLength {
            requested: t,
            length: len,
        });
    }
    Ok(match mode {
        ViewMode::Sampled => {
            let mut idx = sample(rng, len, t).into_vec();
            idx.sort_unstable();
            idx
        }
        ViewMode::Consecutive => {
            let start = rng.gen_range(0..=len - t);
            (start..start + t).collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> EncoderSpec {
        EncoderSpec::new([2, 6, 6], 3)
    }

    fn random_obs(rng: &mut ChaCha8Rng, s: &EncoderSpec) -> Tensor {
        let n: usize = s.obs_shape.iter().product();
        Tensor::new(
            s.obs_shape.to_vec(),
            (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn trajectory(rng: &mut ChaCha8Rng, s: &EncoderSpec, len: usize) -> Vec<Transition> {
        (0..len)
            .map(|_| Transition {
                observation: random_obs(rng, s),
                action: rng.gen_range(0..s.num_actions),
                reward: rng.gen_range(-1.0..1.0),
                done: false,
                value_estimate: 0.0,
                log_prob: 0.0,
            })
            .collect()
    }

    #[test]
    fn spatial_sizes() {
        assert_eq!(EncoderSpec::new([1, 32, 32], 5).flat_dim(), 32 * 8 * 8);
        assert_eq!(EncoderSpec::new([5, 13, 13], 4).flat_dim(), 32 * 4 * 4);
    }

    #[test]
    fn zero_weights_give_zero_embedding() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = s.init(&mut rng);
        for name in p.names().map(String::from).collect::<Vec<_>>() {
            if name.starts_with("phi.") {
                p.get_mut(&name).unwrap().data_mut().fill(0.0);
            }
        }
        let e = s.encode_observation(&p, &random_obs(&mut rng, &s)).unwrap();
        assert!(e.iter().all(|&x| x == 0.0));
        assert_eq!(e.len(), EMBED_DIM);
    }

    #[test]
    fn identical_observations_identical_embeddings() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = s.init(&mut rng);
        let o = random_obs(&mut rng, &s);
        assert_eq!(
            s.encode_observation(&p, &o).unwrap(),
            s.encode_observation(&p, &o.clone()).unwrap()
        );
    }

    #[test]
    fn wrong_observation_shape_is_rejected() {
        let s = spec();
        let p = s.init(&mut ChaCha8Rng::seed_from_u64(0));
        let bad = Tensor::zeros(&[1, 6, 6]);
        assert!(matches!(
            s.encode_observation(&p, &bad),
            Err(Error::ObservationShape { .. })
        ));
    }

    #[test]
    fn embedding_norm_gradient_matches_finite_differences() {
        let s = EncoderSpec::new([1, 5, 5], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = s.init(&mut rng);
        let mut g = Graph::new();
        let x = g.input("obs", &[1, 1, 5, 5]);
        let e = s.encode(&mut g, x).unwrap();
        let sq = g.mul(e, e).unwrap();
        let loss = g.sum(sq).unwrap();
        let obs = Tensor::new(
            vec![1, 1, 5, 5],
            (0..25).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let report =
            diffcore::grad_check(&g, &p, &Inputs::new().with("obs", obs), loss, 1e-4).unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn film_identity_and_zero_scale() {
        let s = spec();
        let mut p = s.init(&mut ChaCha8Rng::seed_from_u64(3));
        let e: Vec<f64> = (0..EMBED_DIM).map(|i| i as f64 * 0.1 - 2.0).collect();
        p.insert("film.gamma", Tensor::filled(&[3, EMBED_DIM], 1.0));
        p.insert("film.beta", Tensor::zeros(&[3, EMBED_DIM]));
        assert_eq!(s.film_condition(&p, &e, 1).unwrap(), e);
        let shift: Vec<f64> = (0..3 * EMBED_DIM).map(|i| i as f64).collect();
        p.insert("film.gamma", Tensor::zeros(&[3, EMBED_DIM]));
        p.insert(
            "film.beta",
            Tensor::new(vec![3, EMBED_DIM], shift.clone()).unwrap(),
        );
        assert_eq!(
            s.film_condition(&p, &e, 2).unwrap(),
            &shift[2 * EMBED_DIM..]
        );
        assert!(matches!(
            s.film_condition(&p, &e, 3),
            Err(Error::ActionOutOfRange { .. })
        ));
    }

    #[test]
    fn distinct_actions_give_distinct_outputs() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let p = s.init(&mut rng);
            let e: Vec<f64> = (0..EMBED_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert_ne!(
                s.film_condition(&p, &e, 0).unwrap(),
                s.film_condition(&p, &e, 1).unwrap()
            );
        }
    }

    #[test]
    fn consecutive_full_length_covers_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(
            sample_keypoints(7, 7, ViewMode::Consecutive, &mut rng).unwrap(),
            (0..7).collect::<Vec<_>>()
        );
        assert!(matches!(
            sample_keypoints(3, 4, ViewMode::Sampled, &mut rng),
            Err(Error::ViewLength {
                requested: 4,
                length: 3
            })
        ));
    }

    #[test]
    fn default_view_has_128_entries_and_ignores_rewards() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = s.init(&mut rng);
        let traj = trajectory(&mut rng, &s, 9);
        let mut other = traj.clone();
        for tr in &mut other {
            tr.reward = rng.gen_range(-100.0..100.0);
        }
        let a = s
            .build_view(
                &p,
                &traj,
                0,
                2,
                ViewMode::Sampled,
                false,
                &mut ChaCha8Rng::seed_from_u64(9),
            )
            .unwrap();
        let b = s
            .build_view(
                &p,
                &other,
                0,
                2,
                ViewMode::Sampled,
                false,
                &mut ChaCha8Rng::seed_from_u64(9),
            )
            .unwrap();
        assert_eq!(a.u.len(), 128);
        assert_eq!(a, b);
        assert!(a.source_indices[0] < a.source_indices[1]);
    }

    #[test]
    fn keypoint_pairs_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            let idx = sample_keypoints(10, 2, ViewMode::Sampled, &mut rng).unwrap();
            *counts.entry((idx[0], idx[1])).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 45);
        let p = 1.0 / 45.0;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (&pair, &c) in &counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{pair:?}: {c}");
        }
    }
}
