use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Single-site update rule used by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dynamics {
    /// Propose a flip, accept with `min(1, exp(-β ΔE))`.
    Metropolis,
    /// Resample the spin from its conditional: up with `1 / (1 + exp(-2βh))`.
    HeatBath,
}

/// Square Ising lattice with periodic boundaries and coupling J = 1.
///
/// Spins are stored as `{0, 1}` and mapped to `{-1, +1}` for energies.
#[derive(Clone, Debug)]
pub struct IsingModel {
    size: usize,
    spins: Vec<u8>,
    beta: f64,
    dynamics: Dynamics,
    rng: ChaCha8Rng,
    // Acceptance (Metropolis) or up-probability (heat-bath), indexed by (σh + 4) / 2.
    table: [f64; 5],
}

impl IsingModel {
    /// Lattice with independent fair-coin spins drawn from `seed`.
    pub fn random(size: usize, beta: f64, dynamics: Dynamics, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spins = (0..size * size).map(|_| rng.gen_range(0..2u8)).collect();
        Self::assemble(size, spins, beta, dynamics, rng)
    }

    /// Lattice with given `{0,1}` spins; the model's own stream starts at `seed`.
    pub fn from_spins(
        size: usize,
        spins: Vec<u8>,
        beta: f64,
        dynamics: Dynamics,
        seed: u64,
    ) -> Self {
        assert_eq!(spins.len(), size * size, "lattice must be size x size");
        assert!(spins.iter().all(|&s| s <= 1), "spins must be 0 or 1");
        Self::assemble(size, spins, beta, dynamics, ChaCha8Rng::seed_from_u64(seed))
    }

    fn assemble(
        size: usize,
        spins: Vec<u8>,
        beta: f64,
        dynamics: Dynamics,
        rng: ChaCha8Rng,
    ) -> Self {
        assert!(
            beta >= 0.0 && beta.is_finite(),
            "beta must be finite and non-negative"
        );
        let mut table = [0.0; 5];
        for (i, slot) in table.iter_mut().enumerate() {
            // Metropolis: index by σ·h (ΔE = 2σh); heat-bath: index by h.
            let x = 2.0 * i as f64 - 4.0;
            *slot = match dynamics {
                Dynamics::Metropolis => (-beta * 2.0 * x).exp().min(1.0),
                Dynamics::HeatBath => 1.0 / (1.0 + (-2.0 * beta * x).exp()),
            };
        }
        Self {
            size,
            spins,
            beta,
            dynamics,
            rng,
            table,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dynamics(&self) -> Dynamics {
        self.dynamics
    }

    pub fn spins(&self) -> &[u8] {
        &self.spins
    }

    #[inline]
    fn sigma(&self, r: usize, c: usize) -> i32 {
        2 * self.spins[r * self.size + c] as i32 - 1
    }

    #[inline]
    fn field(&self, r: usize, c: usize) -> i32 {
        let n = self.size;
        self.sigma((r + 1) % n, c)
            + self.sigma((r + n - 1) % n, c)
            + self.sigma(r, (c + 1) % n)
            + self.sigma(r, (c + n - 1) % n)
    }

    /// `-Σ_i σ_i (σ_right(i) + σ_down(i))`, each periodic bond counted once per site.
    pub fn energy(&self) -> f64 {
        let n = self.size;
        let mut e = 0i64;
        for r in 0..n {
            for c in 0..n {
                let s = self.sigma(r, c);
                e -= (s * (self.sigma(r, (c + 1) % n) + self.sigma((r + 1) % n, c))) as i64;
            }
        }
        e as f64
    }

    /// Mean spin in `{-1, +1}` units.
    pub fn magnetization(&self) -> f64 {
        let up: usize = self.spins.iter().map(|&s| s as usize).sum();
        (2.0 * up as f64 - self.spins.len() as f64) / self.spins.len() as f64
    }

    /// Number of sites where the two lattices differ.
    pub fn hamming(&self, other: &IsingModel) -> usize {
        hamming(&self.spins, &other.spins)
    }

    /// One raster-order sweep driven by the model's own stream. Returns the number of flipped sites.
    pub fn sweep(&mut self) -> usize {
        let mut uniforms = vec![0.0; self.spins.len()];
        for u in &mut uniforms {
            *u = self.rng.gen::<f64>();
        }
        self.sweep_with(&uniforms)
    }

    /// One raster-order sweep consuming one uniform per site from `uniforms`.
    ///
    /// Models fed the same uniforms share their noise, which couples their trajectories.
    pub fn sweep_with(&mut self, uniforms: &[f64]) -> usize {
        assert_eq!(uniforms.len(), self.spins.len());
        let n = self.size;
        let mut flips = 0;
        for r in 0..n {
            for c in 0..n {
                let h = self.field(r, c);
                let idx = r * n + c;
                let u = uniforms[idx];
                let new = match self.dynamics {
                    Dynamics::Metropolis => {
                        let s = self.sigma(r, c);
                        let accept = self.table[((s * h + 4) / 2) as usize];
                        if u < accept {
                            1 - self.spins[idx]
                        } else {
                            self.spins[idx]
                        }
                    }
                    Dynamics::HeatBath => (u < self.table[((h + 4) / 2) as usize]) as u8,
                };
                flips += (new != self.spins[idx]) as usize;
                self.spins[idx] = new;
            }
        }
        flips
    }

    /// Lattice as `{0,1}` floats.
    pub fn as_f64(&self) -> Vec<f64> {
        self.spins.iter().map(|&s| s as f64).collect()
    }
}

pub(crate) fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_up(size: usize, beta: f64, seed: u64) -> IsingModel {
        IsingModel::from_spins(size, vec![1; size * size], beta, Dynamics::Metropolis, seed)
    }

    #[test]
    fn two_by_two_all_up_energy() {
        // Brute-force: each of the 4 sites contributes its right and down bond.
        let m = all_up(2, 1.0, 0);
        let n = 2;
        let mut brute = 0.0;
        for r in 0..n {
            for c in 0..n {
                brute -= 1.0 * 1.0 + 1.0 * 1.0;
                let _ = (r, c);
            }
        }
        assert_eq!(m.energy(), brute);
        assert_eq!(m.energy(), -8.0);
    }

    #[test]
    fn zero_beta_accepts_every_flip() {
        let mut m = IsingModel::random(32, 0.0, Dynamics::Metropolis, 5);
        let before = m.spins().to_vec();
        assert_eq!(m.sweep(), 32 * 32);
        assert!(m.spins().iter().zip(&before).all(|(a, b)| a != b));
    }

    #[test]
    fn zero_beta_marginals_are_fair() {
        let mut m = IsingModel::random(32, 0.0, Dynamics::Metropolis, 9);
        let mut ones = vec![0u32; 32 * 32];
        let sweeps = 1000;
        for _ in 0..sweeps {
            m.sweep();
            for (o, &s) in ones.iter_mut().zip(m.spins()) {
                *o += s as u32;
            }
        }
        // Pearson χ² over sites, each site is Bernoulli(0.5) over `sweeps` draws.
        let expected = sweeps as f64 / 2.0;
        let chi2: f64 = ones
            .iter()
            .map(|&o| {
                let d = o as f64 - expected;
                2.0 * d * d / expected
            })
            .sum();
        // 1024 degrees of freedom; the 99.9% quantile is about 1172.
        assert!(chi2 < 1172.0, "chi2 = {chi2}");
    }

    #[test]
    fn cold_all_up_lattice_barely_moves() {
        let trials = 100;
        let flipped: usize = (0..trials).map(|s| all_up(32, 5.0, s).sweep()).sum();
        let fraction = flipped as f64 / (trials as f64 * 1024.0);
        assert!(fraction < 0.01, "fraction = {fraction}");
    }

    #[test]
    fn heat_bath_at_zero_beta_is_fair_coin() {
        let mut m = IsingModel::random(32, 0.0, Dynamics::HeatBath, 2);
        let mut ups = 0usize;
        for _ in 0..200 {
            m.sweep();
            ups += m.spins().iter().map(|&s| s as usize).sum::<usize>();
        }
        let frac = ups as f64 / (200.0 * 1024.0);
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn shared_noise_same_beta_coalesces() {
        let mut a = IsingModel::random(16, 0.2, Dynamics::HeatBath, 1);
        let mut b = IsingModel::random(16, 0.2, Dynamics::HeatBath, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let u: Vec<f64> = (0..256).map(|_| rng.gen()).collect();
            a.sweep_with(&u);
            b.sweep_with(&u);
        }
        assert_eq!(a.hamming(&b), 0);
    }

    #[test]
    fn magnetization_is_stable_in_disordered_phase() {
        let averages: Vec<f64> = (0..4)
            .map(|seed| {
                let mut m = IsingModel::random(32, 0.25, Dynamics::Metropolis, 100 + seed);
                let mut total = 0.0;
                for _ in 0..5000 {
                    m.sweep();
                    total += m.magnetization();
                }
                total / 5000.0
            })
            .collect();
        let lo = averages.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = averages.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo <= 0.1, "{averages:?}");
    }
}
