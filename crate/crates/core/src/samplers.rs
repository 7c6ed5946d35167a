//! Correlated single-sample building blocks for the estimators.
//!
//! Every sampler draws one randomness bundle per call, at the finest time
//! resolution it needs, and evaluates all of its constituent particle systems
//! on that same bundle:
//!
//! * plain: `phi_P^N`
//! * time difference: `phi_P^N - phi_P^{N/beta_t}`
//! * subset difference: `phi_P^N - phi_{P/beta_p}^N` on the first `P/beta_p` inputs
//! * partition difference: `phi_P^N - mean_i phi_{P/beta_p}^N(block i)`
//! * joint difference: `phi_P^N - mean_i phi_{P/beta_p}^{N/beta_t}(block i)`
//! * mixed difference: the first-order mixed difference over `(P, N)`

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{draw_inputs, ParticleModel, QoiSpec, RandomInput};
use crate::rng::SampleKey;
use crate::scalar::{exact_sum, Real};
use crate::stepping::{simulate_system, Scheme};

/// One evaluation of a level or index difference.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffSample<F> {
    /// Difference value, one per observable.
    pub values: Vec<F>,
    /// The finest term of the difference, one per observable.
    pub fine: Vec<F>,
    pub work_units: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Plain,
    TimeDiff,
    ParticleSubsetDiff,
    ParticlePartitionDiff,
    JointDiff,
    MixedDiff,
}

/// Cost of simulating one system: `N * P^gamma_p` work units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkModel {
    pub gamma_p: f64,
}

impl Default for WorkModel {
    fn default() -> Self {
        Self { gamma_p: 2.0 }
    }
}

impl WorkModel {
    pub fn new(gamma_p: f64) -> Result<Self> {
        if !(gamma_p >= 1.0) || !gamma_p.is_finite() {
            return Err(Error::invalid(format!("gamma_p must be >= 1, got {gamma_p}")));
        }
        Ok(Self { gamma_p })
    }

    fn integral_exponent(&self) -> Option<u32> {
        (self.gamma_p.fract() == 0.0 && self.gamma_p <= 8.0).then_some(self.gamma_p as u32)
    }

    /// Total cost of `(count, steps, particles)` systems. Exact integer
    /// arithmetic is used whenever `gamma_p` is a small integer.
    pub fn units(&self, systems: &[(usize, usize, usize)]) -> f64 {
        match self.integral_exponent() {
            Some(g) => {
                let total: u128 = systems
                    .iter()
                    .map(|&(count, n, p)| count as u128 * n as u128 * (p as u128).pow(g))
                    .sum();
                total as f64
            }
            None => systems
                .iter()
                .map(|&(count, n, p)| count as f64 * n as f64 * (p as f64).powf(self.gamma_p))
                .sum(),
        }
    }

    pub fn system(&self, steps: usize, particles: usize) -> f64 {
        self.units(&[(1, steps, particles)])
    }
}

/// Geometric discretization hierarchies `P_l = p0 * beta_p^l`, `N_l = n0 * beta_t^l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub p0: usize,
    pub n0: usize,
    pub beta_p: usize,
    pub beta_t: usize,
}

impl Default for Hierarchy {
    fn default() -> Self {
        Self { p0: 5, n0: 4, beta_p: 2, beta_t: 2 }
    }
}

impl Hierarchy {
    pub fn validate(&self) -> Result<()> {
        if self.p0 == 0 || self.n0 == 0 {
            return Err(Error::invalid("P0 and N0 must be >= 1"));
        }
        if self.beta_p < 2 || self.beta_t < 2 {
            return Err(Error::invalid("beta_p and beta_t must be integers >= 2"));
        }
        Ok(())
    }

    pub fn particles(&self, level: u32) -> usize {
        self.p0 * self.beta_p.pow(level)
    }

    pub fn steps(&self, level: u32) -> usize {
        self.n0 * self.beta_t.pow(level)
    }
}

/// Particle average of each observable over a `P * d` state list.
pub fn phi<F: Real>(qoi: &QoiSpec<F>, states: &[F], dim: usize) -> Result<Vec<F>> {
    if states.is_empty() || dim == 0 {
        return Err(Error::invalid("phi needs at least one particle"));
    }
    let count = F::of((states.len() / dim) as f64);
    Ok(qoi
        .observables
        .iter()
        .map(|obs| exact_sum(states.chunks_exact(dim).map(|x| obs.eval(x))) / count)
        .collect())
}

fn check_ratio(what: &str, fine: usize, beta: usize) -> Result<usize> {
    if beta < 2 {
        return Err(Error::coupling(format!("{what}: ratio must be >= 2, got {beta}")));
    }
    if fine == 0 || fine % beta != 0 {
        return Err(Error::coupling(format!("{what}: {fine} is not divisible by {beta}")));
    }
    Ok(fine / beta)
}

fn sub<F: Real>(a: &[F], b: &[F]) -> Vec<F> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

/// Evaluates samplers of one model and observable set.
pub struct Sampler<'a, F, M: ?Sized> {
    pub model: &'a M,
    pub qoi: &'a QoiSpec<F>,
    pub horizon: F,
    pub scheme: Scheme,
    pub work: WorkModel,
}

impl<F: Copy, M: ?Sized> Clone for Sampler<'_, F, M> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<F: Copy, M: ?Sized> Copy for Sampler<'_, F, M> {}

impl<'a, F: Real, M: ParticleModel<F> + ?Sized> Sampler<'a, F, M> {
    pub fn new(model: &'a M, qoi: &'a QoiSpec<F>, horizon: F, scheme: Scheme, work: WorkModel) -> Self {
        Self { model, qoi, horizon, scheme, work }
    }

    fn draw(&self, key: &SampleKey, particles: usize, n_fine: usize) -> Result<Vec<RandomInput<F>>> {
        draw_inputs(key, self.model, particles, n_fine, self.horizon)
    }

    fn system(&self, inputs: &[RandomInput<F>], steps: usize) -> Result<Vec<F>> {
        let path = simulate_system(self.model, inputs, steps, self.horizon, self.scheme)?;
        phi(self.qoi, &path.terminal_states, path.dim)
    }

    /// `mean_i phi(block i)` over contiguous blocks of `coarse` inputs, computed
    /// as one correctly rounded sum over all blocks.
    fn partitioned(&self, inputs: &[RandomInput<F>], coarse: usize, steps: usize) -> Result<Vec<F>> {
        let mut states = Vec::with_capacity(inputs.len() * self.model.state_dim());
        for block in inputs.chunks_exact(coarse) {
            let path = simulate_system(self.model, block, steps, self.horizon, self.scheme)?;
            states.extend_from_slice(&path.terminal_states);
        }
        phi(self.qoi, &states, self.model.state_dim())
    }

    fn finish(&self, values: Vec<F>, fine: Vec<F>, systems: &[(usize, usize, usize)], start: Instant) -> DiffSample<F> {
        DiffSample {
            values,
            fine,
            work_units: self.work.units(systems),
            wall_seconds: start.elapsed().as_secs_f64(),
        }
    }

    pub fn plain(&self, particles: usize, steps: usize, key: &SampleKey) -> Result<DiffSample<F>> {
        let start = Instant::now();
        let inputs = self.draw(key, particles, steps)?;
        let value = self.system(&inputs, steps)?;
        Ok(self.finish(value.clone(), value, &[(1, steps, particles)], start))
    }

    pub fn time_diff(
        &self,
        particles: usize,
        fine_steps: usize,
        beta_t: usize,
        key: &SampleKey,
    ) -> Result<DiffSample<F>> {
        let start = Instant::now();
        let coarse_steps = check_ratio("time coupling", fine_steps, beta_t)?;
        let inputs = self.draw(key, particles, fine_steps)?;
        let fine = self.system(&inputs, fine_steps)?;
        let coarse = self.system(&inputs, coarse_steps)?;
        Ok(self.finish(
            sub(&fine, &coarse),
            fine,
            &[(1, fine_steps, particles), (1, coarse_steps, particles)],
            start,
        ))
    }

    /// Coarse term is one independent system on the first `P/beta_p` inputs.
    pub fn particle_subset_diff(
        &self,
        fine_particles: usize,
        beta_p: usize,
        steps: usize,
        key: &SampleKey,
    ) -> Result<DiffSample<F>> {
        let start = Instant::now();
        let coarse_particles = check_ratio("particle coupling", fine_particles, beta_p)?;
        let inputs = self.draw(key, fine_particles, steps)?;
        let fine = self.system(&inputs, steps)?;
        let coarse = self.system(&inputs[..coarse_particles], steps)?;
        Ok(self.finish(
            sub(&fine, &coarse),
            fine,
            &[(1, steps, fine_particles), (1, steps, coarse_particles)],
            start,
        ))
    }

    /// Coarse term averages `beta_p` independent systems on disjoint contiguous input blocks.
    pub fn particle_partition_diff(
        &self,
        fine_particles: usize,
        beta_p: usize,
        steps: usize,
        key: &SampleKey,
    ) -> Result<DiffSample<F>> {
        let start = Instant::now();
        let coarse_particles = check_ratio("particle coupling", fine_particles, beta_p)?;
        let inputs = self.draw(key, fine_particles, steps)?;
        let fine = self.system(&inputs, steps)?;
        let coarse = self.partitioned(&inputs, coarse_particles, steps)?;
        Ok(self.finish(
            sub(&fine, &coarse),
            fine,
            &[(1, steps, fine_particles), (beta_p, steps, coarse_particles)],
            start,
        ))
    }

    pub fn joint_diff(
        &self,
        fine_particles: usize,
        beta_p: usize,
        fine_steps: usize,
        beta_t: usize,
        key: &SampleKey,
    ) -> Result<DiffSample<F>> {
        let start = Instant::now();
        let coarse_particles = check_ratio("particle coupling", fine_particles, beta_p)?;
        let coarse_steps = check_ratio("time coupling", fine_steps, beta_t)?;
        let inputs = self.draw(key, fine_particles, fine_steps)?;
        let fine = self.system(&inputs, fine_steps)?;
        let coarse = self.partitioned(&inputs, coarse_particles, coarse_steps)?;
        Ok(self.finish(
            sub(&fine, &coarse),
            fine,
            &[(1, fine_steps, fine_particles), (beta_p, coarse_steps, coarse_particles)],
            start,
        ))
    }

    /// First-order mixed difference at `alpha = (particle level, time level)`.
    /// Terms below level zero in either direction vanish.
    pub fn mixed_diff(&self, alpha: (u32, u32), hierarchy: &Hierarchy, key: &SampleKey) -> Result<DiffSample<F>> {
        let start = Instant::now();
        hierarchy.validate()?;
        let (a1, a2) = alpha;
        let particles = hierarchy.particles(a1);
        let steps = hierarchy.steps(a2);
        let coarse_particles = (a1 > 0).then(|| hierarchy.particles(a1 - 1));
        let coarse_steps = (a2 > 0).then(|| hierarchy.steps(a2 - 1));

        let inputs = self.draw(key, particles, steps)?;
        let mut systems = vec![(1, steps, particles)];

        // (phi_P^N - phihat^N) - (phi_P^{N'} - phihat^{N'})
        let fine = self.system(&inputs, steps)?;
        let mut upper = fine.clone();
        if let Some(pc) = coarse_particles {
            upper = sub(&upper, &self.partitioned(&inputs, pc, steps)?);
            systems.push((hierarchy.beta_p, steps, pc));
        }
        let values = match coarse_steps {
            None => upper,
            Some(nc) => {
                let mut lower = self.system(&inputs, nc)?;
                systems.push((1, nc, particles));
                if let Some(pc) = coarse_particles {
                    lower = sub(&lower, &self.partitioned(&inputs, pc, nc)?);
                    systems.push((hierarchy.beta_p, nc, pc));
                }
                sub(&upper, &lower)
            }
        };
        Ok(self.finish(values, fine, &systems, start))
    }

    /// Exact work of one mixed-difference sample at `alpha`.
    pub fn mixed_work(&self, alpha: (u32, u32), hierarchy: &Hierarchy) -> f64 {
        let (a1, a2) = alpha;
        let (p, n) = (hierarchy.particles(a1), hierarchy.steps(a2));
        let mut systems = vec![(1, n, p)];
        if a1 > 0 {
            systems.push((hierarchy.beta_p, n, hierarchy.particles(a1 - 1)));
        }
        if a2 > 0 {
            systems.push((1, hierarchy.steps(a2 - 1), p));
            if a1 > 0 {
                systems.push((hierarchy.beta_p, hierarchy.steps(a2 - 1), hierarchy.particles(a1 - 1)));
            }
        }
        self.work.units(&systems)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Kuramoto, Law, LinearModel, Observable};
    use crate::rng::StreamContext;

    fn key(m: u64) -> SampleKey {
        SampleKey::new(11, StreamContext::Test).with_sample(m)
    }

    #[test]
    fn phi_examples() {
        let cos = QoiSpec::<f64>::single(Observable::cos());
        let id = QoiSpec::<f64>::single(Observable::identity());
        let sin = QoiSpec::<f64>::single(Observable::sin());
        assert_eq!(phi(&cos, &[0.0, 0.0, 0.0], 1).unwrap(), vec![1.0]);
        assert_eq!(phi(&id, &[1.0, 2.0, 3.0], 1).unwrap(), vec![2.0]);
        assert!((phi(&sin, &[0.0, std::f64::consts::FRAC_PI_2], 1).unwrap()[0] - 0.5).abs() < 1e-16);
        assert!(phi(&id, &[], 1).is_err());
    }

    #[test]
    fn work_units() {
        let w = WorkModel::default();
        assert_eq!(w.system(4, 5), 100.0);
        assert_eq!(w.units(&[(1, 8, 10), (2, 4, 5)]), 800.0 + 200.0);
        let frac = WorkModel::new(1.5).unwrap();
        assert!((frac.system(2, 4) - 16.0).abs() < 1e-12);
        assert!(WorkModel::new(0.5).is_err());
    }

    #[test]
    fn plain_frozen_and_deterministic() {
        let frozen = Kuramoto::<f64>::new(0.0, Law::Constant { value: 0.0 }, Law::Constant { value: 0.0 }).unwrap();
        let qoi = QoiSpec::single(Observable::cos());
        let s = Sampler::new(&frozen, &qoi, 1.0, Scheme::Milstein, WorkModel::default());
        let out = s.plain(5, 4, &key(0)).unwrap();
        assert_eq!(out.values, vec![1.0]);
        assert_eq!(out.work_units, 100.0);

        let model = Kuramoto::<f64>::standard();
        let s = Sampler::new(&model, &qoi, 1.0, Scheme::Milstein, WorkModel::default());
        assert_eq!(s.plain(5, 4, &key(1)).unwrap().values, s.plain(5, 4, &key(1)).unwrap().values);
        assert_ne!(s.plain(5, 4, &key(1)).unwrap().values, s.plain(5, 4, &key(2)).unwrap().values);
    }

    #[test]
    fn linear_time_difference_by_hand() {
        let model = LinearModel::<f64>::new(1.0, 0.0, 0.0, Law::Constant { value: 1.0 }, Law::Constant { value: 0.0 }).unwrap();
        let qoi = QoiSpec::single(Observable::identity());
        let s = Sampler::new(&model, &qoi, 1.0, Scheme::EulerMaruyama, WorkModel::default());
        let out = s.time_diff(1, 2, 2, &key(0)).unwrap();
        assert_eq!(out.values, vec![0.25]);
        assert_eq!(out.fine, vec![2.25]);
        assert_eq!(out.work_units, 2.0 + 1.0);
    }

    /// Decoupled particles with drift `q + 1` for particle index `q`.
    struct IndexDrift;

    impl ParticleModel<f64> for IndexDrift {
        fn state_dim(&self) -> usize {
            1
        }
        fn initial_law(&self) -> &[Law] {
            &[Law::Constant { value: 0.0 }]
        }
        fn parameter_law(&self) -> &[Law] {
            &[]
        }
        fn drift(&self, _t: f64, p: usize, _s: &[f64], _th: &[f64], out: &mut [f64]) {
            out[0] = (p + 1) as f64;
        }
        fn diffusion(&self, _t: f64, _p: usize, _s: &[f64], _th: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn diffusion_dependence(&self) -> crate::model::DiffusionDependence {
            crate::model::DiffusionDependence::Constant
        }
    }

    #[test]
    fn subset_difference_of_decoupled_particles() {
        let qoi = QoiSpec::single(Observable::identity());
        let s = Sampler::new(&IndexDrift, &qoi, 1.0, Scheme::EulerMaruyama, WorkModel::default());
        let out = s.particle_subset_diff(4, 2, 4, &key(3)).unwrap();
        // mean(1, 2, 3, 4) - mean(1, 2)
        assert_eq!(out.values, vec![1.0]);
        assert_eq!(out.fine, vec![2.5]);
        assert_eq!(out.work_units, 4.0 * 16.0 + 4.0 * 4.0);
    }

    #[test]
    fn divisibility_errors() {
        let model = Kuramoto::<f64>::standard();
        let qoi = QoiSpec::single(Observable::cos());
        let s = Sampler::new(&model, &qoi, 1.0, Scheme::Milstein, WorkModel::default());
        assert!(matches!(s.time_diff(5, 6, 4, &key(0)), Err(Error::Coupling(_))));
        assert!(matches!(s.particle_partition_diff(5, 2, 4, &key(0)), Err(Error::Coupling(_))));
        assert!(matches!(s.particle_subset_diff(6, 4, 4, &key(0)), Err(Error::Coupling(_))));
        assert!(matches!(s.joint_diff(10, 1, 8, 1, &key(0)), Err(Error::Coupling(_))));
    }

    #[test]
    fn mixed_difference_at_origin_is_plain() {
        let model = Kuramoto::<f64>::standard();
        let qoi = QoiSpec::kuramoto_synchronization();
        let s = Sampler::new(&model, &qoi, 1.0, Scheme::Milstein, WorkModel::default());
        let h = Hierarchy::default();
        let mixed = s.mixed_diff((0, 0), &h, &key(4)).unwrap();
        let plain = s.plain(5, 4, &key(4)).unwrap();
        assert_eq!(mixed.values, plain.values);
        assert_eq!(mixed.work_units, plain.work_units);
    }

    #[test]
    fn mixed_work_matches_samples() {
        let model = Kuramoto::<f64>::standard();
        let qoi = QoiSpec::kuramoto_synchronization();
        let s = Sampler::new(&model, &qoi, 1.0, Scheme::Milstein, WorkModel::default());
        let h = Hierarchy::default();
        for alpha in [(0, 0), (1, 0), (0, 1), (1, 1), (2, 1)] {
            let out = s.mixed_diff(alpha, &h, &key(5)).unwrap();
            assert_eq!(out.work_units, s.mixed_work(alpha, &h), "{alpha:?}");
        }
        // (1,1): 8*100 + 2*8*25 + 4*100 + 2*4*25
        assert_eq!(s.mixed_work((1, 1), &h), 800.0 + 400.0 + 400.0 + 200.0);
    }
}
