use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{allocate_keys, assemble, ErrorBudget, EstimateReport, EstimatorSettings, KeyAccumulator, ReportInputs};
use crate::error::{Error, Result};
use crate::model::ParticleModel;
use crate::rng::{SampleKey, StreamContext};
use crate::samplers::{DiffSample, Hierarchy, Sampler};
use crate::scalar::Real;

/// How a particle-level difference builds its coarse term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParticleCoupling {
    Partition,
    Subset,
}

/// Which discretization parameter the levels refine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum MlmcVariant {
    /// Levels refine `N_l`; every level uses `particles`.
    TimeSteps { particles: usize },
    /// Levels refine `P_l`; every level uses `steps`.
    Particles { steps: usize, coupling: ParticleCoupling },
    /// Levels refine `P_l` and `N_l` together.
    Joint,
}

impl MlmcVariant {
    fn context(&self) -> StreamContext {
        match self {
            MlmcVariant::TimeSteps { .. } => StreamContext::MlmcTime,
            MlmcVariant::Particles { .. } => StreamContext::MlmcParticle,
            MlmcVariant::Joint => StreamContext::MlmcJoint,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            MlmcVariant::TimeSteps { .. } => "mlmc-n",
            MlmcVariant::Particles { coupling: ParticleCoupling::Partition, .. } => "mlmc-p",
            MlmcVariant::Particles { coupling: ParticleCoupling::Subset, .. } => "mlmc-p-subset",
            MlmcVariant::Joint => "mlmc-joint",
        }
    }

    /// `(particles, steps)` of the finest term on `level`.
    pub fn resolution(&self, hierarchy: &Hierarchy, level: u32) -> (usize, usize) {
        match *self {
            MlmcVariant::TimeSteps { particles } => (particles, hierarchy.steps(level)),
            MlmcVariant::Particles { steps, .. } => (hierarchy.particles(level), steps),
            MlmcVariant::Joint => (hierarchy.particles(level), hierarchy.steps(level)),
        }
    }

    /// (particle level, time level) of MLMC level `level`; a fixed
    /// discretization counts as level 0.
    pub fn levels_of(&self, level: u32) -> (u32, u32) {
        match self {
            MlmcVariant::TimeSteps { .. } => (0, level),
            MlmcVariant::Particles { .. } => (level, 0),
            MlmcVariant::Joint => (level, level),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            MlmcVariant::TimeSteps { particles: 0 } | MlmcVariant::Particles { steps: 0, .. } => {
                Err(Error::invalid("fixed particle or step count must be >= 1"))
            }
            _ => Ok(()),
        }
    }
}

/// One sample of the level-`level` difference.
pub(crate) fn level_sample<F, M>(
    sampler: &Sampler<'_, F, M>,
    variant: MlmcVariant,
    hierarchy: &Hierarchy,
    level: u32,
    key: &SampleKey,
) -> Result<DiffSample<F>>
where
    F: Real,
    M: ParticleModel<F> + ?Sized,
{
    let (p, n) = variant.resolution(hierarchy, level);
    if level == 0 {
        return sampler.plain(p, n, key);
    }
    match variant {
        MlmcVariant::TimeSteps { .. } => sampler.time_diff(p, n, hierarchy.beta_t, key),
        MlmcVariant::Particles { coupling: ParticleCoupling::Partition, .. } => {
            sampler.particle_partition_diff(p, hierarchy.beta_p, n, key)
        }
        MlmcVariant::Particles { coupling: ParticleCoupling::Subset, .. } => {
            sampler.particle_subset_diff(p, hierarchy.beta_p, n, key)
        }
        MlmcVariant::Joint => sampler.joint_diff(p, hierarchy.beta_p, n, hierarchy.beta_t, key),
    }
}

/// Adaptive MLMC: grow `L` from `settings.initial_level` until the last level
/// difference is below the bias target for every observable, then allocate
/// samples against the variance target.
///
/// The bias check is repeated after allocation with all samples of the last
/// level; if it fails then, `L` grows again.
pub fn run_mlmc<F, M>(
    sampler: &Sampler<'_, F, M>,
    budget: &ErrorBudget,
    variant: MlmcVariant,
    hierarchy: &Hierarchy,
    settings: &EstimatorSettings,
    master_seed: u64,
) -> Result<EstimateReport>
where
    F: Real,
    M: ParticleModel<F> + Sync + ?Sized,
{
    let start = Instant::now();
    hierarchy.validate()?;
    settings.validate()?;
    variant.validate()?;
    let k = sampler.qoi.len();
    if k == 0 {
        return Err(Error::invalid("no observables"));
    }
    let component = budget.scaled(sampler.qoi.sensitivity());
    let bias_target = component.bias_target();
    let context = variant.context();

    let mut keys: BTreeMap<(u32, u32), KeyAccumulator> = BTreeMap::new();
    let add_level = |keys: &mut BTreeMap<(u32, u32), KeyAccumulator>, level: u32| -> Result<()> {
        let (p, n) = variant.resolution(hierarchy, level);
        let acc = keys
            .entry((level, 0))
            .or_insert_with(|| KeyAccumulator::new((level, 0), p, n, k));
        let draw = |m: u64| {
            let key = SampleKey::new(master_seed, context).with_index(level, 0).with_sample(m);
            level_sample(sampler, variant, hierarchy, level, &key)
        };
        acc.extend_to(settings.pilot, &draw)
    };

    let mut level = settings.initial_level;
    for l in 0..=level {
        add_level(&mut keys, l)?;
    }
    loop {
        let bias: Vec<f64> = keys[&(level, 0)].means().iter().map(|m| m.abs()).collect();
        if bias.iter().any(|&b| !(b <= bias_target)) {
            if level >= settings.level_cap {
                return Err(Error::BudgetInfeasible {
                    level: level as f64,
                    cap: settings.level_cap as f64,
                    bias,
                    target: bias_target,
                });
            }
            level += 1;
            add_level(&mut keys, level)?;
            continue;
        }

        let active: Vec<&KeyAccumulator> = keys.values().collect();
        let (counts, degenerate) = allocate_keys(&active, k, component.variance_target())?;
        for (l, m) in (0..=level).zip(counts) {
            let (p, n) = variant.resolution(hierarchy, l);
            let acc = keys.entry((l, 0)).or_insert_with(|| KeyAccumulator::new((l, 0), p, n, k));
            let draw = |s: u64| {
                let key = SampleKey::new(master_seed, context).with_index(l, 0).with_sample(s);
                level_sample(sampler, variant, hierarchy, l, &key)
            };
            acc.extend_to(m.max(settings.pilot), &draw)?;
        }

        let bias: Vec<f64> = keys[&(level, 0)].means().iter().map(|m| m.abs()).collect();
        if bias.iter().any(|&b| !(b <= bias_target)) {
            continue;
        }
        let combine = |e: &[f64]| sampler.qoi.combine(e);
        return Ok(assemble(
            &keys,
            ReportInputs {
                method: variant.tag(),
                master_seed,
                observables: sampler.qoi.names(),
                combine: &combine,
                budget,
                component: &component,
                bias_estimate: bias,
                final_level: Some(level as f64),
                index_weights: None,
                degenerate,
                wall_seconds: start.elapsed().as_secs_f64(),
                levels_of: &|key| variant.levels_of(key.0),
            },
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Kuramoto, Law, Observable, QoiSpec};
    use crate::samplers::WorkModel;
    use crate::stepping::Scheme;

    fn frozen(c: f64) -> Kuramoto<f64> {
        Kuramoto::new(0.0, Law::Constant { value: 0.0 }, Law::Constant { value: c }).unwrap()
    }

    #[test]
    fn frozen_system_is_exact_at_initial_level() {
        let model = frozen(0.3);
        let qoi = QoiSpec::single(Observable::cos());
        let sampler = Sampler::new(&model, &qoi, 1.0, Scheme::EulerMaruyama, WorkModel::default());
        let budget = ErrorBudget::new(0.01, 0.5, 0.05).unwrap();
        let settings = EstimatorSettings::default();
        for variant in [
            MlmcVariant::Joint,
            MlmcVariant::TimeSteps { particles: 10 },
            MlmcVariant::Particles { steps: 8, coupling: ParticleCoupling::Partition },
            MlmcVariant::Particles { steps: 8, coupling: ParticleCoupling::Subset },
        ] {
            let r = run_mlmc(&sampler, &budget, variant, &Hierarchy::default(), &settings, 7).unwrap();
            assert_eq!(r.estimate, vec![0.3f64.cos()], "{}", variant.tag());
            assert_eq!(r.final_level, Some(2.0));
            assert!(r.degenerate_variance);
            assert!(r.levels.iter().all(|l| l.m_taken == 25));
            let work: f64 = r.levels.iter().map(|l| l.m_taken as f64 * l.work_per_sample).sum();
            assert_eq!(r.total_work_units, work);
        }
    }

    #[test]
    fn level_cap_reports_infeasibility() {
        let model = Kuramoto::standard();
        let qoi = QoiSpec::single(Observable::cos());
        let sampler = Sampler::new(&model, &qoi, 1.0, Scheme::EulerMaruyama, WorkModel::default());
        let budget = ErrorBudget::new(1e-9, 0.5, 0.05).unwrap();
        let settings = EstimatorSettings { pilot: 4, initial_level: 0, level_cap: 1 };
        let err = run_mlmc(&sampler, &budget, MlmcVariant::Joint, &Hierarchy::default(), &settings, 1).unwrap_err();
        match err {
            Error::BudgetInfeasible { level, cap, bias, .. } => {
                assert_eq!(level, 1.0);
                assert_eq!(cap, 1.0);
                assert_eq!(bias.len(), 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
