use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::mlmc::level_sample;
use super::{allocate_keys, assemble, ErrorBudget, EstimateReport, EstimatorSettings, KeyAccumulator, MlmcVariant, ReportInputs};
use crate::error::{Error, Result};
use crate::model::ParticleModel;
use crate::rng::{SampleKey, StreamContext};
use crate::samplers::{Hierarchy, Sampler};
use crate::scalar::Real;

/// Plain Monte Carlo at fixed `(particles, steps)`. There is no bias control:
/// the caller picks the discretization.
pub fn run_mc<F, M>(
    sampler: &Sampler<'_, F, M>,
    budget: &ErrorBudget,
    particles: usize,
    steps: usize,
    settings: &EstimatorSettings,
    master_seed: u64,
) -> Result<EstimateReport>
where
    F: Real,
    M: ParticleModel<F> + Sync + ?Sized,
{
    let start = Instant::now();
    settings.validate()?;
    if particles == 0 || steps == 0 {
        return Err(Error::invalid("MC needs at least one particle and one step"));
    }
    let k = sampler.qoi.len();
    if k == 0 {
        return Err(Error::invalid("no observables"));
    }
    let component = budget.scaled(sampler.qoi.sensitivity());
    let mut keys = BTreeMap::new();
    let acc = keys.entry((0, 0)).or_insert_with(|| KeyAccumulator::new((0, 0), particles, steps, k));
    let draw = |m: u64| {
        let key = SampleKey::new(master_seed, StreamContext::Mc).with_sample(m);
        sampler.plain(particles, steps, &key)
    };
    acc.extend_to(settings.pilot, &draw)?;
    let (counts, degenerate) = allocate_keys(&[&*acc], k, component.variance_target())?;
    acc.extend_to(counts[0].max(settings.pilot), &draw)?;

    let combine = |e: &[f64]| sampler.qoi.combine(e);
    Ok(assemble(
        &keys,
        ReportInputs {
            method: "mc",
            master_seed,
            observables: sampler.qoi.names(),
            combine: &combine,
            budget,
            component: &component,
            bias_estimate: Vec::new(),
            final_level: None,
            index_weights: None,
            degenerate,
            wall_seconds: start.elapsed().as_secs_f64(),
            levels_of: &|key| key,
        },
    ))
}

/// `P = N = ceil(constant / TOL)`, the MC discretization rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McDiscretization {
    pub constant: f64,
    /// Ladder level at which the bias rule was first met.
    pub ladder_level: u32,
}

impl McDiscretization {
    pub fn at(&self, tol: f64) -> (usize, usize) {
        let n = ((self.constant / tol).ceil() as usize).max(1);
        (n, n)
    }
}

/// Calibrates the MC constant: walks the joint hierarchy from level 1 and
/// stops at the first level whose pilot difference meets the bias target.
/// The constant is `TOL * max(P_l, N_l)` at that level.
pub fn calibrate_mc<F, M>(
    sampler: &Sampler<'_, F, M>,
    budget: &ErrorBudget,
    hierarchy: &Hierarchy,
    settings: &EstimatorSettings,
    master_seed: u64,
) -> Result<McDiscretization>
where
    F: Real,
    M: ParticleModel<F> + Sync + ?Sized,
{
    hierarchy.validate()?;
    settings.validate()?;
    let k = sampler.qoi.len();
    let target = budget.scaled(sampler.qoi.sensitivity()).bias_target();
    let mut last = Vec::new();
    for level in 1..=settings.level_cap {
        let (p, n) = (hierarchy.particles(level), hierarchy.steps(level));
        let mut acc = KeyAccumulator::new((level, 0), p, n, k);
        let draw = |m: u64| {
            let key = SampleKey::new(master_seed, StreamContext::Calibration)
                .with_index(level, 0)
                .with_sample(m);
            level_sample(sampler, MlmcVariant::Joint, hierarchy, level, &key)
        };
        acc.extend_to(settings.pilot, &draw)?;
        last = acc.means().iter().map(|m| m.abs()).collect();
        if last.iter().all(|&b| b <= target) {
            return Ok(McDiscretization { constant: budget.tol * p.max(n) as f64, ladder_level: level });
        }
    }
    Err(Error::BudgetInfeasible {
        level: settings.level_cap as f64,
        cap: settings.level_cap as f64,
        bias: last,
        target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Kuramoto, Law, Observable, QoiSpec};
    use crate::samplers::WorkModel;
    use crate::stepping::Scheme;

    #[test]
    fn constant_observable_keeps_pilot_size() {
        let model = Kuramoto::standard();
        let qoi = QoiSpec::single(Observable::constant(1.0));
        let sampler = Sampler::new(&model, &qoi, 1.0, Scheme::EulerMaruyama, WorkModel::default());
        let budget = ErrorBudget::new(0.1, 0.5, 0.05).unwrap();
        let r = run_mc(&sampler, &budget, 10, 8, &EstimatorSettings::default(), 9).unwrap();
        assert_eq!(r.estimate, vec![1.0]);
        assert_eq!(r.levels[0].m_taken, 25);
        assert_eq!(r.levels[0].variance, vec![0.0]);
        assert_eq!(r.total_work_units, 25.0 * 8.0 * 100.0);
        assert!(r.degenerate_variance);
    }

    #[test]
    fn drift_only_oscillators_average_the_frequency() {
        // no coupling, no noise, x0 = 0: X(T) = theta * T
        let model = Kuramoto::new(0.0, Law::Uniform { low: -0.2, high: 0.2 }, Law::Constant { value: 0.0 })
            .unwrap()
            .with_coupling(0.0);
        let qoi = QoiSpec::single(Observable::identity());
        let sampler = Sampler::new(&model, &qoi, 1.0, Scheme::EulerMaruyama, WorkModel::default());
        let budget = ErrorBudget::new(0.01, 0.5, 0.05).unwrap();
        let r = run_mc(&sampler, &budget, 4, 2, &EstimatorSettings::default(), 11).unwrap();
        let m = r.levels[0].m_taken;
        // Var(phi) = Var(theta) / P = (0.4^2 / 12) / 4; M = ceil(V / target) up to sampling noise
        let v = 0.4f64.powi(2) / 12.0 / 4.0;
        let target = budget.variance_target();
        assert!((m as f64) > 0.5 * v / target && (m as f64) < 1.5 * v / target, "m = {m}");
        assert!(r.estimate[0].abs() <= budget.c_eps * target.sqrt() * 1.5);
        assert_eq!(r.total_work_units, m as f64 * 2.0 * 16.0);
    }

    #[test]
    fn calibration_picks_a_resolution() {
        let model = Kuramoto::standard();
        let qoi = QoiSpec::single(Observable::cos());
        let sampler = Sampler::new(&model, &qoi, 1.0, Scheme::EulerMaruyama, WorkModel::default());
        let budget = ErrorBudget::new(0.1, 0.5, 0.05).unwrap();
        let cal = calibrate_mc(&sampler, &budget, &Hierarchy::default(), &EstimatorSettings::default(), 2).unwrap();
        assert!(cal.ladder_level >= 1);
        let (p, n) = cal.at(0.1);
        assert_eq!(p, n);
        assert!(p >= 10);
        assert_eq!(cal.at(0.05).0, (cal.constant / 0.05).ceil() as usize);
    }
}
