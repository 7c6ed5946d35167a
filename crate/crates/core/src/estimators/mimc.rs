use std::collections::BTreeMap;
use std::time::Instant;

use super::{allocate_keys, assemble, ErrorBudget, EstimateReport, EstimatorSettings, KeyAccumulator, ReportInputs};
use crate::analysis::MultiIndexSet;
use crate::error::{Error, Result};
use crate::model::ParticleModel;
use crate::rng::{SampleKey, StreamContext};
use crate::samplers::{Hierarchy, Sampler};
use crate::scalar::Real;

type Keys = BTreeMap<(u32, u32), KeyAccumulator>;

fn sample_index<F, M>(
    keys: &mut Keys,
    sampler: &Sampler<'_, F, M>,
    hierarchy: &Hierarchy,
    alpha: (u32, u32),
    target: u64,
    master_seed: u64,
) -> Result<()>
where
    F: Real,
    M: ParticleModel<F> + Sync + ?Sized,
{
    let k = sampler.qoi.len();
    let acc = keys.entry(alpha).or_insert_with(|| {
        KeyAccumulator::new(alpha, hierarchy.particles(alpha.0), hierarchy.steps(alpha.1), k)
    });
    let draw = |m: u64| {
        let key = SampleKey::new(master_seed, StreamContext::Mimc)
            .with_index(alpha.0, alpha.1)
            .with_sample(m);
        sampler.mixed_diff(alpha, hierarchy, &key)
    };
    acc.extend_to(target, &draw)
}

fn check_inputs<F: Real, M: ParticleModel<F> + ?Sized>(
    sampler: &Sampler<'_, F, M>,
    hierarchy: &Hierarchy,
    settings: &EstimatorSettings,
) -> Result<()> {
    hierarchy.validate()?;
    settings.validate()?;
    if hierarchy.beta_p != hierarchy.beta_t {
        return Err(Error::invalid("MIMC requires beta_p = beta_t"));
    }
    if sampler.qoi.is_empty() {
        return Err(Error::invalid("no observables"));
    }
    Ok(())
}

/// Allocates and samples the members of `set`, marking every other key as a probe.
fn finish_on_set<F, M>(
    keys: &mut Keys,
    sampler: &Sampler<'_, F, M>,
    hierarchy: &Hierarchy,
    set: &MultiIndexSet,
    component: &ErrorBudget,
    settings: &EstimatorSettings,
    master_seed: u64,
) -> Result<bool>
where
    F: Real,
    M: ParticleModel<F> + Sync + ?Sized,
{
    for acc in keys.values_mut() {
        acc.in_estimate = set.contains(acc.key);
    }
    let members: Vec<&KeyAccumulator> = set.members.iter().map(|a| &keys[a]).collect();
    let (counts, degenerate) = allocate_keys(&members, sampler.qoi.len(), component.variance_target())?;
    for (&alpha, m) in set.members.iter().zip(counts) {
        sample_index(keys, sampler, hierarchy, alpha, m.max(settings.pilot), master_seed)?;
    }
    Ok(degenerate)
}

/// Adaptive MIMC on the index sets `{alpha : w . alpha <= L}`.
///
/// `L` starts at `settings.initial_level` and moves to the next attainable
/// weighted sum until the summed absolute pilot means over the indices that
/// the next set would add fall below the bias target.
pub fn run_mimc<F, M>(
    sampler: &Sampler<'_, F, M>,
    budget: &ErrorBudget,
    hierarchy: &Hierarchy,
    weights: [f64; 2],
    settings: &EstimatorSettings,
    master_seed: u64,
) -> Result<EstimateReport>
where
    F: Real,
    M: ParticleModel<F> + Sync + ?Sized,
{
    let start = Instant::now();
    check_inputs(sampler, hierarchy, settings)?;
    let component = budget.scaled(sampler.qoi.sensitivity());
    let bias_target = component.bias_target();
    let k = sampler.qoi.len();

    let mut keys = Keys::new();
    let mut set = MultiIndexSet::with_weights(weights, settings.initial_level as f64)?;
    let (set, bias) = loop {
        let next = set.grown();
        let boundary = set.boundary(&next);
        for &alpha in set.members.iter().chain(&boundary) {
            sample_index(&mut keys, sampler, hierarchy, alpha, settings.pilot, master_seed)?;
        }
        let bias: Vec<f64> = (0..k)
            .map(|i| boundary.iter().map(|a| keys[a].means()[i].abs()).sum())
            .collect();
        if bias.iter().all(|&b| b <= bias_target) {
            break (set, bias);
        }
        if next.level > settings.level_cap as f64 {
            return Err(Error::BudgetInfeasible {
                level: set.level,
                cap: settings.level_cap as f64,
                bias,
                target: bias_target,
            });
        }
        set = next;
    };
    let degenerate = finish_on_set(&mut keys, sampler, hierarchy, &set, &component, settings, master_seed)?;

    let combine = |e: &[f64]| sampler.qoi.combine(e);
    Ok(assemble(
        &keys,
        ReportInputs {
            method: "mimc",
            master_seed,
            observables: sampler.qoi.names(),
            combine: &combine,
            budget,
            component: &component,
            bias_estimate: bias,
            final_level: Some(set.level),
            index_weights: Some(set.weights),
            degenerate,
            wall_seconds: start.elapsed().as_secs_f64(),
            levels_of: &|key| key,
        },
    ))
}

/// MIMC on a fixed index set: pilots, allocation, no bias control.
pub fn estimate_on_index_set<F, M>(
    sampler: &Sampler<'_, F, M>,
    budget: &ErrorBudget,
    hierarchy: &Hierarchy,
    set: &MultiIndexSet,
    settings: &EstimatorSettings,
    master_seed: u64,
) -> Result<EstimateReport>
where
    F: Real,
    M: ParticleModel<F> + Sync + ?Sized,
{
    let start = Instant::now();
    check_inputs(sampler, hierarchy, settings)?;
    if set.is_empty() {
        return Err(Error::invalid("empty index set"));
    }
    let component = budget.scaled(sampler.qoi.sensitivity());
    let mut keys = Keys::new();
    for &alpha in &set.members {
        sample_index(&mut keys, sampler, hierarchy, alpha, settings.pilot, master_seed)?;
    }
    let degenerate = finish_on_set(&mut keys, sampler, hierarchy, set, &component, settings, master_seed)?;
    let combine = |e: &[f64]| sampler.qoi.combine(e);
    Ok(assemble(
        &keys,
        ReportInputs {
            method: "mimc",
            master_seed,
            observables: sampler.qoi.names(),
            combine: &combine,
            budget,
            component: &component,
            bias_estimate: Vec::new(),
            final_level: Some(set.level),
            index_weights: Some(set.weights),
            degenerate,
            wall_seconds: start.elapsed().as_secs_f64(),
            levels_of: &|key| key,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Kuramoto, Law, Observable, QoiSpec};
    use crate::samplers::WorkModel;
    use crate::stepping::Scheme;

    #[test]
    fn single_index_is_plain_monte_carlo() {
        let model = Kuramoto::standard();
        let qoi = QoiSpec::single(Observable::cos());
        let sampler = Sampler::new(&model, &qoi, 1.0, Scheme::EulerMaruyama, WorkModel::default());
        let budget = ErrorBudget::new(0.2, 0.5, 0.05).unwrap();
        let set = MultiIndexSet::with_weights([2.0, 1.0], 0.0).unwrap();
        let h = Hierarchy::default();
        let r = estimate_on_index_set(&sampler, &budget, &h, &set, &EstimatorSettings::default(), 3).unwrap();
        let m = r.levels[0].m_taken;
        let mean = (0..m)
            .map(|s| {
                let key = SampleKey::new(3, StreamContext::Mimc).with_index(0, 0).with_sample(s);
                sampler.plain(h.p0, h.n0, &key).unwrap().values[0]
            })
            .sum::<f64>()
            / m as f64;
        assert!((r.estimate[0] - mean).abs() < 1e-13);
    }

    #[test]
    fn frozen_system_stays_at_initial_level() {
        let model = Kuramoto::new(0.0, Law::Constant { value: 0.0 }, Law::Constant { value: 0.5 }).unwrap();
        let qoi = QoiSpec::single(Observable::cos());
        let sampler = Sampler::new(&model, &qoi, 1.0, Scheme::EulerMaruyama, WorkModel::default());
        let budget = ErrorBudget::new(0.01, 0.5, 0.05).unwrap();
        let settings = EstimatorSettings::default();
        let r = run_mimc(&sampler, &budget, &Hierarchy::default(), [2.0, 1.0], &settings, 5).unwrap();
        assert_eq!(r.estimate, vec![0.5f64.cos()]);
        assert_eq!(r.bias_estimate, vec![0.0]);
        assert_eq!(r.final_level, Some(2.0));
        // members of I(2) plus the probes (0,3) and (1,1)
        assert_eq!(r.levels.len(), 6);
        assert_eq!(r.levels.iter().filter(|l| !l.in_estimate).count(), 2);
    }

    #[test]
    fn unequal_refinement_ratios_are_rejected() {
        let model = Kuramoto::standard();
        let qoi = QoiSpec::single(Observable::cos());
        let sampler = Sampler::new(&model, &qoi, 1.0, Scheme::EulerMaruyama, WorkModel::default());
        let budget = ErrorBudget::new(0.1, 0.5, 0.05).unwrap();
        let h = Hierarchy { beta_t: 4, ..Hierarchy::default() };
        assert!(run_mimc(&sampler, &budget, &h, [2.0, 1.0], &EstimatorSettings::default(), 1).is_err());
    }
}
