//! Exact identities of the couplings between discretizations.

use meanfield_core::model::{draw_inputs, kuramoto_drift, Kuramoto, LinearModel, Observable};
use meanfield_core::samplers::phi;
use meanfield_core::stepping::{coarsen_increments, simulate_system};
use meanfield_core::{Hierarchy, Law, Qoi64, Sampler, SampleKey, Scheme, StreamContext, WorkModel};
use proptest::prelude::*;

fn key(sample: u64) -> SampleKey {
    SampleKey::new(17, StreamContext::Rates).with_index(3, 1).with_sample(sample)
}

fn frozen(c: f64) -> Kuramoto<f64> {
    Kuramoto::new(0.0, Law::Constant { value: 0.0 }, Law::Constant { value: c }).unwrap()
}

/// Noisy but interaction-free: every particle follows its own SDE.
fn decoupled() -> LinearModel<f64> {
    LinearModel::new(
        -0.7,
        0.3,
        0.2,
        Law::Normal { mean: 0.1, variance: 0.5 },
        Law::Uniform { low: -1.0, high: 1.0 },
    )
    .unwrap()
}

#[test]
fn frozen_system_differences_vanish() {
    let model = frozen(0.4);
    let qoi = Qoi64::new(vec![Observable::cos(), Observable::sin()]);
    let s = Sampler::new(&model, &qoi, 1.0, Scheme::EulerMaruyama, WorkModel::default());
    let h = Hierarchy::default();
    for m in 0..4 {
        let k = key(m);
        assert_eq!(s.time_diff(10, 16, 2, &k).unwrap().values, vec![0.0, 0.0]);
        assert_eq!(s.particle_subset_diff(20, 2, 8, &k).unwrap().values, vec![0.0, 0.0]);
        assert_eq!(s.particle_partition_diff(20, 2, 8, &k).unwrap().values, vec![0.0, 0.0]);
        assert_eq!(s.joint_diff(20, 2, 16, 2, &k).unwrap().values, vec![0.0, 0.0]);
        for alpha in [(1, 0), (0, 1), (1, 1), (2, 3)] {
            assert_eq!(s.mixed_diff(alpha, &h, &k).unwrap().values, vec![0.0, 0.0], "{alpha:?}");
        }
        assert_eq!(s.plain(5, 4, &k).unwrap().values, vec![0.4f64.cos(), 0.4f64.sin()]);
    }
}

#[test]
fn interaction_free_partition_is_a_regrouping() {
    let model = decoupled();
    let qoi = Qoi64::new(vec![Observable::identity(), Observable::cos()]);
    let s = Sampler::new(&model, &qoi, 1.0, Scheme::Milstein, WorkModel::default());
    let h = Hierarchy::default();
    for m in 0..8 {
        let k = key(m);
        assert_eq!(s.particle_partition_diff(40, 2, 8, &k).unwrap().values, vec![0.0, 0.0]);
        assert_eq!(s.particle_partition_diff(60, 3, 4, &k).unwrap().values, vec![0.0, 0.0]);
        // only the time coupling is left in the joint and mixed differences
        let joint = s.joint_diff(40, 2, 16, 2, &k).unwrap().values;
        let time = s.time_diff(40, 16, 2, &k).unwrap().values;
        assert_eq!(joint, time);
        assert_eq!(s.mixed_diff((2, 0), &h, &k).unwrap().values, vec![0.0, 0.0]);
        assert_eq!(s.mixed_diff((1, 2), &h, &k).unwrap().values, vec![0.0, 0.0]);
    }
}

#[test]
fn constant_drift_time_coupling_is_exact() {
    // no noise and no interaction; Euler is exact for a constant drift
    let model = LinearModel::new(0.0, 0.0, 0.0, Law::Constant { value: 0.25 }, Law::Constant { value: 0.75 }).unwrap();
    let qoi = Qoi64::single(Observable::identity());
    let s = Sampler::new(&model, &qoi, 1.0, Scheme::EulerMaruyama, WorkModel::default());
    for fine in [2, 4, 8, 64, 1024] {
        let d = s.time_diff(7, fine, 2, &key(fine as u64)).unwrap();
        assert_eq!(d.values, vec![0.0]);
        assert_eq!(d.fine, vec![1.0]);
    }
    // oscillators at equal phase and frequency see no interaction either
    let model = Kuramoto::new(0.0, Law::Constant { value: 0.5 }, Law::Constant { value: -0.25 }).unwrap();
    let qoi = Qoi64::single(Observable::identity());
    let s = Sampler::new(&model, &qoi, 1.0, Scheme::EulerMaruyama, WorkModel::default());
    for fine in [2, 8, 32] {
        assert_eq!(s.time_diff(5, fine, 2, &key(1)).unwrap().values, vec![0.0]);
        assert_eq!(s.joint_diff(10, 2, fine, 2, &key(1)).unwrap().values, vec![0.0]);
    }
}

#[test]
fn coarse_paths_see_the_summed_increments() {
    let model = Kuramoto::<f64>::standard();
    let inputs = draw_inputs(&key(0), &model, 6, 16, 1.0).unwrap();
    for input in &inputs {
        let coarse = coarsen_increments(&input.increments, 1, 4).unwrap();
        for (k, c) in coarse.iter().enumerate() {
            let direct = input.increments[4 * k..4 * k + 4].iter().fold(0.0, |a, b| a + b);
            assert_eq!(c.to_bits(), direct.to_bits());
        }
    }
    // a 4-step simulation on 16-step inputs matches one on pre-coarsened inputs
    let mut pre = inputs.clone();
    for input in &mut pre {
        input.increments = coarsen_increments(&input.increments, 1, 4).unwrap();
        input.n_fine = 4;
    }
    let a = simulate_system(&model, &inputs, 4, 1.0, Scheme::EulerMaruyama).unwrap();
    let b = simulate_system(&model, &pre, 4, 1.0, Scheme::EulerMaruyama).unwrap();
    assert_eq!(a.terminal_states, b.terminal_states);
}

#[test]
fn milstein_matches_euler_for_additive_noise() {
    let model = Kuramoto::<f64>::standard();
    let inputs = draw_inputs(&key(5), &model, 20, 32, 1.0).unwrap();
    let em = simulate_system(&model, &inputs, 32, 1.0, Scheme::EulerMaruyama).unwrap();
    let mil = simulate_system(&model, &inputs, 32, 1.0, Scheme::Milstein).unwrap();
    assert_eq!(em.terminal_states, mil.terminal_states);
}

#[test]
fn work_units_follow_the_closed_form() {
    let model = Kuramoto::<f64>::standard();
    let qoi = Qoi64::single(Observable::cos());
    let s = Sampler::new(&model, &qoi, 1.0, Scheme::EulerMaruyama, WorkModel::default());
    let k = key(0);
    let w = |n: usize, p: usize| (n * p * p) as f64;
    assert_eq!(s.plain(5, 4, &k).unwrap().work_units, 100.0);
    assert_eq!(s.time_diff(10, 8, 2, &k).unwrap().work_units, w(8, 10) + w(4, 10));
    assert_eq!(s.particle_subset_diff(10, 2, 8, &k).unwrap().work_units, w(8, 10) + w(8, 5));
    assert_eq!(s.particle_partition_diff(10, 2, 8, &k).unwrap().work_units, w(8, 10) + 2.0 * w(8, 5));
    assert_eq!(s.joint_diff(20, 2, 16, 2, &k).unwrap().work_units, w(16, 20) + 2.0 * w(8, 10));
    let h = Hierarchy::default();
    let mixed = w(8, 10) + 2.0 * w(8, 5) + w(4, 10) + 2.0 * w(4, 5);
    assert_eq!(s.mixed_diff((1, 1), &h, &k).unwrap().work_units, mixed);
    assert_eq!(s.mixed_work((1, 1), &h), mixed);
}

#[test]
fn same_key_same_sample_in_single_precision() {
    let model = Kuramoto::<f32>::new(0.4, Law::Uniform { low: -0.2, high: 0.2 }, Law::Normal { mean: 0.0, variance: 0.2 })
        .unwrap();
    let qoi = meanfield_core::Qoi32::new(vec![Observable::cos(), Observable::sin()]);
    let s = Sampler::new(&model, &qoi, 1.0f32, Scheme::EulerMaruyama, WorkModel::default());
    let h = Hierarchy::default();
    let a = s.mixed_diff((2, 2), &h, &key(3)).unwrap();
    let b = s.mixed_diff((2, 2), &h, &key(3)).unwrap();
    assert_eq!(a.values, b.values);
    assert!(a.values.iter().all(|v| v.is_finite()));
    // the frozen system stays exact in f32 too
    let model = Kuramoto::<f32>::new(0.0, Law::Constant { value: 0.0 }, Law::Constant { value: 0.3 }).unwrap();
    let s = Sampler::new(&model, &qoi, 1.0f32, Scheme::EulerMaruyama, WorkModel::default());
    assert_eq!(s.joint_diff(20, 2, 16, 2, &key(0)).unwrap().values, vec![0.0f32, 0.0]);
}

#[test]
fn phi_is_the_particle_mean() {
    let qoi = Qoi64::new(vec![Observable::identity(), Observable::sin()]);
    let v = phi(&qoi, &[0.0, std::f64::consts::FRAC_PI_2], 1).unwrap();
    assert_eq!(v, vec![std::f64::consts::FRAC_PI_4, 0.5]);
}

proptest! {
    #[test]
    fn drift_is_permutation_invariant(
        states in prop::collection::vec(-10.0f64..10.0, 1..40),
        seed in any::<u64>(),
        theta in -1.0f64..1.0,
    ) {
        let n = states.len();
        // Fisher-Yates driven by a small LCG so the permutation is reproducible
        let mut perm: Vec<usize> = (0..n).collect();
        let mut x = seed | 1;
        for i in (1..n).rev() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (x >> 33) as usize % (i + 1));
        }
        let permuted: Vec<f64> = perm.iter().map(|&i| states[i]).collect();
        for (new_pos, &orig) in perm.iter().enumerate() {
            let a = kuramoto_drift(0.0, orig, &states, theta).unwrap();
            let b = kuramoto_drift(0.0, new_pos, &permuted, theta).unwrap();
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn coarsening_preserves_the_total(
        fine in prop::collection::vec(-1.0f64..1.0, 1..16),
        factor in 2usize..5,
        dim in 1usize..3,
    ) {
        let steps = fine.len() * factor;
        let fine: Vec<f64> = (0..steps * dim).map(|i| fine[i % fine.len()] * (1.0 + i as f64)).collect();
        let coarse = coarsen_increments(&fine, dim, factor).unwrap();
        for j in 0..dim {
            for k in 0..steps / factor {
                let mut acc = fine[k * factor * dim + j];
                for i in 1..factor {
                    acc += fine[(k * factor + i) * dim + j];
                }
                prop_assert_eq!(coarse[k * dim + j].to_bits(), acc.to_bits());
            }
        }
    }
}
