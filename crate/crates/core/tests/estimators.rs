//! Statistical identities and bookkeeping of the estimators on the standard
//! oscillator system.

use meanfield_core::estimators::{collect_samples, run_mimc, run_mlmc};
use meanfield_core::model::Observable;
use meanfield_core::{
    ErrorBudget, EstimateReport, EstimatorSettings, Hierarchy, Kuramoto32, Kuramoto64, MlmcVariant, Qoi32, Qoi64,
    SampleKey, Sampler, Scheme, StreamContext, WorkModel,
};

fn sampler<'a>(model: &'a Kuramoto64, qoi: &'a Qoi64) -> Sampler<'a, f64, Kuramoto64> {
    Sampler::new(model, qoi, 1.0, Scheme::EulerMaruyama, WorkModel::default())
}

fn within_three_se(a: f64, var_a: f64, b: f64, var_b: f64) -> bool {
    (a - b).abs() <= 3.0 * (var_a + var_b).sqrt()
}

#[test]
fn partition_difference_telescopes() {
    let model = Kuramoto64::standard();
    let qoi = Qoi64::new(vec![Observable::cos(), Observable::sin()]);
    let s = sampler(&model, &qoi);
    let m = 4000;
    let (fine_p, steps) = (20, 8);
    let diff = collect_samples((2, 0), (fine_p, steps), 2, m, |i| {
        s.particle_partition_diff(fine_p, 2, steps, &SampleKey::new(1, StreamContext::Rates).with_sample(i))
    })
    .unwrap();
    let plain = |p: usize, batch: u16| {
        collect_samples((0, 0), (p, steps), 2, m, |i| {
            s.plain(p, steps, &SampleKey::new(2, StreamContext::Rates).with_batch(batch).with_sample(i))
        })
        .unwrap()
    };
    let (fine, coarse) = (plain(fine_p, 0), plain(fine_p / 2, 1));
    let mf = m as f64;
    for i in 0..2 {
        let gap = fine.mean[i] - coarse.mean[i];
        let var_gap = (fine.variance[i] + coarse.variance[i]) / mf;
        assert!(
            within_three_se(diff.mean[i], diff.variance[i] / mf, gap, var_gap),
            "observable {i}: {} vs {gap}",
            diff.mean[i]
        );
        // the coupled difference is far less noisy than the independent one
        assert!(diff.variance[i] < fine.variance[i] + coarse.variance[i]);
    }
}

#[test]
fn multilevel_estimate_matches_the_finest_level() {
    let model = Kuramoto64::standard();
    let qoi = Qoi64::single(Observable::cos());
    let s = sampler(&model, &qoi);
    let h = Hierarchy::default();
    let budget = ErrorBudget::new(0.02, 0.5, 0.05).unwrap();
    let settings = EstimatorSettings { pilot: 25, initial_level: 3, level_cap: 3 };
    let r = run_mlmc(&s, &budget, MlmcVariant::Joint, &h, &settings, 4).unwrap();
    assert_eq!(r.final_level, Some(3.0));

    let (p, n) = (h.particles(3), h.steps(3));
    let m = 4000;
    let plain = collect_samples((3, 3), (p, n), 1, m, |i| {
        s.plain(p, n, &SampleKey::new(99, StreamContext::Mc).with_sample(i))
    })
    .unwrap();
    assert!(
        within_three_se(r.estimate[0], r.estimator_variance[0], plain.mean[0], plain.variance[0] / m as f64),
        "{} vs {}",
        r.estimate[0],
        plain.mean[0]
    );
}

fn check_bookkeeping(r: &EstimateReport) {
    let used = || r.levels.iter().filter(|l| l.in_estimate);
    for l in &r.levels {
        assert_eq!(l.total_work, l.m_taken as f64 * l.work_per_sample);
        assert!(l.m_taken >= 2);
    }
    let all_work: f64 = r.levels.iter().map(|l| l.total_work).sum();
    assert_eq!(r.total_work_units, all_work);
    for i in 0..r.observables.len() {
        let sum: f64 = used().map(|l| l.mean[i]).sum();
        assert!((r.estimate[i] - sum).abs() <= 1e-15 * sum.abs().max(1.0));
        // measured after the final sampling, with 10% slack for re-estimation noise
        let achieved: f64 = used().map(|l| l.variance[i] / l.m_taken as f64).sum();
        assert!(achieved <= 1.1 * r.budget.variance_target, "{achieved} > {}", r.budget.variance_target);
    }
}

#[test]
fn reports_meet_the_variance_target() {
    let model = Kuramoto64::standard();
    let qoi = Qoi64::kuramoto_synchronization();
    let s = sampler(&model, &qoi);
    let h = Hierarchy::default();
    let settings = EstimatorSettings::default();
    for tol in [0.1, 0.05] {
        let budget = ErrorBudget::new(tol, 0.5, 0.05).unwrap();
        let mlmc = run_mlmc(&s, &budget, MlmcVariant::Joint, &h, &settings, 3).unwrap();
        check_bookkeeping(&mlmc);
        let mimc = run_mimc(&s, &budget, &h, [2.0, 1.0], &settings, 3).unwrap();
        check_bookkeeping(&mimc);
        assert_eq!(mimc.budget.component_tol, tol / 4.0);
        assert!(mlmc.combined.is_some() && mimc.combined.is_some());
    }
}

fn without_timings(mut r: EstimateReport) -> EstimateReport {
    r.wall_seconds = 0.0;
    r.max_sample_wall_seconds = 0.0;
    for l in &mut r.levels {
        l.wall_seconds = 0.0;
        l.max_sample_wall_seconds = 0.0;
    }
    r
}

#[test]
fn reports_do_not_depend_on_the_worker_count() {
    let model = Kuramoto64::standard();
    let qoi = Qoi64::kuramoto_synchronization();
    let s = sampler(&model, &qoi);
    let h = Hierarchy::default();
    let budget = ErrorBudget::new(0.05, 0.5, 0.05).unwrap();
    let settings = EstimatorSettings::default();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            (
                without_timings(run_mlmc(&s, &budget, MlmcVariant::Joint, &h, &settings, 8).unwrap()),
                without_timings(run_mimc(&s, &budget, &h, [2.0, 1.0], &settings, 8).unwrap()),
            )
        })
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(1));
}

#[test]
fn single_precision_estimators_run() {
    let model = Kuramoto32::standard();
    let qoi = Qoi32::kuramoto_synchronization();
    let s = Sampler::new(&model, &qoi, 1.0f32, Scheme::Milstein, WorkModel::default());
    let budget = ErrorBudget::new(0.1, 0.5, 0.05).unwrap();
    let r = run_mimc(&s, &budget, &Hierarchy::default(), [2.0, 1.0], &EstimatorSettings::default(), 1).unwrap();
    let sync = r.combined.unwrap();
    assert!(sync > 0.0 && sync <= 1.0, "{sync}");
    check_bookkeeping(&r);
}
