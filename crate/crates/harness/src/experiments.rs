//! The experiments behind each CLI subcommand, independent of file output.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use meanfield_core::analysis::{fit_asymptotic_rate, fit_power_law, index_weights, ks_distance_standard_normal, RateFit};
use meanfield_core::estimators::{
    calibrate_mc, collect_samples, run_mc, run_mimc, run_mlmc, McDiscretization, ParticleCoupling,
};
use meanfield_core::{
    DiffSample, EstimateReport, LevelStats, MlmcVariant, ParticleModel, QoiSpec, Real, SampleKey, Sampler,
    StreamContext,
};
use serde::{Deserialize, Serialize};

use crate::config::{CouplingChoice, Precision, RunConfig};
use crate::error::{HarnessError, HarnessResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mc,
    MlmcN,
    MlmcP,
    MlmcJoint,
    Mimc,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Mc, Method::MlmcN, Method::MlmcP, Method::MlmcJoint, Method::Mimc];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mc => "mc",
            Method::MlmcN => "mlmc-n",
            Method::MlmcP => "mlmc-p",
            Method::MlmcJoint => "mlmc-joint",
            Method::Mimc => "mimc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method '{s}' (expected mc, mlmc-n, mlmc-p, mlmc-joint or mimc)"))
    }
}

/// Runs `body` with the configured model, observables and sampler at the configured precision.
macro_rules! with_sampler {
    ($cfg:expr, |$sampler:ident| $body:expr) => {
        match $cfg.model.precision {
            Precision::F64 => {
                let model = $cfg.build_model::<f64>()?;
                let qoi = $cfg.build_qoi::<f64>()?;
                let $sampler = make_sampler::<f64>($cfg, model.as_ref(), &qoi)?;
                $body
            }
            Precision::F32 => {
                let model = $cfg.build_model::<f32>()?;
                let qoi = $cfg.build_qoi::<f32>()?;
                let $sampler = make_sampler::<f32>($cfg, model.as_ref(), &qoi)?;
                $body
            }
        }
    };
}

fn make_sampler<'a, F: Real>(
    cfg: &RunConfig,
    model: &'a (dyn ParticleModel<F> + 'static),
    qoi: &'a QoiSpec<F>,
) -> HarnessResult<Sampler<'a, F, dyn ParticleModel<F>>> {
    Ok(Sampler::new(model, qoi, F::of(cfg.model.horizon), cfg.model.scheme, cfg.work_model()?))
}

/// Runs one estimator at one tolerance.
pub fn run_method(cfg: &RunConfig, method: Method, tol: f64, seed: u64) -> HarnessResult<EstimateReport> {
    with_sampler!(cfg, |sampler| run_with(cfg, &sampler, method, tol, seed))
}

fn run_with<F: Real>(
    cfg: &RunConfig,
    sampler: &Sampler<'_, F, dyn ParticleModel<F>>,
    method: Method,
    tol: f64,
    seed: u64,
) -> HarnessResult<EstimateReport> {
    let budget = cfg.budget.budget(tol)?;
    let hierarchy = cfg.hierarchy.hierarchy();
    let settings = cfg.execution.settings();
    let mc_rule = || -> HarnessResult<(usize, usize)> {
        let rule = match cfg.mc.constant {
            Some(constant) => McDiscretization { constant, ladder_level: 0 },
            None => calibrate_mc(sampler, &budget, &hierarchy, &settings, seed)?,
        };
        Ok(rule.at(tol))
    };
    let report = match method {
        Method::Mc => {
            let (p, n) = mc_rule()?;
            run_mc(sampler, &budget, p, n, &settings, seed)?
        }
        Method::MlmcN => {
            let particles = match cfg.mlmc.fixed_particles {
                Some(p) => p,
                None => mc_rule()?.0,
            };
            run_mlmc(sampler, &budget, MlmcVariant::TimeSteps { particles }, &hierarchy, &settings, seed)?
        }
        Method::MlmcP => {
            let steps = match cfg.mlmc.fixed_steps {
                Some(n) => n,
                None => mc_rule()?.1,
            };
            let coupling = match cfg.mlmc.particle_coupling {
                CouplingChoice::Partition => ParticleCoupling::Partition,
                CouplingChoice::Subset => ParticleCoupling::Subset,
            };
            run_mlmc(sampler, &budget, MlmcVariant::Particles { steps, coupling }, &hierarchy, &settings, seed)?
        }
        Method::MlmcJoint => run_mlmc(sampler, &budget, MlmcVariant::Joint, &hierarchy, &settings, seed)?,
        Method::Mimc => {
            let weights = index_weights(cfg.rates.s_p, cfg.rates.s_t, cfg.rates.gamma_p)?;
            run_mimc(sampler, &budget, &hierarchy, weights, &settings, seed)?
        }
    };
    Ok(report)
}

/// The scalar a run is judged by: the combined quantity when there is one,
/// otherwise the first observable.
pub fn headline(report: &EstimateReport) -> f64 {
    report.combined.unwrap_or(report.estimate[0])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateKind {
    /// `phi` at `P_l` particles and fixed steps.
    Plain,
    /// Time differences at fixed particles.
    Time,
    ParticleSubset,
    ParticlePartition,
    Joint,
    /// Mixed differences at `alpha = (i, i)`.
    MixedDiagonal,
    /// Mixed differences on the full square of indices.
    MixedGrid,
}

impl RateKind {
    pub const ALL: [RateKind; 7] = [
        RateKind::Plain,
        RateKind::Time,
        RateKind::ParticleSubset,
        RateKind::ParticlePartition,
        RateKind::Joint,
        RateKind::MixedDiagonal,
        RateKind::MixedGrid,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RateKind::Plain => "plain",
            RateKind::Time => "time",
            RateKind::ParticleSubset => "particle-subset",
            RateKind::ParticlePartition => "particle-partition",
            RateKind::Joint => "joint",
            RateKind::MixedDiagonal => "mixed-diagonal",
            RateKind::MixedGrid => "mixed-grid",
        }
    }

    fn batch(&self) -> u16 {
        *self as u16
    }

    /// Indices `(l1, l2)` = (particle level, time level) visited for levels `lo..=hi`.
    fn indices(&self, lo: u32, hi: u32) -> Vec<(u32, u32)> {
        match self {
            RateKind::Plain | RateKind::ParticleSubset | RateKind::ParticlePartition => {
                (lo..=hi).map(|l| (l, 0)).collect()
            }
            RateKind::Time => (lo..=hi).map(|l| (0, l)).collect(),
            RateKind::Joint | RateKind::MixedDiagonal => (lo..=hi).map(|l| (l, l)).collect(),
            RateKind::MixedGrid => (lo..=hi).flat_map(|a| (lo..=hi).map(move |b| (a, b))).collect(),
        }
    }

    /// The level a fit regresses on, or `None` for rows that are not a
    /// difference (level 0 of the one-parameter kinds) or not on a line.
    fn fit_level(&self, index: (u32, u32)) -> Option<u32> {
        match self {
            RateKind::Plain => Some(index.0),
            RateKind::Time => (index.1 > 0).then_some(index.1),
            RateKind::ParticleSubset | RateKind::ParticlePartition | RateKind::Joint => {
                (index.0 > 0).then_some(index.0)
            }
            RateKind::MixedDiagonal => (index.0 > 0).then_some(index.0),
            RateKind::MixedGrid => None,
        }
    }
}

impl fmt::Display for RateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RateKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown rate kind '{s}'"))
    }
}

/// One `(kind, index, observable)` row of a rate experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub kind: RateKind,
    pub l1: u32,
    pub l2: u32,
    pub psi: String,
    pub samples: u64,
    pub mean_diff: f64,
    pub var_diff: f64,
    pub mean_fine: f64,
    pub var_fine: f64,
    pub work_per_sample: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub kind: RateKind,
    pub psi: String,
    /// `mean` (of the absolute mean difference) or `var`.
    pub stat: String,
    pub fit: RateFit,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RatesTable {
    pub rows: Vec<RateRow>,
    pub fits: Vec<RateSummary>,
}

impl RatesTable {
    pub fn fit(&self, kind: RateKind, psi: &str, stat: &str) -> Option<&RateFit> {
        self.fits
            .iter()
            .find(|f| f.kind == kind && f.psi == psi && f.stat == stat)
            .map(|f| &f.fit)
    }
}

/// Samples the level differences of one sampler kind on levels `lo..=hi`.
pub fn rates(cfg: &RunConfig, kind: RateKind, lo: u32, hi: u32, samples: u64, seed: u64) -> HarnessResult<RatesTable> {
    if lo > hi {
        return Err(HarnessError::Usage(format!("empty level range {lo}..{hi}")));
    }
    if hi > cfg.execution.level_cap {
        return Err(HarnessError::Usage(format!("level {hi} above the level cap")));
    }
    if samples < 2 {
        return Err(HarnessError::Usage("need at least 2 samples per level".into()));
    }
    with_sampler!(cfg, |sampler| rates_with(cfg, &sampler, kind, lo, hi, samples, seed))
}

fn rates_with<F: Real>(
    cfg: &RunConfig,
    sampler: &Sampler<'_, F, dyn ParticleModel<F>>,
    kind: RateKind,
    lo: u32,
    hi: u32,
    samples: u64,
    seed: u64,
) -> HarnessResult<RatesTable> {
    let h = cfg.hierarchy.hierarchy();
    let p_fix = cfg.fixed_particles();
    let n_fix = cfg.fixed_steps();
    let names = sampler.qoi.names();
    let mut table = RatesTable::default();
    let mut levels: Vec<((u32, u32), LevelStats)> = Vec::new();
    for index in kind.indices(lo, hi) {
        let (a1, a2) = index;
        let resolution = match kind {
            RateKind::Plain | RateKind::ParticleSubset | RateKind::ParticlePartition => (h.particles(a1), n_fix),
            RateKind::Time => (p_fix, h.steps(a2)),
            _ => (h.particles(a1), h.steps(a2)),
        };
        let draw = |m: u64| -> meanfield_core::Result<DiffSample<F>> {
            let key = SampleKey::new(seed, StreamContext::Rates)
                .with_batch(kind.batch())
                .with_index(a1, a2)
                .with_sample(m);
            let (p, n) = resolution;
            match kind {
                RateKind::Plain => sampler.plain(p, n, &key),
                RateKind::Time if a2 == 0 => sampler.plain(p, n, &key),
                RateKind::Time => sampler.time_diff(p, n, h.beta_t, &key),
                RateKind::ParticleSubset | RateKind::ParticlePartition | RateKind::Joint if a1 == 0 => {
                    sampler.plain(p, n, &key)
                }
                RateKind::ParticleSubset => sampler.particle_subset_diff(p, h.beta_p, n, &key),
                RateKind::ParticlePartition => sampler.particle_partition_diff(p, h.beta_p, n, &key),
                RateKind::Joint => sampler.joint_diff(p, h.beta_p, n, h.beta_t, &key),
                RateKind::MixedDiagonal | RateKind::MixedGrid => sampler.mixed_diff(index, &h, &key),
            }
        };
        let stats = collect_samples(index, resolution, names.len(), samples, draw)?;
        for (i, psi) in names.iter().enumerate() {
            table.rows.push(RateRow {
                kind,
                l1: a1,
                l2: a2,
                psi: psi.clone(),
                samples: stats.m_taken,
                mean_diff: stats.mean[i],
                var_diff: stats.variance[i],
                mean_fine: stats.mean_fine[i],
                var_fine: stats.variance_fine[i],
                work_per_sample: stats.work_per_sample,
                wall_seconds: stats.wall_seconds,
            });
        }
        levels.push((index, stats));
    }

    for (i, psi) in names.iter().enumerate() {
        for stat in ["mean", "var"] {
            let points: Vec<(u32, f64)> = levels
                .iter()
                .filter_map(|(index, s)| {
                    let value = if stat == "mean" { s.mean[i].abs() } else { s.variance[i] };
                    kind.fit_level(*index).map(|l| (l, value))
                })
                .collect();
            // too few levels or all-zero differences: no fit, rows still reported
            if let Ok(fit) = fit_asymptotic_rate(&points, cfg.rates.drop_coarsest) {
                table.fits.push(RateSummary { kind, psi: psi.clone(), stat: stat.into(), fit });
            }
        }
    }
    Ok(table)
}

/// One `(method, tol, seed)` run of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub tol: f64,
    pub seed: u64,
    pub estimate: f64,
    pub error_vs_reference: Option<f64>,
    pub total_work: f64,
    pub wall_seconds: f64,
    pub max_sample_work: f64,
    pub max_sample_wall_seconds: f64,
    pub final_level: Option<f64>,
    pub max_particle_level: u32,
    pub max_time_level: u32,
    pub total_samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub method: Method,
    /// `total_work`, `wall_seconds` or `max_sample_work` against `1/tol`.
    pub stat: String,
    pub fit: RateFit,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub fits: Vec<SweepSummary>,
}

impl SweepTable {
    pub fn fit(&self, method: Method, stat: &str) -> Option<&RateFit> {
        self.fits.iter().find(|f| f.method == method && f.stat == stat).map(|f| &f.fit)
    }
}

/// Runs every method at every tolerance and seed. Rows are keyed by
/// `(method, tol, seed)`; repeated keys are rejected.
pub fn sweep(
    cfg: &RunConfig,
    methods: &[Method],
    tols: &[f64],
    seeds: &[u64],
    reference: Option<f64>,
) -> HarnessResult<SweepTable> {
    if tols.len() < 2 {
        return Err(HarnessError::Usage("a sweep needs at least 2 tolerances".into()));
    }
    if methods.is_empty() || seeds.is_empty() {
        return Err(HarnessError::Usage("a sweep needs at least one method and one seed".into()));
    }
    let mut keys = BTreeSet::new();
    for &m in methods {
        for &t in tols {
            if !(t > 0.0) {
                return Err(HarnessError::Usage(format!("tolerance {t} must be positive")));
            }
            for &s in seeds {
                if !keys.insert((m, t.to_bits(), s)) {
                    return Err(HarnessError::Usage(format!("duplicate sweep row ({m}, {t}, {s})")));
                }
            }
        }
    }
    let mut table = SweepTable::default();
    for &method in methods {
        for &tol in tols {
            for &seed in seeds {
                let r = run_method(cfg, method, tol, seed)?;
                let estimate = headline(&r);
                table.rows.push(SweepRow {
                    method,
                    tol,
                    seed,
                    estimate,
                    error_vs_reference: reference.map(|x| (estimate - x).abs()),
                    total_work: r.total_work_units,
                    wall_seconds: r.wall_seconds,
                    max_sample_work: r.max_sample_work,
                    max_sample_wall_seconds: r.max_sample_wall_seconds,
                    final_level: r.final_level,
                    max_particle_level: r.max_particle_level,
                    max_time_level: r.max_time_level,
                    total_samples: r.total_samples,
                });
            }
        }
        for stat in ["total_work", "wall_seconds", "max_sample_work"] {
            let points: Vec<(f64, f64)> = table
                .rows
                .iter()
                .filter(|r| r.method == method)
                .map(|r| {
                    let y = match stat {
                        "total_work" => r.total_work,
                        "wall_seconds" => r.wall_seconds,
                        _ => r.max_sample_work,
                    };
                    (1.0 / r.tol, y)
                })
                .collect();
            if let Ok(fit) = fit_power_law(&points) {
                table.fits.push(SweepSummary { method, stat: stat.into(), fit });
            }
        }
    }
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpSummary {
    pub runs: usize,
    pub mean: f64,
    pub std_dev: f64,
    /// KS distance of the standardized estimates to N(0, 1); absent when degenerate.
    pub ks_distance: Option<f64>,
    /// All estimates were identical.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpTable {
    pub method: Method,
    pub tol: f64,
    /// `(seed, estimate)` per run.
    pub runs: Vec<(u64, f64)>,
    pub summary: PpSummary,
}

/// Repeats one estimator `runs` times with seeds `base_seed + r` and measures
/// how normal the estimates look.
pub fn ppcheck(cfg: &RunConfig, method: Method, tol: f64, runs: usize, base_seed: u64) -> HarnessResult<PpTable> {
    if runs < 50 {
        return Err(HarnessError::Usage(format!("ppcheck needs at least 50 runs, got {runs}")));
    }
    let mut out = Vec::with_capacity(runs);
    for r in 0..runs as u64 {
        let seed = base_seed.wrapping_add(r);
        out.push((seed, headline(&run_method(cfg, method, tol, seed)?)));
    }
    Ok(PpTable { method, tol, summary: pp_summary(&out.iter().map(|r| r.1).collect::<Vec<_>>())?, runs: out })
}

pub fn pp_summary(estimates: &[f64]) -> HarnessResult<PpSummary> {
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let var = estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std_dev = var.sqrt();
    let degenerate = estimates.iter().all(|&x| x == estimates[0]);
    let ks_distance = if degenerate {
        None
    } else {
        let z: Vec<f64> = estimates.iter().map(|x| (x - mean) / std_dev).collect();
        Some(ks_distance_standard_normal(&z)?)
    };
    Ok(PpSummary { runs: estimates.len(), mean, std_dev, ks_distance, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        for k in RateKind::ALL {
            assert_eq!(k.as_str().parse::<RateKind>().unwrap(), k);
        }
        assert!("mlmc".parse::<Method>().is_err());
    }

    #[test]
    fn rate_indices() {
        assert_eq!(RateKind::Time.indices(0, 2), vec![(0, 0), (0, 1), (0, 2)]);
        assert_eq!(RateKind::MixedDiagonal.indices(1, 2), vec![(1, 1), (2, 2)]);
        assert_eq!(RateKind::MixedGrid.indices(0, 1).len(), 4);
        assert_eq!(RateKind::Time.fit_level((0, 0)), None);
        assert_eq!(RateKind::Plain.fit_level((0, 0)), Some(0));
    }

    #[test]
    fn pp_summary_flags_degenerate_input() {
        let s = pp_summary(&[0.5; 60]).unwrap();
        assert!(s.degenerate);
        assert!(s.ks_distance.is_none());
        assert_eq!(s.std_dev, 0.0);
    }
}
