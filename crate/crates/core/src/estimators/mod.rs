//! MC, MLMC and MIMC estimators with bias/variance error splitting.
//!
//! All estimators share one sampling engine. The samples of a level or
//! multi-index are keyed by `(master seed, method, index, sample number)`, are
//! evaluated in fixed-size chunks on the current rayon pool, and are reduced
//! in ascending sample order. Results are therefore bit-identical for any
//! number of worker threads.

mod allocation;
mod mc;
mod mimc;
mod mlmc;
mod normal;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::DiffSample;
use crate::scalar::Real;

pub use allocation::{allocate_samples, Allocation};
pub use mc::{calibrate_mc, run_mc, McDiscretization};
pub use mimc::{estimate_on_index_set, run_mimc};
pub use mlmc::{run_mlmc, MlmcVariant, ParticleCoupling};
pub use normal::{inverse_normal_cdf, normal_cdf};

/// Tolerance split into a bias target and a variance target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub tol: f64,
    /// Share of the tolerance given to the statistical error.
    pub theta: f64,
    /// Allowed failure probability.
    pub epsilon: f64,
    /// `Phi(c_eps) = 1 - epsilon / 2`.
    pub c_eps: f64,
}

impl ErrorBudget {
    pub fn new(tol: f64, theta: f64, epsilon: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::invalid(format!("theta must be in (0, 1), got {theta}")));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::invalid(format!("epsilon must be in (0, 1), got {epsilon}")));
        }
        let c_eps = inverse_normal_cdf(1.0 - epsilon / 2.0)?;
        Ok(Self { tol, theta, epsilon, c_eps })
    }

    pub fn bias_target(&self) -> f64 {
        (1.0 - self.theta) * self.tol
    }

    pub fn variance_target(&self) -> f64 {
        (self.theta * self.tol / self.c_eps).powi(2)
    }

    /// The same split applied to `tol / divisor`.
    pub fn scaled(&self, divisor: f64) -> Self {
        Self { tol: self.tol / divisor, ..*self }
    }
}

/// Knobs shared by the adaptive estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    /// Samples taken on every new level or index before anything is estimated.
    pub pilot: u64,
    /// First level (MLMC) or index-set level (MIMC) tried.
    pub initial_level: u32,
    /// Largest level tried before giving up.
    pub level_cap: u32,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self { pilot: 25, initial_level: 2, level_cap: 12 }
    }
}

impl EstimatorSettings {
    pub fn validate(&self) -> Result<()> {
        if self.pilot < 2 {
            return Err(Error::invalid("pilot size must be >= 2 to estimate a variance"));
        }
        if self.initial_level > self.level_cap {
            return Err(Error::invalid("initial level exceeds the level cap"));
        }
        Ok(())
    }
}

/// Streaming mean and variance (Welford), mergeable in a fixed order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        self.mean += delta * nb / n;
        self.m2 += other.m2 + delta * delta * na * nb / n;
        self.count += other.count;
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }
}

/// Accumulated statistics of one level or multi-index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    /// `(l, 0)` for a level, `(alpha_1, alpha_2)` for a multi-index.
    pub key: (u32, u32),
    /// Particles and time steps of the finest term.
    pub particles: usize,
    pub steps: usize,
    pub m_taken: u64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub mean_fine: Vec<f64>,
    pub variance_fine: Vec<f64>,
    pub work_per_sample: f64,
    pub total_work: f64,
    /// Summed per-sample wall time.
    pub wall_seconds: f64,
    pub max_sample_wall_seconds: f64,
    /// False for MIMC boundary probes that only informed the bias check.
    pub in_estimate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetEcho {
    pub tol: f64,
    pub theta: f64,
    pub epsilon: f64,
    pub c_eps: f64,
    /// Tolerance each observable is estimated to.
    pub component_tol: f64,
    pub bias_target: f64,
    pub variance_target: f64,
}

impl BudgetEcho {
    fn new(budget: &ErrorBudget, component: &ErrorBudget) -> Self {
        Self {
            tol: budget.tol,
            theta: budget.theta,
            epsilon: budget.epsilon,
            c_eps: budget.c_eps,
            component_tol: component.tol,
            bias_target: component.bias_target(),
            variance_target: component.variance_target(),
        }
    }
}

/// Final estimate with everything needed to audit it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: String,
    pub master_seed: u64,
    pub observables: Vec<String>,
    /// One estimate per observable: the sum of the in-estimate level means.
    pub estimate: Vec<f64>,
    /// Combined quantity of interest, when the observables carry a combiner.
    pub combined: Option<f64>,
    /// `sum_l V_l / M_l` per observable.
    pub estimator_variance: Vec<f64>,
    /// Bias proxy per observable at acceptance; empty for plain MC.
    pub bias_estimate: Vec<f64>,
    pub total_work_units: f64,
    pub total_samples: u64,
    pub wall_seconds: f64,
    /// Work of the most expensive single sample drawn.
    pub max_sample_work: f64,
    pub max_sample_wall_seconds: f64,
    pub max_particle_level: u32,
    pub max_time_level: u32,
    pub max_particles: usize,
    pub max_steps: usize,
    /// Final MLMC level `L` or MIMC index-set level.
    pub final_level: Option<f64>,
    pub index_weights: Option<[f64; 2]>,
    /// Every measured variance was zero, so no allocation beyond the pilots happened.
    pub degenerate_variance: bool,
    pub budget: BudgetEcho,
    pub levels: Vec<LevelStats>,
}

/// Running statistics of one key while an estimator is active.
#[derive(Clone, Debug)]
pub(crate) struct KeyAccumulator {
    key: (u32, u32),
    particles: usize,
    steps: usize,
    values: Vec<Moments>,
    fine: Vec<Moments>,
    work_per_sample: Option<f64>,
    wall_seconds: f64,
    max_wall: f64,
    in_estimate: bool,
}

const CHUNK: u64 = 16;

#[derive(Clone, Debug)]
struct Partial {
    values: Vec<Moments>,
    fine: Vec<Moments>,
    work: Option<f64>,
    wall: f64,
    max_wall: f64,
}

impl KeyAccumulator {
    pub(crate) fn new(key: (u32, u32), particles: usize, steps: usize, observables: usize) -> Self {
        Self {
            key,
            particles,
            steps,
            values: vec![Moments::default(); observables],
            fine: vec![Moments::default(); observables],
            work_per_sample: None,
            wall_seconds: 0.0,
            max_wall: 0.0,
            in_estimate: true,
        }
    }

    pub(crate) fn taken(&self) -> u64 {
        self.values.first().map_or(0, |m| m.count)
    }

    pub(crate) fn means(&self) -> Vec<f64> {
        self.values.iter().map(|m| m.mean).collect()
    }

    pub(crate) fn variance(&self, i: usize) -> f64 {
        self.values[i].variance()
    }

    pub(crate) fn work(&self) -> f64 {
        self.work_per_sample.unwrap_or(0.0)
    }

    /// Draws samples `taken()..target` and folds them in.
    pub(crate) fn extend_to<F, S>(&mut self, target: u64, draw: &S) -> Result<()>
    where
        F: Real,
        S: Fn(u64) -> Result<DiffSample<F>> + Sync,
    {
        let start = self.taken();
        if target <= start {
            return Ok(());
        }
        let k = self.values.len();
        let chunks: Vec<(u64, u64)> = (start..target)
            .step_by(CHUNK as usize)
            .map(|a| (a, (a + CHUNK).min(target)))
            .collect();
        let parts: Vec<Result<Partial>> = chunks
            .par_iter()
            .map(|&(a, b)| {
                let mut part = Partial {
                    values: vec![Moments::default(); k],
                    fine: vec![Moments::default(); k],
                    work: None,
                    wall: 0.0,
                    max_wall: 0.0,
                };
                for m in a..b {
                    let s = draw(m)?;
                    if s.values.len() != k || s.fine.len() != k {
                        return Err(Error::invalid("sampler returned the wrong number of observables"));
                    }
                    for i in 0..k {
                        part.values[i].push(s.values[i].to_f64_lossy());
                        part.fine[i].push(s.fine[i].to_f64_lossy());
                    }
                    match part.work {
                        None => part.work = Some(s.work_units),
                        Some(w) if w != s.work_units => {
                            return Err(Error::invalid("work per sample varies within a level"))
                        }
                        _ => {}
                    }
                    part.wall += s.wall_seconds;
                    part.max_wall = part.max_wall.max(s.wall_seconds);
                }
                Ok(part)
            })
            .collect();
        for part in parts {
            let part = part?;
            for i in 0..k {
                self.values[i].merge(&part.values[i]);
                self.fine[i].merge(&part.fine[i]);
            }
            if self.work_per_sample.is_none() {
                self.work_per_sample = part.work;
            }
            self.wall_seconds += part.wall;
            self.max_wall = self.max_wall.max(part.max_wall);
        }
        Ok(())
    }

    pub(crate) fn stats(&self) -> LevelStats {
        let m = self.taken();
        let w = self.work();
        LevelStats {
            key: self.key,
            particles: self.particles,
            steps: self.steps,
            m_taken: m,
            mean: self.means(),
            variance: self.values.iter().map(Moments::variance).collect(),
            mean_fine: self.fine.iter().map(|f| f.mean).collect(),
            variance_fine: self.fine.iter().map(Moments::variance).collect(),
            work_per_sample: w,
            total_work: m as f64 * w,
            wall_seconds: self.wall_seconds,
            max_sample_wall_seconds: self.max_wall,
            in_estimate: self.in_estimate,
        }
    }
}

/// Draws samples `0..samples` of one key with the deterministic chunked engine.
/// `draw` maps a sample number to its sample.
pub fn collect_samples<F, S>(
    key: (u32, u32),
    resolution: (usize, usize),
    observables: usize,
    samples: u64,
    draw: S,
) -> Result<LevelStats>
where
    F: Real,
    S: Fn(u64) -> Result<DiffSample<F>> + Sync,
{
    let mut acc = KeyAccumulator::new(key, resolution.0, resolution.1, observables);
    acc.extend_to(samples, &draw)?;
    Ok(acc.stats())
}

/// Sample counts that meet every observable's variance target on the given keys.
pub(crate) fn allocate_keys(
    keys: &[&KeyAccumulator],
    observables: usize,
    variance_target: f64,
) -> Result<(Vec<u64>, bool)> {
    let works: Vec<f64> = keys.iter().map(|k| k.work().max(f64::MIN_POSITIVE)).collect();
    let mut counts = vec![1u64; keys.len()];
    let mut degenerate = true;
    for i in 0..observables {
        let variances: Vec<f64> = keys.iter().map(|k| k.variance(i)).collect();
        let alloc = allocate_samples(&variances, &works, variance_target)?;
        degenerate &= alloc.degenerate;
        for (c, m) in counts.iter_mut().zip(alloc.samples) {
            *c = (*c).max(m);
        }
    }
    Ok((counts, degenerate))
}

/// Assembles the report from accumulated keys, in key order.
pub(crate) struct ReportInputs<'a> {
    pub method: &'a str,
    pub master_seed: u64,
    pub observables: Vec<String>,
    pub combine: &'a dyn Fn(&[f64]) -> Option<f64>,
    pub budget: &'a ErrorBudget,
    pub component: &'a ErrorBudget,
    pub bias_estimate: Vec<f64>,
    pub final_level: Option<f64>,
    pub index_weights: Option<[f64; 2]>,
    pub degenerate: bool,
    pub wall_seconds: f64,
    /// Maps a key to its (particle level, time level).
    pub levels_of: &'a dyn Fn((u32, u32)) -> (u32, u32),
}

pub(crate) fn assemble(keys: &BTreeMap<(u32, u32), KeyAccumulator>, inputs: ReportInputs<'_>) -> EstimateReport {
    let k = inputs.observables.len();
    let levels: Vec<LevelStats> = keys.values().map(KeyAccumulator::stats).collect();
    let used = || levels.iter().filter(|l| l.in_estimate);
    let estimate: Vec<f64> = (0..k).map(|i| used().map(|l| l.mean[i]).sum()).collect();
    let estimator_variance = (0..k)
        .map(|i| used().map(|l| l.variance[i] / l.m_taken.max(1) as f64).sum())
        .collect();
    let sampled = || levels.iter().filter(|l| l.m_taken > 0);
    EstimateReport {
        method: inputs.method.to_string(),
        master_seed: inputs.master_seed,
        combined: (inputs.combine)(&estimate),
        observables: inputs.observables,
        estimate,
        estimator_variance,
        bias_estimate: inputs.bias_estimate,
        total_work_units: levels.iter().map(|l| l.total_work).sum(),
        total_samples: levels.iter().map(|l| l.m_taken).sum(),
        wall_seconds: inputs.wall_seconds,
        max_sample_work: sampled().map(|l| l.work_per_sample).fold(0.0, f64::max),
        max_sample_wall_seconds: sampled().map(|l| l.max_sample_wall_seconds).fold(0.0, f64::max),
        max_particle_level: used().map(|l| (inputs.levels_of)(l.key).0).max().unwrap_or(0),
        max_time_level: used().map(|l| (inputs.levels_of)(l.key).1).max().unwrap_or(0),
        max_particles: used().map(|l| l.particles).max().unwrap_or(0),
        max_steps: used().map(|l| l.steps).max().unwrap_or(0),
        final_level: inputs.final_level,
        index_weights: inputs.index_weights,
        degenerate_variance: inputs.degenerate,
        budget: BudgetEcho::new(inputs.budget, inputs.component),
        levels,
    }
}
