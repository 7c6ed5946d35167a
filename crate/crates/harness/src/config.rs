//! Run configuration, read from a TOML file with one flat table per section.
//!
//! Every field has a default, so an empty file describes the standard
//! Kuramoto experiment.
//!
//! ```toml
//! [model]
//! family = "kuramoto"          # or "linear"
//! precision = "f64"            # or "f32"
//! scheme = "milstein"          # or "euler-maruyama"
//! horizon = 1.0
//! sigma = 0.4
//! coupling = 1.0
//! theta = { family = "uniform", low = -0.2, high = 0.2 }
//! x0 = { family = "normal", mean = 0.0, variance = 0.2 }
//! observables = ["cos", "sin"]
//! combiner = "auto"            # "total_synchronization", "none"
//!
//! [hierarchy]
//! p0 = 5
//! n0 = 4
//! beta_p = 2
//! beta_t = 2
//!
//! [rates]
//! gamma_p = 2.0
//! s_p = 1.0
//! s_t = 2.0
//!
//! [budget]
//! tols = [0.2, 0.1, 0.05, 0.025, 0.0125]
//! theta = 0.5
//! epsilon = 0.05
//!
//! [execution]
//! master_seed = 1
//! pilot = 25
//! level_cap = 12
//! ```

use std::path::{Path, PathBuf};

use meanfield_core::model::{Combiner, Kuramoto, LinearModel, Observable};
use meanfield_core::{ErrorBudget, EstimatorSettings, Hierarchy, Law, ParticleModel, QoiSpec, Real, Scheme, WorkModel};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, HarnessResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub hierarchy: HierarchyConfig,
    pub rates: RatesConfig,
    pub budget: BudgetConfig,
    pub execution: ExecutionConfig,
    pub mlmc: MlmcConfig,
    pub mc: McConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    #[default]
    Kuramoto,
    /// `dX = (a X + theta) dt + (b0 + b1 X) dW`, no interaction.
    Linear,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub family: ModelFamily,
    pub precision: Precision,
    pub scheme: Scheme,
    pub horizon: f64,
    pub sigma: f64,
    pub coupling: f64,
    pub theta: Law,
    pub x0: Law,
    pub growth: f64,
    pub noise: f64,
    pub noise_slope: f64,
    pub observables: Vec<String>,
    pub combiner: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: ModelFamily::Kuramoto,
            precision: Precision::F64,
            // Milstein and Euler-Maruyama coincide for additive noise.
            scheme: Scheme::Milstein,
            horizon: 1.0,
            sigma: 0.4,
            coupling: 1.0,
            theta: Law::Uniform { low: -0.2, high: 0.2 },
            x0: Law::Normal { mean: 0.0, variance: 0.2 },
            growth: 0.0,
            noise: 0.0,
            noise_slope: 0.0,
            observables: vec!["cos".into(), "sin".into()],
            combiner: "auto".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyConfig {
    pub p0: usize,
    pub n0: usize,
    pub beta_p: usize,
    pub beta_t: usize,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        let h = Hierarchy::default();
        Self { p0: h.p0, n0: h.n0, beta_p: h.beta_p, beta_t: h.beta_t }
    }
}

impl HierarchyConfig {
    pub fn hierarchy(&self) -> Hierarchy {
        Hierarchy { p0: self.p0, n0: self.n0, beta_p: self.beta_p, beta_t: self.beta_t }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    /// Cost exponent: one system costs `N * P^gamma_p`.
    pub gamma_p: f64,
    /// Strong rates used for the MIMC index-set weights.
    pub s_p: f64,
    pub s_t: f64,
    /// Particle count held fixed by time-only rate experiments; `P0` if unset.
    pub particles: Option<usize>,
    /// Step count held fixed by particle-only rate experiments; `N0` if unset.
    pub steps: Option<usize>,
    /// Drop level 0 from slope fits when at least five points remain.
    pub drop_coarsest: bool,
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self { gamma_p: 2.0, s_p: 1.0, s_t: 2.0, particles: None, steps: None, drop_coarsest: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub tols: Vec<f64>,
    pub theta: f64,
    pub epsilon: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self { tols: vec![0.2, 0.1, 0.05, 0.025, 0.0125], theta: 0.5, epsilon: 0.05 }
    }
}

impl BudgetConfig {
    pub fn budget(&self, tol: f64) -> HarnessResult<ErrorBudget> {
        Ok(ErrorBudget::new(tol, self.theta, self.epsilon)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionConfig {
    pub master_seed: u64,
    /// Worker threads; 0 uses the environment variable or all cores.
    pub workers: usize,
    pub pilot: u64,
    pub initial_level: u32,
    pub level_cap: u32,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        let s = EstimatorSettings::default();
        Self { master_seed: 1, workers: 0, pilot: s.pilot, initial_level: s.initial_level, level_cap: s.level_cap }
    }
}

impl ExecutionConfig {
    pub fn settings(&self) -> EstimatorSettings {
        EstimatorSettings { pilot: self.pilot, initial_level: self.initial_level, level_cap: self.level_cap }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingChoice {
    #[default]
    Partition,
    Subset,
}

/// Discretization held fixed by the one-parameter MLMC hierarchies. When
/// unset, the MC rule `P = N = ceil(c / TOL)` supplies it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlmcConfig {
    pub fixed_particles: Option<usize>,
    pub fixed_steps: Option<usize>,
    pub particle_coupling: CouplingChoice,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    /// `c` in `P = N = ceil(c / TOL)`; calibrated on a pilot ladder when unset.
    pub constant: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("results") }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> HarnessResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> HarnessResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> HarnessResult<()> {
        self.hierarchy.hierarchy().validate()?;
        let b = &self.budget;
        if b.tols.iter().any(|t| !(*t > 0.0)) {
            return Err(HarnessError::Usage("tolerances must be positive".into()));
        }
        if b.tols.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(HarnessError::Usage("tolerances must be strictly decreasing".into()));
        }
        ErrorBudget::new(1.0, b.theta, b.epsilon)?;
        WorkModel::new(self.rates.gamma_p)?;
        self.execution.settings().validate()?;
        if !(self.model.horizon > 0.0) {
            return Err(HarnessError::Usage("horizon must be positive".into()));
        }
        if self.model.observables.is_empty() {
            return Err(HarnessError::Usage("at least one observable is required".into()));
        }
        Ok(())
    }

    pub fn work_model(&self) -> HarnessResult<WorkModel> {
        Ok(WorkModel::new(self.rates.gamma_p)?)
    }

    pub fn fixed_particles(&self) -> usize {
        self.rates.particles.unwrap_or(self.hierarchy.p0)
    }

    pub fn fixed_steps(&self) -> usize {
        self.rates.steps.unwrap_or(self.hierarchy.n0)
    }

    pub fn build_model<F: Real>(&self) -> HarnessResult<Box<dyn ParticleModel<F>>> {
        let m = &self.model;
        Ok(match m.family {
            ModelFamily::Kuramoto => {
                Box::new(Kuramoto::new(F::of(m.sigma), m.theta, m.x0)?.with_coupling(F::of(m.coupling)))
            }
            ModelFamily::Linear => Box::new(LinearModel::new(
                F::of(m.growth),
                F::of(m.noise),
                F::of(m.noise_slope),
                m.x0,
                m.theta,
            )?),
        })
    }

    pub fn build_qoi<F: Real>(&self) -> HarnessResult<QoiSpec<F>> {
        let observables = self
            .model
            .observables
            .iter()
            .map(|name| Observable::by_name(name))
            .collect::<Result<Vec<_>, _>>()?;
        let qoi = QoiSpec::new(observables);
        let sync_pair = self.model.observables == ["cos", "sin"];
        Ok(match self.model.combiner.as_str() {
            "auto" if sync_pair => qoi.with_combiner(Combiner::total_synchronization()),
            "auto" | "none" => qoi,
            "total_synchronization" if sync_pair => qoi.with_combiner(Combiner::total_synchronization()),
            "total_synchronization" => {
                return Err(HarnessError::Usage("total_synchronization needs observables [\"cos\", \"sin\"]".into()))
            }
            other => return Err(HarnessError::Usage(format!("unknown combiner '{other}'"))),
        })
    }
}
