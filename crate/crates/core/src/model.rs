//! Particle systems, their randomness and the observables computed on them.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, SampleKey};
use crate::scalar::Real;

/// Law of one scalar random input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Law {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
    /// Gaussian parametrized by its variance.
    Normal { mean: f64, variance: f64 },
}

impl Law {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Law::Constant { value } if !value.is_finite() => {
                Err(Error::invalid("constant law must be finite"))
            }
            Law::Uniform { low, high } if !(low <= high) => {
                Err(Error::invalid(format!("uniform law needs low <= high, got [{low}, {high}]")))
            }
            Law::Normal { variance, .. } if !(variance >= 0.0) => {
                Err(Error::invalid(format!("normal law needs variance >= 0, got {variance}")))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Law::Constant { value } => value,
            Law::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Law::Normal { mean, variance } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + variance.sqrt() * z
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Law::Constant { value } => value,
            Law::Uniform { low, high } => 0.5 * (low + high),
            Law::Normal { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Law::Constant { .. } => 0.0,
            Law::Uniform { low, high } => (high - low).powi(2) / 12.0,
            Law::Normal { variance, .. } => variance,
        }
    }
}

/// How the diffusion coefficient depends on the system state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffusionDependence {
    Constant,
    /// Depends on time and the particle's own state only.
    OwnState,
    /// Depends on the empirical measure of all particles.
    Measure,
}

/// A system of `P` exchangeable particles in `R^d` interacting through their
/// empirical measure.
///
/// State lists are flattened row-major, `P * d` scalars; per-particle
/// parameters likewise, `P * parameter_dim()`. Drift and diffusion are
/// deterministic; all randomness enters through [`RandomInput`].
pub trait ParticleModel<F: Real>: Send + Sync {
    fn state_dim(&self) -> usize;

    /// One law per state component.
    fn initial_law(&self) -> &[Law];

    /// One law per parameter component; empty when particles carry no parameter.
    fn parameter_law(&self) -> &[Law];

    fn parameter_dim(&self) -> usize {
        self.parameter_law().len()
    }

    /// Drift of particle `p` against the full state list.
    fn drift(&self, t: F, p: usize, states: &[F], param: &[F], out: &mut [F]);

    /// Diffusion matrix of particle `p`, `d * d` row-major.
    fn diffusion(&self, t: F, p: usize, states: &[F], param: &[F], out: &mut [F]);

    fn diffusion_dependence(&self) -> DiffusionDependence;

    fn has_diffusion_derivative(&self) -> bool {
        false
    }

    /// Diagonal of the state derivative of the diffusion, `d` entries.
    /// Only called when [`has_diffusion_derivative`](Self::has_diffusion_derivative) is true.
    fn diffusion_derivative(&self, _t: F, _x: &[F], _param: &[F], out: &mut [F]) {
        out.fill(F::zero());
    }

    /// Drifts of every particle against the same frozen state list.
    fn drift_all(&self, t: F, states: &[F], params: &[F], out: &mut [F]) {
        let d = self.state_dim();
        let k = self.parameter_dim();
        let n = states.len() / d;
        for p in 0..n {
            self.drift(t, p, states, &params[p * k..(p + 1) * k], &mut out[p * d..(p + 1) * d]);
        }
    }
}

/// `theta + (1/P) * sum_q sin(x_p - x_q)`, the sum running over every particle
/// including `p` itself.
pub fn kuramoto_drift<F: Real>(_t: F, p: usize, states: &[F], theta: F) -> Result<F> {
    if states.is_empty() {
        return Err(Error::invalid("kuramoto drift needs a non-empty state list"));
    }
    let xp = *states
        .get(p)
        .ok_or_else(|| Error::invalid(format!("particle {p} out of range {}", states.len())))?;
    let mut acc = F::zero();
    for &xq in states {
        acc = acc + (xp - xq).sin();
    }
    Ok(theta + acc / F::of(states.len() as f64))
}

/// Fully connected Kuramoto oscillators with additive noise:
/// `dX_p = (theta_p + c/P sum_q sin(X_p - X_q)) dt + sigma dW_p`.
///
/// The interaction sign follows `sin(X_p - X_q)`. Phases live on the real line.
#[derive(Clone, Debug)]
pub struct Kuramoto<F> {
    pub sigma: F,
    /// Interaction strength `c`; 1 for the standard model, 0 decouples the particles.
    pub coupling: F,
    initial: [Law; 1],
    parameter: [Law; 1],
}

impl<F: Real> Kuramoto<F> {
    pub fn new(sigma: F, theta_law: Law, x0_law: Law) -> Result<Self> {
        if !(sigma >= F::zero()) {
            return Err(Error::invalid("sigma must be >= 0"));
        }
        theta_law.validate()?;
        x0_law.validate()?;
        Ok(Self {
            sigma,
            coupling: F::one(),
            initial: [x0_law],
            parameter: [theta_law],
        })
    }

    /// `sigma = 0.4`, `theta ~ U(-0.2, 0.2)`, `x0 ~ N(0, 0.2)` (variance).
    pub fn standard() -> Self {
        Self::new(
            F::of(0.4),
            Law::Uniform { low: -0.2, high: 0.2 },
            Law::Normal { mean: 0.0, variance: 0.2 },
        )
        .expect("standard parameters are valid")
    }

    pub fn with_coupling(mut self, coupling: F) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn theta_law(&self) -> Law {
        self.parameter[0]
    }

    pub fn x0_law(&self) -> Law {
        self.initial[0]
    }
}

impl<F: Real> ParticleModel<F> for Kuramoto<F> {
    fn state_dim(&self) -> usize {
        1
    }

    fn initial_law(&self) -> &[Law] {
        &self.initial
    }

    fn parameter_law(&self) -> &[Law] {
        &self.parameter
    }

    fn drift(&self, t: F, p: usize, states: &[F], param: &[F], out: &mut [F]) {
        let interaction = kuramoto_drift(t, p, states, F::zero()).expect("caller passes a valid particle");
        out[0] = param[0] + self.coupling * interaction;
    }

    fn diffusion(&self, _t: F, _p: usize, _states: &[F], _param: &[F], out: &mut [F]) {
        out[0] = self.sigma;
    }

    fn diffusion_dependence(&self) -> DiffusionDependence {
        DiffusionDependence::Constant
    }

    // Pairwise O(P^2) evaluation with sin(a - b) = sin a cos b - cos a sin b,
    // so the inner loop carries no transcendental calls.
    fn drift_all(&self, _t: F, states: &[F], params: &[F], out: &mut [F]) {
        let n = states.len();
        let (sin, cos): (Vec<F>, Vec<F>) = states.iter().map(|x| x.sin_cos()).unzip();
        let count = F::of(n as f64);
        for p in 0..n {
            let (sp, cp) = (sin[p], cos[p]);
            let mut acc = F::zero();
            for q in 0..n {
                acc = acc + (sp * cos[q] - cp * sin[q]);
            }
            out[p] = params[p] + self.coupling * (acc / count);
        }
    }
}

/// Non-interacting scalar test system
/// `dX = (a X + theta) dt + (b0 + b1 X) dW`.
///
/// Trajectories do not depend on other particles, which makes particle
/// couplings exact and Euler recursions hand-checkable.
#[derive(Clone, Debug)]
pub struct LinearModel<F> {
    pub growth: F,
    pub noise: F,
    pub noise_slope: F,
    initial: [Law; 1],
    parameter: [Law; 1],
}

impl<F: Real> LinearModel<F> {
    pub fn new(growth: F, noise: F, noise_slope: F, x0_law: Law, theta_law: Law) -> Result<Self> {
        x0_law.validate()?;
        theta_law.validate()?;
        Ok(Self {
            growth,
            noise,
            noise_slope,
            initial: [x0_law],
            parameter: [theta_law],
        })
    }
}

impl<F: Real> ParticleModel<F> for LinearModel<F> {
    fn state_dim(&self) -> usize {
        1
    }

    fn initial_law(&self) -> &[Law] {
        &self.initial
    }

    fn parameter_law(&self) -> &[Law] {
        &self.parameter
    }

    fn drift(&self, _t: F, p: usize, states: &[F], param: &[F], out: &mut [F]) {
        out[0] = self.growth * states[p] + param[0];
    }

    fn diffusion(&self, _t: F, p: usize, states: &[F], _param: &[F], out: &mut [F]) {
        out[0] = self.noise + self.noise_slope * states[p];
    }

    fn diffusion_dependence(&self) -> DiffusionDependence {
        if self.noise_slope == F::zero() {
            DiffusionDependence::Constant
        } else {
            DiffusionDependence::OwnState
        }
    }

    fn has_diffusion_derivative(&self) -> bool {
        true
    }

    fn diffusion_derivative(&self, _t: F, _x: &[F], _param: &[F], out: &mut [F]) {
        out[0] = self.noise_slope;
    }
}

/// All randomness of one particle: initial state, parameter and the Wiener
/// increments at the finest resolution any consumer will need.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomInput<F> {
    pub x0: Vec<F>,
    pub theta: Vec<F>,
    /// `n_fine * d` increments, row-major by step.
    pub increments: Vec<F>,
    pub n_fine: usize,
}

impl<F: Real> RandomInput<F> {
    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn increment(&self, step: usize) -> &[F] {
        let d = self.dim();
        &self.increments[step * d..(step + 1) * d]
    }
}

/// Draws the inputs of particle `particle` under `key`.
pub fn draw_input<F: Real, M: ParticleModel<F> + ?Sized>(
    key: &SampleKey,
    model: &M,
    particle: u32,
    n_fine: usize,
    horizon: F,
) -> RandomInput<F> {
    let d = model.state_dim();
    let mut rng = key.stream(particle, Purpose::InitialState);
    let x0 = model.initial_law().iter().map(|law| F::of(law.sample(&mut rng))).collect();
    let mut rng = key.stream(particle, Purpose::Parameter);
    let theta = model.parameter_law().iter().map(|law| F::of(law.sample(&mut rng))).collect();
    let mut rng = key.stream(particle, Purpose::Wiener);
    let scale = (horizon.to_f64_lossy() / n_fine as f64).sqrt();
    let increments = (0..n_fine * d)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            F::of(scale * z)
        })
        .collect();
    RandomInput { x0, theta, increments, n_fine }
}

/// Draws `particles` independent inputs. Input `q` depends only on `(key, q)`.
pub fn draw_inputs<F: Real, M: ParticleModel<F> + ?Sized>(
    key: &SampleKey,
    model: &M,
    particles: usize,
    n_fine: usize,
    horizon: F,
) -> Result<Vec<RandomInput<F>>> {
    if particles == 0 || n_fine == 0 {
        return Err(Error::invalid(format!(
            "need P >= 1 and N_fine >= 1, got P={particles}, N_fine={n_fine}"
        )));
    }
    if !(horizon > F::zero()) {
        return Err(Error::invalid("horizon T must be positive"));
    }
    let particles = u32::try_from(particles).map_err(|_| Error::invalid("too many particles"))?;
    Ok((0..particles).map(|q| draw_input(key, model, q, n_fine, horizon)).collect())
}

type ObservableFn<F> = dyn Fn(&[F]) -> F + Send + Sync;
type CombinerFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A scalar function of one particle's state.
#[derive(Clone)]
pub struct Observable<F> {
    pub name: String,
    func: Arc<ObservableFn<F>>,
}

impl<F: Real> Observable<F> {
    pub fn new(name: impl Into<String>, func: impl Fn(&[F]) -> F + Send + Sync + 'static) -> Self {
        Self { name: name.into(), func: Arc::new(func) }
    }

    pub fn cos() -> Self {
        Self::new("cos", |x: &[F]| x[0].cos())
    }

    pub fn sin() -> Self {
        Self::new("sin", |x: &[F]| x[0].sin())
    }

    pub fn identity() -> Self {
        Self::new("identity", |x: &[F]| x[0])
    }

    pub fn constant(value: F) -> Self {
        Self::new("constant", move |_: &[F]| value)
    }

    /// Looks up one of the built-in observables by name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "cos" => Ok(Self::cos()),
            "sin" => Ok(Self::sin()),
            "identity" => Ok(Self::identity()),
            "one" | "constant" => Ok(Self::constant(F::one())),
            other => Err(Error::invalid(format!("unknown observable '{other}'"))),
        }
    }

    pub fn eval(&self, x: &[F]) -> F {
        (self.func)(x)
    }
}

impl<F> fmt::Debug for Observable<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Observable").field(&self.name).finish()
    }
}

/// Combines per-observable estimates into the final quantity of interest.
#[derive(Clone)]
pub struct Combiner {
    pub name: String,
    func: Arc<CombinerFn>,
    /// Bound on the l1 norm of the combiner's gradient over the reachable
    /// estimates. Each component is estimated to `tol / sensitivity`.
    pub sensitivity: f64,
}

impl Combiner {
    pub fn new(
        name: impl Into<String>,
        sensitivity: f64,
        func: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), func: Arc::new(func), sensitivity }
    }

    /// `a^2 + b^2` on `(E[cos X], E[sin X])`. On `[-1, 1]^2` the gradient has
    /// l1 norm at most 4.
    pub fn total_synchronization() -> Self {
        Self::new("total_synchronization", 4.0, |v| total_synchronization(v[0], v[1]))
    }

    pub fn eval(&self, estimates: &[f64]) -> f64 {
        (self.func)(estimates)
    }
}

impl fmt::Debug for Combiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Combiner")
            .field("name", &self.name)
            .field("sensitivity", &self.sensitivity)
            .finish()
    }
}

/// Level of synchronization `E[cos]^2 + E[sin]^2`: 0 is total disorder, 1 full synchrony.
pub fn total_synchronization(est_cos: f64, est_sin: f64) -> f64 {
    est_cos * est_cos + est_sin * est_sin
}

/// Observables averaged over particles, with an optional combiner.
#[derive(Clone, Debug)]
pub struct QoiSpec<F> {
    pub observables: Vec<Observable<F>>,
    pub combiner: Option<Combiner>,
}

impl<F: Real> QoiSpec<F> {
    pub fn new(observables: Vec<Observable<F>>) -> Self {
        Self { observables, combiner: None }
    }

    pub fn single(observable: Observable<F>) -> Self {
        Self::new(vec![observable])
    }

    pub fn with_combiner(mut self, combiner: Combiner) -> Self {
        self.combiner = Some(combiner);
        self
    }

    /// `cos` and `sin` combined into total synchronization.
    pub fn kuramoto_synchronization() -> Self {
        Self::new(vec![Observable::cos(), Observable::sin()])
            .with_combiner(Combiner::total_synchronization())
    }

    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.observables.iter().map(|o| o.name.clone()).collect()
    }

    /// Divisor turning the requested tolerance into the per-component tolerance.
    pub fn sensitivity(&self) -> f64 {
        self.combiner.as_ref().map_or(1.0, |c| c.sensitivity)
    }

    pub fn combine(&self, estimates: &[f64]) -> Option<f64> {
        self.combiner.as_ref().map(|c| c.eval(estimates))
    }
}
