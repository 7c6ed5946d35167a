//! Time discretization of the coupled particle system.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiffusionDependence, ParticleModel, RandomInput};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    EulerMaruyama,
    /// Euler-Maruyama plus `1/2 b b' (dW^2 - h)` per component. Identical to
    /// Euler-Maruyama when the diffusion is constant.
    Milstein,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler-maruyama" | "euler" | "em" => Ok(Scheme::EulerMaruyama),
            "milstein" => Ok(Scheme::Milstein),
            other => Err(Error::invalid(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathResult<F> {
    /// `P * d` terminal states, row-major.
    pub terminal_states: Vec<F>,
    pub dim: usize,
    pub steps_taken: usize,
}

impl<F: Real> PathResult<F> {
    pub fn particles(&self) -> usize {
        self.terminal_states.len() / self.dim
    }

    pub fn state(&self, p: usize) -> &[F] {
        &self.terminal_states[p * self.dim..(p + 1) * self.dim]
    }
}

/// Sums each run of `factor` consecutive steps of a `steps x dim` increment
/// array, in index order.
pub fn coarsen_increments<F: Real>(fine: &[F], dim: usize, factor: usize) -> Result<Vec<F>> {
    if dim == 0 || fine.len() % dim != 0 {
        return Err(Error::invalid("increment array is not a whole number of steps"));
    }
    let steps = fine.len() / dim;
    if factor < 2 || steps % factor != 0 {
        return Err(Error::coupling(format!(
            "cannot coarsen {steps} steps by a factor of {factor}"
        )));
    }
    let mut coarse = vec![F::zero(); steps / factor * dim];
    for (k, block) in fine.chunks_exact(factor * dim).enumerate() {
        for j in 0..dim {
            let mut acc = block[j];
            for i in 1..factor {
                acc = acc + block[i * dim + j];
            }
            coarse[k * dim + j] = acc;
        }
    }
    Ok(coarse)
}

/// Advances all particles `steps` times from their initial states, each step
/// evaluating drift and diffusion against the frozen previous state list.
///
/// Inputs stored at a finer resolution than `steps` are coarsened by exact
/// in-order summation, so simulations at different resolutions on the same
/// inputs see the same Brownian path.
pub fn simulate_system<F: Real, M: ParticleModel<F> + ?Sized>(
    model: &M,
    inputs: &[RandomInput<F>],
    steps: usize,
    horizon: F,
    scheme: Scheme,
) -> Result<PathResult<F>> {
    if inputs.is_empty() {
        return Err(Error::invalid("no particles to simulate"));
    }
    if steps == 0 {
        return Err(Error::invalid("need at least one time step"));
    }
    let d = model.state_dim();
    let k = model.parameter_dim();
    let n_fine = inputs[0].n_fine;
    if inputs.iter().any(|i| i.n_fine != n_fine || i.dim() != d || i.theta.len() != k) {
        return Err(Error::invalid("inputs disagree on resolution or dimensions"));
    }
    if n_fine % steps != 0 {
        return Err(Error::coupling(format!(
            "increments at N_fine={n_fine} cannot drive N={steps} steps"
        )));
    }
    let correction = match (scheme, model.diffusion_dependence()) {
        (Scheme::EulerMaruyama, _) | (Scheme::Milstein, DiffusionDependence::Constant) => false,
        (Scheme::Milstein, DiffusionDependence::Measure) => {
            return Err(Error::UnsupportedScheme(
                "Milstein with measure-dependent diffusion".into(),
            ))
        }
        (Scheme::Milstein, DiffusionDependence::OwnState) => {
            if !model.has_diffusion_derivative() {
                return Err(Error::UnsupportedScheme(
                    "Milstein needs the diffusion state derivative".into(),
                ));
            }
            true
        }
    };

    let factor = n_fine / steps;
    let coarse_storage;
    let increments: Vec<&[F]> = if factor == 1 {
        inputs.iter().map(|i| i.increments.as_slice()).collect()
    } else {
        coarse_storage = inputs
            .iter()
            .map(|i| coarsen_increments(&i.increments, d, factor))
            .collect::<Result<Vec<_>>>()?;
        coarse_storage.iter().map(Vec::as_slice).collect()
    };

    let p_count = inputs.len();
    let mut states: Vec<F> = inputs.iter().flat_map(|i| i.x0.iter().copied()).collect();
    let params: Vec<F> = inputs.iter().flat_map(|i| i.theta.iter().copied()).collect();
    let mut drift = vec![F::zero(); p_count * d];
    let mut next = vec![F::zero(); p_count * d];
    let mut b = vec![F::zero(); d * d];
    let mut db = vec![F::zero(); d];
    let h = horizon / F::of(steps as f64);
    let half = F::of(0.5);

    for n in 0..steps {
        let t = F::of(n as f64) * h;
        model.drift_all(t, &states, &params, &mut drift);
        for p in 0..p_count {
            let theta = &params[p * k..(p + 1) * k];
            let dw = &increments[p][n * d..(n + 1) * d];
            model.diffusion(t, p, &states, theta, &mut b);
            if correction {
                model.diffusion_derivative(t, &states[p * d..(p + 1) * d], theta, &mut db);
            }
            for i in 0..d {
                let mut noise = F::zero();
                for j in 0..d {
                    noise = noise + b[i * d + j] * dw[j];
                }
                let mut x = states[p * d + i] + drift[p * d + i] * h + noise;
                if correction {
                    x = x + half * b[i * d + i] * db[i] * (dw[i] * dw[i] - h);
                }
                next[p * d + i] = x;
            }
        }
        std::mem::swap(&mut states, &mut next);
    }

    Ok(PathResult { terminal_states: states, dim: d, steps_taken: steps })
}
