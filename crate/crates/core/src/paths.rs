//! Seeded Brownian increments and Euler simulation of the forward
//! process `X_{n+1} = X_n + mu(t_n, X_n) dt + sigma(t_n, X_n) dW_n`
//! on the uniform grid `dt = T / N`.
//!
//! The scheme needs increments for steps `n = 0, ..., N-1`; some
//! presentations index the recursion from `n = 1`, which would leave the
//! first step without noise.

use ndarray::{Array1, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SolverError};
use crate::problems::{Diffusion, Drift, ProblemSpec};

/// A batch of Brownian increments on the uniform grid.
#[derive(Clone, Debug)]
pub struct BrownianBatch {
    /// Shape `(batch, n_steps, dim)`; entry `~ Normal(0, dt_n)`.
    pub increments: Array3<f64>,
    /// Length `n_steps`; sums to the horizon.
    pub step_sizes: Array1<f64>,
}

impl BrownianBatch {
    pub fn batch(&self) -> usize {
        self.increments.shape()[0]
    }

    pub fn n_steps(&self) -> usize {
        self.increments.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.increments.shape()[2]
    }

    pub fn horizon(&self) -> f64 {
        self.step_sizes.sum()
    }
}

/// A batch of simulated forward trajectories.
#[derive(Clone, Debug)]
pub struct PathBatch {
    /// Shape `(batch, n_steps + 1, dim)`; `states[., 0, .] = x0`.
    pub states: Array3<f64>,
    pub brownian: BrownianBatch,
    pub problem_id: String,
    /// Number of negative state entries encountered (flagged, never
    /// clamped; relevant for the price dynamics where `x0 > 0`).
    pub negative_coords: usize,
}

impl PathBatch {
    pub fn batch(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn n_steps(&self) -> usize {
        self.states.shape()[1] - 1
    }

    pub fn dim(&self) -> usize {
        self.states.shape()[2]
    }

    /// Terminal slice `X_N`, shape `(batch, dim)`.
    pub fn terminal_states(&self) -> ndarray::ArrayView2<'_, f64> {
        let n = self.n_steps();
        self.states.index_axis(Axis(1), n)
    }
}

/// Samples Gaussian increments with variance `T / N` per coordinate.
/// Deterministic for a fixed seed.
pub fn sample_brownian(
    rng_seed: u64,
    batch: usize,
    n_steps: usize,
    dim: usize,
    horizon: f64,
) -> Result<BrownianBatch> {
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    sample_brownian_with(&mut rng, batch, n_steps, dim, horizon)
}

/// As [`sample_brownian`], drawing from a caller-owned substream so that
/// training loops can advance one generator across iterations.
pub fn sample_brownian_with<R: Rng + ?Sized>(
    rng: &mut R,
    batch: usize,
    n_steps: usize,
    dim: usize,
    horizon: f64,
) -> Result<BrownianBatch> {
    if batch == 0 || n_steps == 0 || dim == 0 {
        return Err(SolverError::InvalidArgument(
            "batch, n_steps and dim must be >= 1".into(),
        ));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(SolverError::InvalidArgument(format!(
            "horizon ({horizon}) must be a positive real"
        )));
    }
    let dt = horizon / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    // Fixed draw order (sample, step, coordinate) pins the bit pattern
    // for a given generator state.
    let mut increments = Array3::zeros((batch, n_steps, dim));
    for mut sample in increments.axis_iter_mut(Axis(0)) {
        for mut step in sample.axis_iter_mut(Axis(0)) {
            for v in step.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = z * sqrt_dt;
            }
        }
    }
    Ok(BrownianBatch {
        increments,
        step_sizes: Array1::from_elem(n_steps, dt),
    })
}

/// Euler step of the forward process for every sample; `x0` is broadcast
/// across the batch. Fails with the offending step on non-finite states.
pub fn simulate_forward(problem: &ProblemSpec, brownian: &BrownianBatch) -> Result<PathBatch> {
    if brownian.dim() != problem.dim || brownian.n_steps() != problem.n_steps {
        return Err(SolverError::DimensionMismatch(format!(
            "brownian batch is ({} steps, dim {}) but problem needs ({} steps, dim {})",
            brownian.n_steps(),
            brownian.dim(),
            problem.n_steps,
            problem.dim
        )));
    }
    let (batch, n_steps, dim) = (brownian.batch(), brownian.n_steps(), brownian.dim());
    let mut states = Array3::zeros((batch, n_steps + 1, dim));
    // Negative coordinates are only meaningful for the multiplicative
    // price dynamics; the additive process is signed by construction.
    let track_sign = matches!(problem.diffusion, Diffusion::ScaledDiag(_));
    let mut negative_coords = 0usize;

    for b in 0..batch {
        for (j, v) in problem.x0.iter().enumerate() {
            states[[b, 0, j]] = *v;
        }
        for n in 0..n_steps {
            let dt = brownian.step_sizes[n];
            for j in 0..dim {
                let x = states[[b, n, j]];
                let dw = brownian.increments[[b, n, j]];
                let drift = match problem.drift {
                    Drift::Zero => 0.0,
                    Drift::Scale(c) => c * x,
                };
                let diffusion = match problem.diffusion {
                    Diffusion::ScaledDiag(c) => c * x,
                    Diffusion::ScaledIdentity(c) => c,
                };
                let next = x + drift * dt + diffusion * dw;
                if !next.is_finite() {
                    return Err(SolverError::NonFinite {
                        context: "forward state",
                        step: n + 1,
                    });
                }
                if track_sign && next < 0.0 {
                    negative_coords += 1;
                }
                states[[b, n + 1, j]] = next;
            }
        }
    }

    Ok(PathBatch {
        states,
        brownian: brownian.clone(),
        problem_id: problem.label.clone(),
        negative_coords,
    })
}
