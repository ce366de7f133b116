//! The parametric BSDE rollout.
//!
//! Per sample, with `y_0` the trainable scalar and `z_0` the trainable
//! vector weight,
//!
//! ```text
//! y_{n+1} = y_n - f(t_n, X_n, y_n, z_n) dt + z_n . dW_n,   n = 0..N-1
//! loss    = mean_b (g(X_N) - y_N)^2
//! ```
//!
//! where `z_n` for `n >= 1` is produced by the step-`n` subnetwork
//! applied to `X_n`. `loss_and_grads` differentiates the batch loss
//! exactly with respect to every weight by reversing the recursion and
//! chaining into the subnet backward passes.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::error::{Result, SolverError};
use crate::net::{NetConfig, SubnetCache, SubnetGrads, SubnetWeights};
use crate::paths::PathBatch;
use crate::problems::ProblemSpec;

pub use crate::net::Mode;

/// All trainable weights plus Adam state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverParams {
    /// The scalar weight approximating `u(0, X0)`.
    pub u0: f64,
    /// The vector weight approximating `z_0 = sigma^T grad u(0, X0)`.
    pub grad_u0: Array1<f64>,
    /// One subnetwork per interior time step (`N - 1` of them).
    pub subnets: Vec<SubnetWeights>,
    pub net: NetConfig,
    pub adam: AdamState,
}

impl SolverParams {
    /// Fresh weights: `u0` uniform in the guess interval, `grad_u0`
    /// uniform in `[-init_range, init_range]^d`, subnets per
    /// [`SubnetWeights::init`].
    pub fn init<R: Rng + ?Sized>(
        problem: &ProblemSpec,
        net: NetConfig,
        guess_interval: (f64, f64),
        rng: &mut R,
    ) -> Result<Self> {
        let (a, b) = guess_interval;
        if !(a <= b) {
            return Err(SolverError::InvalidArgument(format!(
                "guess interval [{a}, {b}] is empty"
            )));
        }
        if problem.n_steps < 1 {
            return Err(SolverError::InvalidArgument("n_steps must be >= 1".into()));
        }
        let u0 = if a == b { a } else { rng.random_range(a..=b) };
        let mut grad_u0 = Array1::zeros(problem.dim);
        for v in grad_u0.iter_mut() {
            *v = rng.random_range(-net.init_range..=net.init_range);
        }
        let subnets: Vec<SubnetWeights> = (0..problem.n_steps.saturating_sub(1))
            .map(|_| SubnetWeights::init(problem.dim, &net, rng))
            .collect();
        let mut params = SolverParams {
            u0,
            grad_u0,
            subnets,
            net,
            adam: AdamState::empty(),
        };
        params.adam = AdamState::zeros_like(&params);
        Ok(params)
    }

    pub fn dim(&self) -> usize {
        self.grad_u0.len()
    }

    /// Canonical flat view of the learnable parameters. The order is
    /// `u0, grad_u0, subnets[0] fields, subnets[1] fields, ...` with the
    /// per-subnet field order fixed in [`crate::adam`].
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = vec![self.u0];
        out.extend(self.grad_u0.iter());
        for s in &self.subnets {
            push_subnet(&mut out, s);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        self.u0 = it.next().expect("flat vector too short");
        for v in self.grad_u0.iter_mut() {
            *v = it.next().expect("flat vector too short");
        }
        for s in &mut self.subnets {
            pull_subnet(&mut it, s);
        }
        assert!(it.next().is_none(), "flat vector too long");
    }

    /// Writes a versioned JSON checkpoint of all weights (including
    /// normalization statistics and Adam state). Round-trips bit-exactly.
    pub fn save_checkpoint<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let cp = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dim: self.dim(),
            n_subnets: self.subnets.len(),
            params: self.clone(),
        };
        serde_json::to_writer(writer, &cp)?;
        Ok(())
    }

    pub fn load_checkpoint<R: std::io::Read>(reader: R) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_reader(reader)?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(SolverError::Config(format!(
                "unsupported checkpoint version {}",
                cp.version
            )));
        }
        if cp.params.dim() != cp.dim || cp.params.subnets.len() != cp.n_subnets {
            return Err(SolverError::Config(
                "checkpoint shape metadata disagrees with payload".into(),
            ));
        }
        Ok(cp.params)
    }
}

const CHECKPOINT_FORMAT: &str = "bsde-solver-weights";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    dim: usize,
    n_subnets: usize,
    params: SolverParams,
}

fn push_subnet(out: &mut Vec<f64>, s: &SubnetWeights) {
    out.extend(s.bn_in.gamma.iter());
    out.extend(s.bn_in.beta.iter());
    out.extend(s.fc1.w.iter());
    out.extend(s.fc1.b.iter());
    out.extend(s.bn1.gamma.iter());
    out.extend(s.bn1.beta.iter());
    out.extend(s.fc2.w.iter());
    out.extend(s.fc2.b.iter());
    out.extend(s.bn2.gamma.iter());
    out.extend(s.bn2.beta.iter());
    out.extend(s.out.w.iter());
    out.extend(s.out.b.iter());
}

fn pull_subnet(it: &mut impl Iterator<Item = f64>, s: &mut SubnetWeights) {
    for t in [
        s.bn_in.gamma.iter_mut(),
        s.bn_in.beta.iter_mut(),
    ] {
        for v in t {
            *v = it.next().expect("flat vector too short");
        }
    }
    for v in s.fc1.w.iter_mut().chain(s.fc1.b.iter_mut()) {
        *v = it.next().expect("flat vector too short");
    }
    for v in s.bn1.gamma.iter_mut().chain(s.bn1.beta.iter_mut()) {
        *v = it.next().expect("flat vector too short");
    }
    for v in s.fc2.w.iter_mut().chain(s.fc2.b.iter_mut()) {
        *v = it.next().expect("flat vector too short");
    }
    for v in s.bn2.gamma.iter_mut().chain(s.bn2.beta.iter_mut()) {
        *v = it.next().expect("flat vector too short");
    }
    for v in s.out.w.iter_mut().chain(s.out.b.iter_mut()) {
        *v = it.next().expect("flat vector too short");
    }
}

/// Gradient container mirroring the learnable fields of [`SolverParams`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Grads {
    pub u0: f64,
    pub grad_u0: Array1<f64>,
    pub subnets: Vec<SubnetGrads>,
}

impl Grads {
    pub fn zeros_like(p: &SolverParams) -> Self {
        Grads {
            u0: 0.0,
            grad_u0: Array1::zeros(p.grad_u0.raw_dim()),
            subnets: p.subnets.iter().map(SubnetGrads::zeros_like).collect(),
        }
    }

    /// Flat view in the same order as [`SolverParams::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = vec![self.u0];
        out.extend(self.grad_u0.iter());
        for s in &self.subnets {
            out.extend(s.bn_in.gamma.iter());
            out.extend(s.bn_in.beta.iter());
            out.extend(s.fc1.w.iter());
            out.extend(s.fc1.b.iter());
            out.extend(s.bn1.gamma.iter());
            out.extend(s.bn1.beta.iter());
            out.extend(s.fc2.w.iter());
            out.extend(s.fc2.b.iter());
            out.extend(s.bn2.gamma.iter());
            out.extend(s.bn2.beta.iter());
            out.extend(s.out.w.iter());
            out.extend(s.out.b.iter());
        }
        out
    }
}

/// Output of one rollout evaluation.
#[derive(Clone, Debug)]
pub struct RolloutResult {
    /// `y_N` per sample.
    pub terminal_estimates: Array1<f64>,
    /// Mean squared terminal mismatch; non-negative.
    pub loss: f64,
}

struct RolloutCache {
    /// `y_n` per step, length `N + 1`.
    y_steps: Vec<Array1<f64>>,
    /// `z_n` per step, length `N`.
    z_steps: Vec<Array2<f64>>,
    /// Subnet activations for steps `1..N`.
    subnet_caches: Vec<SubnetCache>,
}

fn check_compat(params: &SolverParams, problem: &ProblemSpec, paths: &PathBatch) -> Result<()> {
    if paths.dim() != problem.dim || paths.n_steps() != problem.n_steps {
        return Err(SolverError::DimensionMismatch(format!(
            "paths are ({} steps, dim {}) but problem needs ({} steps, dim {})",
            paths.n_steps(),
            paths.dim(),
            problem.n_steps,
            problem.dim
        )));
    }
    if params.subnets.len() + 1 != problem.n_steps {
        return Err(SolverError::DimensionMismatch(format!(
            "{} subnets cannot cover {} steps (need N - 1)",
            params.subnets.len(),
            problem.n_steps
        )));
    }
    if params.dim() != problem.dim {
        return Err(SolverError::DimensionMismatch(format!(
            "grad_u0 has length {} but problem dim is {}",
            params.dim(),
            problem.dim
        )));
    }
    Ok(())
}

fn run_rollout(
    params: &SolverParams,
    problem: &ProblemSpec,
    paths: &PathBatch,
    u0_override: Option<f64>,
    mode: Mode,
    want_cache: bool,
) -> Result<(RolloutResult, Option<RolloutCache>)> {
    check_compat(params, problem, paths)?;
    let batch = paths.batch();
    let n_steps = problem.n_steps;
    let dim = problem.dim;
    let dt = problem.dt();

    let y0 = u0_override.unwrap_or(params.u0);
    let mut y = Array1::from_elem(batch, y0);
    let mut z = Array2::zeros((batch, dim));
    for mut row in z.rows_mut() {
        row.assign(&params.grad_u0);
    }

    let mut cache = want_cache.then(|| RolloutCache {
        y_steps: Vec::with_capacity(n_steps + 1),
        z_steps: Vec::with_capacity(n_steps),
        subnet_caches: Vec::with_capacity(n_steps.saturating_sub(1)),
    });

    for n in 0..n_steps {
        if let Some(c) = cache.as_mut() {
            c.y_steps.push(y.clone());
            c.z_steps.push(z.clone());
        }
        let t_n = n as f64 * dt;
        let x_n = paths.states.index_axis(Axis(1), n);
        let dw_n = paths.brownian.increments.index_axis(Axis(1), n);
        for b in 0..batch {
            let f = problem.generator_value(t_n, x_n.row(b), y[b], z.row(b));
            let diffusion: f64 = z
                .row(b)
                .iter()
                .zip(dw_n.row(b).iter())
                .map(|(zv, dw)| zv * dw)
                .sum();
            y[b] = y[b] - f * dt + diffusion;
            if !y[b].is_finite() {
                return Err(SolverError::NonFinite {
                    context: "rollout value",
                    step: n + 1,
                });
            }
        }
        if n + 1 < n_steps {
            let x_next = paths.states.index_axis(Axis(1), n + 1).to_owned();
            let subnet = &params.subnets[n];
            z = match (mode, cache.as_mut()) {
                (Mode::Train, Some(c)) => {
                    let (z_next, sc) = subnet.forward_cached(&x_next, &params.net);
                    c.subnet_caches.push(sc);
                    z_next
                }
                _ => subnet.forward(&x_next, mode, &params.net)?,
            };
        }
    }
    if let Some(c) = cache.as_mut() {
        c.y_steps.push(y.clone());
    }

    let terminal = paths.terminal_states();
    let mut loss = 0.0;
    for b in 0..batch {
        let g = problem.terminal_value(terminal.row(b))?;
        let r = g - y[b];
        loss += r * r;
    }
    loss /= batch as f64;
    if !loss.is_finite() {
        return Err(SolverError::NonFinite {
            context: "loss",
            step: n_steps,
        });
    }

    Ok((
        RolloutResult {
            terminal_estimates: y,
            loss,
        },
        cache,
    ))
}

/// Evaluates the rollout. Pure: `params` is untouched (in particular,
/// running normalization statistics are not updated), so fitness
/// evaluations with `u0_override` can share one parameter set.
pub fn rollout(
    params: &SolverParams,
    problem: &ProblemSpec,
    paths: &PathBatch,
    u0_override: Option<f64>,
    mode: Mode,
) -> Result<RolloutResult> {
    run_rollout(params, problem, paths, u0_override, mode, false).map(|(r, _)| r)
}

/// Train-mode loss and exact gradients with respect to every weight.
/// The one mutation is the running-statistics update of each subnet,
/// which is why training is the only caller taking `&mut`.
pub fn loss_and_grads(
    params: &mut SolverParams,
    problem: &ProblemSpec,
    paths: &PathBatch,
) -> Result<(f64, Grads)> {
    let (result, cache) = run_rollout(params, problem, paths, None, Mode::Train, true)?;
    let cache = cache.expect("cache requested");

    let net = params.net;
    for (subnet, sc) in params.subnets.iter_mut().zip(cache.subnet_caches.iter()) {
        subnet.update_running_stats(sc, &net);
    }

    let batch = paths.batch();
    let n_steps = problem.n_steps;
    let dt = problem.dt();
    let terminal = paths.terminal_states();

    let mut grads = Grads::zeros_like(params);
    // d loss / d y_N
    let mut dy = Array1::zeros(batch);
    for b in 0..batch {
        let g = problem.terminal_value(terminal.row(b))?;
        dy[b] = 2.0 * (cache.y_steps[n_steps][b] - g) / batch as f64;
    }

    let dz_scale = problem.generator_dz_scale();
    for n in (0..n_steps).rev() {
        let z_n = &cache.z_steps[n];
        let y_n = &cache.y_steps[n];
        let dw_n = paths.brownian.increments.index_axis(Axis(1), n);

        // d y_{n+1} / d z_n = dW_n - dt * df/dz
        let mut dz = Array2::zeros(z_n.raw_dim());
        for b in 0..batch {
            let s = dy[b];
            match dz_scale {
                Some(c) => {
                    for j in 0..z_n.ncols() {
                        dz[[b, j]] = s * (dw_n[[b, j]] - dt * c * z_n[[b, j]]);
                    }
                }
                None => {
                    for j in 0..z_n.ncols() {
                        dz[[b, j]] = s * dw_n[[b, j]];
                    }
                }
            }
        }

        if n >= 1 {
            params.subnets[n - 1].backward(
                &cache.subnet_caches[n - 1],
                &dz,
                &net,
                &mut grads.subnets[n - 1],
            );
        } else {
            grads.grad_u0 = dz.sum_axis(Axis(0));
        }

        // d y_{n+1} / d y_n = 1 - dt * df/dy
        for b in 0..batch {
            dy[b] *= 1.0 - dt * problem.generator_dy(y_n[b]);
        }
    }
    grads.u0 = dy.sum();

    Ok((result.loss, grads))
}
