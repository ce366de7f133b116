//! The deep-BSDE baseline: a random initial guess for the scalar weight
//! from an interval, then joint Adam training of all weights on fresh
//! sample batches, with the validation loss tracked on one held-out
//! batch per run.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::adam_step;
use crate::error::{Result, SolverError};
use crate::net::NetConfig;
use crate::paths::{sample_brownian_with, simulate_forward, PathBatch};
use crate::problems::ProblemSpec;
use crate::report::{RunClock, TraceRow};
use crate::rng::{stream, substream};
use crate::rollout::{loss_and_grads, rollout, Mode, SolverParams};

/// Configuration of one baseline training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// `theta_u0` is drawn uniformly from `[a, b]`.
    pub guess_interval: (f64, f64),
    pub iterations: usize,
    pub lr: f64,
    pub batch: usize,
    pub valid_batch: usize,
    pub seed: u64,
    pub report_every: usize,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.guess_interval;
        if !(a <= b) {
            return Err(SolverError::InvalidArgument(format!(
                "guess interval [{a}, {b}] is empty"
            )));
        }
        if self.iterations < 1 {
            return Err(SolverError::InvalidArgument(
                "iterations must be >= 1".into(),
            ));
        }
        if self.batch < 1 || self.valid_batch < 1 || self.report_every < 1 {
            return Err(SolverError::InvalidArgument(
                "batch, valid_batch and report_every must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(SolverError::InvalidArgument("lr must be > 0".into()));
        }
        Ok(())
    }
}

/// Result of a training run: the trace, the trained weights and the
/// final estimate.
pub struct TrainOutput {
    pub rows: Vec<TraceRow>,
    pub final_u0: f64,
    pub params: SolverParams,
    pub negative_coords: usize,
}

fn draw_paths<R: rand::Rng + ?Sized>(
    problem: &ProblemSpec,
    rng: &mut R,
    batch: usize,
) -> Result<PathBatch> {
    let brownian = sample_brownian_with(rng, batch, problem.n_steps, problem.dim, problem.horizon)?;
    simulate_forward(problem, &brownian)
}

/// Trains the baseline for the configured budget. The trace records
/// `(iteration, wall seconds, theta_u0, validation loss)` at iteration
/// zero, every `report_every` iterations and at the end.
pub fn train_deep_bsde(
    problem: &ProblemSpec,
    cfg: &BaselineConfig,
    net: &NetConfig,
    clock: &mut RunClock,
) -> Result<TrainOutput> {
    cfg.validate()?;
    problem.validate()?;

    let mut weight_rng = substream(cfg.seed, stream::WEIGHT_INIT);
    let mut train_rng = substream(cfg.seed, stream::TRAIN_PATHS);
    let mut valid_rng = substream(cfg.seed, stream::VALID_PATHS);

    let mut params = SolverParams::init(problem, *net, cfg.guess_interval, &mut weight_rng)?;
    // One held-out batch per run, so the loss trace is comparable across
    // iterations.
    let valid_paths = draw_paths(problem, &mut valid_rng, cfg.valid_batch)?;
    let mut negative_coords = valid_paths.negative_coords;

    let eval_work = (cfg.valid_batch * problem.n_steps) as f64;
    let train_work = 3.0 * (cfg.batch * problem.n_steps) as f64;

    let mut rows = Vec::new();
    let record =
        |params: &SolverParams, iteration: u64, clock: &mut RunClock, rows: &mut Vec<TraceRow>| -> Result<()> {
            let valid = rollout(params, problem, &valid_paths, None, Mode::Eval)?;
            clock.add_work(eval_work);
            rows.push(TraceRow {
                phase: "train".into(),
                iteration,
                wall_seconds: clock.row_time(),
                u0_estimate: params.u0,
                loss: valid.loss,
            });
            Ok(())
        };

    record(&params, 0, clock, &mut rows)?;

    for iteration in 1..=cfg.iterations {
        let paths = draw_paths(problem, &mut train_rng, cfg.batch)?;
        negative_coords += paths.negative_coords;
        let (loss, grads) = loss_and_grads(&mut params, problem, &paths).map_err(|e| {
            SolverError::Diverged {
                iteration,
                what: e.to_string(),
            }
        })?;
        if !loss.is_finite() {
            return Err(SolverError::Diverged {
                iteration,
                what: format!("training loss became {loss}"),
            });
        }
        adam_step(&mut params, &grads, cfg.lr)?;
        clock.add_work(train_work);

        if iteration % cfg.report_every == 0 || iteration == cfg.iterations {
            record(&params, iteration as u64, clock, &mut rows)?;
        }
    }

    Ok(TrainOutput {
        rows,
        final_u0: params.u0,
        params,
        negative_coords,
    })
}

/// Loss landscape over initial guesses: per guess and independent run,
/// fresh random weights and a fresh sample batch, the loss evaluated
/// with the guess substituted and no training at all.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepTable {
    pub guesses: Vec<f64>,
    /// Shape `(guesses, runs)`.
    pub losses: Array2<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl SweepTable {
    /// Index of the guess with the smallest mean loss.
    pub fn argmin_mean(&self) -> usize {
        self.mean
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite losses"))
            .map(|(i, _)| i)
            .expect("non-empty sweep")
    }
}

pub fn initial_loss_sweep(
    problem: &ProblemSpec,
    guesses: &[f64],
    runs: usize,
    seed: u64,
    eval_batch: usize,
    net: &NetConfig,
) -> Result<SweepTable> {
    if guesses.is_empty() {
        return Err(SolverError::InvalidArgument("no guesses given".into()));
    }
    if runs < 1 || eval_batch < 1 {
        return Err(SolverError::InvalidArgument(
            "runs and eval_batch must be >= 1".into(),
        ));
    }
    problem.validate()?;

    let cells: Vec<(usize, usize)> = (0..guesses.len())
        .flat_map(|g| (0..runs).map(move |r| (g, r)))
        .collect();
    let losses: Result<Vec<f64>> = cells
        .par_iter()
        .map(|(g, r)| {
            let cell = (g * runs + r) as u64;
            let mut weight_rng = substream(seed, stream::SWEEP_BASE + 2 * cell);
            let mut path_rng = substream(seed, stream::SWEEP_BASE + 2 * cell + 1);
            let params = SolverParams::init(problem, *net, (0.0, 0.0), &mut weight_rng)?;
            let paths = draw_paths(problem, &mut path_rng, eval_batch)?;
            // Batch statistics: fresh weights have no meaningful running
            // statistics to evaluate under.
            let result = rollout(&params, problem, &paths, Some(guesses[*g]), Mode::Train)?;
            Ok(result.loss)
        })
        .collect();
    let losses = Array2::from_shape_vec((guesses.len(), runs), losses?)
        .expect("cell grid matches shape");

    let mean: Vec<f64> = losses
        .rows()
        .into_iter()
        .map(|row| row.mean().unwrap())
        .collect();
    let std: Vec<f64> = losses
        .rows()
        .into_iter()
        .zip(mean.iter())
        .map(|(row, m)| {
            if runs < 2 {
                0.0
            } else {
                (row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (runs as f64 - 1.0)).sqrt()
            }
        })
        .collect();

    Ok(SweepTable {
        guesses: guesses.to_vec(),
        losses,
        mean,
        std,
    })
}
