//! Independent ground truth: Monte Carlo evaluation of the HJB closed
//! form, the closed-form linearized default-risk value, and published
//! reference values stored as fixtures.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::problems::{BsParams, HjbParams};
use crate::rng::{stream, substream};

/// A Monte Carlo (or closed-form) reference value with its uncertainty.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub method: String,
}

const CHUNK: usize = 32_768;

/// Log-sum-exp accumulator for one chunk: `max`, `sum exp(a - max)`,
/// `sum exp(2(a - max))`.
#[derive(Clone, Copy)]
struct LseAcc {
    max: f64,
    s1: f64,
    s2: f64,
}

impl LseAcc {
    fn merge(self, other: LseAcc) -> LseAcc {
        let max = self.max.max(other.max);
        LseAcc {
            max,
            s1: self.s1 * (self.max - max).exp() + other.s1 * (other.max - max).exp(),
            s2: self.s2 * (2.0 * (self.max - max)).exp() + other.s2 * (2.0 * (other.max - max)).exp(),
        }
    }
}

/// Evaluates `u(0, x0) = -(1/lambda) ln E[exp(-lambda g(x0 + sqrt(2) W_T))]`
/// by plain Monte Carlo with `W_T ~ N(0, T I_d)`. The standard error of
/// the outer log comes from the delta method. `lambda = 0` falls back to
/// the direct mean `E[g(x0 + sqrt(2) W_T)]`.
///
/// Sampling is chunked with one RNG substream per chunk and a fixed
/// merge order, so the result does not depend on the thread count.
pub fn hjb_exact_mc(
    p: &HjbParams,
    dim: usize,
    horizon: f64,
    x0: &Array1<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<OracleResult> {
    p.validate()?;
    if dim == 0 || n_samples == 0 {
        return Err(SolverError::InvalidArgument(
            "dim and n_samples must be >= 1".into(),
        ));
    }
    if !(horizon > 0.0) {
        return Err(SolverError::InvalidArgument("horizon must be > 0".into()));
    }
    if x0.len() != dim {
        return Err(SolverError::DimensionMismatch(format!(
            "x0 has length {}, expected {dim}",
            x0.len()
        )));
    }

    let scale = (2.0 * horizon).sqrt();
    let n_chunks = n_samples.div_ceil(CHUNK);
    let sample_g = |rng: &mut rand_chacha::ChaCha12Rng| -> f64 {
        let mut sq = 0.0;
        for j in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            let x = x0[j] + scale * z;
            sq += x * x;
        }
        ((1.0 + sq) / 2.0).ln()
    };

    if p.lambda == 0.0 {
        // Direct-mean limit of the log-expectation.
        let partials: Vec<(f64, f64, usize)> = (0..n_chunks)
            .into_par_iter()
            .map(|k| {
                let mut rng = substream(seed, stream::ORACLE_BASE + k as u64);
                let count = CHUNK.min(n_samples - k * CHUNK);
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                for _ in 0..count {
                    let g = sample_g(&mut rng);
                    sum += g;
                    sumsq += g * g;
                }
                (sum, sumsq, count)
            })
            .collect();
        let (sum, sumsq) = partials
            .iter()
            .fold((0.0, 0.0), |(a, b), (s, q, _)| (a + s, b + q));
        let n = n_samples as f64;
        let mean = sum / n;
        let var = (sumsq / n - mean * mean).max(0.0);
        return Ok(OracleResult {
            value: mean,
            std_error: (var / n).sqrt(),
            n_samples,
            method: "hjb-mc-direct-mean".into(),
        });
    }

    let lambda = p.lambda;
    let partials: Vec<LseAcc> = (0..n_chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, stream::ORACLE_BASE + k as u64);
            let count = CHUNK.min(n_samples - k * CHUNK);
            let mut a = Vec::with_capacity(count);
            for _ in 0..count {
                a.push(-lambda * sample_g(&mut rng));
            }
            let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for v in &a {
                let e = (v - max).exp();
                s1 += e;
                s2 += e * e;
            }
            LseAcc { max, s1, s2 }
        })
        .collect();
    let acc = partials
        .into_iter()
        .reduce(|a, b| a.merge(b))
        .expect("at least one chunk");

    let n = n_samples as f64;
    let ln_mean = acc.max + acc.s1.ln() - n.ln();
    let value = -ln_mean / lambda;
    // Var(ln mean_s) ~ (E[s^2]/E[s]^2 - 1) / n, shift-free ratio.
    let ratio = n * acc.s2 / (acc.s1 * acc.s1);
    let std_error = ((ratio - 1.0).max(0.0) / n).sqrt() / lambda;

    Ok(OracleResult {
        value,
        std_error,
        n_samples,
        method: "hjb-mc-log-expectation".into(),
    })
}

/// Closed form for the one-dimensional default-risk equation with a
/// constant intensity (`gamma_high = gamma_low = gamma`): the driver is
/// linear in `y`, so `u(0, x0) = x0 exp((mu_hat - r - (1-delta) gamma) T)`.
pub fn bs_linear_closed_form(p: &BsParams, horizon: f64, x0: f64) -> Result<f64> {
    if p.gamma_high != p.gamma_low {
        return Err(SolverError::InvalidArgument(format!(
            "closed form needs a constant intensity, got gamma_high {} != gamma_low {}",
            p.gamma_high, p.gamma_low
        )));
    }
    if !(horizon >= 0.0) {
        return Err(SolverError::InvalidArgument("horizon must be >= 0".into()));
    }
    let gamma = p.gamma_high;
    Ok(x0 * ((p.mu_hat - p.rate - (1.0 - p.recovery) * gamma) * horizon).exp())
}

/// Published reference values (multilevel-Picard and Monte Carlo columns
/// of the benchmark tables), keyed by label.
pub fn fixture(label: &str) -> Option<f64> {
    FIXTURES
        .iter()
        .find(|(l, _)| *l == label)
        .map(|(_, v)| *v)
}

pub fn fixture_labels() -> Vec<&'static str> {
    FIXTURES.iter().map(|(l, _)| *l).collect()
}

/// Picard values for the default-risk equation (by volatility at d=100
/// and by dimension at sigma_hat=0.2) and Monte Carlo values for the HJB
/// equation (by control strength at d=100 and by dimension at lambda=1).
static FIXTURES: &[(&str, f64)] = &[
    ("bs_picard_sigma_0.1", 77.00),
    ("bs_picard_sigma_0.2", 57.32),
    ("bs_picard_sigma_0.3", 42.50),
    ("bs_picard_sigma_0.4", 32.12),
    ("bs_picard_sigma_0.5", 24.09),
    ("bs_picard_d_100", 77.00),
    ("bs_picard_d_200", 75.16),
    ("bs_picard_d_300", 74.18),
    ("bs_picard_d_400", 73.53),
    ("bs_picard_d_500", 72.99),
    ("hjb_mc_lambda_1", 4.590),
    ("hjb_mc_lambda_10", 4.493),
    ("hjb_mc_lambda_20", 4.369),
    ("hjb_mc_lambda_30", 4.247),
    ("hjb_mc_lambda_40", 4.158),
    ("hjb_mc_lambda_50", 4.096),
    ("hjb_mc_d_100", 4.590),
    ("hjb_mc_d_200", 5.291),
    ("hjb_mc_d_300", 5.699),
    ("hjb_mc_d_400", 5.988),
    ("hjb_mc_d_500", 6.212),
];
