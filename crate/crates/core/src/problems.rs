//! The two benchmark PDE/BSDE instances, expressed as `(mu, sigma, f, g, x0)`.
//!
//! * Nonlinear Black-Scholes with default risk: `mu(t,x) = mu_hat * x`,
//!   `sigma(t,x) = sigma_hat * diag(x)`, driver
//!   `f = -(1 - delta) * Q(y) * y - r * y` with the piecewise-linear
//!   default intensity `Q`, terminal `g(x) = min_i x_i`.
//! * HJB/LQG: the uncontrolled forward process is `mu = 0`,
//!   `sigma = sqrt(2) * I`, so that the second-order term reduces to the
//!   Laplacian and `z = sqrt(2) * grad u`; the driver then reads
//!   `f = -(lambda / 2) * |z|^2`, terminal `g(x) = ln((1 + |x|^2) / 2)`.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};

/// Parameters of the Black-Scholes equation with default risk.
///
/// Requires `v_high < v_low` (price thresholds), `gamma_high > gamma_low`
/// (default intensities) and a recovery rate in `[0, 1)`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct BsParams {
    /// Risk-free rate (1/yr).
    pub rate: f64,
    /// Recovery rate `delta` in `[0, 1)`.
    pub recovery: f64,
    /// Default intensity in the high-risk region (1/yr).
    pub gamma_high: f64,
    /// Default intensity in the low-risk region (1/yr).
    pub gamma_low: f64,
    /// Claim value below which the intensity saturates at `gamma_high`.
    pub v_high: f64,
    /// Claim value above which the intensity saturates at `gamma_low`.
    pub v_low: f64,
    /// Drift rate of the underlying assets.
    pub mu_hat: f64,
    /// Volatility of the underlying assets.
    pub sigma_hat: f64,
}

impl Default for BsParams {
    fn default() -> Self {
        BsParams {
            rate: 0.02,
            recovery: 2.0 / 3.0,
            gamma_high: 0.2,
            gamma_low: 0.02,
            v_high: 50.0,
            v_low: 70.0,
            mu_hat: 0.02,
            sigma_hat: 0.2,
        }
    }
}

impl BsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_high < self.v_low) {
            return Err(SolverError::InvalidArgument(format!(
                "v_high ({}) must be < v_low ({})",
                self.v_high, self.v_low
            )));
        }
        // Equality is allowed: a constant intensity degenerates the
        // equation to the linear case used for closed-form checks.
        if !(self.gamma_high >= self.gamma_low) {
            return Err(SolverError::InvalidArgument(format!(
                "gamma_high ({}) must be >= gamma_low ({})",
                self.gamma_high, self.gamma_low
            )));
        }
        if !(0.0..1.0).contains(&self.recovery) {
            return Err(SolverError::InvalidArgument(format!(
                "recovery ({}) must lie in [0, 1)",
                self.recovery
            )));
        }
        for (name, v) in [
            ("rate", self.rate),
            ("mu_hat", self.mu_hat),
            ("sigma_hat", self.sigma_hat),
        ] {
            if !v.is_finite() {
                return Err(SolverError::InvalidArgument(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Parameters of the HJB equation: the control strength `lambda >= 0`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct HjbParams {
    pub lambda: f64,
}

impl Default for HjbParams {
    fn default() -> Self {
        HjbParams { lambda: 1.0 }
    }
}

impl HjbParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SolverError::InvalidArgument(format!(
                "lambda ({}) must be a nonnegative real",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Default-risk intensity as a function of the claim value: `gamma_high`
/// on `(-inf, v_high)`, `gamma_low` on `[v_low, inf)`, linear in between.
/// Continuous, piecewise linear, non-increasing.
pub fn q_intensity(y: f64, p: &BsParams) -> f64 {
    if y < p.v_high {
        p.gamma_high
    } else if y >= p.v_low {
        p.gamma_low
    } else {
        (p.gamma_high - p.gamma_low) / (p.v_high - p.v_low) * (y - p.v_high) + p.gamma_high
    }
}

/// Slope of `q_intensity` at `y` (zero on the saturated regions).
fn q_intensity_slope(y: f64, p: &BsParams) -> f64 {
    if y >= p.v_high && y < p.v_low {
        (p.gamma_high - p.gamma_low) / (p.v_high - p.v_low)
    } else {
        0.0
    }
}

/// BSDE driver of the default-risk equation:
/// `-(1 - delta) * Q(y) * y - r * y`. Independent of `t`, `x`, `z`.
pub fn bs_generator(y: f64, p: &BsParams) -> f64 {
    -(1.0 - p.recovery) * q_intensity(y, p) * y - p.rate * y
}

fn bs_generator_dy(y: f64, p: &BsParams) -> f64 {
    let q = q_intensity(y, p);
    let dq = q_intensity_slope(y, p);
    -(1.0 - p.recovery) * (dq * y + q) - p.rate
}

/// Terminal payoff of the default-risk equation: the minimum coordinate.
pub fn bs_terminal(x: ArrayView1<'_, f64>) -> Result<f64> {
    x.iter()
        .copied()
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |m| m.min(v)))
        })
        .ok_or_else(|| SolverError::InvalidArgument("terminal payoff of an empty vector".into()))
}

/// HJB driver under the `sigma = sqrt(2) * I` forward process:
/// `-(lambda / 2) * |z|^2`. Independent of `t`, `x`, `y`.
pub fn hjb_generator(z: ArrayView1<'_, f64>, p: &HjbParams) -> f64 {
    -0.5 * p.lambda * z.iter().map(|v| v * v).sum::<f64>()
}

/// HJB terminal condition `g(x) = ln((1 + |x|^2) / 2)`.
pub fn hjb_terminal(x: ArrayView1<'_, f64>) -> f64 {
    let sq: f64 = x.iter().map(|v| v * v).sum();
    ((1.0 + sq) / 2.0).ln()
}

/// Drift `mu(t, x)` of the forward process.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub enum Drift {
    Zero,
    /// `mu(t, x) = c * x`.
    Scale(f64),
}

/// Diffusion `sigma(t, x)`, stored in structured form so that applying
/// it (and its transpose) stays `O(d)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub enum Diffusion {
    /// `sigma(t, x) = c * diag(x)`.
    ScaledDiag(f64),
    /// `sigma(t, x) = c * I`.
    ScaledIdentity(f64),
}

/// BSDE driver `f(t, x, y, z)`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub enum Generator {
    /// `f = 0`; the rollout degenerates to a discrete martingale.
    Zero,
    BsDefaultRisk(BsParams),
    HjbQuadratic(HjbParams),
}

/// Terminal condition `g(x)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub enum Terminal {
    /// `g(x) = min_i x_i`.
    MinCoord,
    /// `g(x) = ln((1 + |x|^2) / 2)`.
    LogMoment,
}

/// A PDE/BSDE instance: dimension, horizon, discretization, initial
/// point and the four coefficient functions. Immutable after
/// construction and shareable across threads.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub label: String,
    pub dim: usize,
    pub horizon: f64,
    pub n_steps: usize,
    pub x0: Array1<f64>,
    pub drift: Drift,
    pub diffusion: Diffusion,
    pub generator: Generator,
    pub terminal: Terminal,
}

impl ProblemSpec {
    /// Uniform grid spacing `T / N`.
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_steps == 0 {
            return Err(SolverError::InvalidArgument(
                "dim and n_steps must be >= 1".into(),
            ));
        }
        if !(self.horizon > 0.0) {
            return Err(SolverError::InvalidArgument(format!(
                "horizon ({}) must be > 0",
                self.horizon
            )));
        }
        if self.x0.len() != self.dim {
            return Err(SolverError::DimensionMismatch(format!(
                "x0 has length {} but dim is {}",
                self.x0.len(),
                self.dim
            )));
        }
        match &self.generator {
            Generator::BsDefaultRisk(p) => p.validate()?,
            Generator::HjbQuadratic(p) => p.validate()?,
            Generator::Zero => {}
        }
        Ok(())
    }

    /// Driver value `f(t, x, y, z)` for one sample.
    pub fn generator_value(&self, _t: f64, _x: ArrayView1<'_, f64>, y: f64, z: ArrayView1<'_, f64>) -> f64 {
        match &self.generator {
            Generator::Zero => 0.0,
            Generator::BsDefaultRisk(p) => bs_generator(y, p),
            Generator::HjbQuadratic(p) => hjb_generator(z, p),
        }
    }

    /// `df/dy` for one sample; the drivers used here depend on `y` only
    /// through the default-risk term.
    pub(crate) fn generator_dy(&self, y: f64) -> f64 {
        match &self.generator {
            Generator::Zero => 0.0,
            Generator::BsDefaultRisk(p) => bs_generator_dy(y, p),
            Generator::HjbQuadratic(_) => 0.0,
        }
    }

    /// Coefficient `c` such that `df/dz = c * z`, or `None` when the
    /// driver does not depend on `z`.
    pub(crate) fn generator_dz_scale(&self) -> Option<f64> {
        match &self.generator {
            Generator::HjbQuadratic(p) => Some(-p.lambda),
            _ => None,
        }
    }

    /// Terminal payoff `g(x)` for one sample.
    pub fn terminal_value(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        match self.terminal {
            Terminal::MinCoord => bs_terminal(x),
            Terminal::LogMoment => Ok(hjb_terminal(x)),
        }
    }

    /// Assembles the default-risk Black-Scholes benchmark.
    pub fn make_bs(p: BsParams, dim: usize, horizon: f64, n_steps: usize, x0: Array1<f64>) -> Result<Self> {
        p.validate()?;
        let spec = ProblemSpec {
            label: "bs-default-risk".into(),
            dim,
            horizon,
            n_steps,
            x0,
            drift: Drift::Scale(p.mu_hat),
            diffusion: Diffusion::ScaledDiag(p.sigma_hat),
            generator: Generator::BsDefaultRisk(p),
            terminal: Terminal::MinCoord,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Assembles the HJB/LQG benchmark with the `sqrt(2) * I` forward
    /// process.
    pub fn make_hjb(p: HjbParams, dim: usize, horizon: f64, n_steps: usize, x0: Array1<f64>) -> Result<Self> {
        p.validate()?;
        let spec = ProblemSpec {
            label: "hjb-lqg".into(),
            dim,
            horizon,
            n_steps,
            x0,
            drift: Drift::Zero,
            diffusion: Diffusion::ScaledIdentity(std::f64::consts::SQRT_2),
            generator: Generator::HjbQuadratic(p),
            terminal: Terminal::LogMoment,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// `make_bs` with the conventional uniform initial price.
pub fn make_bs_problem(p: BsParams, dim: usize, horizon: f64, n_steps: usize, x0: f64) -> Result<ProblemSpec> {
    ProblemSpec::make_bs(p, dim, horizon, n_steps, Array1::from_elem(dim, x0))
}

/// `make_hjb` with a constant initial state (zero by convention).
pub fn make_hjb_problem(p: HjbParams, dim: usize, horizon: f64, n_steps: usize, x0: f64) -> Result<ProblemSpec> {
    ProblemSpec::make_hjb(p, dim, horizon, n_steps, Array1::from_elem(dim, x0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn p42() -> BsParams {
        BsParams::default()
    }

    #[test]
    fn q_intensity_reference_points() {
        let p = p42();
        assert_eq!(q_intensity(40.0, &p), 0.2);
        assert_eq!(q_intensity(80.0, &p), 0.02);
        assert!((q_intensity(60.0, &p) - 0.11).abs() < 1e-15);
    }

    #[test]
    fn q_intensity_continuous_at_thresholds() {
        let p = p42();
        // Continuity at v_high and v_low to 1e-12.
        let eps = 1e-9;
        assert!((q_intensity(p.v_high - eps, &p) - q_intensity(p.v_high + eps, &p)).abs() < 1e-8);
        assert!((q_intensity(p.v_high, &p) - p.gamma_high).abs() < 1e-12);
        assert!((q_intensity(p.v_low - eps, &p) - q_intensity(p.v_low, &p)).abs() < 1e-8);
        assert_eq!(q_intensity(p.v_low, &p), p.gamma_low);
    }

    #[test]
    fn bs_generator_reference_points() {
        let p = p42();
        assert_eq!(bs_generator(0.0, &p), 0.0);
        let expected_100 = -(1.0 / 3.0) * 0.02 * 100.0 - 0.02 * 100.0;
        assert!((bs_generator(100.0, &p) - expected_100).abs() < 1e-12);
        assert!((bs_generator(100.0, &p) - (-2.6667)).abs() < 1e-3);
        let expected_40 = -(1.0 / 3.0) * 0.2 * 40.0 - 0.02 * 40.0;
        assert!((bs_generator(40.0, &p) - expected_40).abs() < 1e-12);
        assert!((bs_generator(40.0, &p) - (-3.4667)).abs() < 1e-3);
    }

    #[test]
    fn bs_terminal_examples() {
        let x = Array1::from_elem(100, 100.0);
        assert_eq!(bs_terminal(x.view()).unwrap(), 100.0);
        assert_eq!(bs_terminal(array![3.0, 1.0, 2.0].view()).unwrap(), 1.0);
        assert!(bs_terminal(Array1::zeros(0).view()).is_err());
    }

    #[test]
    fn hjb_generator_examples() {
        let p = HjbParams { lambda: 1.0 };
        assert_eq!(hjb_generator(Array1::zeros(4).view(), &p), 0.0);
        let mut z = Array1::zeros(8);
        z[0] = std::f64::consts::SQRT_2;
        assert!((hjb_generator(z.view(), &p) - (-1.0)).abs() < 1e-15);
        let p0 = HjbParams { lambda: 0.0 };
        assert_eq!(hjb_generator(z.view(), &p0), 0.0);
    }

    #[test]
    fn hjb_terminal_examples() {
        assert!((hjb_terminal(Array1::zeros(5).view()) - 0.5f64.ln()).abs() < 1e-15);
        assert!((hjb_terminal(array![1.0].view())).abs() < 1e-15);
        let mut x = Array1::zeros(10);
        x[0] = 2.0;
        assert!((hjb_terminal(x.view()) - 2.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn make_bs_rejects_inverted_thresholds() {
        let p = BsParams {
            v_high: 70.0,
            v_low: 50.0,
            ..p42()
        };
        assert!(make_bs_problem(p, 3, 1.0, 4, 100.0).is_err());
    }

    #[test]
    fn make_defaults_match_benchmark_setups() {
        let bs = make_bs_problem(p42(), 100, 1.0, 40, 100.0).unwrap();
        assert_eq!(bs.dim, 100);
        assert_eq!(bs.drift, Drift::Scale(0.02));
        assert_eq!(bs.diffusion, Diffusion::ScaledDiag(0.2));

        let hjb = make_hjb_problem(HjbParams { lambda: 1.0 }, 100, 1.0, 20, 0.0).unwrap();
        assert_eq!(hjb.drift, Drift::Zero);
        assert_eq!(hjb.diffusion, Diffusion::ScaledIdentity(std::f64::consts::SQRT_2));
    }

    proptest! {
        #[test]
        fn q_intensity_monotone_and_bounded(a in -200.0..300.0f64, b in -200.0..300.0f64) {
            let p = p42();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(q_intensity(lo, &p) >= q_intensity(hi, &p));
            let q = q_intensity(a, &p);
            prop_assert!(q >= p.gamma_low && q <= p.gamma_high);
        }

        #[test]
        fn hjb_generator_nonpositive(zs in proptest::collection::vec(-10.0..10.0f64, 1..16), lambda in 0.0..50.0f64) {
            let z = Array1::from_vec(zs);
            let p = HjbParams { lambda };
            prop_assert!(hjb_generator(z.view(), &p) <= 0.0);
        }

        #[test]
        fn terminals_permutation_invariant(xs in proptest::collection::vec(-50.0..150.0f64, 2..12)) {
            let x = Array1::from_vec(xs.clone());
            let mut rev = xs.clone();
            rev.reverse();
            let xr = Array1::from_vec(rev);
            prop_assert_eq!(bs_terminal(x.view()).unwrap(), bs_terminal(xr.view()).unwrap());
            prop_assert!((hjb_terminal(x.view()) - hjb_terminal(xr.view())).abs() < 1e-12);
        }
    }
}
