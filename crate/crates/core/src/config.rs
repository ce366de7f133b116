//! Run configuration: a single JSON document, with per-problem defaults
//! for everything the benchmark protocols leave open. CLI flags override
//! file values; the resolved form (all defaults filled in, scale factors
//! applied) is echoed into every report so runs are self-describing.

use serde::{Deserialize, Serialize};

use crate::deep_bsde::BaselineConfig;
use crate::deep_ga::{default_alphas, GaConfig};
use crate::error::{Result, SolverError};
use crate::net::{NetConfig, HIDDEN_EXTRA};
use crate::problems::{make_bs_problem, make_hjb_problem, BsParams, HjbParams, ProblemSpec};
use crate::report::TimingMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Bs,
    Hjb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DeepBsde,
    DeepGa,
    Oracle,
    Landscape,
}

/// Problem selector plus overrides; unset fields take the benchmark
/// defaults for the kind.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub n_steps: Option<usize>,
    /// Initial point, broadcast to every coordinate.
    #[serde(default)]
    pub x0: Option<f64>,
    #[serde(default)]
    pub bs: Option<BsParams>,
    #[serde(default)]
    pub hjb: Option<HjbParams>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LandscapeConfig {
    pub guesses: Vec<f64>,
    pub runs: usize,
    pub eval_batch: usize,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        LandscapeConfig {
            guesses: Vec::new(),
            runs: 5,
            eval_batch: 4096,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub n_samples: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            n_samples: 10_000_000,
        }
    }
}

/// Where the reference value for the error column comes from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReferenceSpec {
    /// A published table value by label, see [`crate::oracles::fixture`].
    Fixture { label: String },
    /// Monte Carlo evaluation of the HJB closed form.
    HjbMc {
        #[serde(default = "default_ref_mc_samples")]
        n_samples: usize,
    },
    /// Closed form of the linearized (constant-intensity) problem.
    BsClosedForm,
    /// An explicit value.
    Value {
        value: f64,
        #[serde(default)]
        source: Option<String>,
    },
}

fn default_ref_mc_samples() -> usize {
    1_000_000
}

/// Desk-scale multipliers; they compose multiplicatively with the
/// configured sizes and appear in the config echo.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleFactors {
    pub dim: f64,
    pub iters: f64,
    pub samples: f64,
}

impl Default for ScaleFactors {
    fn default() -> Self {
        ScaleFactors {
            dim: 1.0,
            iters: 1.0,
            samples: 1.0,
        }
    }
}

impl ScaleFactors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dim", self.dim), ("iters", self.iters), ("samples", self.samples)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SolverError::Config(format!(
                    "scale factor {name} ({v}) must be a positive real"
                )));
            }
        }
        Ok(())
    }
}

/// Raw run configuration as read from the JSON file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default)]
    pub deep_bsde: Option<PartialBaseline>,
    #[serde(default)]
    pub deep_ga: Option<PartialGa>,
    #[serde(default)]
    pub landscape: Option<LandscapeConfig>,
    #[serde(default)]
    pub oracle: Option<OracleConfig>,
    #[serde(default)]
    pub network: Option<NetConfig>,
    #[serde(default)]
    pub reference: Option<ReferenceSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub timing: TimingMode,
    #[serde(default)]
    pub scale: ScaleFactors,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| SolverError::Config(format!("bad config JSON: {e}")))
    }
}

/// Baseline solver fields that may be left to the per-problem defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PartialBaseline {
    pub guess_interval: Option<(f64, f64)>,
    pub iterations: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub valid_batch: Option<usize>,
    pub report_every: Option<usize>,
}

/// GA fields that may be left to the per-problem defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PartialGa {
    pub population_size: Option<usize>,
    pub generations: Option<usize>,
    pub crossover_prob: Option<f64>,
    pub mutation_prob: Option<f64>,
    pub u0_min: Option<f64>,
    pub u0_max: Option<f64>,
    pub adam_iters_per_generation: Option<usize>,
    pub n_populations: Option<usize>,
    pub alphas: Option<Vec<f64>>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub valid_batch: Option<usize>,
}

/// Fully resolved configuration: every default filled in and every scale
/// factor applied. This is what reports echo.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedConfig {
    pub command: String,
    pub method: Option<Method>,
    pub problem_kind: ProblemKind,
    pub dim: usize,
    pub horizon: f64,
    pub n_steps: usize,
    pub x0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bs: Option<BsParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hjb: Option<HjbParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deep_bsde: Option<BaselineConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deep_ga: Option<GaConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub landscape: Option<LandscapeConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
    pub network: NetConfig,
    pub hidden_width: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSpec>,
    pub seed: u64,
    pub timing: TimingMode,
    pub scale: ScaleFactors,
}

fn scaled_count(base: usize, factor: f64, min: usize) -> usize {
    ((base as f64 * factor).round() as usize).max(min)
}

struct ProblemDefaults {
    dim: usize,
    n_steps: usize,
    x0: f64,
    lr: f64,
    guess_interval: (f64, f64),
    iterations: usize,
    ga_u0_max: f64,
    ga_generations: usize,
    ga_adam_iters: usize,
    landscape_guesses: Vec<f64>,
}

fn defaults_for(kind: ProblemKind) -> ProblemDefaults {
    match kind {
        // Benchmark protocol for the default-risk equation: interval
        // [40, 50], 10000 iterations, lr 0.008, GA over [0, 100] with
        // 15 generations of 100 Adam iterations.
        ProblemKind::Bs => ProblemDefaults {
            dim: 100,
            n_steps: 40,
            x0: 100.0,
            lr: 0.008,
            guess_interval: (40.0, 50.0),
            iterations: 10_000,
            ga_u0_max: 100.0,
            ga_generations: 15,
            ga_adam_iters: 100,
            landscape_guesses: (0..=10).map(|i| 10.0 * i as f64).collect(),
        },
        // HJB protocol: interval [7, 8], 40000 iterations, lr 0.01, GA
        // over [0, 10] with 20 generations of 1000 Adam iterations.
        ProblemKind::Hjb => ProblemDefaults {
            dim: 100,
            n_steps: 20,
            x0: 0.0,
            lr: 0.01,
            guess_interval: (7.0, 8.0),
            iterations: 40_000,
            ga_u0_max: 10.0,
            ga_generations: 20,
            ga_adam_iters: 1000,
            landscape_guesses: (0..=10).map(|i| i as f64).collect(),
        },
    }
}

impl RunConfig {
    /// Resolves defaults and applies the scale factors. `command` names
    /// the CLI entry point for the echo; `require_seed` matches the
    /// reproducibility contract of `solve` and `bench`.
    pub fn resolve(&self, command: &str, require_seed: bool) -> Result<ResolvedConfig> {
        self.scale.validate()?;
        let d = defaults_for(self.problem.kind);

        let seed = match (self.seed, require_seed) {
            (Some(s), _) => s,
            (None, false) => 0,
            (None, true) => {
                return Err(SolverError::Config(format!(
                    "`{command}` requires a seed (config `seed` or --seed)"
                )))
            }
        };

        let dim = scaled_count(self.problem.dim.unwrap_or(d.dim), self.scale.dim, 1);
        let n_steps = self.problem.n_steps.unwrap_or(d.n_steps);
        let horizon = self.problem.horizon.unwrap_or(1.0);
        let x0 = self.problem.x0.unwrap_or(d.x0);
        let (bs, hjb) = match self.problem.kind {
            ProblemKind::Bs => (Some(self.problem.bs.clone().unwrap_or_default()), None),
            ProblemKind::Hjb => (None, Some(self.problem.hjb.clone().unwrap_or_default())),
        };

        let network = self.network.unwrap_or_default();

        let pb = self.deep_bsde.clone().unwrap_or_default();
        let deep_bsde = BaselineConfig {
            guess_interval: pb.guess_interval.unwrap_or(d.guess_interval),
            iterations: scaled_count(pb.iterations.unwrap_or(d.iterations), self.scale.iters, 1),
            lr: pb.lr.unwrap_or(d.lr),
            batch: scaled_count(pb.batch.unwrap_or(64), self.scale.samples, 1),
            valid_batch: scaled_count(pb.valid_batch.unwrap_or(256), self.scale.samples, 1),
            seed,
            report_every: pb.report_every.unwrap_or(100),
        };

        let pg = self.deep_ga.clone().unwrap_or_default();
        let deep_ga = GaConfig {
            population_size: pg.population_size.unwrap_or(10),
            generations: pg.generations.unwrap_or(d.ga_generations),
            crossover_prob: pg.crossover_prob.unwrap_or(0.8),
            mutation_prob: pg.mutation_prob.unwrap_or(0.4),
            u0_min: pg.u0_min.unwrap_or(0.0),
            u0_max: pg.u0_max.unwrap_or(d.ga_u0_max),
            adam_iters_per_generation: if pg.adam_iters_per_generation == Some(0) {
                0
            } else {
                scaled_count(
                    pg.adam_iters_per_generation.unwrap_or(d.ga_adam_iters),
                    self.scale.iters,
                    1,
                )
            },
            n_populations: pg.n_populations.unwrap_or(3),
            alphas: pg.alphas.clone().unwrap_or_else(default_alphas),
            lr: pg.lr.unwrap_or(d.lr),
            batch: scaled_count(pg.batch.unwrap_or(64), self.scale.samples, 1),
            valid_batch: scaled_count(pg.valid_batch.unwrap_or(256), self.scale.samples, 1),
            seed,
        };

        let mut landscape = self.landscape.clone().unwrap_or_default();
        if landscape.guesses.is_empty() {
            landscape.guesses = d.landscape_guesses;
        }
        landscape.eval_batch = scaled_count(landscape.eval_batch, self.scale.samples, 1);

        let mut oracle = self.oracle.clone().unwrap_or_default();
        oracle.n_samples = scaled_count(oracle.n_samples, self.scale.samples, 1);

        Ok(ResolvedConfig {
            command: command.to_string(),
            method: self.method,
            problem_kind: self.problem.kind,
            dim,
            horizon,
            n_steps,
            x0,
            bs,
            hjb,
            deep_bsde: Some(deep_bsde),
            deep_ga: Some(deep_ga),
            landscape: Some(landscape),
            oracle: Some(oracle),
            network,
            hidden_width: dim + HIDDEN_EXTRA,
            reference: self.reference.clone(),
            seed,
            timing: self.timing,
            scale: self.scale,
        })
    }
}

impl ResolvedConfig {
    /// Builds the problem instance this configuration describes.
    pub fn build_problem(&self) -> Result<ProblemSpec> {
        match self.problem_kind {
            ProblemKind::Bs => make_bs_problem(
                self.bs.clone().expect("bs params resolved"),
                self.dim,
                self.horizon,
                self.n_steps,
                self.x0,
            ),
            ProblemKind::Hjb => make_hjb_problem(
                self.hjb.clone().expect("hjb params resolved"),
                self.dim,
                self.horizon,
                self.n_steps,
                self.x0,
            ),
        }
    }

    /// Trims the echo to the sections the executed command used.
    pub fn retain_sections(&mut self, bsde: bool, ga: bool, landscape: bool, oracle: bool) {
        if !bsde {
            self.deep_bsde = None;
        }
        if !ga {
            self.deep_ga = None;
        }
        if !landscape {
            self.landscape = None;
        }
        if !oracle {
            self.oracle = None;
        }
    }
}
