//! Per-time-step feedforward subnetworks mapping the state to
//! `z ~ sigma^T grad u`, with hand-written reverse-mode gradients.
//!
//! Architecture: batch normalization on the input, two hidden layers of
//! width `d + 10` with batch normalization on each pre-activation and
//! ReLU, and a linear output layer back to `d`. Batch normalization is
//! toggleable; in train mode it uses batch statistics, in eval mode the
//! running statistics. Running statistics are updated only by explicit
//! calls from the training step, never by plain forward evaluation.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};

/// Hidden width is `dim + HIDDEN_EXTRA`.
pub const HIDDEN_EXTRA: usize = 10;

/// Architecture/initialization knobs shared by all subnets of a solver.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct NetConfig {
    pub batch_norm: bool,
    /// Hidden weights and all biases are drawn uniformly from
    /// `[-init_range, init_range]`. The output weight matrix starts at
    /// zero so a fresh subnet contributes only its output bias; wide
    /// random output weights would swamp the rollout drift before any
    /// training happens.
    pub init_range: f64,
    /// Retention factor of the running statistics.
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            batch_norm: true,
            init_range: 0.1,
            bn_momentum: 0.9,
            bn_eps: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Dense {
    /// Shape `(fan_in, fan_out)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, range: f64, rng: &mut R) -> Self {
        let mut w = Array2::zeros((fan_in, fan_out));
        for v in w.iter_mut() {
            *v = rng.random_range(-range..=range);
        }
        let mut b = Array1::zeros(fan_out);
        for v in b.iter_mut() {
            *v = rng.random_range(-range..=range);
        }
        Dense { w, b }
    }

    fn zero_weight_uniform_bias<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        range: f64,
        rng: &mut R,
    ) -> Self {
        let mut b = Array1::zeros(fan_out);
        for v in b.iter_mut() {
            *v = rng.random_range(-range..=range);
        }
        Dense {
            w: Array2::zeros((fan_in, fan_out)),
            b,
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
        }
    }

    /// Train-mode forward on batch statistics; returns output and cache.
    fn forward_train(&self, x: &Array2<f64>, eps: f64) -> (Array2<f64>, BnCache) {
        let batch = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let mut var: Array1<f64> = Array1::zeros(x.ncols());
        for row in x.rows() {
            for (j, v) in row.iter().enumerate() {
                let c = v - mean[j];
                var[j] += c * c;
            }
        }
        var.mapv_inplace(|v| v / batch);
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let mut x_hat = x.clone();
        for mut row in x_hat.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[j]) * inv_std[j];
            }
        }
        let mut out = x_hat.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.gamma[j] * *v + self.beta[j];
            }
        }
        (
            out,
            BnCache {
                x_hat,
                inv_std,
                mean,
                var,
            },
        )
    }

    /// Eval-mode forward on running statistics.
    fn forward_eval(&self, x: &Array2<f64>, eps: f64) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let x_hat = (*v - self.running_mean[j]) / (self.running_var[j] + eps).sqrt();
                *v = self.gamma[j] * x_hat + self.beta[j];
            }
        }
        out
    }

    /// Backward through batch statistics. Returns `d loss / d x` and
    /// fills the parameter gradients.
    fn backward(
        &self,
        cache: &BnCache,
        dout: &Array2<f64>,
        grads: &mut BnGrads,
    ) -> Array2<f64> {
        let batch = dout.nrows() as f64;
        let cols = dout.ncols();
        let mut sum_dxhat: Array1<f64> = Array1::zeros(cols);
        let mut sum_dxhat_xhat: Array1<f64> = Array1::zeros(cols);
        let mut dxhat = dout.clone();
        for (mut drow, xrow) in dxhat.rows_mut().into_iter().zip(cache.x_hat.rows()) {
            for j in 0..cols {
                grads.gamma[j] += drow[j] * xrow[j];
                grads.beta[j] += drow[j];
                drow[j] *= self.gamma[j];
                sum_dxhat[j] += drow[j];
                sum_dxhat_xhat[j] += drow[j] * xrow[j];
            }
        }
        let mut dx = dxhat;
        for (mut drow, xrow) in dx.rows_mut().into_iter().zip(cache.x_hat.rows()) {
            for j in 0..cols {
                drow[j] = cache.inv_std[j] / batch
                    * (batch * drow[j] - sum_dxhat[j] - xrow[j] * sum_dxhat_xhat[j]);
            }
        }
        dx
    }

    fn update_running(&mut self, cache: &BnCache, momentum: f64) {
        for j in 0..self.running_mean.len() {
            self.running_mean[j] = momentum * self.running_mean[j] + (1.0 - momentum) * cache.mean[j];
            self.running_var[j] = momentum * self.running_var[j] + (1.0 - momentum) * cache.var[j];
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BnCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

/// Weights of one time-step subnetwork, `R^d -> R^d`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SubnetWeights {
    pub bn_in: BatchNorm,
    pub fc1: Dense,
    pub bn1: BatchNorm,
    pub fc2: Dense,
    pub bn2: BatchNorm,
    pub out: Dense,
}

/// Forward activations needed by the backward pass (train mode only).
#[derive(Clone, Debug)]
pub struct SubnetCache {
    h0: Array2<f64>,
    r1: Array2<f64>,
    r2: Array2<f64>,
    bn_in: Option<BnCache>,
    bn1: Option<BnCache>,
    bn2: Option<BnCache>,
}

/// Evaluation mode of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Batch statistics for normalization; the mode used for training.
    Train,
    /// Running statistics; pure, used for validation and fitness.
    Eval,
}

impl SubnetWeights {
    pub fn init<R: Rng + ?Sized>(dim: usize, cfg: &NetConfig, rng: &mut R) -> Self {
        let hidden = dim + HIDDEN_EXTRA;
        SubnetWeights {
            bn_in: BatchNorm::new(dim),
            fc1: Dense::uniform(dim, hidden, cfg.init_range, rng),
            bn1: BatchNorm::new(hidden),
            fc2: Dense::uniform(hidden, hidden, cfg.init_range, rng),
            bn2: BatchNorm::new(hidden),
            out: Dense::zero_weight_uniform_bias(hidden, dim, cfg.init_range, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.fc1.w.nrows()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(SolverError::DimensionMismatch(format!(
                "subnet expects {} input columns, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Row-wise map `R^d -> R^d` over the batch.
    pub fn forward(&self, x: &Array2<f64>, mode: Mode, cfg: &NetConfig) -> Result<Array2<f64>> {
        self.check_input(x)?;
        match mode {
            Mode::Eval => Ok(self.forward_eval(x, cfg)),
            Mode::Train => Ok(self.forward_cached(x, cfg).0),
        }
    }

    fn forward_eval(&self, x: &Array2<f64>, cfg: &NetConfig) -> Array2<f64> {
        let h0 = if cfg.batch_norm {
            self.bn_in.forward_eval(x, cfg.bn_eps)
        } else {
            x.clone()
        };
        let a1 = self.fc1.forward(&h0);
        let n1 = if cfg.batch_norm {
            self.bn1.forward_eval(&a1, cfg.bn_eps)
        } else {
            a1
        };
        let r1 = n1.mapv(|v| v.max(0.0));
        let a2 = self.fc2.forward(&r1);
        let n2 = if cfg.batch_norm {
            self.bn2.forward_eval(&a2, cfg.bn_eps)
        } else {
            a2
        };
        let r2 = n2.mapv(|v| v.max(0.0));
        self.out.forward(&r2)
    }

    /// Train-mode forward keeping the activations for backward.
    pub fn forward_cached(&self, x: &Array2<f64>, cfg: &NetConfig) -> (Array2<f64>, SubnetCache) {
        let (h0, c0) = if cfg.batch_norm {
            let (h, c) = self.bn_in.forward_train(x, cfg.bn_eps);
            (h, Some(c))
        } else {
            (x.clone(), None)
        };
        let a1 = self.fc1.forward(&h0);
        let (n1, c1) = if cfg.batch_norm {
            let (h, c) = self.bn1.forward_train(&a1, cfg.bn_eps);
            (h, Some(c))
        } else {
            (a1, None)
        };
        let r1 = n1.mapv(|v| v.max(0.0));
        let a2 = self.fc2.forward(&r1);
        let (n2, c2) = if cfg.batch_norm {
            let (h, c) = self.bn2.forward_train(&a2, cfg.bn_eps);
            (h, Some(c))
        } else {
            (a2, None)
        };
        let r2 = n2.mapv(|v| v.max(0.0));
        let z = self.out.forward(&r2);
        (
            z,
            SubnetCache {
                h0,
                r1,
                r2,
                bn_in: c0,
                bn1: c1,
                bn2: c2,
            },
        )
    }

    /// Accumulates parameter gradients for `d loss / d z = dz`. The
    /// gradient with respect to the input is not needed (path states are
    /// data, not parameters) and is not produced.
    pub fn backward(
        &self,
        cache: &SubnetCache,
        dz: &Array2<f64>,
        cfg: &NetConfig,
        grads: &mut SubnetGrads,
    ) {
        // out: z = r2 W3 + b3
        grads.out.w += &cache.r2.t().dot(dz);
        grads.out.b += &dz.sum_axis(Axis(0));
        let dr2 = dz.dot(&self.out.w.t());

        // relu mask: r2 > 0 iff pre-activation > 0
        let mut dn2 = dr2;
        dn2.zip_mut_with(&cache.r2, |d, r| {
            if *r <= 0.0 {
                *d = 0.0;
            }
        });
        let da2 = match (&cache.bn2, cfg.batch_norm) {
            (Some(c), true) => self.bn2.backward(c, &dn2, &mut grads.bn2),
            _ => dn2,
        };

        grads.fc2.w += &cache.r1.t().dot(&da2);
        grads.fc2.b += &da2.sum_axis(Axis(0));
        let dr1 = da2.dot(&self.fc2.w.t());

        let mut dn1 = dr1;
        dn1.zip_mut_with(&cache.r1, |d, r| {
            if *r <= 0.0 {
                *d = 0.0;
            }
        });
        let da1 = match (&cache.bn1, cfg.batch_norm) {
            (Some(c), true) => self.bn1.backward(c, &dn1, &mut grads.bn1),
            _ => dn1,
        };

        grads.fc1.w += &cache.h0.t().dot(&da1);
        grads.fc1.b += &da1.sum_axis(Axis(0));

        if let (Some(c), true) = (&cache.bn_in, cfg.batch_norm) {
            let dh0 = da1.dot(&self.fc1.w.t());
            // Only the gamma/beta gradients are needed from the input
            // normalization; discard d/dx.
            let _ = self.bn_in.backward(c, &dh0, &mut grads.bn_in);
        }
    }

    /// Folds the cached batch statistics into the running statistics.
    pub fn update_running_stats(&mut self, cache: &SubnetCache, cfg: &NetConfig) {
        if !cfg.batch_norm {
            return;
        }
        if let Some(c) = &cache.bn_in {
            self.bn_in.update_running(c, cfg.bn_momentum);
        }
        if let Some(c) = &cache.bn1 {
            self.bn1.update_running(c, cfg.bn_momentum);
        }
        if let Some(c) = &cache.bn2 {
            self.bn2.update_running(c, cfg.bn_momentum);
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DenseGrads {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BnGrads {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Gradient (or Adam moment) storage mirroring the learnable fields of
/// [`SubnetWeights`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SubnetGrads {
    pub bn_in: BnGrads,
    pub fc1: DenseGrads,
    pub bn1: BnGrads,
    pub fc2: DenseGrads,
    pub bn2: BnGrads,
    pub out: DenseGrads,
}

impl SubnetGrads {
    pub fn zeros_like(w: &SubnetWeights) -> Self {
        let dg = |d: &Dense| DenseGrads {
            w: Array2::zeros(d.w.raw_dim()),
            b: Array1::zeros(d.b.raw_dim()),
        };
        let bg = |b: &BatchNorm| BnGrads {
            gamma: Array1::zeros(b.gamma.raw_dim()),
            beta: Array1::zeros(b.beta.raw_dim()),
        };
        SubnetGrads {
            bn_in: bg(&w.bn_in),
            fc1: dg(&w.fc1),
            bn1: bg(&w.bn1),
            fc2: dg(&w.fc2),
            bn2: bg(&w.bn2),
            out: dg(&w.out),
        }
    }
}
