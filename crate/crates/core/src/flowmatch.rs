//! Flow-matching math on the linear (optimal-transport) path, an Euler ODE
//! sampler, VAE loss terms and two small velocity models with hand-derived
//! gradients.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowBatch {
    pub x0: DMatrix<f64>,
    pub x1: DMatrix<f64>,
    pub t: DVector<f64>,
    pub cond: DMatrix<f64>,
}

impl FlowBatch {
    pub fn new(x0: DMatrix<f64>, x1: DMatrix<f64>, t: DVector<f64>, cond: DMatrix<f64>) -> Result<Self> {
        let b = x0.nrows();
        for (rows, what) in [(x1.nrows(), b), (t.len(), b), (cond.nrows(), b)] {
            if rows != what {
                return Err(Error::DimensionMismatch {
                    expected: what,
                    actual: rows,
                });
            }
        }
        if x1.ncols() != x0.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x0.ncols(),
                actual: x1.ncols(),
            });
        }
        if t.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidArgument("t must lie in [0, 1]".into()));
        }
        Ok(FlowBatch { x0, x1, t, cond })
    }

    pub fn len(&self) -> usize {
        self.x0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x0.ncols()
    }

    pub fn cond_dim(&self) -> usize {
        self.cond.ncols()
    }

    /// Applies a row permutation to every field.
    pub fn permuted(&self, order: &[usize]) -> FlowBatch {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(order[i], j)]);
        FlowBatch {
            x0: pick(&self.x0),
            x1: pick(&self.x1),
            t: DVector::from_fn(self.t.len(), |i, _| self.t[order[i]]),
            cond: pick(&self.cond),
        }
    }
}

fn same_len(a: &DVector<f64>, b: &DVector<f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// `x_t = (1 - t) x0 + t x1`.
pub fn interpolate_path(x0: &DVector<f64>, x1: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    same_len(x0, x1)?;
    if t == 0.0 {
        return Ok(x0.clone());
    }
    if t == 1.0 {
        return Ok(x1.clone());
    }
    Ok(x0 * (1.0 - t) + x1 * t)
}

/// `u = x1 - x0`, the path's constant velocity.
pub fn target_velocity(x0: &DVector<f64>, x1: &DVector<f64>) -> Result<DVector<f64>> {
    same_len(x0, x1)?;
    Ok(x1 - x0)
}

pub trait VelocityModel {
    fn dim(&self) -> usize;
    fn cond_dim(&self) -> usize;
    fn velocity(&self, x: &DVector<f64>, t: f64, c: &DVector<f64>) -> DVector<f64>;
}

/// Models with a flat parameter vector and analytic loss gradients.
pub trait Trainable: VelocityModel {
    fn params(&self) -> DVector<f64>;
    fn set_params(&mut self, p: &DVector<f64>);
    /// Adds `d(g . u(z)) / d(params)` to `grad`, where `u` is the output at
    /// input `z = [x; t; c]`.
    fn accumulate_grad(&self, z: &DVector<f64>, g: &DVector<f64>, grad: &mut DVector<f64>);
}

fn model_input(x: &DVector<f64>, t: f64, c: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(x.len() + 1 + c.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z[x.len()] = t;
    z.rows_mut(x.len() + 1, c.len()).copy_from(c);
    z
}

/// Velocity given by a closure; used for analytic reference fields.
pub struct FnVelocity<F> {
    pub dim: usize,
    pub cond_dim: usize,
    pub f: F,
}

impl<F: Fn(&DVector<f64>, f64, &DVector<f64>) -> DVector<f64>> VelocityModel for FnVelocity<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn cond_dim(&self) -> usize {
        self.cond_dim
    }
    fn velocity(&self, x: &DVector<f64>, t: f64, c: &DVector<f64>) -> DVector<f64> {
        (self.f)(x, t, c)
    }
}

/// `u = W [x; t; c] + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineModel {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    cond_dim: usize,
}

impl AffineModel {
    pub fn zeros(dim: usize, cond_dim: usize) -> Self {
        AffineModel {
            w: DMatrix::zeros(dim, dim + 1 + cond_dim),
            b: DVector::zeros(dim),
            cond_dim,
        }
    }

    pub fn random(dim: usize, cond_dim: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut m = AffineModel::zeros(dim, cond_dim);
        let p = DVector::from_fn(m.params().len(), |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        m.set_params(&p);
        m
    }
}

impl VelocityModel for AffineModel {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn cond_dim(&self) -> usize {
        self.cond_dim
    }
    fn velocity(&self, x: &DVector<f64>, t: f64, c: &DVector<f64>) -> DVector<f64> {
        &self.w * model_input(x, t, c) + &self.b
    }
}

impl Trainable for AffineModel {
    fn params(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.w.len() + self.b.len(),
            self.w.iter().chain(self.b.iter()).copied(),
        )
    }

    fn set_params(&mut self, p: &DVector<f64>) {
        let n = self.w.len();
        self.w.as_mut_slice().copy_from_slice(&p.as_slice()[..n]);
        self.b.as_mut_slice().copy_from_slice(&p.as_slice()[n..]);
    }

    fn accumulate_grad(&self, z: &DVector<f64>, g: &DVector<f64>, grad: &mut DVector<f64>) {
        let n = self.w.len();
        let mut gw = DMatrix::<f64>::zeros(self.w.nrows(), self.w.ncols());
        gw.ger(1.0, g, z, 0.0);
        for (dst, src) in grad.as_mut_slice()[..n].iter_mut().zip(gw.iter()) {
            *dst += src;
        }
        for (dst, src) in grad.as_mut_slice()[n..].iter_mut().zip(g.iter()) {
            *dst += src;
        }
    }
}

/// `u = W2 tanh(W1 [x; t; c] + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TanhMlp {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    cond_dim: usize,
}

impl TanhMlp {
    pub fn random(dim: usize, cond_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let input = dim + 1 + cond_dim;
        let mut normal = |rows, cols, scale: f64| {
            DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
        };
        let w1 = normal(hidden, input, 1.0 / (input as f64).sqrt());
        let w2 = normal(dim, hidden, 1.0 / (hidden as f64).sqrt());
        TanhMlp {
            w1,
            b1: DVector::zeros(hidden),
            w2,
            b2: DVector::zeros(dim),
            cond_dim,
        }
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    fn hidden_activation(&self, z: &DVector<f64>) -> DVector<f64> {
        (&self.w1 * z + &self.b1).map(f64::tanh)
    }
}

impl VelocityModel for TanhMlp {
    fn dim(&self) -> usize {
        self.b2.len()
    }
    fn cond_dim(&self) -> usize {
        self.cond_dim
    }
    fn velocity(&self, x: &DVector<f64>, t: f64, c: &DVector<f64>) -> DVector<f64> {
        &self.w2 * self.hidden_activation(&model_input(x, t, c)) + &self.b2
    }
}

impl Trainable for TanhMlp {
    fn params(&self) -> DVector<f64> {
        let parts = [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
        ];
        DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.into_iter().flatten().copied())
    }

    fn set_params(&mut self, p: &DVector<f64>) {
        let mut rest = p.as_slice();
        for dst in [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
    }

    fn accumulate_grad(&self, z: &DVector<f64>, g: &DVector<f64>, grad: &mut DVector<f64>) {
        let h = self.hidden_activation(z);
        let dh = self.w2.transpose() * g;
        let da = dh.component_mul(&h.map(|v| 1.0 - v * v));
        let mut gw1 = DMatrix::<f64>::zeros(self.w1.nrows(), self.w1.ncols());
        gw1.ger(1.0, &da, z, 0.0);
        let mut gw2 = DMatrix::<f64>::zeros(self.w2.nrows(), self.w2.ncols());
        gw2.ger(1.0, g, &h, 0.0);
        let parts = [gw1.as_slice(), da.as_slice(), gw2.as_slice(), g.as_slice()];
        for (dst, src) in grad.iter_mut().zip(parts.into_iter().flatten()) {
            *dst += src;
        }
    }
}

fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

/// Mean over the batch of `|u(x_t, c, t) - (x1 - x0)|^2`.
pub fn fm_loss<M: VelocityModel + ?Sized>(model: &M, batch: &FlowBatch) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..batch.len() {
        let (x0, x1) = (row(&batch.x0, i), row(&batch.x1, i));
        let t = batch.t[i];
        let xt = interpolate_path(&x0, &x1, t)?;
        let r = model.velocity(&xt, t, &row(&batch.cond, i)) - target_velocity(&x0, &x1)?;
        total += r.norm_squared();
    }
    let loss = total / batch.len().max(1) as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok(loss)
}

/// Loss and its gradient with respect to the model parameters.
pub fn fm_loss_grad<M: Trainable + ?Sized>(model: &M, batch: &FlowBatch) -> Result<(f64, DVector<f64>)> {
    let n = batch.len().max(1) as f64;
    let mut grad = DVector::zeros(model.params().len());
    let mut total = 0.0;
    for i in 0..batch.len() {
        let (x0, x1) = (row(&batch.x0, i), row(&batch.x1, i));
        let t = batch.t[i];
        let c = row(&batch.cond, i);
        let xt = interpolate_path(&x0, &x1, t)?;
        let r = model.velocity(&xt, t, &c) - target_velocity(&x0, &x1)?;
        total += r.norm_squared();
        model.accumulate_grad(&model_input(&xt, t, &c), &(r * (2.0 / n)), &mut grad);
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok((loss, grad))
}

/// Forward Euler from `t = 0` to `t = 1` in `steps` equal steps, one row per
/// sample.
pub fn euler_sample<M: VelocityModel + ?Sized>(
    model: &M,
    x0: &DMatrix<f64>,
    cond: &DMatrix<f64>,
    steps: usize,
) -> Result<DMatrix<f64>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("euler_sample needs at least one step".into()));
    }
    if cond.nrows() != x0.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x0.nrows(),
            actual: cond.nrows(),
        });
    }
    let dt = 1.0 / steps as f64;
    let mut out = x0.clone();
    for i in 0..x0.nrows() {
        let c = row(cond, i);
        let mut x = row(x0, i);
        for k in 0..steps {
            let t = k as f64 / steps as f64;
            x += model.velocity(&x, t, &c) * dt;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step: k });
            }
        }
        out.set_row(i, &x.transpose());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLatentStats {
    pub mean: DVector<f64>,
    pub log_var: DVector<f64>,
}

/// `KL(N(mu, diag(exp(log_var))) || N(0, I))`.
pub fn kl_diag_gaussian(stats: &GaussianLatentStats) -> f64 {
    0.5 * stats
        .mean
        .iter()
        .zip(stats.log_var.iter())
        .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}

pub const DEFAULT_KL_WEIGHT: f64 = 1e-3;

/// Mean squared SDF error plus `gamma` times the KL term.
pub fn vae_loss(pred: &[f64], gt: &[f64], stats: &GaussianLatentStats, gamma: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    if gamma < 0.0 {
        return Err(Error::InvalidArgument("KL weight must be non-negative".into()));
    }
    let mse = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / pred.len().max(1) as f64;
    Ok(mse + gamma * kl_diag_gaussian(stats))
}

/// How noise and data draws are paired.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// `x1 = x0 + (mean1 - mean0)`: the optimal-transport map between two
    /// Gaussians of equal covariance.
    #[default]
    Transport,
    Independent,
}

/// Two isotropic Gaussians of unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPair {
    pub mean0: Vec<f64>,
    pub mean1: Vec<f64>,
    pub coupling: Coupling,
}

impl GaussianPair {
    pub fn dim(&self) -> usize {
        self.mean0.len()
    }

    pub fn sample_noise(&self, n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, self.dim(), |_, j| self.mean0[j] + rng.sample::<f64, _>(StandardNormal))
    }

    pub fn sample_batch(&self, n: usize, rng: &mut impl Rng) -> FlowBatch {
        let d = self.dim();
        let x0 = self.sample_noise(n, rng);
        let x1 = match self.coupling {
            Coupling::Transport => DMatrix::from_fn(n, d, |i, j| x0[(i, j)] + self.mean1[j] - self.mean0[j]),
            Coupling::Independent => DMatrix::from_fn(n, d, |_, j| self.mean1[j] + rng.sample::<f64, _>(StandardNormal)),
        };
        let t = DVector::from_fn(n, |_, _| rng.random::<f64>());
        FlowBatch {
            x0,
            x1,
            t,
            cond: DMatrix::zeros(n, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            steps: 500,
            batch: 256,
            seed: 0,
        }
    }
}

/// Plain gradient descent on fresh minibatches. The trace holds the loss on
/// one fixed evaluation batch before the first step and after every step.
pub fn train_toy<M: Trainable>(model: &mut M, data: &GaussianPair, config: &TrainConfig) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let eval = data.sample_batch(config.batch, &mut rng);
    let mut trace = Vec::with_capacity(config.steps + 1);
    trace.push(fm_loss(model, &eval)?);
    for step in 0..config.steps {
        let batch = data.sample_batch(config.batch, &mut rng);
        let (_, grad) = fm_loss_grad(model, &batch).map_err(|_| Error::NonFinite { step })?;
        let p = model.params() - grad * config.lr;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        model.set_params(&p);
        trace.push(fm_loss(model, &eval).map_err(|_| Error::NonFinite { step })?);
    }
    Ok(trace)
}

/// Largest per-component relative difference between the analytic gradient
/// and a central finite difference with step `h`.
pub fn gradient_check<M: Trainable + Clone>(model: &M, batch: &FlowBatch, h: f64) -> Result<f64> {
    let (_, analytic) = fm_loss_grad(model, batch)?;
    let p = model.params();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for k in 0..p.len() {
        let mut plus = p.clone();
        plus[k] += h;
        probe.set_params(&plus);
        let lp = fm_loss(&probe, batch)?;
        let mut minus = p.clone();
        minus[k] -= h;
        probe.set_params(&minus);
        let lm = fm_loss(&probe, batch)?;
        let numeric = (lp - lm) / (2.0 * h);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    Ok(worst)
}
