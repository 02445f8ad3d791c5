//! Weight update rules. All three work on stacked key/value matrices and
//! report per-target residuals before and after the update.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::targets::EditTarget;
use crate::error::{Error, Result};
use crate::model::LamModel;

/// Constrained fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CftConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Radius of the Frobenius ball around the pre-edit weights.
    pub norm_budget: f64,
}

impl Default for CftConfig {
    fn default() -> Self {
        Self { steps: 50, learning_rate: 0.05, norm_budget: 0.1 }
    }
}

/// Covariance-preconditioned rank-one insertion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct R1Config {
    /// Passes over the target list; one pass is the plain sequential rule.
    pub max_sweeps: usize,
    /// Stop once every residual entry is below this.
    pub tolerance: f64,
}

impl Default for R1Config {
    fn default() -> Self {
        Self { max_sweeps: 20, tolerance: 1e-6 }
    }
}

/// Closed-form batch insertion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub ridge: f64,
    /// Weight of the accumulated key covariance against the new keys.
    pub cov_weight: f64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self { ridge: 1e-3, cov_weight: 0.02 }
    }
}

/// Outcome of one editor call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveReport {
    pub pre_residual: Vec<f64>,
    pub post_residual: Vec<f64>,
    pub skipped: Vec<bool>,
    pub warnings: Vec<String>,
}

pub(crate) fn stack(targets: &[EditTarget]) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = targets[0].key.len();
    let m = targets.len();
    let keys = DMatrix::from_fn(d, m, |i, j| targets[j].key[i]);
    let values = DMatrix::from_fn(d, m, |i, j| targets[j].value[i]);
    (keys, values)
}

fn residual_norms(w: &DMatrix<f64>, keys: &DMatrix<f64>, values: &DMatrix<f64>) -> Vec<f64> {
    let r = values - w * keys;
    r.column_iter().map(|c| c.norm()).collect()
}

fn check_finite(w: &DMatrix<f64>) -> Result<()> {
    if w.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::EditAborted("non-finite weights after update".into()))
    }
}

fn require_targets(targets: &[EditTarget]) -> Result<()> {
    if targets.is_empty() {
        Err(Error::Precondition("no edit targets".into()))
    } else {
        Ok(())
    }
}

/// Gradient descent on `Σ‖Wk − v‖²` with `W − W₀` projected onto the ball of
/// radius `norm_budget` after every step. The covariance is left alone.
///
/// The iterate stays in `W₀ + A·Kᵀ`, so the descent runs on `A` (d × m).
pub fn edit_cft(model: &mut LamModel, targets: &[EditTarget], cfg: &CftConfig) -> Result<SolveReport> {
    require_targets(targets)?;
    if cfg.steps == 0 || cfg.norm_budget <= 0.0 || !cfg.norm_budget.is_finite() {
        return Err(Error::Config("cft needs steps >= 1 and a positive norm budget".into()));
    }
    let (keys, values) = stack(targets);
    let w0 = model.weights().clone();
    let pre = residual_norms(&w0, &keys, &values);
    let base = &w0 * &keys - &values;
    let gram = keys.tr_mul(&keys);
    let eps = cfg.norm_budget;
    let mut a = DMatrix::<f64>::zeros(keys.nrows(), keys.ncols());
    for _ in 0..cfg.steps {
        let r = &base + &a * &gram;
        let loss = r.norm_squared();
        if !loss.is_finite() {
            return Err(Error::EditAborted("non-finite loss during fine-tuning".into()));
        }
        a -= r * (2.0 * cfg.learning_rate);
        // ‖A·Kᵀ‖²_F = tr(A·G·Aᵀ)
        let norm = (&a * &gram).component_mul(&a).sum().max(0.0).sqrt();
        if norm > eps {
            a *= eps / norm;
        }
    }
    let mut delta = &a * keys.transpose();
    let norm = delta.norm();
    if norm > eps {
        delta *= eps * (1.0 - 1e-12) / norm;
    }
    let w = w0 + delta;
    check_finite(&w)?;
    *model.weights_mut() = w;
    let post = residual_norms(model.weights(), &keys, &values);
    Ok(SolveReport { pre_residual: pre, post_residual: post, skipped: vec![false; targets.len()], warnings: Vec::new() })
}

/// Sequential rank-one insertion: for each target `u = C⁻¹k` and
/// `W ← W + (v − Wk)uᵀ / (uᵀk)`. The list is swept until residuals fall below
/// tolerance or `max_sweeps` is reached; `C` absorbs the keys afterwards.
///
/// Every update adds a multiple of some `u_j`, so `W = W₀ + A·Uᵀ` and the
/// sweeps only touch the coefficients `A`.
pub fn edit_r1(model: &mut LamModel, targets: &[EditTarget], cfg: &R1Config) -> Result<SolveReport> {
    require_targets(targets)?;
    if cfg.max_sweeps == 0 {
        return Err(Error::Config("r1 needs at least one sweep".into()));
    }
    let (keys, values) = stack(targets);
    let m = targets.len();
    let w0 = model.weights().clone();
    let pre = residual_norms(&w0, &keys, &values);
    let u = model.covariance().solve(1.0, None, 0.0, &keys)?;
    let g = u.tr_mul(&keys);
    let target_gap = &values - &w0 * &keys;
    let mut skipped = vec![false; m];
    let mut warnings = Vec::new();
    for j in 0..m {
        if g[(j, j)].abs() < 1e-12 {
            skipped[j] = true;
            warnings.push(format!("target {j}: singular direction, skipped"));
        }
    }
    let mut a = DMatrix::<f64>::zeros(keys.nrows(), m);
    for _ in 0..cfg.max_sweeps {
        let mut worst = 0.0f64;
        for j in (0..m).filter(|&j| !skipped[j]) {
            let r = target_gap.column(j) - &a * g.column(j);
            worst = worst.max(r.amax());
            let step = r / g[(j, j)];
            a.column_mut(j).axpy(1.0, &step, 1.0);
        }
        if worst <= cfg.tolerance {
            break;
        }
    }
    let mut w = w0;
    w.gemm(1.0, &a, &u.transpose(), 1.0);
    check_finite(&w)?;
    *model.weights_mut() = w;
    let inserted: Vec<usize> = (0..m).filter(|&j| !skipped[j]).collect();
    model.covariance_mut().add_keys(&keys.select_columns(&inserted));
    let post = residual_norms(model.weights(), &keys, &values);
    Ok(SolveReport { pre_residual: pre, post_residual: post, skipped, warnings })
}

/// `ΔW = R·Kᵀ·(w·C + K·Kᵀ + λ_e·I)⁻¹` with `R = V − W·K`, then `C ← C + K·Kᵀ`.
pub fn edit_batch(model: &mut LamModel, targets: &[EditTarget], cfg: &BatchConfig) -> Result<SolveReport> {
    require_targets(targets)?;
    let d = model.config().d;
    if targets.len() > d {
        return Err(Error::Capacity { targets: targets.len(), dim: d });
    }
    if cfg.cov_weight < 0.0 || cfg.ridge < 0.0 {
        return Err(Error::Config("batch weights must be non-negative".into()));
    }
    let (keys, values) = stack(targets);
    let w0 = model.weights().clone();
    let pre = residual_norms(&w0, &keys, &values);
    let r = &values - &w0 * &keys;
    let x = model.covariance().solve(cfg.cov_weight, Some(&keys), cfg.ridge, &keys)?;
    let mut warnings = Vec::new();
    let rel = solve_residual(model, cfg, &keys, &x);
    if rel > 1e-6 {
        warnings.push(format!("batch solve relative residual {rel:.3e}"));
    }
    let mut w = w0;
    w.gemm(1.0, &r, &x.transpose(), 1.0);
    check_finite(&w)?;
    *model.weights_mut() = w;
    model.covariance_mut().add_keys(&keys);
    let post = residual_norms(model.weights(), &keys, &values);
    Ok(SolveReport { pre_residual: pre, post_residual: post, skipped: vec![false; targets.len()], warnings })
}

fn solve_residual(model: &LamModel, cfg: &BatchConfig, keys: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let c = model.covariance().to_dense();
    let mut lhs = &c * x * cfg.cov_weight + x * cfg.ridge;
    lhs.gemm(1.0, keys, &keys.tr_mul(x), 1.0);
    let scale = keys.norm().max(f64::MIN_POSITIVE);
    (lhs - keys).norm() / scale
}
