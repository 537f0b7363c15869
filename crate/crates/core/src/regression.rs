//! Ridge regression on sparse features and mean-squared-error scoring.
//!
//! The intercept is left unpenalized by centering: column means and the label
//! mean are taken over the training rows, and the centered system
//! `(XcᵀXc + αI) w = Xcᵀ(y − ȳ)` is solved by conjugate gradient restricted to
//! the active columns. `Xc` is never materialized.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bitset::ActiveSet;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const MAX_ITERATIONS: usize = 1000;
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    /// One weight per active column, in ascending column order.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
    pub active: ActiveSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverStats {
    pub iterations: usize,
    pub converged: bool,
}

/// Centered normal-equation operator over the active columns.
struct NormalOperator<'a> {
    x: &'a SparseMatrix,
    /// column → position among active columns, `u32::MAX` when inactive
    position: Vec<u32>,
    means: Vec<f64>,
    alpha: f64,
}

impl NormalOperator<'_> {
    /// u = Xc v
    fn forward(&self, v: &[f64], u: &mut [f64]) {
        let shift: f64 = self.means.iter().zip(v).map(|(m, x)| m * x).sum();
        for (i, ui) in u.iter_mut().enumerate() {
            let (idx, val) = self.x.row(i);
            let mut acc = 0.0;
            for (&c, &xv) in idx.iter().zip(val) {
                let p = self.position[c as usize];
                if p != u32::MAX {
                    acc += xv * v[p as usize];
                }
            }
            *ui = acc - shift;
        }
    }

    /// out = Xcᵀ u
    fn backward(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut total = 0.0;
        for (i, &ui) in u.iter().enumerate() {
            total += ui;
            let (idx, val) = self.x.row(i);
            for (&c, &xv) in idx.iter().zip(val) {
                let p = self.position[c as usize];
                if p != u32::MAX {
                    out[p as usize] += xv * ui;
                }
            }
        }
        for (o, m) in out.iter_mut().zip(&self.means) {
            *o -= m * total;
        }
    }

    fn apply(&self, v: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        self.forward(v, scratch);
        self.backward(scratch, out);
        for (o, x) in out.iter_mut().zip(v) {
            *o += self.alpha * x;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits ridge regression on the active columns of `x`.
pub fn fit_ridge(x: &SparseMatrix, y: &[f64], active: &ActiveSet, alpha: f64) -> Result<RidgeModel> {
    fit_ridge_with_stats(x, y, active, alpha).map(|(m, _)| m)
}

pub fn fit_ridge_with_stats(
    x: &SparseMatrix,
    y: &[f64],
    active: &ActiveSet,
    alpha: f64,
) -> Result<(RidgeModel, SolverStats)> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "label count vs matrix rows",
            expected: x.rows(),
            found: y.len(),
        });
    }
    if active.len() != x.cols() {
        return Err(Error::DimensionMismatch {
            what: "active set width vs matrix columns",
            expected: x.cols(),
            found: active.len(),
        });
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("ridge alpha must be positive, got {alpha}")));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLabel(i));
    }
    let k = active.count();
    if k == 0 {
        return Err(Error::EmptyActiveSet);
    }
    if y.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "training rows",
            expected: 1,
            found: 0,
        });
    }

    let mut position = vec![u32::MAX; x.cols()];
    for (p, c) in active.iter().enumerate() {
        position[c] = p as u32;
    }
    let rows = x.rows() as f64;
    let mut means = vec![0.0; k];
    for i in 0..x.rows() {
        let (idx, val) = x.row(i);
        for (&c, &v) in idx.iter().zip(val) {
            let p = position[c as usize];
            if p != u32::MAX {
                means[p as usize] += v;
            }
        }
    }
    means.iter_mut().for_each(|m| *m /= rows);
    let y_mean = y.iter().sum::<f64>() / rows;
    let y_centered: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    let op = NormalOperator { x, position, means, alpha };
    let mut rhs = vec![0.0; k];
    op.backward(&y_centered, &mut rhs);

    let (weights, stats) = conjugate_gradient(&op, &rhs);
    let intercept = y_mean - dot(&op.means, &weights);
    Ok((
        RidgeModel {
            weights,
            intercept,
            alpha,
            active: active.clone(),
        },
        stats,
    ))
}

fn conjugate_gradient(op: &NormalOperator<'_>, rhs: &[f64]) -> (Vec<f64>, SolverStats) {
    let k = rhs.len();
    let mut w = vec![0.0; k];
    let rhs_norm = dot(rhs, rhs).sqrt();
    if rhs_norm == 0.0 {
        return (w, SolverStats { iterations: 0, converged: true });
    }
    let tol = RESIDUAL_TOLERANCE * rhs_norm;
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; k];
    let mut scratch = vec![0.0; op.x.rows()];
    let mut rr = dot(&r, &r);
    for it in 1..=MAX_ITERATIONS {
        op.apply(&p, &mut scratch, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return (w, SolverStats { iterations: it, converged: false });
        }
        let step = rr / pap;
        for i in 0..k {
            w[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_next = dot(&r, &r);
        if rr_next.sqrt() <= tol {
            return (w, SolverStats { iterations: it, converged: true });
        }
        let beta = rr_next / rr;
        for i in 0..k {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
    }
    (w, SolverStats { iterations: MAX_ITERATIONS, converged: false })
}

impl RidgeModel {
    /// Weight vector spread over the full column universe.
    pub fn dense_weights(&self) -> Vec<f64> {
        let mut full = vec![0.0; self.active.len()];
        for (c, &w) in self.active.iter().zip(&self.weights) {
            full[c] = w;
        }
        full
    }

    pub fn predict(&self, x: &SparseMatrix) -> Result<Vec<f64>> {
        if x.cols() != self.active.len() {
            return Err(Error::DimensionMismatch {
                what: "matrix columns vs model universe",
                expected: self.active.len(),
                found: x.cols(),
            });
        }
        let full = self.dense_weights();
        Ok((0..x.rows())
            .map(|i| {
                let (idx, val) = x.row(i);
                self.intercept + idx.iter().zip(val).map(|(&c, &v)| full[c as usize] * v).sum::<f64>()
            })
            .collect())
    }
}

pub fn predict(model: &RidgeModel, x: &SparseMatrix) -> Result<Vec<f64>> {
    model.predict(x)
}

pub fn mse(predicted: &[f64], truth: &[f64]) -> Result<Metrics> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "prediction vs truth length",
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    let sum: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(Metrics {
        mse: sum / predicted.len() as f64,
    })
}

const MODEL_FORMAT: &str = "icarfish-ridge";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    vocabulary_hash: String,
    universe: usize,
    alpha: f64,
    intercept: f64,
    active_columns: Vec<usize>,
    weights: Vec<f64>,
}

/// Writes a versioned JSON model file tied to a vocabulary hash.
pub fn save_model(model: &RidgeModel, vocabulary_hash: &str, path: &Path) -> Result<()> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        vocabulary_hash: vocabulary_hash.into(),
        universe: model.active.len(),
        alpha: model.alpha,
        intercept: model.intercept,
        active_columns: model.active.iter().collect(),
        weights: model.weights.clone(),
    };
    let json = serde_json::to_vec_pretty(&file).expect("model serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Reads a model file, returning the model and its vocabulary hash.
pub fn load_model(path: &Path) -> Result<(RidgeModel, String)> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile =
        serde_json::from_slice(&raw).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported model format {} v{}",
            path.display(),
            file.format,
            file.version
        )));
    }
    if file.active_columns.len() != file.weights.len()
        || file.active_columns.iter().any(|&c| c >= file.universe)
        || file.active_columns.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::Format(format!("{}: inconsistent active columns", path.display())));
    }
    Ok((
        RidgeModel {
            weights: file.weights,
            intercept: file.intercept,
            alpha: file.alpha,
            active: ActiveSet::from_indices(file.universe, file.active_columns),
        },
        file.vocabulary_hash,
    ))
}
