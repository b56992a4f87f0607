//! Function approximation for the Q-function and the policy function.
//!
//! [`PolyRidgeModel`] standardizes its inputs, expands them into all
//! monomials of degree ≤ 2 and solves a ridge problem in closed form. This
//! spans the same hypothesis space as a second-order polynomial-kernel
//! machine, `(1 + x·z)²`, while keeping the fit deterministic and cheap:
//! the feature count is `C(d + 2, 2)` instead of a kernel matrix over every
//! training row.
//!
//! [`TabularModel`] is the exact alternative used for oracle checks: one
//! indicator feature per distinct training input.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-12;
/// Ridge strength substituted when an unregularized fit is ill-conditioned.
pub const FALLBACK_LAMBDA: f64 = 1e-10;

const ACCUMULATE_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Scaler {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, v) in x.iter().enumerate() {
            out[i] = (v - self.means[i]) / self.stds[i];
        }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.transform_into(x, &mut out);
        out
    }
}

/// Per-column mean and (population) standard deviation, floored at
/// [`STD_FLOOR`].
pub fn fit_scaler(rows: &[Vec<f64>]) -> Result<Scaler> {
    let d = input_dim(rows)?;
    let m = rows.len() as f64;
    let mut means = vec![0.0; d];
    for r in rows {
        for (acc, v) in means.iter_mut().zip(r) {
            *acc += v;
        }
    }
    means.iter_mut().for_each(|v| *v /= m);
    let mut stds = vec![0.0; d];
    for r in rows {
        for i in 0..d {
            let c = r[i] - means[i];
            stds[i] += c * c;
        }
    }
    for s in &mut stds {
        *s = (*s / m).sqrt().max(STD_FLOOR);
    }
    Ok(Scaler { means, stds })
}

fn input_dim(rows: &[Vec<f64>]) -> Result<usize> {
    let d = rows
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Regression("no training rows".into()))?;
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: bad.len(),
        });
    }
    Ok(d)
}

/// Number of monomials of degree ≤ 2 in `d` variables.
pub fn poly2_feature_count(d: usize) -> usize {
    (d + 1) * (d + 2) / 2
}

/// `[1, x_1..x_d, x_i x_j for i <= j]`, products in row-major upper-triangle
/// order.
pub fn poly2_features(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; poly2_feature_count(x.len())];
    poly2_features_into(x, &mut out);
    out
}

fn poly2_features_into(x: &[f64], out: &mut [f64]) {
    let d = x.len();
    out[0] = 1.0;
    out[1..=d].copy_from_slice(x);
    let mut idx = d + 1;
    for i in 0..d {
        for j in i..d {
            out[idx] = x[i] * x[j];
            idx += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyRidgeModel {
    pub scaler: Scaler,
    pub weights: Vec<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Mean squared training residual.
    pub train_mse: f64,
    /// Ridge strength actually used.
    pub lambda_used: f64,
    pub warning: Option<String>,
}

impl PolyRidgeModel {
    pub fn dim(&self) -> usize {
        self.scaler.dim()
    }

    pub fn zeros(scaler: Scaler) -> Self {
        let n = poly2_feature_count(scaler.dim());
        PolyRidgeModel {
            scaler,
            weights: vec![0.0; n],
            lambda: 0.0,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut buf = [0.0; 32];
        let mut heap = Vec::new();
        let z: &mut [f64] = if d <= buf.len() {
            &mut buf[..d]
        } else {
            heap.resize(d, 0.0);
            &mut heap
        };
        self.scaler.transform_into(x, z);
        // dot product with the feature map without materializing it
        let w = &self.weights;
        let mut acc = w[0];
        for i in 0..d {
            acc += w[1 + i] * z[i];
        }
        let mut idx = d + 1;
        for i in 0..d {
            let zi = z[i];
            let mut inner = 0.0;
            for j in i..d {
                inner += w[idx] * z[j];
                idx += 1;
            }
            acc += zi * inner;
        }
        acc
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.predict(r)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("poly-ridge v1\n");
        let _ = writeln!(s, "dim {}", self.dim());
        let _ = writeln!(s, "lambda {:?}", self.lambda);
        write_vec(&mut s, "means", &self.scaler.means);
        write_vec(&mut s, "stds", &self.scaler.stds);
        write_vec(&mut s, "weights", &self.weights);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("poly-ridge v1") {
            return Err(Error::Regression("not a poly-ridge v1 model".into()));
        }
        let mut fields = BTreeMap::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let values = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Regression(format!("bad value in `{key}`: {e}")))?;
            fields.insert(key.to_string(), values);
        }
        let take = |k: &str| {
            fields
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Regression(format!("missing `{k}`")))
        };
        let dim = take("dim")?.first().copied().unwrap_or(-1.0) as usize;
        let model = PolyRidgeModel {
            scaler: Scaler {
                means: take("means")?,
                stds: take("stds")?,
            },
            weights: take("weights")?,
            lambda: take("lambda")?.first().copied().unwrap_or(0.0),
        };
        if model.scaler.means.len() != dim
            || model.scaler.stds.len() != dim
            || model.weights.len() != poly2_feature_count(dim)
        {
            return Err(Error::Regression("inconsistent model dimensions".into()));
        }
        Ok(model)
    }
}

fn write_vec(s: &mut String, key: &str, values: &[f64]) {
    s.push_str(key);
    for v in values {
        let _ = write!(s, " {v:?}");
    }
    s.push('\n');
}

/// Normal-equation blocks `ΦᵀΦ` (upper triangle) and `Φᵀy`, accumulated in
/// fixed-size chunks and reduced in chunk order so the result does not
/// depend on thread scheduling.
fn normal_equations(scaler: &Scaler, rows: &[Vec<f64>], y: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let d = scaler.dim();
    let p = poly2_feature_count(d);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = rows
        .par_chunks(ACCUMULATE_CHUNK)
        .zip(y.par_chunks(ACCUMULATE_CHUNK))
        .map(|(rs, ys)| {
            let mut gram = vec![0.0; p * p];
            let mut rhs = vec![0.0; p];
            let mut z = vec![0.0; d];
            let mut phi = vec![0.0; p];
            for (r, &t) in rs.iter().zip(ys) {
                scaler.transform_into(r, &mut z);
                poly2_features_into(&z, &mut phi);
                for a in 0..p {
                    let fa = phi[a];
                    rhs[a] += fa * t;
                    let row = &mut gram[a * p..(a + 1) * p];
                    for b in a..p {
                        row[b] += fa * phi[b];
                    }
                }
            }
            (gram, rhs)
        })
        .collect();
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for (g, r) in partials {
        gram.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        rhs.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
    }
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            a[(i, j)] = gram[i * p + j];
            a[(j, i)] = gram[i * p + j];
        }
    }
    (a, DVector::from_vec(rhs))
}

fn solve_ridge(gram: &DMatrix<f64>, rhs: &DVector<f64>, lambda: f64) -> Option<Vec<f64>> {
    let mut a = gram.clone();
    for i in 1..a.nrows() {
        a[(i, i)] += lambda;
    }
    let chol = a.cholesky()?;
    let l = chol.l_dirty();
    let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)]).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    // reciprocal condition estimate of the normal matrix
    if !(min > 0.0) || (min / max).powi(2) < 1e-15 {
        return None;
    }
    Some(chol.solve(rhs).as_slice().to_vec())
}

/// Minimizes `Σ (y - w·φ(x̂))² + λ‖w_nonbias‖²` with `x̂` the standardized
/// input.
pub fn ridge_fit(rows: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<(PolyRidgeModel, FitReport)> {
    if rows.len() != y.len() {
        return Err(Error::Dimension {
            expected: rows.len(),
            got: y.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::Regression(format!("ridge strength must be >= 0, got {lambda}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Regression("non-finite regression target".into()));
    }
    let scaler = fit_scaler(rows)?;
    let (gram, rhs) = normal_equations(&scaler, rows, y);

    let mut warning = None;
    let mut lambda_used = lambda;
    let weights = match solve_ridge(&gram, &rhs, lambda) {
        Some(w) => w,
        None if lambda < FALLBACK_LAMBDA => {
            warning = Some(format!(
                "ill-conditioned normal matrix at lambda = {lambda}; refit with lambda = {FALLBACK_LAMBDA}"
            ));
            log::warn!("{}", warning.as_deref().unwrap());
            lambda_used = FALLBACK_LAMBDA;
            match solve_ridge(&gram, &rhs, FALLBACK_LAMBDA) {
                Some(w) => w,
                None => lu_solve(&gram, &rhs, FALLBACK_LAMBDA)?,
            }
        }
        None => lu_solve(&gram, &rhs, lambda)?,
    };

    let model = PolyRidgeModel {
        scaler,
        weights,
        lambda: lambda_used,
    };
    let sse: f64 = rows
        .iter()
        .zip(y)
        .map(|(r, t)| {
            let e = model.predict_unchecked(r) - t;
            e * e
        })
        .sum();
    Ok((
        model,
        FitReport {
            train_mse: sse / y.len() as f64,
            lambda_used,
            warning,
        },
    ))
}

fn lu_solve(gram: &DMatrix<f64>, rhs: &DVector<f64>, lambda: f64) -> Result<Vec<f64>> {
    let mut a = gram.clone();
    for i in 1..a.nrows() {
        a[(i, i)] += lambda;
    }
    a.lu()
        .solve(rhs)
        .map(|w| w.as_slice().to_vec())
        .ok_or_else(|| Error::Regression("singular normal matrix".into()))
}

/// Mean held-out squared error of each candidate ridge strength under
/// `folds`-fold cross-validation (row `i` belongs to fold `i % folds`).
pub fn cross_validate_lambda(
    rows: &[Vec<f64>],
    y: &[f64],
    candidates: &[f64],
    folds: usize,
) -> Result<Vec<(f64, f64)>> {
    if folds < 2 || rows.len() < folds {
        return Err(Error::Regression("cross-validation needs >= 2 non-empty folds".into()));
    }
    candidates
        .iter()
        .map(|&lambda| {
            let mut sse = 0.0;
            for f in 0..folds {
                let (mut tr_x, mut tr_y, mut te) = (Vec::new(), Vec::new(), Vec::new());
                for (i, (r, t)) in rows.iter().zip(y).enumerate() {
                    if i % folds == f {
                        te.push((r, *t));
                    } else {
                        tr_x.push(r.clone());
                        tr_y.push(*t);
                    }
                }
                let (model, _) = ridge_fit(&tr_x, &tr_y, lambda)?;
                sse += te
                    .iter()
                    .map(|(r, t)| (model.predict_unchecked(r) - t).powi(2))
                    .sum::<f64>();
            }
            Ok((lambda, sse / rows.len() as f64))
        })
        .collect()
}

/// Exact lookup regressor: one indicator feature per distinct input row,
/// fitted by ridge in closed form (`sum / (count + λ)` per key). Unseen
/// inputs predict 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    pub dim: usize,
    pub values: BTreeMap<Vec<u64>, f64>,
}

fn key(x: &[f64]) -> Vec<u64> {
    // normalize -0.0 so that equal values share a key
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

impl TabularModel {
    pub fn fit(rows: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<(Self, FitReport)> {
        let dim = input_dim(rows)?;
        let mut acc: BTreeMap<Vec<u64>, (f64, f64)> = BTreeMap::new();
        for (r, t) in rows.iter().zip(y) {
            let e = acc.entry(key(r)).or_insert((0.0, 0.0));
            e.0 += t;
            e.1 += 1.0;
        }
        let values: BTreeMap<_, _> = acc
            .into_iter()
            .map(|(k, (s, c))| (k, s / (c + lambda)))
            .collect();
        let model = TabularModel { dim, values };
        let sse: f64 = rows
            .iter()
            .zip(y)
            .map(|(r, t)| (model.predict_unchecked(r) - t).powi(2))
            .sum();
        Ok((
            model,
            FitReport {
                train_mse: sse / y.len().max(1) as f64,
                lambda_used: lambda,
                warning: None,
            },
        ))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.values.get(&key(x)).copied().unwrap_or(0.0)
    }
}

/// Regressor family selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ApproximatorKind {
    Poly2 { lambda: f64 },
    Tabular,
}

impl Default for ApproximatorKind {
    fn default() -> Self {
        ApproximatorKind::Poly2 { lambda: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Approximator {
    Poly2(PolyRidgeModel),
    Tabular(TabularModel),
}

impl Approximator {
    pub fn fit(kind: ApproximatorKind, rows: &[Vec<f64>], y: &[f64]) -> Result<(Self, FitReport)> {
        match kind {
            ApproximatorKind::Poly2 { lambda } => {
                ridge_fit(rows, y, lambda).map(|(m, r)| (Approximator::Poly2(m), r))
            }
            ApproximatorKind::Tabular => {
                TabularModel::fit(rows, y, 0.0).map(|(m, r)| (Approximator::Tabular(m), r))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Approximator::Poly2(m) => m.dim(),
            Approximator::Tabular(m) => m.dim,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            Approximator::Poly2(m) => m.predict_unchecked(x),
            Approximator::Tabular(m) => m.predict_unchecked(x),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            Approximator::Poly2(m) => m.to_text(),
            Approximator::Tabular(m) => {
                let mut s = format!("tabular v1\ndim {}\n", m.dim);
                for (k, v) in &m.values {
                    let xs: Vec<String> = k.iter().map(|b| format!("{:?}", f64::from_bits(*b))).collect();
                    let _ = writeln!(s, "{} -> {v:?}", xs.join(" "));
                }
                s
            }
        }
    }
}
