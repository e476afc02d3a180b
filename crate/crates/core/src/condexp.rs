//! Conditional-expectation estimators.
//!
//! Two interchangeable realisations of `E[xi(omega ⊕_{t_i} W_T) | prefix]`:
//!
//! * [`nested_estimate`] / [`weighted_nested_estimate`] — fresh inner
//!   Brownian suffixes per prefix (the small-instance oracle);
//! * [`fit_regression`] — least-squares projection of simulated targets on
//!   non-anticipative path features (the scalable single-pass estimator).

use crate::coeff::CoefficientSet;
use crate::euler::extend_trajectory;
use crate::grid::TimeGrid;
use crate::path::DiscretePath;
use crate::sampling::{sample_increments, SampleKey};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Feature maps
// ---------------------------------------------------------------------------

/// Which non-anticipative features of the path prefix enter the regression
/// basis. The constant feature is always present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub value: bool,
    pub running_max: bool,
    pub running_min: bool,
    pub running_avg: bool,
    /// Number of trailing grid increments included (0 disables).
    pub last_increments: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            value: true,
            running_max: true,
            running_min: true,
            running_avg: true,
            last_increments: 0,
        }
    }
}

impl FeatureConfig {
    /// Parses a feature list such as `["value", "max", "avg", "increments:2"]`.
    pub fn from_names(names: &[String]) -> Result<Self> {
        let mut cfg = Self {
            value: false,
            running_max: false,
            running_min: false,
            running_avg: false,
            last_increments: 0,
        };
        for name in names {
            match name.as_str() {
                "value" => cfg.value = true,
                "max" => cfg.running_max = true,
                "min" => cfg.running_min = true,
                "avg" => cfg.running_avg = true,
                other => {
                    if let Some(k) = other.strip_prefix("increments:") {
                        cfg.last_increments = k.parse().map_err(|_| {
                            Error::InvalidConfig(format!("bad increment count in '{other}'"))
                        })?;
                    } else {
                        return Err(Error::InvalidConfig(format!(
                            "unknown feature '{other}' (known: value, max, min, avg, increments:<k>)"
                        )));
                    }
                }
            }
        }
        Ok(cfg)
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.value {
            out.push("value".into());
        }
        if self.running_max {
            out.push("max".into());
        }
        if self.running_min {
            out.push("min".into());
        }
        if self.running_avg {
            out.push("avg".into());
        }
        if self.last_increments > 0 {
            out.push(format!("increments:{}", self.last_increments));
        }
        out
    }

    /// Feature vector length for path dimension `d`.
    pub fn count(&self, dim: usize) -> usize {
        let blocks = [self.value, self.running_max, self.running_min, self.running_avg]
            .iter()
            .filter(|b| **b)
            .count();
        1 + blocks * dim + self.last_increments * dim
    }
}

/// Incrementally maintained prefix statistics; one instance per path walk.
/// Produces exactly the features of [`features_for_prefix`] at each node.
pub(crate) struct RunningFeatures {
    cfg: FeatureConfig,
    dim: usize,
    max: Vec<f64>,
    min: Vec<f64>,
    integral: Vec<f64>,
    last_t: f64,
    last_x: Vec<f64>,
    /// Ring of the last `k` grid increments, newest first on read.
    incs: Vec<f64>,
    head: usize,
}

impl RunningFeatures {
    /// Digests a prefix given as merged breakpoint buffers up to and
    /// including row `upto` (the `t_0` row when seeding from a history).
    pub(crate) fn from_prefix_buffers(
        cfg: &FeatureConfig,
        dim: usize,
        times: &[f64],
        values: &[f64],
        upto: usize,
    ) -> Self {
        let row = |i: usize| &values[i * dim..(i + 1) * dim];
        let mut max = row(0).to_vec();
        let mut min = row(0).to_vec();
        let mut integral = vec![0.0; dim];
        for i in 1..=upto {
            let dt = times[i] - times[i - 1];
            for c in 0..dim {
                integral[c] += row(i - 1)[c] * dt;
                max[c] = max[c].max(row(i)[c]);
                min[c] = min[c].min(row(i)[c]);
            }
        }
        Self {
            cfg: cfg.clone(),
            dim,
            max,
            min,
            integral,
            last_t: times[upto],
            last_x: row(upto).to_vec(),
            incs: vec![0.0; cfg.last_increments * dim],
            head: 0,
        }
    }

    /// Moves the walk to the next grid node.
    #[allow(clippy::needless_range_loop)] // four parallel slices; zips read worse
    pub(crate) fn advance(&mut self, t: f64, x: &[f64]) {
        let dt = t - self.last_t;
        for c in 0..self.dim {
            self.integral[c] += self.last_x[c] * dt;
            self.max[c] = self.max[c].max(x[c]);
            self.min[c] = self.min[c].min(x[c]);
        }
        if self.cfg.last_increments > 0 {
            let slot = &mut self.incs[self.head * self.dim..(self.head + 1) * self.dim];
            for ((inc, xv), last) in slot.iter_mut().zip(x).zip(&self.last_x) {
                *inc = xv - last;
            }
            self.head = (self.head + 1) % self.cfg.last_increments;
        }
        self.last_t = t;
        self.last_x.copy_from_slice(x);
    }

    /// Writes the feature vector at the current node.
    pub(crate) fn write(&self, out: &mut [f64]) {
        let d = self.dim;
        out[0] = 1.0;
        let mut at = 1;
        if self.cfg.value {
            out[at..at + d].copy_from_slice(&self.last_x);
            at += d;
        }
        if self.cfg.running_max {
            out[at..at + d].copy_from_slice(&self.max);
            at += d;
        }
        if self.cfg.running_min {
            out[at..at + d].copy_from_slice(&self.min);
            at += d;
        }
        if self.cfg.running_avg {
            let span = self.last_t;
            if span > 0.0 {
                for c in 0..d {
                    out[at + c] = self.integral[c] / span;
                }
            } else {
                out[at..at + d].copy_from_slice(&self.last_x);
            }
            at += d;
        }
        for j in 0..self.cfg.last_increments {
            // newest first
            let slot = (self.head + self.cfg.last_increments - 1 - j) % self.cfg.last_increments;
            out[at..at + d].copy_from_slice(&self.incs[slot * d..(slot + 1) * d]);
            at += d;
        }
        debug_assert_eq!(at, out.len());
    }
}

/// Feature vector of a whole prefix path (stopped at its last breakpoint).
/// Trailing increments are read from the prefix's grid segment.
pub fn features_for_prefix(cfg: &FeatureConfig, prefix: &DiscretePath) -> Vec<f64> {
    let times = prefix.times();
    let values = prefix.values_flat();
    let mut rf =
        RunningFeatures::from_prefix_buffers(cfg, prefix.dim(), times, values, prefix.grid_offset());
    let d = prefix.dim();
    for i in prefix.grid_offset() + 1..prefix.len() {
        rf.advance(times[i], &values[i * d..(i + 1) * d]);
    }
    let mut out = vec![0.0; cfg.count(d)];
    rf.write(&mut out);
    out
}

// ---------------------------------------------------------------------------
// Least-squares regression via normal equations
// ---------------------------------------------------------------------------

/// One fitted regression row: estimate at a prefix is `<beta, features>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub beta: Vec<f64>,
    /// Ridge parameter actually used (after any singular-Gram fallback).
    pub ridge: f64,
}

impl RegressionRow {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.beta.iter().zip(features).map(|(b, f)| b * f).sum()
    }
}

/// Accumulated normal equations `X^T X`, `X^T y` for `nt` right-hand sides.
#[derive(Debug, Clone)]
pub(crate) struct NormalEq {
    p: usize,
    nt: usize,
    /// Packed upper triangle, row-major.
    xtx: Vec<f64>,
    xty: Vec<f64>,
    yty: Vec<f64>,
    count: usize,
}

impl NormalEq {
    pub fn new(p: usize, nt: usize) -> Self {
        Self {
            p,
            nt,
            xtx: vec![0.0; p * (p + 1) / 2],
            xty: vec![0.0; nt * p],
            yty: vec![0.0; nt],
            count: 0,
        }
    }

    #[inline]
    pub fn add(&mut self, feat: &[f64], targets: &[f64]) {
        debug_assert_eq!(feat.len(), self.p);
        debug_assert_eq!(targets.len(), self.nt);
        let mut at = 0;
        for i in 0..self.p {
            let fi = feat[i];
            for &fj in &feat[i..] {
                self.xtx[at] += fi * fj;
                at += 1;
            }
        }
        for (t, &y) in targets.iter().enumerate() {
            let row = &mut self.xty[t * self.p..(t + 1) * self.p];
            for (r, &f) in row.iter_mut().zip(feat) {
                *r += y * f;
            }
            self.yty[t] += y * y;
        }
        self.count += 1;
    }

    pub fn merge(&mut self, other: &NormalEq) {
        debug_assert_eq!(self.p, other.p);
        for (a, b) in self.xtx.iter_mut().zip(&other.xtx) {
            *a += b;
        }
        for (a, b) in self.xty.iter_mut().zip(&other.xty) {
            *a += b;
        }
        for (a, b) in self.yty.iter_mut().zip(&other.yty) {
            *a += b;
        }
        self.count += other.count;
    }

    fn trace(&self) -> f64 {
        let mut t = 0.0;
        let mut at = 0;
        for i in 0..self.p {
            t += self.xtx[at];
            at += self.p - i;
        }
        t
    }

    fn dense(&self, lambda: f64) -> Vec<f64> {
        let p = self.p;
        let mut m = vec![0.0; p * p];
        let mut at = 0;
        for i in 0..p {
            for j in i..p {
                m[i * p + j] = self.xtx[at];
                m[j * p + i] = self.xtx[at];
                at += 1;
            }
            m[i * p + i] += lambda;
        }
        m
    }

    /// Solves for one right-hand side; a singular Gram matrix at the given
    /// ridge falls back to `lambda = 1e-8 * trace / p`.
    pub fn solve(&self, target: usize, lambda: f64) -> Result<FittedRegression> {
        let p = self.p;
        if self.count < p {
            return Err(Error::InsufficientSamples {
                needed: p,
                got: self.count,
            });
        }
        let rhs = &self.xty[target * p..(target + 1) * p];
        let fallback = 1e-8 * self.trace() / p as f64;
        let (chol, used) = match cholesky(&self.dense(lambda), p) {
            Some(c) => (c, lambda),
            None => {
                let bumped = lambda + fallback;
                match cholesky(&self.dense(bumped), p) {
                    Some(c) => (c, bumped),
                    None => {
                        return Err(Error::InvalidConfig(
                            "Gram matrix singular even with ridge fallback".into(),
                        ))
                    }
                }
            }
        };
        let beta = chol_solve(&chol, p, rhs);
        let explained: f64 = beta.iter().zip(rhs).map(|(b, r)| b * r).sum();
        let dof = (self.count.saturating_sub(p)).max(1) as f64;
        let resid_var = ((self.yty[target] - explained) / dof).max(0.0);
        Ok(FittedRegression {
            row: RegressionRow { beta, ridge: used },
            chol,
            p,
            resid_var,
        })
    }
}

/// Lower-triangular Cholesky factor of a symmetric matrix, or None if not
/// positive definite.
fn cholesky(m: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut sum = m[i * p + j];
            for k in 0..j {
                sum -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                // relative pivot threshold: a pivot this far below the
                // diagonal scale means numerically rank-deficient features
                let floor = m[i * p + i].abs() * 1e-12 + f64::MIN_POSITIVE;
                if sum <= floor || !sum.is_finite() {
                    return None;
                }
                l[i * p + i] = sum.sqrt();
            } else {
                l[i * p + j] = sum / l[j * p + j];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b`.
fn chol_solve(l: &[f64], p: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * p + k] * y[k];
        }
        y[i] = sum / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut sum = y[i];
        for k in i + 1..p {
            sum -= l[k * p + i] * x[k];
        }
        x[i] = sum / l[i * p + i];
    }
    x
}

/// Regression fit with enough state to give prediction standard errors.
#[derive(Debug, Clone)]
pub struct FittedRegression {
    pub row: RegressionRow,
    chol: Vec<f64>,
    p: usize,
    resid_var: f64,
}

impl FittedRegression {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.row.predict(features)
    }

    /// OLS standard error of the conditional-mean estimate at `features`:
    /// `sigma_res * sqrt(f^T (X^T X + ridge I)^{-1} f)`.
    pub fn prediction_stderr(&self, features: &[f64]) -> f64 {
        let u = chol_solve(&self.chol, self.p, features);
        let quad: f64 = features.iter().zip(&u).map(|(f, v)| f * v).sum();
        (self.resid_var * quad.max(0.0)).sqrt()
    }

    pub fn residual_variance(&self) -> f64 {
        self.resid_var
    }
}

/// Least-squares fit of `xi` values against the features of their prefixes:
/// `beta = argmin sum (xi - <beta, f>)^2 + lambda |beta|^2`.
pub fn fit_regression(
    samples: &[(DiscretePath, f64)],
    features: &FeatureConfig,
    lambda: f64,
) -> Result<RegressionRow> {
    fit_regression_detailed(samples, features, lambda).map(|f| f.row)
}

/// As [`fit_regression`], keeping the factorisation for prediction errors.
pub fn fit_regression_detailed(
    samples: &[(DiscretePath, f64)],
    features: &FeatureConfig,
    lambda: f64,
) -> Result<FittedRegression> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if lambda < 0.0 {
        return Err(Error::InvalidConfig("ridge must be nonnegative".into()));
    }
    let dim = samples[0].0.dim();
    let p = features.count(dim);
    if samples.len() < p {
        return Err(Error::InsufficientSamples {
            needed: p,
            got: samples.len(),
        });
    }
    let mut eq = NormalEq::new(p, 1);
    for (idx, (prefix, value)) in samples.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: "regression target".into(),
                index: idx,
            });
        }
        let f = features_for_prefix(features, prefix);
        eq.add(&f, std::slice::from_ref(value));
    }
    eq.solve(0, lambda)
}

// ---------------------------------------------------------------------------
// Nested Monte Carlo estimators
// ---------------------------------------------------------------------------

fn check_prefix(prefix: &DiscretePath, i: usize, grid: &TimeGrid) -> Result<()> {
    if i > grid.n_steps() {
        return Err(Error::InvalidConfig(format!(
            "time index {i} beyond grid with {} steps",
            grid.n_steps()
        )));
    }
    if prefix.end_time() != grid.node(i) {
        return Err(Error::InvalidPath(format!(
            "prefix ends at {} but grid node {i} is {}",
            prefix.end_time(),
            grid.node(i)
        )));
    }
    Ok(())
}

/// Monte Carlo mean and standard error of `xi(omega ⊕_{t_i} W_T)`: draws
/// `n_inner` fresh Brownian suffixes via `key.suffix_key(i, j)`, continues
/// the Euler recursion from node `i`, and evaluates `xi` on each completed
/// path.
pub fn nested_estimate(
    xi: &(dyn Fn(&DiscretePath) -> f64 + Sync),
    cs: &CoefficientSet,
    prefix: &DiscretePath,
    i: usize,
    grid: &TimeGrid,
    n_inner: usize,
    key: &SampleKey,
) -> Result<(f64, f64)> {
    let stats = nested_core(xi, cs, prefix, i, grid, n_inner, key, false)?;
    Ok((stats.mean[0], stats.stderr[0]))
}

/// As [`nested_estimate`] but each sample is weighted per coordinate by
/// `dW_i^k / h_i` before averaging — the increment-weight form of the
/// vertical derivative.
pub fn weighted_nested_estimate(
    xi: &(dyn Fn(&DiscretePath) -> f64 + Sync),
    cs: &CoefficientSet,
    prefix: &DiscretePath,
    i: usize,
    grid: &TimeGrid,
    n_inner: usize,
    key: &SampleKey,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if i >= grid.n_steps() {
        return Err(Error::InvalidConfig(
            "weighted estimate needs i < n (no increment after t_n)".into(),
        ));
    }
    let stats = nested_core(xi, cs, prefix, i, grid, n_inner, key, true)?;
    Ok((stats.mean, stats.stderr))
}

struct NestedStats {
    mean: Vec<f64>,
    stderr: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn nested_core(
    xi: &(dyn Fn(&DiscretePath) -> f64 + Sync),
    cs: &CoefficientSet,
    prefix: &DiscretePath,
    i: usize,
    grid: &TimeGrid,
    n_inner: usize,
    key: &SampleKey,
    weighted: bool,
) -> Result<NestedStats> {
    check_prefix(prefix, i, grid)?;
    if n_inner < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: n_inner,
        });
    }
    let n = grid.n_steps();
    let l = cs.dim_w();
    let outputs = if weighted { l } else { 1 };
    let sub_grid = if i < n {
        Some(TimeGrid::new(grid.nodes()[i..].to_vec())?)
    } else {
        None
    };
    let h_i = if i < n { grid.step(i) } else { 1.0 };

    let mut sums = vec![0.0; outputs];
    let mut sums_sq = vec![0.0; outputs];
    let base_len = prefix.len();
    let mut times = prefix.times().to_vec();
    let mut values = prefix.values_flat().to_vec();
    for j in 0..n_inner {
        times.truncate(base_len);
        values.truncate(base_len * cs.dim_x());
        let sample_key = key.suffix_key(i, j);
        let weight_head;
        if let Some(sub) = &sub_grid {
            let inc = sample_increments(&sample_key, sub, l);
            weight_head = inc.step(0).to_vec();
            extend_trajectory(cs, &mut times, &mut values, grid, i, &inc)?;
        } else {
            weight_head = vec![0.0; l];
        }
        let full = DiscretePath::from_parts_unchecked(
            cs.dim_x(),
            times.clone(),
            values.clone(),
            prefix.grid_offset(),
        );
        let v = xi(&full);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: format!("path functional under sample key {sample_key:?}"),
                index: i,
            });
        }
        if weighted {
            for k in 0..l {
                let w = weight_head[k] / h_i * v;
                sums[k] += w;
                sums_sq[k] += w * w;
            }
        } else {
            sums[0] += v;
            sums_sq[0] += v * v;
        }
    }
    let nf = n_inner as f64;
    let mean: Vec<f64> = sums.iter().map(|s| s / nf).collect();
    let stderr: Vec<f64> = mean
        .iter()
        .zip(&sums_sq)
        .map(|(m, sq)| {
            let var = (sq / nf - m * m).max(0.0) * nf / (nf - 1.0);
            (var / nf).sqrt()
        })
        .collect();
    Ok(NestedStats { mean, stderr })
}
