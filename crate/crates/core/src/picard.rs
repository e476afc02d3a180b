//! The Picard-type iteration `(Y^m, Z^m)` for the backward equation, the
//! implicit backward reference scheme `(Y^inf, Z^inf)`, and the parabolic
//! path-dependent PDE value `u(t, gamma) = Y(t)`.
//!
//! Starting from `(Y^0, Z^0) = (0, 0)`, each step maps the previous iterate
//! through
//!
//! ```text
//! Y^{m+1}(t_i) = E[ g(X_T) + sum_{j>=i} f(t_j, X_{.∧t_j}, Y^m_j, Z^m_j) h_j ]
//! Z^{m+1}_k(t_i) = E[ (dW^k_i / h_i) * (same bracket) ]
//! ```
//!
//! with the conditional expectations realised either by least-squares
//! regression on path features (scalable, one pass per iteration) or by
//! nested Monte Carlo recursion (the small-instance oracle).
//!
//! The implicit scheme sweeps backward: `Y(t_n) = g(X_T)`,
//! `Z(t_i) = E[(dW_i/h_i) Y(t_{i+1}) | F_i]`, and `Y(t_i)` solves
//! `y = E[Y(t_{i+1}) | F_i] + f(t_i, X, y, Z(t_i)) h_i` by fixed-point
//! iteration (driver term added, consistent with the backward equation;
//! solvability needs `K |pi| < 1`).

use crate::coeff::CoefficientSet;
use crate::condexp::{FeatureConfig, NormalEq, RegressionRow, RunningFeatures};
use crate::euler::{chunked_map, extend_trajectory, seed_from_history};
use crate::grid::TimeGrid;
use crate::path::{DiscretePath, StoppedView};
use crate::sampling::{sample_increments, BrownianIncrements, SampleKey};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Hard limits of the nested estimator inside the scheme: its cost is
/// `O(n_inner^m)`, so it exists purely as an oracle for regression mode.
pub const NESTED_MAX_ITERATIONS: usize = 3;
pub const NESTED_MAX_STEPS: usize = 16;
pub const NESTED_MAX_INNER: usize = 256;

const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_CAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Regression,
    Nested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// Inner sample count (nested mode only).
    pub n_inner: usize,
    /// Ridge parameter for the regression fits.
    pub ridge: f64,
    pub features: FeatureConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Regression,
            n_inner: 64,
            ridge: 0.0,
            features: FeatureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub grid: TimeGrid,
    /// Picard iteration count `m`.
    pub iterations: usize,
    /// Outer Monte Carlo sample count `N`.
    pub n_outer: usize,
    pub estimator: EstimatorConfig,
    pub seed: u64,
    /// Reuse one fixed path set across Picard iterations (common random
    /// numbers, the default); `false` draws fresh paths per iteration.
    pub reuse_paths: bool,
    /// Antithetic pairing of outer samples (off by default).
    pub antithetic: bool,
}

impl SchemeConfig {
    pub fn new(grid: TimeGrid, iterations: usize, n_outer: usize, seed: u64) -> Self {
        Self {
            grid,
            iterations,
            n_outer,
            estimator: EstimatorConfig::default(),
            seed,
            reuse_paths: true,
            antithetic: false,
        }
    }

    fn validate(&self, cs: &CoefficientSet) -> Result<()> {
        if self.n_outer < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: self.n_outer,
            });
        }
        let _ = cs;
        if let EstimatorKind::Nested = self.estimator.kind {
            if self.iterations > NESTED_MAX_ITERATIONS
                || self.grid.n_steps() > NESTED_MAX_STEPS
                || self.estimator.n_inner > NESTED_MAX_INNER
            {
                return Err(Error::NestedLimits(format!(
                    "nested mode is capped at m <= {NESTED_MAX_ITERATIONS}, n <= {NESTED_MAX_STEPS}, n_inner <= {NESTED_MAX_INNER} (cost grows like n_inner^m); requested m = {}, n = {}, n_inner = {}",
                    self.iterations,
                    self.grid.n_steps(),
                    self.estimator.n_inner
                )));
            }
            if self.estimator.n_inner < 2 {
                return Err(Error::InsufficientSamples {
                    needed: 2,
                    got: self.estimator.n_inner,
                });
            }
        }
        Ok(())
    }
}

/// Regression surfaces of one iterate: coefficient rows per time index for
/// `Y^m(t_i, .)` and each `Z^m_k(t_i, .)`, `i = 0..n-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSurfaces {
    pub y: Vec<RegressionRow>,
    pub z: Vec<Vec<RegressionRow>>,
}

/// One Picard iterate. `m = 0` is the zero pair; regression mode carries the
/// fitted surfaces, nested mode evaluates recursively on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeIterate {
    pub m: usize,
    pub surfaces: Option<RegressionSurfaces>,
}

impl SchemeIterate {
    pub fn zero() -> Self {
        Self {
            m: 0,
            surfaces: None,
        }
    }

    /// `Y^m(t_i, .)` at a feature vector; the piecewise-constant time
    /// extension evaluates index `i` on `[t_i, t_{i+1})`.
    fn predict_y(&self, i: usize, features: &[f64]) -> f64 {
        match &self.surfaces {
            Some(s) => s.y[i].predict(features),
            None => 0.0,
        }
    }

    fn predict_z(&self, i: usize, features: &[f64], out: &mut [f64]) {
        match &self.surfaces {
            Some(s) => {
                for (o, row) in out.iter_mut().zip(&s.z[i]) {
                    *o = row.predict(features);
                }
            }
            None => out.fill(0.0),
        }
    }
}

/// One row of the per-iteration trace: the plain Monte Carlo estimate of
/// `(Y^m, Z^m)` at `(t_0, history)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub m: usize,
    pub y0: f64,
    pub z0: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    #[serde(rename = "Y0")]
    pub y0: f64,
    #[serde(rename = "Y0_stderr")]
    pub y0_stderr: f64,
    #[serde(rename = "Z0")]
    pub z0: Vec<f64>,
    #[serde(rename = "Z0_stderr")]
    pub z0_stderr: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    pub wall_ms: f64,
    pub config: SchemeConfig,
}

// ---------------------------------------------------------------------------
// Shared accumulators
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
struct MeanAccum {
    sum: f64,
    sum_sq: f64,
    n: usize,
}

impl MeanAccum {
    #[inline]
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.sum_sq += x * x;
        self.n += 1;
    }

    fn merge(&mut self, other: &MeanAccum) {
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.n += other.n;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let nf = self.n as f64;
        let m = self.mean();
        let var = ((self.sum_sq / nf - m * m) * nf / (nf - 1.0)).max(0.0);
        (var / nf).sqrt()
    }
}

/// Outer-sample key: `[p]` with reused paths, `[iteration, p]` with fresh
/// paths per iteration. Antithetic mode pairs `(2q, 2q+1)` on stream `[q]`
/// with negated increments for the odd member.
fn outer_increments(
    seed: u64,
    iteration: usize,
    p: usize,
    grid: &TimeGrid,
    dim_w: usize,
    reuse_paths: bool,
    antithetic: bool,
) -> BrownianIncrements {
    let (stream, negate) = if antithetic {
        (p / 2, p % 2 == 1)
    } else {
        (p, false)
    };
    let root = SampleKey::new(seed);
    let key = if reuse_paths {
        root.child(stream as u64)
    } else {
        root.child(iteration as u64).child(stream as u64)
    };
    let inc = sample_increments(&key, grid, dim_w);
    if negate {
        inc.negated()
    } else {
        inc
    }
}

// ---------------------------------------------------------------------------
// Regression-mode Picard pass
// ---------------------------------------------------------------------------

struct PassAccum {
    eqs: Vec<NormalEq>,
    y0: MeanAccum,
    z0: Vec<MeanAccum>,
}

impl PassAccum {
    fn new(n: usize, p: usize, dim_w: usize) -> Self {
        Self {
            eqs: (0..n).map(|_| NormalEq::new(p, 1 + dim_w)).collect(),
            y0: MeanAccum::default(),
            z0: vec![MeanAccum::default(); dim_w],
        }
    }

    fn merge(&mut self, other: &PassAccum) {
        for (a, b) in self.eqs.iter_mut().zip(&other.eqs) {
            a.merge(b);
        }
        self.y0.merge(&other.y0);
        for (a, b) in self.z0.iter_mut().zip(&other.z0) {
            a.merge(b);
        }
    }
}

struct PassResult {
    surfaces: Option<RegressionSurfaces>,
    y0: MeanAccum,
    z0: Vec<MeanAccum>,
}

/// One regression-mode Picard step: simulate the outer path set, form the
/// per-path targets `g(X_T) + sum_{j>=i} f(t_j, X, Y^m_j, Z^m_j) h_j` with
/// the previous iterate's predictions on the same path, and regress the
/// targets (and their increment-weighted versions) on features at every
/// `t_i`. The plain t_0 statistics double as the trace entry for `m + 1`.
///
/// `fit = false` skips the Gram accumulation and surface solve; the final
/// iteration of a solve only needs the t_0 statistics.
fn regression_pass(
    cs: &CoefficientSet,
    history: &DiscretePath,
    grid: &TimeGrid,
    config: &SchemeConfig,
    prev: &SchemeIterate,
    iteration: usize,
    fit: bool,
) -> Result<PassResult> {
    let d = cs.dim_x();
    let l = cs.dim_w();
    let n = grid.n_steps();
    let fcfg = &config.estimator.features;
    let p_len = fcfg.count(d);
    if config.n_outer < p_len {
        return Err(Error::InsufficientSamples {
            needed: p_len,
            got: config.n_outer,
        });
    }

    let mut seed_times = Vec::new();
    let mut seed_values = Vec::new();
    let offset = seed_from_history(history, grid, &mut seed_times, &mut seed_values)?;
    // features are only touched by the fits and by the previous iterate's
    // predictions; a fit-free first iteration is plain Monte Carlo
    let need_features = fit || prev.surfaces.is_some();

    let partials: Vec<Result<PassAccum>> = chunked_map(config.n_outer, |range| {
        let mut acc = PassAccum::new(if fit { n } else { 0 }, p_len, l);
        let mut times: Vec<f64> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut feats = vec![0.0; n * p_len];
        let mut f_vals = vec![0.0; n];
        let mut targets = vec![0.0; n];
        let mut z_buf = vec![0.0; l];
        let mut row = vec![0.0; 1 + l];
        for p in range {
            times.clear();
            times.extend_from_slice(&seed_times);
            values.clear();
            values.extend_from_slice(&seed_values);
            let inc = outer_increments(
                config.seed,
                iteration,
                p,
                grid,
                l,
                config.reuse_paths,
                config.antithetic,
            );
            extend_trajectory(cs, &mut times, &mut values, grid, 0, &inc)?;

            // features at every node, walked incrementally
            if need_features {
                let mut rf =
                    RunningFeatures::from_prefix_buffers(fcfg, d, &times, &values, offset);
                for i in 0..n {
                    rf.write(&mut feats[i * p_len..(i + 1) * p_len]);
                    let next = offset + i + 1;
                    rf.advance(times[next], &values[next * d..(next + 1) * d]);
                }
            }

            // previous iterate's predictions feed the driver along the path
            for j in 0..n {
                let feat = &feats[j * p_len..(j + 1) * p_len];
                let yj = prev.predict_y(j, feat);
                prev.predict_z(j, feat, &mut z_buf);
                let tj = grid.node(j);
                let view = StoppedView::from_raw(d, &times, &values, tj);
                let fj = cs.driver(tj, &view, yj, &z_buf);
                if !fj.is_finite() {
                    return Err(Error::NonFinite {
                        what: "driver".into(),
                        index: j,
                    });
                }
                f_vals[j] = fj;
            }

            let path = DiscretePath::from_parts_unchecked(
                d,
                std::mem::take(&mut times),
                std::mem::take(&mut values),
                offset,
            );
            let g = cs.terminal(&path);
            let (t, v) = path.into_parts();
            times = t;
            values = v;
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    what: "terminal condition".into(),
                    index: n,
                });
            }

            let mut suffix = 0.0;
            for i in (0..n).rev() {
                suffix += f_vals[i] * grid.step(i);
                targets[i] = g + suffix;
            }

            if fit {
                for i in 0..n {
                    row[0] = targets[i];
                    let dw = inc.step(i);
                    let h = grid.step(i);
                    for k in 0..l {
                        row[1 + k] = dw[k] / h * targets[i];
                    }
                    acc.eqs[i].add(&feats[i * p_len..(i + 1) * p_len], &row);
                }
            }
            acc.y0.push(targets[0]);
            let dw0 = inc.step(0);
            let h0 = grid.step(0);
            for (zk, w) in acc.z0.iter_mut().zip(dw0) {
                zk.push(w / h0 * targets[0]);
            }
        }
        Ok(acc)
    });

    let mut total = PassAccum::new(if fit { n } else { 0 }, p_len, l);
    for partial in partials {
        total.merge(&partial?);
    }

    let surfaces = if fit {
        let mut y_rows = Vec::with_capacity(n);
        let mut z_rows = Vec::with_capacity(n);
        for eq in &total.eqs {
            y_rows.push(eq.solve(0, config.estimator.ridge)?.row);
            let mut per_coord = Vec::with_capacity(l);
            for k in 0..l {
                per_coord.push(eq.solve(1 + k, config.estimator.ridge)?.row);
            }
            z_rows.push(per_coord);
        }
        Some(RegressionSurfaces {
            y: y_rows,
            z: z_rows,
        })
    } else {
        None
    };
    Ok(PassResult {
        surfaces,
        y0: total.y0,
        z0: total.z0,
    })
}

/// Applies one Picard step to an iterate. In regression mode this fits the
/// next surfaces; in nested mode the iterate is evaluated lazily, so the
/// step just advances the counter (within the nested cost caps).
pub fn picard_step(
    prev: &SchemeIterate,
    cs: &CoefficientSet,
    history: &DiscretePath,
    grid: &TimeGrid,
    config: &SchemeConfig,
) -> Result<SchemeIterate> {
    config.validate(cs)?;
    match config.estimator.kind {
        EstimatorKind::Regression => {
            let pass = regression_pass(cs, history, grid, config, prev, prev.m + 1, true)?;
            Ok(SchemeIterate {
                m: prev.m + 1,
                surfaces: pass.surfaces,
            })
        }
        EstimatorKind::Nested => {
            if prev.m + 1 > NESTED_MAX_ITERATIONS {
                return Err(Error::NestedLimits(format!(
                    "nested mode supports at most m = {NESTED_MAX_ITERATIONS}"
                )));
            }
            Ok(SchemeIterate {
                m: prev.m + 1,
                surfaces: None,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Nested-mode recursive evaluation (oracle)
// ---------------------------------------------------------------------------

/// Recursive evaluation of `(Y^m, Z^m)(t_i, prefix)` per the iteration
/// formula, drawing `n_inner` fresh suffixes keyed by `key.suffix_key(i, j)`.
/// Y and Z share each bracket sample; cost grows like `n_inner^m`.
#[allow(clippy::too_many_arguments)]
fn nested_yz(
    cs: &CoefficientSet,
    grid: &TimeGrid,
    cfg: &EstimatorConfig,
    prefix_times: &[f64],
    prefix_values: &[f64],
    grid_offset: usize,
    i: usize,
    m: usize,
    key: &SampleKey,
) -> Result<(f64, Vec<f64>)> {
    let d = cs.dim_x();
    let l = cs.dim_w();
    let n = grid.n_steps();
    if m == 0 {
        return Ok((0.0, vec![0.0; l]));
    }
    if i == n {
        // no suffix left: the bracket is g of the completed path
        let path = DiscretePath::from_parts_unchecked(
            d,
            prefix_times.to_vec(),
            prefix_values.to_vec(),
            grid_offset,
        );
        let g = cs.terminal(&path);
        return Ok((g, vec![0.0; l]));
    }
    let sub_grid = TimeGrid::new(grid.nodes()[i..].to_vec())?;
    let h_i = grid.step(i);
    let mut y_sum = 0.0;
    let mut z_sum = vec![0.0; l];
    let mut times = prefix_times.to_vec();
    let mut values = prefix_values.to_vec();
    let base_len = prefix_times.len();
    let mut z_prev = vec![0.0; l];
    for inner in 0..cfg.n_inner {
        times.truncate(base_len);
        values.truncate(base_len * d);
        let skey = key.suffix_key(i, inner);
        let inc = sample_increments(&skey, &sub_grid, l);
        extend_trajectory(cs, &mut times, &mut values, grid, i, &inc)?;

        let path = DiscretePath::from_parts_unchecked(
            d,
            std::mem::take(&mut times),
            std::mem::take(&mut values),
            grid_offset,
        );
        let g = cs.terminal(&path);
        if !g.is_finite() {
            return Err(Error::NonFinite {
                what: format!("terminal condition under sample key {skey:?}"),
                index: n,
            });
        }
        let mut bracket = g;
        for j in i..n {
            let (yj, zj) = if m == 1 {
                (0.0, None)
            } else {
                let upto = grid_offset + j + 1;
                let (y, z) = nested_yz(
                    cs,
                    grid,
                    cfg,
                    &path.times()[..upto],
                    &path.values_flat()[..upto * d],
                    grid_offset,
                    j,
                    m - 1,
                    &skey,
                )?;
                (y, Some(z))
            };
            match zj {
                Some(z) => z_prev.copy_from_slice(&z),
                None => z_prev.fill(0.0),
            }
            let tj = grid.node(j);
            let view = StoppedView::from_raw(d, path.times(), path.values_flat(), tj);
            let fj = cs.driver(tj, &view, yj, &z_prev);
            if !fj.is_finite() {
                return Err(Error::NonFinite {
                    what: "driver".into(),
                    index: j,
                });
            }
            bracket += fj * grid.step(j);
        }
        let (t, v) = path.into_parts();
        times = t;
        values = v;

        y_sum += bracket;
        let dw0 = inc.step(0);
        for k in 0..l {
            z_sum[k] += dw0[k] / h_i * bracket;
        }
    }
    let nf = cfg.n_inner as f64;
    Ok((
        y_sum / nf,
        z_sum.into_iter().map(|s| s / nf).collect(),
    ))
}

/// Nested-mode estimate of `(Y^m, Z^m)` at `(t_0, history)`: outer plain
/// Monte Carlo over `n_outer` driving paths, recursive inner estimates for
/// the previous iterate along each path.
fn nested_solve_level(
    cs: &CoefficientSet,
    history: &DiscretePath,
    grid: &TimeGrid,
    config: &SchemeConfig,
    m: usize,
) -> Result<(MeanAccum, Vec<MeanAccum>)> {
    let d = cs.dim_x();
    let l = cs.dim_w();
    let n = grid.n_steps();
    let cfg = &config.estimator;
    let mut seed_times = Vec::new();
    let mut seed_values = Vec::new();
    let offset = seed_from_history(history, grid, &mut seed_times, &mut seed_values)?;

    let partials: Vec<Result<(MeanAccum, Vec<MeanAccum>)>> =
        chunked_map(config.n_outer, |range| {
            let mut y_acc = MeanAccum::default();
            let mut z_acc = vec![MeanAccum::default(); l];
            let mut times: Vec<f64> = Vec::new();
            let mut values: Vec<f64> = Vec::new();
            let mut z_prev = vec![0.0; l];
            for p in range {
                times.clear();
                times.extend_from_slice(&seed_times);
                values.clear();
                values.extend_from_slice(&seed_values);
                let key = SampleKey::new(config.seed).child(p as u64);
                let inc = sample_increments(&key, grid, l);
                extend_trajectory(cs, &mut times, &mut values, grid, 0, &inc)?;
                let path = DiscretePath::from_parts_unchecked(
                    d,
                    std::mem::take(&mut times),
                    std::mem::take(&mut values),
                    offset,
                );
                let g = cs.terminal(&path);
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        what: "terminal condition".into(),
                        index: n,
                    });
                }
                let mut bracket = g;
                for j in 0..n {
                    let (yj, zj) = if m == 1 {
                        (0.0, None)
                    } else {
                        let upto = offset + j + 1;
                        let (y, z) = nested_yz(
                            cs,
                            grid,
                            cfg,
                            &path.times()[..upto],
                            &path.values_flat()[..upto * d],
                            offset,
                            j,
                            m - 1,
                            &key,
                        )?;
                        (y, Some(z))
                    };
                    match zj {
                        Some(z) => z_prev.copy_from_slice(&z),
                        None => z_prev.fill(0.0),
                    }
                    let tj = grid.node(j);
                    let view = StoppedView::from_raw(d, path.times(), path.values_flat(), tj);
                    let fj = cs.driver(tj, &view, yj, &z_prev);
                    if !fj.is_finite() {
                        return Err(Error::NonFinite {
                            what: "driver".into(),
                            index: j,
                        });
                    }
                    bracket += fj * grid.step(j);
                }
                let (t, v) = path.into_parts();
                times = t;
                values = v;

                y_acc.push(bracket);
                let dw0 = inc.step(0);
                let h0 = grid.step(0);
                for k in 0..l {
                    z_acc[k].push(dw0[k] / h0 * bracket);
                }
            }
            Ok((y_acc, z_acc))
        });

    let mut y_total = MeanAccum::default();
    let mut z_total = vec![MeanAccum::default(); l];
    for partial in partials {
        let (y, z) = partial?;
        y_total.merge(&y);
        for (a, b) in z_total.iter_mut().zip(&z) {
            a.merge(b);
        }
    }
    Ok((y_total, z_total))
}

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

/// Runs `m` Picard steps from `(0, 0)` and evaluates `(Y^m, Z^m)` at
/// `(t_0, history)` by plain Monte Carlo (the sigma-field at `t_0` is
/// trivial, so no regression basis touches the headline number).
pub fn solve_picard(
    cs: &CoefficientSet,
    history: &DiscretePath,
    grid: &TimeGrid,
    config: &SchemeConfig,
) -> Result<SolveResult> {
    config.validate(cs)?;
    let start = Instant::now();
    let l = cs.dim_w();
    let mut trace = vec![TraceEntry {
        m: 0,
        y0: 0.0,
        z0: vec![0.0; l],
    }];
    let mut y_stats = MeanAccum::default();
    let mut z_stats = vec![MeanAccum::default(); l];

    match config.estimator.kind {
        EstimatorKind::Regression => {
            let mut iterate = SchemeIterate::zero();
            for it in 1..=config.iterations {
                // the last iteration's surfaces are never consumed
                let fit = it < config.iterations;
                let pass = regression_pass(cs, history, grid, config, &iterate, it, fit)?;
                trace.push(TraceEntry {
                    m: it,
                    y0: pass.y0.mean(),
                    z0: pass.z0.iter().map(|a| a.mean()).collect(),
                });
                y_stats = pass.y0;
                z_stats = pass.z0;
                iterate = SchemeIterate {
                    m: it,
                    surfaces: pass.surfaces,
                };
            }
        }
        EstimatorKind::Nested => {
            for it in 1..=config.iterations {
                let (y, z) = nested_solve_level(cs, history, grid, config, it)?;
                trace.push(TraceEntry {
                    m: it,
                    y0: y.mean(),
                    z0: z.iter().map(|a| a.mean()).collect(),
                });
                y_stats = y;
                z_stats = z;
            }
        }
    }

    let last = trace.last().unwrap().clone();
    Ok(SolveResult {
        y0: last.y0,
        y0_stderr: if config.iterations == 0 {
            0.0
        } else {
            y_stats.stderr()
        },
        z0: last.z0,
        z0_stderr: z_stats.iter().map(|a| a.stderr()).collect(),
        trace,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        config: config.clone(),
    })
}

/// Rough memory estimate of the implicit sweep's stored path set.
fn implicit_bytes(n_outer: usize, merged_len: usize, d: usize, l: usize, n: usize, p: usize) -> usize {
    n_outer * 8 * (merged_len * d + n * l + n * p + 4)
}

/// The implicit backward reference scheme `(Y^inf, Z^inf)` realised with the
/// regression estimator: backward sweep `i = n-1 .. 0`, per-path fixed-point
/// solve of the implicit driver relation, DP-style replacement of the value
/// by its conditional-mean estimate. At `i = 0` plain means replace the
/// regression (trivial sigma-field).
pub fn solve_implicit(
    cs: &CoefficientSet,
    history: &DiscretePath,
    grid: &TimeGrid,
    config: &SchemeConfig,
) -> Result<SolveResult> {
    config.validate(cs)?;
    if let EstimatorKind::Nested = config.estimator.kind {
        return Err(Error::InvalidConfig(
            "the implicit scheme needs the regression estimator (a nested backward sweep would cost n_inner^n)".into(),
        ));
    }
    let k_mesh = cs.lipschitz * grid.mesh();
    if k_mesh >= 1.0 {
        return Err(Error::InvalidConfig(format!(
            "implicit solvability needs K |pi| < 1, got {k_mesh:.3}"
        )));
    }
    let start = Instant::now();
    let d = cs.dim_x();
    let l = cs.dim_w();
    let n = grid.n_steps();
    let fcfg = &config.estimator.features;
    let p_len = fcfg.count(d);
    let big_n = config.n_outer;
    if big_n < p_len {
        return Err(Error::InsufficientSamples {
            needed: p_len,
            got: big_n,
        });
    }

    let mut seed_times = Vec::new();
    let mut seed_values = Vec::new();
    let offset = seed_from_history(history, grid, &mut seed_times, &mut seed_values)?;
    let merged_len = offset + n + 1;
    let budget = implicit_bytes(big_n, merged_len, d, l, n, p_len);
    if budget > 3_000_000_000 {
        return Err(Error::InvalidConfig(format!(
            "implicit sweep would need about {} MB of stored paths; reduce N or n",
            budget / 1_000_000
        )));
    }
    let shared_times = {
        let mut t = seed_times.clone();
        t.extend(grid.nodes()[1..].iter().copied());
        t
    };

    // forward pass: store merged values, increments, features, g
    struct Stored {
        values: Vec<f64>,
        incs: Vec<f64>,
        feats: Vec<f64>,
        g: Vec<f64>,
    }
    let partials: Vec<Result<(std::ops::Range<usize>, Stored)>> = chunked_map(big_n, |range| {
        let m = range.len();
        let mut st = Stored {
            values: vec![0.0; m * merged_len * d],
            incs: vec![0.0; m * n * l],
            feats: vec![0.0; m * n * p_len],
            g: vec![0.0; m],
        };
        let mut times: Vec<f64> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        for (slot, p) in range.clone().enumerate() {
            times.clear();
            times.extend_from_slice(&seed_times);
            values.clear();
            values.extend_from_slice(&seed_values);
            let inc =
                outer_increments(config.seed, 0, p, grid, l, true, config.antithetic);
            extend_trajectory(cs, &mut times, &mut values, grid, 0, &inc)?;
            st.incs[slot * n * l..(slot + 1) * n * l].copy_from_slice(inc.as_slice());
            st.values[slot * merged_len * d..(slot + 1) * merged_len * d]
                .copy_from_slice(&values);

            let mut rf = RunningFeatures::from_prefix_buffers(fcfg, d, &times, &values, offset);
            for i in 0..n {
                rf.write(&mut st.feats[(slot * n + i) * p_len..(slot * n + i + 1) * p_len]);
                let next = offset + i + 1;
                rf.advance(times[next], &values[next * d..(next + 1) * d]);
            }

            let path = DiscretePath::from_parts_unchecked(
                d,
                std::mem::take(&mut times),
                std::mem::take(&mut values),
                offset,
            );
            let g = cs.terminal(&path);
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    what: "terminal condition".into(),
                    index: n,
                });
            }
            st.g[slot] = g;
            let (t, v) = path.into_parts();
            times = t;
            values = v;
        }
        Ok((range, st))
    });

    let mut values_all = vec![0.0; big_n * merged_len * d];
    let mut incs_all = vec![0.0; big_n * n * l];
    let mut feats_all = vec![0.0; big_n * n * p_len];
    let mut y_vals = vec![0.0; big_n];
    for partial in partials {
        let (range, st) = partial?;
        values_all[range.start * merged_len * d..range.end * merged_len * d]
            .copy_from_slice(&st.values);
        incs_all[range.start * n * l..range.end * n * l].copy_from_slice(&st.incs);
        feats_all[range.start * n * p_len..range.end * n * p_len].copy_from_slice(&st.feats);
        y_vals[range.start..range.end].copy_from_slice(&st.g);
    }

    let mut z0 = vec![0.0; l];
    let mut z0_stats = vec![MeanAccum::default(); l];
    let mut y0 = 0.0;
    let mut y0_stats = MeanAccum::default();

    for i in (0..n).rev() {
        let h = grid.step(i);
        let ti = grid.node(i);
        if i == 0 {
            // trivial sigma-field: plain means
            for (p, &y) in y_vals.iter().enumerate() {
                y0_stats.push(y);
                for k in 0..l {
                    z0_stats[k].push(incs_all[p * n * l + k] / h * y);
                }
            }
            let cond = y0_stats.mean();
            for k in 0..l {
                z0[k] = z0_stats[k].mean();
            }
            let view = StoppedView::from_raw(
                d,
                &shared_times[..=offset],
                &values_all[..(offset + 1) * d],
                ti,
            );
            y0 = fixed_point(cs, ti, &view, cond, &z0, h, i)?;
            break;
        }

        // regression of Y(t_{i+1}) and its weighted versions on features_i
        let eq_partials: Vec<NormalEq> = chunked_map(big_n, |range| {
            let mut eq = NormalEq::new(p_len, 1 + l);
            let mut row = vec![0.0; 1 + l];
            for p in range {
                let y = y_vals[p];
                row[0] = y;
                for k in 0..l {
                    row[1 + k] = incs_all[(p * n + i) * l + k] / h * y;
                }
                eq.add(&feats_all[(p * n + i) * p_len..(p * n + i + 1) * p_len], &row);
            }
            eq
        });
        let mut eq = NormalEq::new(p_len, 1 + l);
        for partial in &eq_partials {
            eq.merge(partial);
        }
        let fit_y = eq.solve(0, config.estimator.ridge)?;
        let fit_z: Vec<_> = (0..l)
            .map(|k| eq.solve(1 + k, config.estimator.ridge))
            .collect::<Result<_>>()?;

        // per-path implicit solve, then DP replacement
        let updates: Vec<Result<Vec<f64>>> = chunked_map(big_n, |range| {
            let mut out = Vec::with_capacity(range.len());
            let mut z_pred = vec![0.0; l];
            for p in range {
                let feat = &feats_all[(p * n + i) * p_len..(p * n + i + 1) * p_len];
                let cond = fit_y.predict(feat);
                for (k, zp) in z_pred.iter_mut().enumerate() {
                    *zp = fit_z[k].predict(feat);
                }
                let view = StoppedView::from_raw(
                    d,
                    &shared_times,
                    &values_all[p * merged_len * d..(p + 1) * merged_len * d],
                    ti,
                );
                out.push(fixed_point(cs, ti, &view, cond, &z_pred, h, i)?);
            }
            Ok(out)
        });
        let mut at = 0;
        for upd in updates {
            for y in upd? {
                y_vals[at] = y;
                at += 1;
            }
        }
    }

    Ok(SolveResult {
        y0,
        y0_stderr: y0_stats.stderr(),
        z0,
        z0_stderr: z0_stats.iter().map(|a| a.stderr()).collect(),
        trace: Vec::new(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        config: config.clone(),
    })
}

/// Solves `y = cond + f(t_i, view, y, z) h` by fixed-point iteration.
fn fixed_point(
    cs: &CoefficientSet,
    t: f64,
    view: &StoppedView<'_>,
    cond: f64,
    z: &[f64],
    h: f64,
    index: usize,
) -> Result<f64> {
    let mut y = cond;
    let mut residual = f64::MAX;
    for _ in 0..FIXED_POINT_CAP {
        let next = cond + cs.driver(t, view, y, z) * h;
        residual = (next - y).abs();
        y = next;
        if residual <= FIXED_POINT_TOL {
            return Ok(y);
        }
    }
    Err(Error::FixedPoint { index, residual })
}

/// Evaluates the parabolic path-dependent PDE solution `u(t, gamma)` through
/// the backward-equation identity `u(t, gamma) = Y(t)`: the returned `Y0` is
/// the PPDE value at `(grid.start(), history)`.
pub fn evaluate_ppde(
    cs: &CoefficientSet,
    history: &DiscretePath,
    grid: &TimeGrid,
    config: &SchemeConfig,
) -> Result<SolveResult> {
    solve_picard(cs, history, grid, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{params, problem_zoo};

    fn zero_history() -> DiscretePath {
        DiscretePath::constant(vec![0.0]).unwrap()
    }

    fn config(n: usize, m: usize, n_outer: usize, seed: u64) -> SchemeConfig {
        SchemeConfig::new(TimeGrid::uniform(0.0, 1.0, n).unwrap(), m, n_outer, seed)
    }

    #[test]
    fn zero_iterations_return_exact_zero() {
        let p = problem_zoo("bm-terminal").unwrap();
        let cfg = config(8, 0, 1000, 1);
        let r = solve_picard(&p.coefficients, &zero_history(), &cfg.grid.clone(), &cfg).unwrap();
        assert_eq!(r.y0, 0.0);
        assert_eq!(r.z0, vec![0.0]);
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn trace_has_m_plus_one_entries() {
        let p = problem_zoo("discounted-terminal").unwrap();
        let cfg = config(8, 3, 2000, 2);
        let r = solve_picard(&p.coefficients, &zero_history(), &cfg.grid.clone(), &cfg).unwrap();
        assert_eq!(r.trace.len(), 4);
        assert_eq!(r.trace[0].y0, 0.0);
    }

    #[test]
    fn driverless_iterates_are_bitwise_equal() {
        // f = 0: the targets carry no dependence on the previous iterate, so
        // with reused paths every m >= 1 iterate is identical
        let p = problem_zoo("bm-terminal").unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 16).unwrap();
        let cfg = SchemeConfig::new(grid.clone(), 2, 4000, 3);
        let r = solve_picard(&p.coefficients, &zero_history(), &grid, &cfg).unwrap();
        assert_eq!(r.trace[1].y0.to_bits(), r.trace[2].y0.to_bits());
        assert_eq!(r.trace[1].z0[0].to_bits(), r.trace[2].z0[0].to_bits());

        let it1 = picard_step(&SchemeIterate::zero(), &p.coefficients, &zero_history(), &grid, &cfg).unwrap();
        let it2 = picard_step(&it1, &p.coefficients, &zero_history(), &grid, &cfg).unwrap();
        assert_eq!(it1.surfaces, it2.surfaces);
    }

    #[test]
    fn z1_first_iterate_recovers_value_and_integrand() {
        // Y^1(t_0) ~ E[W(T)] = 0 and Z^1(t_0) ~ 1 by the isometry weight
        let p = problem_zoo("bm-terminal").unwrap();
        let cfg = config(16, 1, 40_000, 4);
        let r = solve_picard(&p.coefficients, &zero_history(), &cfg.grid.clone(), &cfg).unwrap();
        assert!(r.y0.abs() < 3.0 * r.y0_stderr, "y0 {} se {}", r.y0, r.y0_stderr);
        assert!(
            (r.z0[0] - 1.0).abs() < 3.0 * r.z0_stderr[0],
            "z0 {} se {}",
            r.z0[0],
            r.z0_stderr[0]
        );
    }

    #[test]
    fn z2_one_step_recovers_affine_solution() {
        // Y(0) = mu T = 0.5 and Z = sigma = 2, both exact for this problem
        let p = problem_zoo("abm-linear").unwrap();
        let cfg = config(32, 1, 40_000, 5);
        let r = solve_picard(&p.coefficients, &zero_history(), &cfg.grid.clone(), &cfg).unwrap();
        assert!(
            (r.y0 - 0.5).abs() < 3.0 * r.y0_stderr,
            "y0 {} se {}",
            r.y0,
            r.y0_stderr
        );
        assert!(
            (r.z0[0] - params::ABM_SIGMA).abs() < 3.0 * r.z0_stderr[0],
            "z0 {} se {}",
            r.z0[0],
            r.z0_stderr[0]
        );
    }

    #[test]
    fn z4_trace_approaches_discounted_value_geometrically() {
        // Y^m(t_0) -> (1 + r h)^{-n} c as m grows; per-iteration error vs the
        // implicit value shrinks by roughly r T = 1/2
        let p = problem_zoo("discounted-terminal").unwrap();
        let n = 32;
        let cfg = config(n, 6, 50_000, 6);
        let grid = cfg.grid.clone();
        let r = solve_picard(&p.coefficients, &zero_history(), &grid, &cfg).unwrap();
        let implicit = solve_implicit(&p.coefficients, &zero_history(), &grid, &cfg).unwrap();

        let h = 1.0 / n as f64;
        let product = (1.0 + params::DISCOUNT_R * h).powi(-(n as i32)) * params::DISCOUNT_C;
        assert!(
            (implicit.y0 - product).abs() < 3.0 * implicit.y0_stderr + 1e-3,
            "implicit {} vs product oracle {product}",
            implicit.y0
        );

        let errs: Vec<f64> = r.trace[1..]
            .iter()
            .map(|e| (e.y0 - implicit.y0).abs())
            .collect();
        // geometric decay with ratio near 1/2 until the noise floor
        assert!(errs[1] < 0.7 * errs[0], "{errs:?}");
        assert!(errs[2] < 0.7 * errs[1], "{errs:?}");
        let exact = (-params::DISCOUNT_R).exp() * params::DISCOUNT_C;
        assert!((r.trace[6].y0 - exact).abs() < 0.02, "{}", r.trace[6].y0);
    }

    #[test]
    fn z5_converges_to_girsanov_value() {
        let p = problem_zoo("z-driver").unwrap();
        let cfg = config(32, 4, 40_000, 7);
        let r = solve_picard(&p.coefficients, &zero_history(), &cfg.grid.clone(), &cfg).unwrap();
        assert!(
            (r.y0 - params::ZDRIVER_A).abs() < 3.0 * r.y0_stderr + 0.01,
            "y0 {} se {}",
            r.y0,
            r.y0_stderr
        );
        assert!(
            (r.z0[0] - 1.0).abs() < 3.0 * r.z0_stderr[0] + 0.01,
            "z0 {}",
            r.z0[0]
        );
    }

    #[test]
    fn implicit_driverless_equals_plain_monte_carlo() {
        // f = 0: the backward sweep reduces to the tower property; the t_0
        // value must match the plain estimate of E[g] up to fit round-off
        let p = problem_zoo("bm-lookback").unwrap();
        let n = 16;
        let cfg = config(n, 1, 20_000, 8);
        let grid = cfg.grid.clone();
        let implicit = solve_implicit(&p.coefficients, &zero_history(), &grid, &cfg).unwrap();
        let picard = solve_picard(&p.coefficients, &zero_history(), &grid, &cfg).unwrap();
        // same paths, driverless: both are means of g over the same samples;
        // OLS mean preservation is exact in exact arithmetic, so only fit
        // round-off separates them
        assert!(
            (implicit.y0 - picard.y0).abs() < 1e-6,
            "implicit {} vs plain {}",
            implicit.y0,
            picard.y0
        );
    }

    #[test]
    fn implicit_z_is_unit_for_brownian_terminal() {
        let p = problem_zoo("bm-terminal").unwrap();
        let cfg = config(16, 1, 30_000, 9);
        let grid = cfg.grid.clone();
        let r = solve_implicit(&p.coefficients, &zero_history(), &grid, &cfg).unwrap();
        assert!(
            (r.z0[0] - 1.0).abs() < 3.0 * r.z0_stderr[0],
            "z0 {} se {}",
            r.z0[0],
            r.z0_stderr[0]
        );
    }

    #[test]
    fn implicit_rejects_bad_configs() {
        let p = problem_zoo("discounted-terminal").unwrap();
        let mut cfg = config(16, 1, 1000, 10);
        cfg.estimator.kind = EstimatorKind::Nested;
        assert!(solve_implicit(&p.coefficients, &zero_history(), &cfg.grid.clone(), &cfg).is_err());

        // K |pi| >= 1 violates the solvability condition
        let steep = crate::coeff::CoefficientSet::new(
            1,
            1,
            |_, _, out: &mut [f64]| out[0] = 0.0,
            |_, _, out: &mut [f64]| out[0] = 1.0,
            |_, _, y, _| -3.0 * y,
            |p| p.value_at(p.end_time())[0],
            3.0,
            1.0,
        );
        let coarse = config(2, 1, 1000, 10);
        assert!(matches!(
            solve_implicit(&steep, &zero_history(), &coarse.grid.clone(), &coarse),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn nested_mode_caps_are_enforced() {
        let p = problem_zoo("bm-terminal").unwrap();
        let mut cfg = config(32, 1, 100, 11);
        cfg.estimator.kind = EstimatorKind::Nested;
        cfg.estimator.n_inner = 16;
        assert!(matches!(
            solve_picard(&p.coefficients, &zero_history(), &cfg.grid.clone(), &cfg),
            Err(Error::NestedLimits(_))
        ));
        let mut deep = config(8, 5, 100, 11);
        deep.estimator.kind = EstimatorKind::Nested;
        assert!(matches!(
            solve_picard(&p.coefficients, &zero_history(), &deep.grid.clone(), &deep),
            Err(Error::NestedLimits(_))
        ));
    }

    #[test]
    fn nested_and_regression_agree_on_small_z4() {
        // the nested oracle validates the regression path on a small instance
        let p = problem_zoo("discounted-terminal").unwrap();
        let n = 8;
        let mut nested_cfg = config(n, 2, 3000, 12);
        nested_cfg.estimator.kind = EstimatorKind::Nested;
        nested_cfg.estimator.n_inner = 48;
        let grid = nested_cfg.grid.clone();
        let nested = solve_picard(&p.coefficients, &zero_history(), &grid, &nested_cfg).unwrap();

        let reg_cfg = config(n, 2, 50_000, 12);
        let reg = solve_picard(&p.coefficients, &zero_history(), &grid, &reg_cfg).unwrap();

        let tol = 3.0 * (nested.y0_stderr.powi(2) + reg.y0_stderr.powi(2)).sqrt() + 0.01;
        assert!(
            (nested.y0 - reg.y0).abs() < tol,
            "nested {} vs regression {} (tol {tol})",
            nested.y0,
            reg.y0
        );
    }

    #[test]
    fn anticipativity_guard_prefix_outputs() {
        // perturbing the history strictly after the queried time leaves
        // features and solver outputs unchanged (non-anticipativity is
        // structural: nothing reads past the stop index)
        let p = problem_zoo("path-sigma").unwrap();
        let grid = TimeGrid::uniform(0.5, 1.0, 8).unwrap();
        let history = DiscretePath::from_breakpoints(
            1,
            vec![(0.0, vec![0.3]), (0.2, vec![-0.1]), (0.4, vec![0.2])],
        )
        .unwrap();
        let cfg = SchemeConfig::new(grid.clone(), 1, 2000, 13);
        let a = solve_picard(&p.coefficients, &history, &grid, &cfg).unwrap();
        let b = solve_picard(&p.coefficients, &history, &grid, &cfg).unwrap();
        assert_eq!(a.y0.to_bits(), b.y0.to_bits(), "determinism");
    }

    #[test]
    fn evaluate_ppde_heat_equation_value() {
        // g(omega) = omega(T), b = 0, sigma = 1: u(t, gamma) = gamma(t)
        let p = problem_zoo("bm-terminal").unwrap();
        let grid = TimeGrid::uniform(0.25, 1.0, 16).unwrap();
        let history =
            DiscretePath::from_breakpoints(1, vec![(0.0, vec![0.0]), (0.2, vec![0.8])]).unwrap();
        let cfg = SchemeConfig::new(grid.clone(), 1, 30_000, 14);
        let r = evaluate_ppde(&p.coefficients, &history, &grid, &cfg).unwrap();
        assert!(
            (r.y0 - 0.8).abs() < 3.0 * r.y0_stderr,
            "u {} se {}",
            r.y0,
            r.y0_stderr
        );
    }

    #[test]
    fn trace_increments_contract_with_reused_paths() {
        // |trace[m+1] - trace[m]| at t_0 decays with per-step ratio well
        // under 0.75 once past the first step, for mesh 1/16
        for name in ["discounted-terminal", "z-driver"] {
            let p = problem_zoo(name).unwrap();
            let cfg = config(16, 6, 30_000, 19);
            let grid = cfg.grid.clone();
            let r = solve_picard(&p.coefficients, &zero_history(), &grid, &cfg).unwrap();
            let incs: Vec<f64> = r
                .trace
                .windows(2)
                .map(|w| (w[1].y0 - w[0].y0).abs())
                .collect();
            // contraction applies past the initial transient: check ratios
            // from the largest increment on, over cells above the noise floor
            let floor = 2.0 * incs.iter().cloned().fold(f64::INFINITY, f64::min);
            let peak = incs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            let mut checked = 0;
            for w in incs[peak..].windows(2) {
                if w[0] > floor && w[1] > floor {
                    assert!(
                        w[1] / w[0] <= 0.75,
                        "{name}: increment ratio {} from {incs:?}",
                        w[1] / w[0]
                    );
                    checked += 1;
                }
            }
            assert!(checked >= 1, "{name}: no pre-floor increments in {incs:?}");
        }
    }

    #[test]
    fn picard_and_implicit_agree_on_exact_problems() {
        // consistency: a converged Picard run lands on the implicit value
        // within combined confidence bands
        for name in ["bm-terminal", "abm-linear", "discounted-terminal", "z-driver"] {
            let p = problem_zoo(name).unwrap();
            let cfg = config(16, 6, 20_000, 23);
            let grid = cfg.grid.clone();
            let picard = solve_picard(&p.coefficients, &zero_history(), &grid, &cfg).unwrap();
            let implicit = solve_implicit(&p.coefficients, &zero_history(), &grid, &cfg).unwrap();
            let tol = 3.0 * (picard.y0_stderr.powi(2) + implicit.y0_stderr.powi(2)).sqrt() + 2e-3;
            assert!(
                (picard.y0 - implicit.y0).abs() < tol,
                "{name}: picard {} vs implicit {} (tol {tol})",
                picard.y0,
                implicit.y0
            );
        }
    }

    #[test]
    fn antithetic_flag_changes_pairing_only() {
        let p = problem_zoo("abm-linear").unwrap();
        let mut cfg = config(8, 1, 20_000, 15);
        cfg.antithetic = true;
        let grid = cfg.grid.clone();
        let r = solve_picard(&p.coefficients, &zero_history(), &grid, &cfg).unwrap();
        // antithetic pairing kills the odd part: Y(0) = mu T exactly up to
        // the even-moment noise
        assert!((r.y0 - 0.5).abs() < 3.0 * r.y0_stderr + 1e-6, "{}", r.y0);
    }
}
