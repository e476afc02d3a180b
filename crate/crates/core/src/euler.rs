//! Euler scheme for the path-dependent forward SDE and coupled strong-error
//! measurement.
//!
//! The recursion is
//! `X(t_{i+1}) = X(t_i) + b(t_i, X_{.∧t_i}) h_i + sigma(t_i, X_{.∧t_i}) dW_i`,
//! with piecewise-constant interpolation between nodes and coefficients
//! always evaluated on the stopped view at the left node. Histories are
//! first-class: the stopped view passed to the coefficients carries the full
//! frozen past.

use crate::coeff::CoefficientSet;
use crate::grid::TimeGrid;
use crate::path::{DiscretePath, StoppedView};
use crate::sampling::{sample_increments, BrownianIncrements, SampleKey};
use crate::{Error, Result};
use rayon::prelude::*;

/// Fixed work-chunk size for deterministic parallel reductions: partial sums
/// are produced per chunk and merged in chunk order, so results are bitwise
/// independent of the thread count.
pub(crate) const CHUNK: usize = 4096;

pub(crate) fn chunked_map<A: Send>(
    n: usize,
    f: impl Fn(std::ops::Range<usize>) -> A + Sync,
) -> Vec<A> {
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(n)))
        .collect()
}

/// One simulated Euler path together with the data that produced it.
pub struct EulerTrajectory {
    pub path: DiscretePath,
    pub grid: TimeGrid,
    pub increments: BrownianIncrements,
}

/// Appends nodes `from+1 ..= n` to a partially built trajectory whose last
/// row is `X(t_from)`. `increments.step(j)` must hold the increment of grid
/// step `from + j`.
pub(crate) fn extend_trajectory(
    cs: &CoefficientSet,
    times: &mut Vec<f64>,
    values: &mut Vec<f64>,
    grid: &TimeGrid,
    from: usize,
    increments: &BrownianIncrements,
) -> Result<()> {
    let d = cs.dim_x();
    let l = cs.dim_w();
    let n = grid.n_steps();
    let mut b = vec![0.0; d];
    let mut sig = vec![0.0; d * l];
    let mut next = vec![0.0; d];
    for i in from..n {
        let ti = grid.node(i);
        {
            let view = StoppedView::from_raw(d, times, values, ti);
            cs.drift_into(ti, &view, &mut b);
            cs.diffusion_into(ti, &view, &mut sig);
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "drift".into(),
                index: i,
            });
        }
        if sig.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "diffusion".into(),
                index: i,
            });
        }
        let h = grid.step(i);
        let dw = increments.step(i - from);
        let base = values.len() - d;
        for r in 0..d {
            let mut acc = values[base + r] + b[r] * h;
            for k in 0..l {
                acc += sig[r * l + k] * dw[k];
            }
            next[r] = acc;
        }
        times.push(grid.node(i + 1));
        values.extend_from_slice(&next);
    }
    Ok(())
}

/// Seeds the merged breakpoint buffers with the history and the `X(t_0)`
/// node; returns the index of the `t_0` row (the grid offset).
pub(crate) fn seed_from_history(
    history: &DiscretePath,
    grid: &TimeGrid,
    times: &mut Vec<f64>,
    values: &mut Vec<f64>,
) -> Result<usize> {
    let t0 = grid.start();
    if history.end_time() > t0 {
        return Err(Error::InvalidPath(format!(
            "history extends to {} past the grid start {}",
            history.end_time(),
            t0
        )));
    }
    times.extend_from_slice(history.times());
    values.extend_from_slice(history.values_flat());
    if history.end_time() < t0 {
        // X(t_0) = gamma(t): splice continuity of Eq-style initial data
        let last = values[values.len() - history.dim()..].to_vec();
        times.push(t0);
        values.extend_from_slice(&last);
    }
    Ok(times.len() - 1)
}

/// Runs the Euler recursion for the given increments.
pub fn simulate_with_increments(
    cs: &CoefficientSet,
    history: &DiscretePath,
    grid: &TimeGrid,
    increments: &BrownianIncrements,
) -> Result<EulerTrajectory> {
    if history.dim() != cs.dim_x() {
        return Err(Error::DimensionMismatch(format!(
            "history dimension {} vs coefficient dimension {}",
            history.dim(),
            cs.dim_x()
        )));
    }
    if increments.n_steps() != grid.n_steps() || increments.dim_w() != cs.dim_w() {
        return Err(Error::DimensionMismatch(
            "increments do not match grid and noise dimension".into(),
        ));
    }
    let n = grid.n_steps();
    let mut times = Vec::with_capacity(history.len() + n + 1);
    let mut values = Vec::with_capacity((history.len() + n + 1) * cs.dim_x());
    let grid_offset = seed_from_history(history, grid, &mut times, &mut values)?;
    extend_trajectory(cs, &mut times, &mut values, grid, 0, increments)?;
    Ok(EulerTrajectory {
        path: DiscretePath::from_parts_unchecked(cs.dim_x(), times, values, grid_offset),
        grid: grid.clone(),
        increments: increments.clone(),
    })
}

/// Simulates one trajectory from a history segment; deterministic in `key`.
pub fn simulate(
    cs: &CoefficientSet,
    history: &DiscretePath,
    grid: &TimeGrid,
    key: &SampleKey,
) -> Result<EulerTrajectory> {
    let increments = sample_increments(key, grid, cs.dim_w());
    simulate_with_increments(cs, history, grid, &increments)
}

/// Monte Carlo estimate of `max_i E[ |X_fine(t_i) - X_coarse(t_i)|^2 ]` over
/// the coarse nodes, with both discretizations coupled to one Brownian path
/// by summing fine increments into coarse steps.
pub fn strong_error(
    cs: &CoefficientSet,
    history: &DiscretePath,
    coarse: &TimeGrid,
    fine: &TimeGrid,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    strong_error_many(cs, history, std::slice::from_ref(coarse), fine, n_samples, seed)
        .map(|errs| errs[0])
}

/// [`strong_error`] against several coarse grids at once: the fine
/// trajectory is simulated once per sample and coupled to every coarse grid,
/// which is bitwise identical to separate runs under the same seed.
pub fn strong_error_many(
    cs: &CoefficientSet,
    history: &DiscretePath,
    coarse_grids: &[TimeGrid],
    fine: &TimeGrid,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    for coarse in coarse_grids {
        if !fine.refines(coarse) {
            return Err(Error::InvalidGrid(
                "fine grid must refine the coarse grid".into(),
            ));
        }
    }
    if n_samples < 100 {
        return Err(Error::InsufficientSamples {
            needed: 100,
            got: n_samples,
        });
    }
    let root = SampleKey::new(seed);

    // per-grid, per-node squared-difference sums
    let partials: Vec<Result<Vec<Vec<f64>>>> = chunked_map(n_samples, |range| {
        let mut sums: Vec<Vec<f64>> = coarse_grids
            .iter()
            .map(|c| vec![0.0; c.n_steps() + 1])
            .collect();
        for p in range {
            let key = root.child(p as u64);
            let inc_fine = sample_increments(&key, fine, cs.dim_w());
            let tf = simulate_with_increments(cs, history, fine, &inc_fine)?;
            for (coarse, grid_sums) in coarse_grids.iter().zip(&mut sums) {
                let inc_coarse = inc_fine.restrict_to(fine, coarse)?;
                let tc = simulate_with_increments(cs, history, coarse, &inc_coarse)?;
                for (i, sum) in grid_sums.iter_mut().enumerate() {
                    let t = coarse.node(i);
                    let xf = tf.path.value_at(t);
                    let xc = tc.path.value_at(t);
                    let d2: f64 = xf
                        .iter()
                        .zip(xc)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    *sum += d2;
                }
            }
        }
        Ok(sums)
    });

    let mut totals: Vec<Vec<f64>> = coarse_grids
        .iter()
        .map(|c| vec![0.0; c.n_steps() + 1])
        .collect();
    for partial in partials {
        let partial = partial?;
        for (t, p) in totals.iter_mut().zip(partial) {
            for (a, b) in t.iter_mut().zip(p) {
                *a += b;
            }
        }
    }
    Ok(totals
        .iter()
        .map(|sums| {
            sums.iter()
                .map(|s| s / n_samples as f64)
                .fold(0.0, f64::max)
        })
        .collect())
}
