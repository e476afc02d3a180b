//! Cadlag step paths, stopped views and the concatenation operator.
//!
//! A [`DiscretePath`] stores a piecewise-constant right-continuous path as a
//! merged, strictly increasing list of breakpoint times with one value row
//! per breakpoint. The first `grid_offset` breakpoints form the history
//! segment (the frozen past on `[0, t_0]`); the remainder are scheme grid
//! nodes. Evaluation beyond the last breakpoint returns the terminal value,
//! which is exactly the stopped-path extension `omega(T ∧ ·)`.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    dim: usize,
    times: Vec<f64>,
    /// Flat row-major values, `times.len() * dim` entries.
    values: Vec<f64>,
    /// Index into `times` where the grid segment starts.
    grid_offset: usize,
}

impl DiscretePath {
    /// Builds a path from a history segment on `[0, t_0]`, grid node times
    /// and one value row per node. The history value at `t_0` must agree
    /// with the first node value (splice continuity).
    pub fn new(
        dim: usize,
        history: Vec<(f64, Vec<f64>)>,
        grid_times: &[f64],
        node_values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidPath("dimension must be positive".into()));
        }
        if node_values.len() != grid_times.len() {
            return Err(Error::InvalidPath(format!(
                "{} grid nodes but {} value rows",
                grid_times.len(),
                node_values.len()
            )));
        }
        if history.is_empty() && grid_times.is_empty() {
            return Err(Error::InvalidPath("path has no breakpoints".into()));
        }

        let check_row = |row: &[f64]| -> Result<()> {
            if row.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "value row has {} entries, path dimension is {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidPath("non-finite path value".into()));
            }
            Ok(())
        };

        let first_time = history
            .first()
            .map(|(t, _)| *t)
            .unwrap_or_else(|| grid_times[0]);
        if first_time != 0.0 {
            return Err(Error::InvalidPath(format!(
                "path must start at time 0, got {first_time}"
            )));
        }

        let mut times = Vec::with_capacity(history.len() + grid_times.len());
        let mut values = Vec::with_capacity((history.len() + grid_times.len()) * dim);

        for (t, row) in &history {
            if !t.is_finite() {
                return Err(Error::InvalidPath("non-finite history time".into()));
            }
            check_row(row)?;
            if let Some(&last) = times.last() {
                if *t <= last {
                    return Err(Error::InvalidPath(
                        "history times must be strictly increasing".into(),
                    ));
                }
            }
            times.push(*t);
            values.extend_from_slice(row);
        }

        let mut grid_offset = times.len();
        for (k, (&t, row)) in grid_times.iter().zip(&node_values).enumerate() {
            if !t.is_finite() {
                return Err(Error::InvalidPath("non-finite grid time".into()));
            }
            check_row(row)?;
            if let Some(&last) = times.last() {
                if k == 0 && t == last {
                    // history ends exactly at t_0: the splice values must agree
                    let hist_row = &values[values.len() - dim..];
                    if hist_row != row.as_slice() {
                        return Err(Error::InvalidPath(
                            "history value at t_0 differs from first grid value".into(),
                        ));
                    }
                    // drop the duplicate breakpoint; the grid row wins
                    times.pop();
                    values.truncate(values.len() - dim);
                    grid_offset = times.len();
                } else if t <= last {
                    return Err(Error::InvalidPath(
                        "grid times must extend strictly beyond the history".into(),
                    ));
                }
            }
            times.push(t);
            values.extend_from_slice(row);
        }

        // A jump at t_0 is representable (the grid value wins, right-continuity);
        // scheme-built trajectories splice continuously by construction.
        Ok(Self {
            dim,
            times,
            values,
            grid_offset,
        })
    }

    /// A path given directly by breakpoints (no grid segment).
    pub fn from_breakpoints(dim: usize, breakpoints: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        let p = Self::new(dim, breakpoints, &[], Vec::new())?;
        Ok(p)
    }

    /// Constant path with a single breakpoint at time 0.
    pub fn constant(value: Vec<f64>) -> Result<Self> {
        let dim = value.len();
        Self::from_breakpoints(dim, vec![(0.0, value)])
    }

    pub(crate) fn from_parts_unchecked(
        dim: usize,
        times: Vec<f64>,
        values: Vec<f64>,
        grid_offset: usize,
    ) -> Self {
        debug_assert_eq!(times.len() * dim, values.len());
        debug_assert!(grid_offset <= times.len());
        Self {
            dim,
            times,
            values,
            grid_offset,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub(crate) fn values_flat(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn grid_offset(&self) -> usize {
        self.grid_offset
    }

    /// Surrenders the merged buffers (hot loops recycle them as scratch).
    pub(crate) fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.times, self.values)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Last breakpoint time (the path is frozen after it).
    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn row(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Right-continuous step evaluation; times at or beyond the last
    /// breakpoint return the terminal value.
    pub fn value_at(&self, s: f64) -> &[f64] {
        self.row(step_index(&self.times, s))
    }

    /// Exact sup over time of the Euclidean norm of the path value.
    pub fn sup_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| euclid_sq(self.row(i)))
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// View of the path stopped at `s`.
    pub fn stopped(&self, s: f64) -> StoppedView<'_> {
        StoppedView {
            dim: self.dim,
            times: &self.times,
            values: &self.values,
            stop: s,
        }
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        (0..self.len()).map(move |i| (self.times[i], self.row(i)))
    }

    /// Breakpoints of the history segment.
    pub fn history_breakpoints(&self) -> Vec<(f64, Vec<f64>)> {
        (0..self.grid_offset)
            .map(|i| (self.times[i], self.row(i).to_vec()))
            .collect()
    }

    pub fn grid_times(&self) -> &[f64] {
        &self.times[self.grid_offset..]
    }

    pub fn node_values(&self) -> Vec<Vec<f64>> {
        (self.grid_offset..self.len())
            .map(|i| self.row(i).to_vec())
            .collect()
    }

    /// Reinterprets the whole path as a history segment ending at its last
    /// breakpoint (used when a serialized path seeds a new solve).
    pub fn as_history(&self) -> Vec<(f64, Vec<f64>)> {
        (0..self.len())
            .map(|i| (self.times[i], self.row(i).to_vec()))
            .collect()
    }
}

/// `omega_s = omega(s ∧ ·)` — a borrowed view of a path frozen at `stop`.
#[derive(Debug, Clone, Copy)]
pub struct StoppedView<'a> {
    dim: usize,
    times: &'a [f64],
    values: &'a [f64],
    stop: f64,
}

impl<'a> StoppedView<'a> {
    /// View over raw breakpoint buffers; used internally while a trajectory
    /// is still being built.
    pub(crate) fn from_raw(dim: usize, times: &'a [f64], values: &'a [f64], stop: f64) -> Self {
        debug_assert_eq!(times.len() * dim, values.len());
        Self {
            dim,
            times,
            values,
            stop,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stop_time(&self) -> f64 {
        self.stop
    }

    fn row(&self, idx: usize) -> &'a [f64] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Index of the last breakpoint at or before the stop time.
    fn stop_index(&self) -> usize {
        step_index(self.times, self.stop)
    }

    /// `omega(s ∧ u)`.
    pub fn value_at(&self, u: f64) -> &'a [f64] {
        self.row(step_index(self.times, u.min(self.stop)))
    }

    /// Value at the stop time.
    pub fn current(&self) -> &'a [f64] {
        self.row(self.stop_index())
    }

    /// Evaluation on the *unstopped* base path. Reading past the stop time
    /// makes a functional anticipative; `check_non_anticipative` exists to
    /// catch exactly that.
    pub fn unstopped_value_at(&self, u: f64) -> &'a [f64] {
        self.row(step_index(self.times, u))
    }

    /// Sup over time of the Euclidean norm of the stopped path.
    pub fn sup_norm(&self) -> f64 {
        let d = self.dim;
        if d == 1 {
            // scalar fast path: the scan dominates path-dependent coefficients
            let k = self.stop_index();
            let mut best: f64 = 0.0;
            for v in &self.values[..=k] {
                best = best.max(v.abs());
            }
            return best;
        }
        (0..=self.stop_index())
            .map(|i| euclid_sq(self.row(i)))
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// `sup_{v <= stop} |omega(v)|` — alias of [`Self::sup_norm`] kept for
    /// coefficient code that reads like the formulas.
    pub fn running_abs_sup(&self) -> f64 {
        self.sup_norm()
    }

    /// Per-coordinate running maximum up to the stop time.
    pub fn running_max(&self, out: &mut [f64]) {
        out.copy_from_slice(self.row(0));
        for i in 1..=self.stop_index() {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o = o.max(*v);
            }
        }
    }

    /// Per-coordinate running minimum up to the stop time.
    pub fn running_min(&self, out: &mut [f64]) {
        out.copy_from_slice(self.row(0));
        for i in 1..=self.stop_index() {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o = o.min(*v);
            }
        }
    }

    /// Time-weighted average `(1/s) ∫_0^s omega(u) du` of the step path;
    /// equals the current value when the stop time is 0.
    pub fn time_average(&self, out: &mut [f64]) {
        let k = self.stop_index();
        let span = self.stop - self.times[0];
        if span <= 0.0 {
            out.copy_from_slice(self.row(k));
            return;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..=k {
            let seg_end = if i == k { self.stop } else { self.times[i + 1].min(self.stop) };
            let w = seg_end - self.times[i];
            if w > 0.0 {
                for (o, v) in out.iter_mut().zip(self.row(i)) {
                    *o += w * v;
                }
            }
        }
        out.iter_mut().for_each(|o| *o /= span);
    }

    fn breakpoint_times(&self) -> &'a [f64] {
        self.times
    }
}

/// Index of the breakpoint governing time `s` (right-continuous step rule,
/// clamped to the defined range).
fn step_index(times: &[f64], s: f64) -> usize {
    match times.partition_point(|&t| t <= s) {
        0 => 0,
        k => k - 1,
    }
}

fn euclid_sq(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>()
}

/// The metric `d_infinity((s, omega), (s', omega')) = |s - s'| + ||omega_s - omega'_{s'}||_inf`.
pub fn d_infinity(a: &StoppedView<'_>, b: &StoppedView<'_>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "d_infinity requires equal dimensions");
    let mut sup: f64 = 0.0;
    let mut diff = |u: f64| {
        let (x, y) = (a.value_at(u), b.value_at(u));
        let d = x
            .iter()
            .zip(y)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        sup = sup.max(d);
    };
    // step functions: the sup is attained at a breakpoint or a stop time
    for &t in a.breakpoint_times() {
        diff(t);
    }
    for &t in b.breakpoint_times() {
        diff(t);
    }
    diff(a.stop_time());
    diff(b.stop_time());
    diff(a.stop_time().max(b.stop_time()));
    (a.stop_time() - b.stop_time()).abs() + sup
}

/// Concatenation `omega ⊕_s omega~`: equal to `prefix` strictly before `s`,
/// and to the suffix shifted so the splice value at `s` is `prefix(s)`.
pub fn concat(prefix: &DiscretePath, suffix: &DiscretePath, s: f64) -> Result<DiscretePath> {
    if prefix.dim() != suffix.dim() {
        return Err(Error::DimensionMismatch(format!(
            "prefix dimension {} vs suffix dimension {}",
            prefix.dim(),
            suffix.dim()
        )));
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidPath(format!("splice time {s} out of range")));
    }
    let dim = prefix.dim();
    let retained = prefix.times.partition_point(|&t| t < s);

    let splice = prefix.value_at(s);
    let base = suffix.value_at(s);
    let shift: Vec<f64> = splice.iter().zip(base).map(|(p, q)| p - q).collect();

    let suffix_from = suffix.times.partition_point(|&t| t <= s);
    let mut times = Vec::with_capacity(retained + 1 + suffix.len() - suffix_from);
    let mut values = Vec::with_capacity((retained + 1 + suffix.len() - suffix_from) * dim);
    times.extend_from_slice(&prefix.times[..retained]);
    values.extend_from_slice(&prefix.values[..retained * dim]);
    times.push(s);
    values.extend_from_slice(splice);
    for i in suffix_from..suffix.len() {
        times.push(suffix.times[i]);
        for (v, sh) in suffix.row(i).iter().zip(&shift) {
            values.push(v + sh);
        }
    }
    let grid_offset = prefix.grid_offset.min(retained);
    Ok(DiscretePath::from_parts_unchecked(
        dim,
        times,
        values,
        grid_offset,
    ))
}

// ---------------------------------------------------------------------------
// JSON schema: {"d": .., "history": [[t, [v..]]..], "grid": [..], "values": [[v..]..]}
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct PathJson {
    d: usize,
    history: Vec<(f64, Vec<f64>)>,
    grid: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl Serialize for DiscretePath {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PathJson {
            d: self.dim,
            history: self.history_breakpoints(),
            grid: self.grid_times().to_vec(),
            values: self.node_values(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DiscretePath {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = PathJson::deserialize(deserializer)?;
        DiscretePath::new(raw.d, raw.history, &raw.grid, raw.values)
            .map_err(serde::de::Error::custom)
    }
}
