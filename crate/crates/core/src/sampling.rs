//! Keyed, splittable Brownian increment streams.
//!
//! Every random number is a pure function of a [`SampleKey`] and a counter,
//! so any scheme output is a pure function of `(config, root seed)` no matter
//! how work is scheduled across threads. Nested estimators derive fresh child
//! keys per `(time index, inner index)` without coordination.
//!
//! The generator is a keyed SplitMix64-style bijective mixer: the stream key
//! is a hash chain over `(root_seed, stream_path)`, and draw `j` of a stream
//! mixes `key + (j+1)*GOLDEN`. Normals come from Box-Muller evaluated in
//! pairs.

use crate::{grid::TimeGrid, Error, Result};
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform in (0, 1]: the +1 keeps `ln` finite.
#[inline]
fn to_open_unit(x: u64) -> f64 {
    ((x >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

/// Address of one independent random stream under a root seed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleKey {
    root_seed: u64,
    stream_path: Vec<u64>,
}

impl SampleKey {
    pub fn new(root_seed: u64) -> Self {
        Self {
            root_seed,
            stream_path: Vec::new(),
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn stream_path(&self) -> &[u64] {
        &self.stream_path
    }

    /// Child stream, independent of the parent and of all siblings.
    pub fn child(&self, index: u64) -> Self {
        let mut stream_path = Vec::with_capacity(self.stream_path.len() + 1);
        stream_path.extend_from_slice(&self.stream_path);
        stream_path.push(index);
        Self {
            root_seed: self.root_seed,
            stream_path,
        }
    }

    /// Fresh suffix stream for inner sample `inner_index` branched at grid
    /// node `time_index` (the `omega ⊕_{t_i} W` draws of nested estimators).
    pub fn suffix_key(&self, time_index: usize, inner_index: usize) -> Self {
        self.child(time_index as u64).child(inner_index as u64)
    }

    /// Collapsed 64-bit stream key (hash chain over root seed and path).
    fn stream_key(&self) -> u64 {
        let mut k = mix64(self.root_seed ^ GOLDEN);
        for &e in &self.stream_path {
            k = mix64(k.wrapping_add(GOLDEN) ^ mix64(e.wrapping_add(1).wrapping_mul(GOLDEN)));
        }
        k
    }
}

/// Stateless draw: the `j`-th u64 of the stream.
#[inline]
fn raw(key: u64, j: u64) -> u64 {
    mix64(key.wrapping_add((j + 1).wrapping_mul(GOLDEN)))
}

/// Standard normal pair from counters `(2q, 2q+1)` of the stream.
#[inline]
fn normal_pair(key: u64, q: u64) -> (f64, f64) {
    let u1 = to_open_unit(raw(key, 2 * q));
    let u2 = to_open_unit(raw(key, 2 * q + 1));
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Brownian increments over a grid: `dw[i]` has law `N(0, h_i * I_l)`.
#[derive(Debug, Clone)]
pub struct BrownianIncrements {
    n_steps: usize,
    dim_w: usize,
    /// Flat row-major, `n_steps * dim_w` entries.
    dw: Vec<f64>,
}

impl BrownianIncrements {
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dim_w(&self) -> usize {
        self.dim_w
    }

    /// Increment vector `W(t_{i+1}) - W(t_i)`.
    pub fn step(&self, i: usize) -> &[f64] {
        &self.dw[i * self.dim_w..(i + 1) * self.dim_w]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.dw
    }

    /// Negated copy (antithetic pairing).
    pub fn negated(&self) -> Self {
        Self {
            n_steps: self.n_steps,
            dim_w: self.dim_w,
            dw: self.dw.iter().map(|x| -x).collect(),
        }
    }

    /// Sums increments of a fine grid into the steps of a coarse grid it
    /// refines, coupling the two discretizations to one Brownian path.
    pub fn restrict_to(&self, fine: &TimeGrid, coarse: &TimeGrid) -> Result<Self> {
        if !fine.refines(coarse) {
            return Err(Error::InvalidGrid(
                "fine grid does not refine the coarse grid".into(),
            ));
        }
        if self.n_steps != fine.n_steps() {
            return Err(Error::DimensionMismatch(format!(
                "{} increments for a grid with {} steps",
                self.n_steps,
                fine.n_steps()
            )));
        }
        let l = self.dim_w;
        let mut dw = vec![0.0; coarse.n_steps() * l];
        let mut j = 0;
        for i in 0..coarse.n_steps() {
            let end = coarse.node(i + 1);
            while j < fine.n_steps() && fine.node(j + 1) <= end {
                for k in 0..l {
                    dw[i * l + k] += self.dw[j * l + k];
                }
                j += 1;
            }
        }
        Ok(Self {
            n_steps: coarse.n_steps(),
            dim_w: l,
            dw,
        })
    }
}

/// Deterministic increments for `key` over `grid`: draw `(i, k)` is addressed
/// by counter `i * dim_w + k`, scaled by `sqrt(h_i)`.
pub fn sample_increments(key: &SampleKey, grid: &TimeGrid, dim_w: usize) -> BrownianIncrements {
    let n = grid.n_steps();
    let sk = key.stream_key();
    let total = n * dim_w;
    let mut dw = Vec::with_capacity(total);
    let mut q = 0u64;
    while dw.len() < total {
        let (z0, z1) = normal_pair(sk, q);
        dw.push(z0);
        if dw.len() < total {
            dw.push(z1);
        }
        q += 1;
    }
    for i in 0..n {
        let scale = grid.step(i).sqrt();
        for k in 0..dim_w {
            dw[i * dim_w + k] *= scale;
        }
    }
    BrownianIncrements {
        n_steps: n,
        dim_w,
        dw,
    }
}

/// Uniform draw in `[0, 1)` for probe generation (tests, Lipschitz checks).
pub fn uniform(key: &SampleKey, counter: u64) -> f64 {
    (raw(key.stream_key(), counter) >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Standard normal draw for probe generation.
pub fn standard_normal(key: &SampleKey, counter: u64) -> f64 {
    let (z0, z1) = normal_pair(key.stream_key(), counter / 2);
    if counter.is_multiple_of(2) {
        z0
    } else {
        z1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_bit_identical() {
        let grid = TimeGrid::uniform(0.0, 1.0, 16).unwrap();
        let k = SampleKey::new(42).child(3);
        let a = sample_increments(&k, &grid, 2);
        let b = sample_increments(&k, &grid, 2);
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn suffix_keys_are_distinct_and_deterministic() {
        let k = SampleKey::new(7);
        assert_ne!(k.suffix_key(0, 0), k);
        assert_eq!(k.suffix_key(1, 2), k.suffix_key(1, 2));
        assert_ne!(k.suffix_key(1, 2), k.suffix_key(2, 1));
    }

    #[test]
    fn increment_moments_match_step_variance() {
        // 10^6 samples of dW[0] on h0 = 0.25: mean within 4*(0.5/10^3) of 0,
        // variance within 1% of 0.25 (CLT bounds at this sample count).
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let root = SampleKey::new(2024);
        for p in 0..n {
            let inc = sample_increments(&root.child(p as u64), &grid, 1);
            let x = inc.step(0)[0];
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 * 0.5 / 1e3, "mean {mean}");
        assert!((var - 0.25).abs() < 0.01 * 0.25, "var {var}");
    }

    #[test]
    fn distinct_streams_uncorrelated() {
        // keys [0] vs [1]: empirical correlation of dW[0] over 10^5 pairs
        // within 4/sqrt(10^5) of 0.
        let grid = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
        let n = 100_000usize;
        let root = SampleKey::new(5);
        let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for p in 0..n {
            let a = sample_increments(&root.child(0).child(p as u64), &grid, 1);
            let b = sample_increments(&root.child(1).child(p as u64), &grid, 1);
            let (x, y) = (a.step(0)[0], b.step(0)[0]);
            sx += x;
            sy += y;
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - sx / nf * sy / nf;
        let vx = sxx / nf - (sx / nf) * (sx / nf);
        let vy = syy / nf - (sy / nf) * (sy / nf);
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() < 4.0 / (nf).sqrt(), "corr {corr}");
    }

    #[test]
    fn sibling_suffix_streams_uncorrelated() {
        // streams from suffix_key(k, i, j) for distinct (i, j): pairwise
        // correlation within CLT bounds, spot-checked on a few pairs.
        let grid = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
        let n = 20_000usize;
        let parent = SampleKey::new(99).child(4);
        let pairs = [((0, 0), (0, 1)), ((0, 0), (1, 0)), ((2, 3), (3, 2))];
        for ((i1, j1), (i2, j2)) in pairs {
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for p in 0..n {
                let a = sample_increments(
                    &parent.suffix_key(i1, j1).child(p as u64),
                    &grid,
                    1,
                );
                let b = sample_increments(
                    &parent.suffix_key(i2, j2).child(p as u64),
                    &grid,
                    1,
                );
                let (x, y) = (a.step(0)[0], b.step(0)[0]);
                sxy += x * y;
                sxx += x * x;
                syy += y * y;
            }
            let corr = sxy / (sxx * syy).sqrt();
            assert!(
                corr.abs() < 4.0 / (n as f64).sqrt(),
                "({i1},{j1}) vs ({i2},{j2}): corr {corr}"
            );
        }
    }

    #[test]
    fn refinement_halves_step_variance() {
        // grid refined 2x: per-step variance halves (checked over >= 10^5 draws)
        let coarse = TimeGrid::uniform(0.0, 1.0, 8).unwrap();
        let fine = TimeGrid::uniform(0.0, 1.0, 16).unwrap();
        let root = SampleKey::new(11);
        let n = 100_000usize;
        let (mut vc, mut vf) = (0.0, 0.0);
        for p in 0..n {
            let kc = root.child(0).child(p as u64);
            let kf = root.child(1).child(p as u64);
            let c = sample_increments(&kc, &coarse, 1).step(3)[0];
            let f = sample_increments(&kf, &fine, 1).step(3)[0];
            vc += c * c;
            vf += f * f;
        }
        let ratio = vf / vc;
        assert!((ratio - 0.5).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn restriction_sums_increments() {
        let coarse = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let fine = TimeGrid::uniform(0.0, 1.0, 16).unwrap();
        let k = SampleKey::new(1).child(0);
        let inc = sample_increments(&k, &fine, 1);
        let restricted = inc.restrict_to(&fine, &coarse).unwrap();
        for i in 0..4 {
            let manual: f64 = (4 * i..4 * (i + 1)).map(|j| inc.step(j)[0]).sum();
            assert!((restricted.step(i)[0] - manual).abs() < 1e-15);
        }
        // non-nesting grids are rejected
        let odd = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        assert!(inc.restrict_to(&fine, &odd).is_err());
    }
}
