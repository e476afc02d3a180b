//! Non-anticipative coefficient functionals `(b, sigma, f, g)` and the
//! built-in problem zoo with reference solutions.
//!
//! Coefficients are pure functions of `(time, stopped view)` (plus `(y, z)`
//! for the driver); they carry declared Lipschitz and zero-path bounds as
//! metadata. [`check_non_anticipative`] and [`check_lipschitz`] probe those
//! claims empirically.

use crate::path::{DiscretePath, StoppedView};
use crate::sampling::{standard_normal, uniform, SampleKey};
use crate::{Error, Result};

type DriftFn = dyn Fn(f64, &StoppedView<'_>, &mut [f64]) + Send + Sync;
type DiffusionFn = dyn Fn(f64, &StoppedView<'_>, &mut [f64]) + Send + Sync;
type DriverFn = dyn Fn(f64, &StoppedView<'_>, f64, &[f64]) -> f64 + Send + Sync;
type TerminalFn = dyn Fn(&DiscretePath) -> f64 + Send + Sync;
type ValueFn = dyn Fn(f64, &DiscretePath) -> f64 + Send + Sync;
type ZFn = dyn Fn(f64, &DiscretePath) -> Vec<f64> + Send + Sync;

/// The functionals of one forward-backward system.
///
/// * drift `b: (s, omega_s) -> R^d`
/// * diffusion `sigma: (s, omega_s) -> R^{d x l}` (row-major)
/// * driver `f: (s, omega_s, y, z) -> R`
/// * terminal `g: omega_T -> R`
pub struct CoefficientSet {
    dim_x: usize,
    dim_w: usize,
    drift: Box<DriftFn>,
    diffusion: Box<DiffusionFn>,
    driver: Box<DriverFn>,
    terminal: Box<TerminalFn>,
    /// Declared Lipschitz constant `K` for all four functionals.
    pub lipschitz: f64,
    /// Declared bound `C` at the constant zero path.
    pub zero_bound: f64,
}

impl CoefficientSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim_x: usize,
        dim_w: usize,
        drift: impl Fn(f64, &StoppedView<'_>, &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(f64, &StoppedView<'_>, &mut [f64]) + Send + Sync + 'static,
        driver: impl Fn(f64, &StoppedView<'_>, f64, &[f64]) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(&DiscretePath) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
        zero_bound: f64,
    ) -> Self {
        Self {
            dim_x,
            dim_w,
            drift: Box::new(drift),
            diffusion: Box::new(diffusion),
            driver: Box::new(driver),
            terminal: Box::new(terminal),
            lipschitz,
            zero_bound,
        }
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_w(&self) -> usize {
        self.dim_w
    }

    pub fn drift_into(&self, s: f64, view: &StoppedView<'_>, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim_x);
        (self.drift)(s, view, out);
    }

    pub fn diffusion_into(&self, s: f64, view: &StoppedView<'_>, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim_x * self.dim_w);
        (self.diffusion)(s, view, out);
    }

    pub fn driver(&self, s: f64, view: &StoppedView<'_>, y: f64, z: &[f64]) -> f64 {
        (self.driver)(s, view, y, z)
    }

    pub fn terminal(&self, path: &DiscretePath) -> f64 {
        (self.terminal)(path)
    }
}

/// Reference solution attached to a zoo problem.
pub enum ReferenceSolution {
    /// Closed-form `Y(t, gamma_t)` (and optionally `Z(t, gamma_t)`).
    Exact {
        value: Box<ValueFn>,
        z: Option<Box<ZFn>>,
    },
    /// No closed form; references come from brute-force oracles.
    Oracle { note: &'static str },
}

impl ReferenceSolution {
    pub fn is_exact(&self) -> bool {
        matches!(self, ReferenceSolution::Exact { .. })
    }

    pub fn value_at(&self, t: f64, path: &DiscretePath) -> Option<f64> {
        match self {
            ReferenceSolution::Exact { value, .. } => Some(value(t, path)),
            ReferenceSolution::Oracle { .. } => None,
        }
    }

    pub fn z_at(&self, t: f64, path: &DiscretePath) -> Option<Vec<f64>> {
        match self {
            ReferenceSolution::Exact { z, .. } => z.as_ref().map(|f| f(t, path)),
            ReferenceSolution::Oracle { .. } => None,
        }
    }
}

/// A fully specified benchmark problem.
pub struct Problem {
    pub name: &'static str,
    pub coefficients: CoefficientSet,
    pub reference: ReferenceSolution,
    /// Terminal time the zoo entry is calibrated for.
    pub horizon: f64,
}

pub const PROBLEM_NAMES: [&str; 6] = [
    "bm-terminal",
    "abm-linear",
    "bm-lookback",
    "discounted-terminal",
    "z-driver",
    "path-sigma",
];

/// Default parameters of the zoo entries.
pub mod params {
    /// `abm-linear` drift.
    pub const ABM_MU: f64 = 0.5;
    /// `abm-linear` volatility.
    pub const ABM_SIGMA: f64 = 2.0;
    /// `discounted-terminal` rate.
    pub const DISCOUNT_R: f64 = 0.5;
    /// `discounted-terminal` terminal shift.
    pub const DISCOUNT_C: f64 = 1.0;
    /// `z-driver` slope.
    pub const ZDRIVER_A: f64 = 0.3;
}

fn zero_drift(_: f64, _: &StoppedView<'_>, out: &mut [f64]) {
    out.fill(0.0);
}

fn unit_diffusion(_: f64, _: &StoppedView<'_>, out: &mut [f64]) {
    out.fill(1.0);
}

fn zero_driver(_: f64, _: &StoppedView<'_>, _: f64, _: &[f64]) -> f64 {
    0.0
}

fn terminal_value(path: &DiscretePath) -> f64 {
    path.value_at(path.end_time())[0]
}

fn running_max(path: &DiscretePath) -> f64 {
    path.iter_rows().map(|(_, v)| v[0]).fold(f64::MIN, f64::max)
}

/// Looks a problem up by name. The registered set is [`PROBLEM_NAMES`];
/// custom problems are added by constructing [`Problem`] values in code.
pub fn problem_zoo(name: &str) -> Result<Problem> {
    let horizon = 1.0;
    match name {
        // Z1: b = 0, sigma = 1, f = 0, g(omega) = omega(T).
        // Y(s) = X(s), Z = 1.
        "bm-terminal" => Ok(Problem {
            name: "bm-terminal",
            coefficients: CoefficientSet::new(
                1,
                1,
                zero_drift,
                unit_diffusion,
                zero_driver,
                terminal_value,
                1.0,
                1.0,
            ),
            reference: ReferenceSolution::Exact {
                value: Box::new(|t, path| path.value_at(t)[0]),
                z: Some(Box::new(|_, _| vec![1.0])),
            },
            horizon,
        }),
        // Z2: b = mu, sigma = s0, f = 0, g(omega) = omega(T).
        // Y(s) = X(s) + mu (T - s), Z = s0.
        "abm-linear" => Ok(Problem {
            name: "abm-linear",
            coefficients: CoefficientSet::new(
                1,
                1,
                |_, _, out: &mut [f64]| out[0] = params::ABM_MU,
                |_, _, out: &mut [f64]| out[0] = params::ABM_SIGMA,
                zero_driver,
                terminal_value,
                1.0,
                params::ABM_MU + params::ABM_SIGMA,
            ),
            reference: ReferenceSolution::Exact {
                value: Box::new(move |t, path| path.value_at(t)[0] + params::ABM_MU * (horizon - t)),
                z: Some(Box::new(|_, _| vec![params::ABM_SIGMA])),
            },
            horizon,
        }),
        // Z3: b = 0, sigma = 1, f = 0, g(omega) = max over [0, T].
        // At gamma = 0, t = 0: E[max W] = sqrt(2T/pi); otherwise oracle-only.
        "bm-lookback" => Ok(Problem {
            name: "bm-lookback",
            coefficients: CoefficientSet::new(
                1,
                1,
                zero_drift,
                unit_diffusion,
                zero_driver,
                running_max,
                1.0,
                1.0,
            ),
            reference: ReferenceSolution::Oracle {
                note: "fine-grid Monte Carlo; reflection-principle quadrature for the running max",
            },
            horizon,
        }),
        // Z4: b = 0, sigma = 1, f = -r y, g(omega) = omega(T) + c.
        // Y(t) = e^{-r(T-t)} (X(t) + c), Z(t) = e^{-r(T-t)}.
        "discounted-terminal" => Ok(Problem {
            name: "discounted-terminal",
            coefficients: CoefficientSet::new(
                1,
                1,
                zero_drift,
                unit_diffusion,
                |_, _, y, _| -params::DISCOUNT_R * y,
                |path| terminal_value(path) + params::DISCOUNT_C,
                1.0,
                params::DISCOUNT_C,
            ),
            reference: ReferenceSolution::Exact {
                value: Box::new(move |t, path| {
                    (-params::DISCOUNT_R * (horizon - t)).exp()
                        * (path.value_at(t)[0] + params::DISCOUNT_C)
                }),
                z: Some(Box::new(move |t, _| {
                    vec![(-params::DISCOUNT_R * (horizon - t)).exp()]
                })),
            },
            horizon,
        }),
        // Z5: b = 0, sigma = 1, f = a z, g(omega) = omega(T).
        // Girsanov: Y(s) = X(s) + a (T - s), Z = 1.
        "z-driver" => Ok(Problem {
            name: "z-driver",
            coefficients: CoefficientSet::new(
                1,
                1,
                zero_drift,
                unit_diffusion,
                |_, _, _, z: &[f64]| params::ZDRIVER_A * z[0],
                terminal_value,
                1.0,
                1.0,
            ),
            reference: ReferenceSolution::Exact {
                value: Box::new(move |t, path| path.value_at(t)[0] + params::ZDRIVER_A * (horizon - t)),
                z: Some(Box::new(|_, _| vec![1.0])),
            },
            horizon,
        }),
        // Z6: sigma(u, omega) = 0.2 + 0.1 tanh(sup_{v <= u} |omega(v)|),
        // b = 0, f = 0, g(omega) = omega(T). Genuinely path-dependent sigma;
        // no closed form.
        "path-sigma" => Ok(Problem {
            name: "path-sigma",
            coefficients: CoefficientSet::new(
                1,
                1,
                zero_drift,
                |_, view: &StoppedView<'_>, out: &mut [f64]| {
                    out[0] = 0.2 + 0.1 * view.running_abs_sup().tanh();
                },
                zero_driver,
                terminal_value,
                1.0,
                0.3,
            ),
            reference: ReferenceSolution::Oracle {
                note: "fine-grid nested Monte Carlo",
            },
            horizon,
        }),
        other => Err(Error::UnknownProblem {
            name: other.to_string(),
            available: PROBLEM_NAMES.join(", "),
        }),
    }
}

// ---------------------------------------------------------------------------
// Empirical checks of the declared assumptions
// ---------------------------------------------------------------------------

/// Outcome of the non-anticipativity probes: maximum output discrepancy per
/// functional when the path is perturbed strictly after the stop time.
#[derive(Debug, Clone, Default)]
pub struct NonAnticipativityReport {
    pub drift: f64,
    pub diffusion: f64,
    pub driver: f64,
    pub probes: usize,
}

impl NonAnticipativityReport {
    /// All functionals depend on the stopped view only.
    pub fn passes(&self) -> bool {
        self.drift == 0.0 && self.diffusion == 0.0 && self.driver == 0.0
    }

    pub fn max_discrepancy(&self) -> f64 {
        self.drift.max(self.diffusion).max(self.driver)
    }
}

/// Random step path on `[0, 1]` with `n` post-zero breakpoints, built as a
/// scaled random walk so sups stay O(1).
fn probe_path(key: &SampleKey, dim: usize, n: usize) -> DiscretePath {
    let mut breakpoints = Vec::with_capacity(n + 1);
    let mut value = vec![0.0; dim];
    for (c, v) in value.iter_mut().enumerate() {
        *v = standard_normal(key, c as u64);
    }
    breakpoints.push((0.0, value.clone()));
    let mut counter = dim as u64;
    for i in 1..=n {
        for v in value.iter_mut() {
            *v += 0.5 * standard_normal(key, counter);
            counter += 1;
        }
        breakpoints.push((i as f64 / n as f64, value.clone()));
    }
    DiscretePath::from_breakpoints(dim, breakpoints).unwrap()
}

/// Replaces every breakpoint strictly after `stop` with fresh random values.
fn perturb_after(path: &DiscretePath, stop: f64, key: &SampleKey) -> DiscretePath {
    let dim = path.dim();
    let mut counter = 0u64;
    let breakpoints = path
        .iter_rows()
        .map(|(t, row)| {
            if t > stop {
                let mut fresh = vec![0.0; dim];
                for f in fresh.iter_mut() {
                    *f = row[0] + 1.0 + standard_normal(key, counter);
                    counter += 1;
                }
                (t, fresh)
            } else {
                (t, row.to_vec())
            }
        })
        .collect();
    DiscretePath::from_breakpoints(dim, breakpoints).unwrap()
}

/// Evaluates each functional on probe paths and on the same paths perturbed
/// strictly after the stop time; any discrepancy is anticipative behaviour.
pub fn check_non_anticipative(
    cs: &CoefficientSet,
    probes: usize,
    seed: u64,
) -> NonAnticipativityReport {
    let d = cs.dim_x();
    let l = cs.dim_w();
    let mut report = NonAnticipativityReport {
        probes,
        ..Default::default()
    };
    let root = SampleKey::new(seed);
    let mut b0 = vec![0.0; d];
    let mut b1 = vec![0.0; d];
    let mut s0 = vec![0.0; d * l];
    let mut s1 = vec![0.0; d * l];
    for p in 0..probes {
        let key = root.child(p as u64);
        let path = probe_path(&key.child(0), d, 8);
        // stop strictly inside so there is something to perturb
        let stop = 0.125 + 0.75 * uniform(&key.child(1), 0);
        let perturbed = perturb_after(&path, stop, &key.child(2));
        let y = standard_normal(&key.child(3), 0);
        let z: Vec<f64> = (0..l)
            .map(|k| standard_normal(&key.child(3), 1 + k as u64))
            .collect();

        let va = path.stopped(stop);
        let vb = perturbed.stopped(stop);
        cs.drift_into(stop, &va, &mut b0);
        cs.drift_into(stop, &vb, &mut b1);
        report.drift = report.drift.max(max_abs_diff(&b0, &b1));
        cs.diffusion_into(stop, &va, &mut s0);
        cs.diffusion_into(stop, &vb, &mut s1);
        report.diffusion = report.diffusion.max(max_abs_diff(&s0, &s1));
        let f0 = cs.driver(stop, &va, y, &z);
        let f1 = cs.driver(stop, &vb, y, &z);
        report.driver = report.driver.max((f0 - f1).abs());
    }
    report
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Empirical Lipschitz ratios per functional against the declared constant.
#[derive(Debug, Clone, Default)]
pub struct LipschitzReport {
    pub drift: f64,
    pub diffusion: f64,
    pub driver: f64,
    pub terminal: f64,
    pub declared: f64,
    pub probes: usize,
}

impl LipschitzReport {
    pub fn max_ratio(&self) -> f64 {
        self.drift
            .max(self.diffusion)
            .max(self.driver)
            .max(self.terminal)
    }

    pub fn passes(&self) -> bool {
        self.max_ratio() <= self.declared * (1.0 + 1e-9)
    }
}

/// Samples random probe pairs and reports the largest empirical ratio
/// `|phi(s, omega) - phi(s', omega')| / (sqrt|s - s'| + ||omega_s - omega'_{s'}||_inf [+ |dy| + |dz|])`.
pub fn check_lipschitz(cs: &CoefficientSet, probes: usize, seed: u64) -> LipschitzReport {
    let d = cs.dim_x();
    let l = cs.dim_w();
    let mut report = LipschitzReport {
        declared: cs.lipschitz,
        probes,
        ..Default::default()
    };
    let root = SampleKey::new(seed ^ 0x4c69_7073);
    let mut b0 = vec![0.0; d];
    let mut b1 = vec![0.0; d];
    let mut s0 = vec![0.0; d * l];
    let mut s1 = vec![0.0; d * l];
    for p in 0..probes {
        let key = root.child(p as u64);
        let pa = probe_path(&key.child(0), d, 8);
        // second path: sometimes an independent draw, sometimes a small bump
        // of the first (small separations probe the local slope)
        let pb = if p % 2 == 0 {
            probe_path(&key.child(1), d, 8)
        } else {
            let eps = 0.05 * (1.0 + standard_normal(&key.child(1), 0).abs());
            let bumped = pa
                .iter_rows()
                .map(|(t, row)| (t, row.iter().map(|v| v + eps).collect()))
                .collect();
            DiscretePath::from_breakpoints(d, bumped).unwrap()
        };
        let sa = uniform(&key.child(2), 0);
        let sb = if p % 3 == 0 {
            sa
        } else {
            uniform(&key.child(2), 1)
        };
        let (ya, yb) = (
            standard_normal(&key.child(3), 0),
            standard_normal(&key.child(3), 1),
        );
        let za: Vec<f64> = (0..l)
            .map(|k| standard_normal(&key.child(4), k as u64))
            .collect();
        let zb: Vec<f64> = (0..l)
            .map(|k| standard_normal(&key.child(4), (l + k) as u64))
            .collect();

        let va = pa.stopped(sa);
        let vb = pb.stopped(sb);
        let path_dist = crate::path::d_infinity(&va, &vb) - (sa - sb).abs();
        let time_term = (sa - sb).abs().sqrt();
        let base = time_term + path_dist;

        if base > 1e-9 {
            cs.drift_into(sa, &va, &mut b0);
            cs.drift_into(sb, &vb, &mut b1);
            report.drift = report.drift.max(euclid_diff(&b0, &b1) / base);
            cs.diffusion_into(sa, &va, &mut s0);
            cs.diffusion_into(sb, &vb, &mut s1);
            report.diffusion = report.diffusion.max(euclid_diff(&s0, &s1) / base);
        }
        let dy = (ya - yb).abs();
        let dz = euclid_diff(&za, &zb);
        let driver_base = base + dy + dz;
        if driver_base > 1e-9 {
            let f0 = cs.driver(sa, &va, ya, &za);
            let f1 = cs.driver(sb, &vb, yb, &zb);
            report.driver = report.driver.max((f0 - f1).abs() / driver_base);
        }
        // terminal condition: plain sup-norm Lipschitz bound on whole paths
        let gdist = crate::path::d_infinity(&pa.stopped(f64::MAX), &pb.stopped(f64::MAX));
        if gdist > 1e-9 {
            let g0 = cs.terminal(&pa);
            let g1 = cs.terminal(&pb);
            report.terminal = report.terminal.max((g0 - g1).abs() / gdist);
        }
    }
    report
}

fn euclid_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zoo_lookup_and_unknown_name() {
        for name in PROBLEM_NAMES {
            assert!(problem_zoo(name).is_ok(), "{name} should be registered");
        }
        let msg = match problem_zoo("no-such-problem") {
            Ok(_) => panic!("lookup should fail"),
            Err(e) => e.to_string(),
        };
        assert!(msg.contains("no-such-problem"));
        assert!(msg.contains("bm-terminal"), "error lists registered names");
    }

    #[test]
    fn bm_terminal_g_reads_terminal_value() {
        let p = problem_zoo("bm-terminal").unwrap();
        let path = DiscretePath::new(
            1,
            vec![(0.0, vec![0.0])],
            &[0.5, 1.0],
            vec![vec![0.4], vec![1.7]],
        )
        .unwrap();
        assert_eq!(p.coefficients.terminal(&path), 1.7);
    }

    #[test]
    fn abm_linear_reference_at_start() {
        let p = problem_zoo("abm-linear").unwrap();
        let zero = DiscretePath::constant(vec![0.0]).unwrap();
        let y0 = p.reference.value_at(0.0, &zero).unwrap();
        assert!((y0 - 0.5).abs() < 1e-15);
        assert_eq!(p.reference.z_at(0.0, &zero).unwrap(), vec![2.0]);
    }

    #[test]
    fn lookback_reference_is_oracle() {
        let p = problem_zoo("bm-lookback").unwrap();
        assert!(!p.reference.is_exact());
        let zero = DiscretePath::constant(vec![0.0]).unwrap();
        assert!(p.reference.value_at(0.0, &zero).is_none());
        // g picks up history maxima
        let path = DiscretePath::new(
            1,
            vec![(0.0, vec![0.0]), (0.2, vec![2.5])],
            &[0.5, 1.0],
            vec![vec![1.0], vec![0.3]],
        )
        .unwrap();
        assert_eq!(p.coefficients.terminal(&path), 2.5);
    }

    #[test]
    fn zoo_is_non_anticipative() {
        for name in PROBLEM_NAMES {
            let p = problem_zoo(name).unwrap();
            let report = check_non_anticipative(&p.coefficients, 64, 17);
            assert!(
                report.passes(),
                "{name}: max discrepancy {}",
                report.max_discrepancy()
            );
            assert_eq!(report.max_discrepancy(), 0.0, "{name}");
        }
    }

    #[test]
    fn adversarial_peeker_is_flagged() {
        // reads the unstopped path at T = 1 regardless of the stop time
        let cs = CoefficientSet::new(
            1,
            1,
            |_, view: &StoppedView<'_>, out: &mut [f64]| {
                out[0] = view.unstopped_value_at(1.0)[0];
            },
            unit_diffusion,
            zero_driver,
            terminal_value,
            1.0,
            1.0,
        );
        let report = check_non_anticipative(&cs, 64, 17);
        assert!(!report.passes());
        assert!(report.drift > 0.0);
        assert_eq!(report.diffusion, 0.0);
    }

    #[test]
    fn zoo_respects_declared_lipschitz() {
        for name in PROBLEM_NAMES {
            let p = problem_zoo(name).unwrap();
            let report = check_lipschitz(&p.coefficients, 256, 23);
            assert!(
                report.passes(),
                "{name}: max ratio {} > declared {}",
                report.max_ratio(),
                report.declared
            );
        }
    }

    #[test]
    fn constant_coefficients_have_zero_ratio() {
        let p = problem_zoo("bm-terminal").unwrap();
        let report = check_lipschitz(&p.coefficients, 128, 5);
        assert_eq!(report.drift, 0.0);
        assert_eq!(report.diffusion, 0.0);
    }

    #[test]
    fn discounted_driver_ratio_matches_rate() {
        let p = problem_zoo("discounted-terminal").unwrap();
        let report = check_lipschitz(&p.coefficients, 256, 7);
        // f = -r y: the empirical ratio over (y, z) probes is at most r
        assert!(report.driver <= params::DISCOUNT_R + 1e-12, "{}", report.driver);
        assert!(report.driver > 0.2, "probes should bite: {}", report.driver);
    }

    #[test]
    fn path_sigma_ratio_within_tanh_slope() {
        // Lipschitz constant of 0.1 tanh(sup |omega|) is 0.1; the probe
        // maximisation is the brute-force confirmation of that bound.
        let p = problem_zoo("path-sigma").unwrap();
        let report = check_lipschitz(&p.coefficients, 512, 31);
        assert!(report.diffusion <= 0.1 + 1e-12, "{}", report.diffusion);
        assert!(report.diffusion > 0.03, "probes should bite: {}", report.diffusion);
    }

    #[test]
    fn zero_path_bounds_hold() {
        // g(0) and sup_u |f(u, 0, 0, 0)| are finite and within declared C
        let zero = DiscretePath::constant(vec![0.0]).unwrap();
        for name in PROBLEM_NAMES {
            let p = problem_zoo(name).unwrap();
            let g0 = p.coefficients.terminal(&zero).abs();
            assert!(g0.is_finite() && g0 <= p.coefficients.zero_bound, "{name}");
            let view = zero.stopped(0.3);
            let f0 = p.coefficients.driver(0.3, &view, 0.0, &[0.0]).abs();
            assert!(f0.is_finite() && f0 <= p.coefficients.zero_bound, "{name}");
            let mut b = [0.0];
            let mut s = [0.0];
            p.coefficients.drift_into(0.3, &view, &mut b);
            p.coefficients.diffusion_into(0.3, &view, &mut s);
            assert!(
                b[0].abs() + s[0].abs() <= p.coefficients.zero_bound + 1e-12,
                "{name}"
            );
        }
    }
}
