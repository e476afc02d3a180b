//! Experiment harness: convergence sweeps over `(|pi|, m, N)`, log-log rate
//! fitting, CSV persistence and run manifests.

use crate::coeff::{problem_zoo, ReferenceSolution};
use crate::grid::TimeGrid;
use crate::path::DiscretePath;
use crate::picard::{solve_implicit, solve_picard, EstimatorConfig, EstimatorKind, SchemeConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

/// Where the per-cell reference value comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// The zoo problem's closed-form solution at `(t_0, history)`.
    ClosedForm,
    /// A value produced offline by an oracle (quadrature, fine-grid MC).
    Oracle(f64),
    /// The implicit backward scheme at the same `n` (isolates the Picard
    /// factor from the mesh floor).
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Picard,
    Implicit,
}

fn default_solver() -> SolverKind {
    SolverKind::Picard
}

fn default_reuse() -> bool {
    true
}

/// One sweep: a problem, grids, iteration counts, sampling budget, and the
/// reference against which squared errors are recorded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub problem: String,
    pub n_values: Vec<usize>,
    pub m_values: Vec<usize>,
    pub n_outer: usize,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    pub seed: u64,
    pub reference: ReferenceMode,
    #[serde(default = "default_solver")]
    pub solver: SolverKind,
    #[serde(default = "default_reuse")]
    pub reuse_paths: bool,
    #[serde(default)]
    pub antithetic: bool,
    /// Optional frozen past; grids start where it ends.
    #[serde(default)]
    pub history: Option<DiscretePath>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.m_values.is_empty() {
            return Err(Error::InvalidConfig(
                "n_values and m_values must be non-empty".into(),
            ));
        }
        let sorted = self.n_values.windows(2).all(|w| w[0] < w[1]);
        if !sorted {
            return Err(Error::InvalidConfig(
                "n_values must be distinct and sorted".into(),
            ));
        }
        Ok(())
    }
}

/// One experiment row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub problem: String,
    pub n: usize,
    pub mesh: f64,
    pub m: usize,
    pub n_outer: usize,
    pub estimator: String,
    pub seed: u64,
    pub y0: f64,
    pub y0_stderr: f64,
    pub z0: Vec<f64>,
    pub reference: f64,
    pub sq_err: f64,
    pub wall_ms: f64,
    /// Per-cell failure; the sweep continues past it.
    pub error: Option<String>,
}

fn estimator_name(kind: EstimatorKind) -> &'static str {
    match kind {
        EstimatorKind::Regression => "regression",
        EstimatorKind::Nested => "nested",
    }
}

/// Executes one solver cell per `(n, m)` pair, in spec order. Per-cell
/// failures are recorded in the row; the sweep keeps going. Deterministic
/// given the spec (each cell is a pure function of its config and seed).
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<ConvergenceRecord>> {
    spec.validate()?;
    let problem = problem_zoo(&spec.problem)?;
    let cs = &problem.coefficients;
    let history = match &spec.history {
        Some(h) => DiscretePath::from_breakpoints(h.dim(), h.as_history())?,
        None => DiscretePath::constant(vec![0.0; cs.dim_x()])?,
    };
    let t_start = history.end_time();
    if t_start >= problem.horizon {
        return Err(Error::InvalidConfig(format!(
            "history ends at {t_start}, at or past the horizon {}",
            problem.horizon
        )));
    }

    let mut implicit_cache: HashMap<usize, Result<f64>> = HashMap::new();
    let mut records = Vec::with_capacity(spec.n_values.len() * spec.m_values.len());

    for &n in &spec.n_values {
        let grid = TimeGrid::uniform(t_start, problem.horizon, n)?;
        for &m in &spec.m_values {
            let config = SchemeConfig {
                grid: grid.clone(),
                iterations: m,
                n_outer: spec.n_outer,
                estimator: spec.estimator.clone(),
                seed: spec.seed,
                reuse_paths: spec.reuse_paths,
                antithetic: spec.antithetic,
            };
            let solved = match spec.solver {
                SolverKind::Picard => solve_picard(cs, &history, &grid, &config),
                SolverKind::Implicit => solve_implicit(cs, &history, &grid, &config),
            };
            let reference = match &spec.reference {
                ReferenceMode::ClosedForm => match &problem.reference {
                    ReferenceSolution::Exact { .. } => {
                        Ok(problem.reference.value_at(t_start, &history).unwrap())
                    }
                    ReferenceSolution::Oracle { note } => Err(Error::InvalidConfig(format!(
                        "problem '{}' has no closed form ({note}); supply an oracle value",
                        spec.problem
                    ))),
                },
                ReferenceMode::Oracle(v) => Ok(*v),
                ReferenceMode::Implicit => implicit_cache
                    .entry(n)
                    .or_insert_with(|| {
                        solve_implicit(cs, &history, &grid, &config).map(|r| r.y0)
                    })
                    .as_ref()
                    .map(|v| *v)
                    .map_err(|e| Error::InvalidConfig(format!("implicit reference failed: {e}"))),
            };

            let mut record = ConvergenceRecord {
                problem: spec.problem.clone(),
                n,
                mesh: grid.mesh(),
                m,
                n_outer: spec.n_outer,
                estimator: estimator_name(spec.estimator.kind).to_string(),
                seed: spec.seed,
                y0: f64::NAN,
                y0_stderr: f64::NAN,
                z0: vec![f64::NAN; cs.dim_w()],
                reference: f64::NAN,
                sq_err: f64::NAN,
                wall_ms: f64::NAN,
                error: None,
            };
            match (solved, reference) {
                (Ok(result), Ok(reference)) => {
                    record.y0 = result.y0;
                    record.y0_stderr = result.y0_stderr;
                    record.z0 = result.z0;
                    record.reference = reference;
                    record.sq_err = (result.y0 - reference).powi(2);
                    record.wall_ms = result.wall_ms;
                }
                (Err(e), _) => record.error = Some(e.to_string()),
                (_, Err(e)) => record.error = Some(e.to_string()),
            }
            records.push(record);
        }
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// CSV persistence
// ---------------------------------------------------------------------------

/// Fixed schema: `problem,n,mesh,m,N,estimator,seed,y0,y0_stderr,z0_0,...,ref,sq_err,wall_ms`.
/// Floats print in shortest round-trip form, so a written cell re-reads
/// bit-exactly.
pub fn write_records_csv(records: &[ConvergenceRecord], path: &Path) -> Result<()> {
    let dim_w = records.first().map(|r| r.z0.len()).unwrap_or(1);
    let mut out = String::new();
    out.push_str("problem,n,mesh,m,N,estimator,seed,y0,y0_stderr");
    for k in 0..dim_w {
        out.push_str(&format!(",z0_{k}"));
    }
    out.push_str(",ref,sq_err,wall_ms\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}",
            r.problem, r.n, r.mesh, r.m, r.n_outer, r.estimator, r.seed, r.y0, r.y0_stderr
        ));
        for k in 0..dim_w {
            out.push_str(&format!(",{}", r.z0.get(k).copied().unwrap_or(f64::NAN)));
        }
        out.push_str(&format!(",{},{},{}\n", r.reference, r.sq_err, r.wall_ms));
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<ConvergenceRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig("empty records file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let z_count = cols.iter().filter(|c| c.starts_with("z0_")).count();
    let expected = 9 + z_count + 3;
    if cols.len() != expected {
        return Err(Error::InvalidConfig(format!(
            "unexpected header '{header}'"
        )));
    }
    let parse_f = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::InvalidConfig(format!("bad float '{s}'")))
    };
    let mut records = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != expected {
            return Err(Error::InvalidConfig(format!("bad row '{line}'")));
        }
        let mut z0 = Vec::with_capacity(z_count);
        for k in 0..z_count {
            z0.push(parse_f(f[9 + k])?);
        }
        records.push(ConvergenceRecord {
            problem: f[0].to_string(),
            n: f[1]
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad n '{}'", f[1])))?,
            mesh: parse_f(f[2])?,
            m: f[3]
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad m '{}'", f[3])))?,
            n_outer: f[4]
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad N '{}'", f[4])))?,
            estimator: f[5].to_string(),
            seed: f[6]
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad seed '{}'", f[6])))?,
            y0: parse_f(f[7])?,
            y0_stderr: parse_f(f[8])?,
            z0,
            reference: parse_f(f[9 + z_count])?,
            sq_err: parse_f(f[10 + z_count])?,
            wall_ms: parse_f(f[11 + z_count])?,
            error: None,
        });
    }
    Ok(records)
}

/// Sweep manifest: the spec, the seed, and build provenance.
pub fn write_manifest(spec: &SweepSpec, out_dir: &Path) -> Result<()> {
    let git_hash = std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into());
    let manifest = serde_json::json!({
        "spec": spec,
        "seed": spec.seed,
        "git_hash": git_hash,
        "created_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Rate fitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitAxis {
    /// log squared error against log mesh, at the largest m (converged
    /// Picard).
    Mesh,
    /// log squared error against m, at the largest n; the plateau at the
    /// noise floor is excluded.
    Picard,
}

/// Ordinary-least-squares fit of the error decay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFit {
    pub axis: FitAxis,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Normal-approximation 95% half-width on the slope.
    pub slope_ci95: f64,
    /// The fitted `(x, log sq_err)` points.
    pub points: Vec<(f64, f64)>,
}

/// Fits the requested axis over the usable records. Row order does not
/// matter; cells with failures or non-finite errors are skipped. On the
/// Picard axis, cells indistinguishable from the noise floor (within a
/// factor 2 of the smallest error) are dropped before fitting.
pub fn fit_rate(records: &[ConvergenceRecord], axis: FitAxis) -> Result<RateFit> {
    let usable: Vec<&ConvergenceRecord> = records
        .iter()
        .filter(|r| r.error.is_none() && r.sq_err.is_finite() && r.sq_err > 0.0)
        .collect();
    if usable.is_empty() {
        return Err(Error::RateFit("no usable records".into()));
    }
    let mut points: Vec<(f64, f64)> = match axis {
        FitAxis::Mesh => {
            let m_max = usable.iter().map(|r| r.m).max().unwrap();
            usable
                .iter()
                .filter(|r| r.m == m_max)
                .map(|r| (r.mesh.ln(), r.sq_err.ln()))
                .collect()
        }
        FitAxis::Picard => {
            let n_max = usable.iter().map(|r| r.n).max().unwrap();
            let at_n: Vec<&&ConvergenceRecord> = usable
                .iter()
                .filter(|r| r.n == n_max && r.m >= 1)
                .collect();
            let floor = at_n
                .iter()
                .map(|r| r.sq_err)
                .fold(f64::INFINITY, f64::min);
            at_n.iter()
                .filter(|r| r.sq_err > 2.0 * floor || at_n.len() <= 3)
                .map(|r| (r.m as f64, r.sq_err.ln()))
                .collect()
        }
    };
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();
    if points.len() < 3 {
        return Err(Error::RateFit(format!(
            "need at least 3 usable points, have {}",
            points.len()
        )));
    }

    let k = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / k;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let syy: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::RateFit("degenerate x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    let dof = (points.len().saturating_sub(2)).max(1) as f64;
    let slope_se = (ss_res / dof / sxx).sqrt();
    if !slope.is_finite() {
        return Err(Error::RateFit("non-finite slope".into()));
    }
    Ok(RateFit {
        axis,
        slope,
        intercept,
        r_squared,
        slope_ci95: 1.96 * slope_se,
        points,
    })
}
