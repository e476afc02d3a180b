//! Shared oracle helpers for the integration suites.

/// Standard normal density.
pub fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[max(floor, base + M)]` where `M = max_{[0, tau]} W` for a standard
/// Brownian motion, via Simpson quadrature against the reflection-principle
/// density `f_M(y) = 2 phi(y / sqrt(tau)) / sqrt(tau)` on `y >= 0`.
pub fn running_max_quadrature(floor: f64, base: f64, tau: f64) -> f64 {
    let s = tau.sqrt();
    let upper = 10.0 * s;
    let steps = 1 << 16; // even
    let h = upper / steps as f64;
    let integrand = |y: f64| -> f64 {
        let density = 2.0 * phi(y / s) / s;
        (base + y).max(floor) * density
    };
    let mut acc = integrand(0.0) + integrand(upper);
    for k in 1..steps {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * integrand(k as f64 * h);
    }
    acc * h / 3.0
}

#[allow(dead_code)]
/// Sanity: the reflection density integrates to one.
pub fn running_max_density_mass(tau: f64) -> f64 {
    let s = tau.sqrt();
    let upper = 10.0 * s;
    let steps = 1 << 16;
    let h = upper / steps as f64;
    let integrand = |y: f64| 2.0 * phi(y / s) / s;
    let mut acc = integrand(0.0) + integrand(upper);
    for k in 1..steps {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * integrand(k as f64 * h);
    }
    acc * h / 3.0
}
