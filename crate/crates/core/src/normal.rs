//! Standard normal distribution function.
//!
//! Backed by the `erfc` of the `libm` crate (the FreeBSD msun rational
//! approximations, accurate to about one ulp), which keeps the tails accurate
//! where `1 - Φ` would cancel catastrophically.

use std::f64::consts::SQRT_2;

/// Φ(z), the standard normal CDF.
pub fn cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// 1 − Φ(z) without cancellation.
pub fn sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

/// Φ(b) − Φ(a) for a ≤ b, evaluated on whichever tail avoids cancellation.
pub fn interval_mass(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    let mass = if a >= 0.0 {
        sf(a) - sf(b)
    } else if b <= 0.0 {
        cdf(b) - cdf(a)
    } else {
        1.0 - cdf(a) - sf(b)
    };
    mass.max(0.0)
}

/// Standard normal density.
pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// One standard normal draw by the Box–Muller transform.
pub fn sample<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    // u1 in (0, 1] keeps the logarithm finite
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
