//! Gaussian tail probability and modified Bessel functions of the first kind.

use std::f64::consts::{PI, SQRT_2};

/// Switch point between the power series and the asymptotic expansion.
const BESSEL_ASYMPTOTIC_FROM: f64 = 15.0;

/// Standard normal tail probability `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Standard normal cdf, `1 - Q(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    q_function(-x)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Modified Bessel function `I0`. Even in `x`, so negative inputs are mirrored.
pub fn bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    if x < BESSEL_ASYMPTOTIC_FROM {
        i0_series(x)
    } else {
        x.exp() * asymptotic_scaled(0.0, x)
    }
}

/// Exponentially scaled `I0`: `exp(-|x|) * I0(x)`. Finite for all finite `x`.
pub fn bessel_i0e(x: f64) -> f64 {
    let x = x.abs();
    if x < BESSEL_ASYMPTOTIC_FROM {
        i0_series(x) * (-x).exp()
    } else {
        asymptotic_scaled(0.0, x)
    }
}

/// Modified Bessel function `I1`. Odd in `x`.
pub fn bessel_i1(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax < BESSEL_ASYMPTOTIC_FROM { i1_series(ax) } else { ax.exp() * asymptotic_scaled(1.0, ax) };
    v.copysign(x)
}

/// Exponentially scaled `I1`: `exp(-|x|) * I1(x)`.
pub fn bessel_i1e(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax < BESSEL_ASYMPTOTIC_FROM { i1_series(ax) * (-ax).exp() } else { asymptotic_scaled(1.0, ax) };
    v.copysign(x)
}

fn i0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * k);
        sum += term;
        if term < 1e-17 * sum {
            return sum;
        }
    }
}

fn i1_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 0.5 * x;
    let mut sum = term;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * (k + 1.0));
        sum += term;
        if term <= 1e-17 * sum {
            return sum;
        }
    }
}

/// `exp(-x) I_order(x)` from the large-argument expansion
/// `e^x / sqrt(2 pi x) * sum_k (-1)^k prod_j (4 order^2 - (2j-1)^2) / (k! (8x)^k)`.
fn asymptotic_scaled(order: f64, x: f64) -> f64 {
    let mu = 4.0 * order * order;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        let j = f64::from(k);
        let next = -term * (mu - (2.0 * j - 1.0).powi(2)) / (j * 8.0 * x);
        // Asymptotic series: stop at the smallest term.
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum / (2.0 * PI * x).sqrt()
}
