#![allow(dead_code)]

use evload_core::montecarlo::EvSession;
use evload_core::profile::TimeGrid;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Minimum of `cost . x` over `lower <= x <= upper`, `sum(x) = target`, by
/// enumerating every vertex: all coordinates at a bound except at most one.
pub fn lp_vertex_min(cost: &[f64], lower: &[f64], upper: &[f64], target: f64) -> Option<f64> {
    let n = cost.len();
    assert!(n <= 16);
    let mut best: Option<f64> = None;
    let mut consider = |x: &[f64]| {
        let value: f64 = x.iter().zip(cost).map(|(a, b)| a * b).sum();
        if best.is_none_or(|b| value < b) {
            best = Some(value);
        }
    };
    let slack = 1e-9 * (1.0 + target.abs());
    for mask in 0u32..(1 << n) {
        let x: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { upper[i] } else { lower[i] }).collect();
        if (x.iter().sum::<f64>() - target).abs() <= slack {
            consider(&x);
        }
        for free in 0..n {
            let rest: f64 = x.iter().enumerate().filter(|&(i, _)| i != free).map(|(_, v)| v).sum();
            let v = target - rest;
            if v >= lower[free] - slack && v <= upper[free] + slack {
                let mut y = x.clone();
                y[free] = v.clamp(lower[free], upper[free]);
                consider(&y);
            }
        }
    }
    best
}

/// Random schedulable session on `grid`, with energy a random share of the
/// window capacity.
pub fn random_session(rng: &mut ChaCha8Rng, grid: &TimeGrid) -> EvSession {
    let horizon = grid.horizon_hours();
    let dt = grid.resolution_hours();
    let aligned = rng.random_bool(0.5);
    let snap = |v: f64| if aligned { (v / dt).round() * dt } else { v };
    let arrival = snap(rng.random_range(0.0..horizon));
    let span = snap(rng.random_range(dt..=horizon)).max(dt);
    let departure = arrival + span;
    let p_max = rng.random_range(0.5..4.0);
    let limits: f64 = grid.interval_overlaps(arrival, departure).iter().map(|&(_, h)| h).sum::<f64>().min(span);
    let energy = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..=1.0) * p_max * limits * 0.999 };
    let duration = (energy / p_max).max(1e-6);
    EvSession::new(arrival, duration, departure, energy, p_max).unwrap()
}

/// Random costs; integer-valued half the time so ties occur.
pub fn random_costs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let ties = rng.random_bool(0.5);
    (0..n).map(|_| if ties { rng.random_range(0..4) as f64 } else { rng.random_range(-2.0..10.0) }).collect()
}
