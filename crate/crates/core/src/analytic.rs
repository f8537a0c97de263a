//! Expected uncoordinated charging demand of one EV.
//!
//! With arrival time `t0` and charging duration `T` independent, an EV draws
//! power `a` exactly when `t - T <= t0 <= t`, so
//!
//! ```text
//! E[x(t)] = a * (F_t0(t) - int_0^inf F_t0(t - s) f_T(s) ds)
//! ```
//!
//! which is `a * (F_t0 * (delta - f_T))(t)` as a convolution. Profiles are
//! first computed on a linear time axis wide enough to hold the whole process
//! and then folded onto the circular day.

use rayon::prelude::*;
use thiserror::Error;

use crate::distributions::{match_moments, DistError, Distribution, DistributionSpec, Family};
use crate::profile::{format_sig, DemandProfile, ProfileError, TimeGrid};
use crate::quadrature::{adaptive_simpson, QuadratureError};
use crate::special::{normal_pdf, q_function};

/// Absolute tolerance of the inner convolution integral.
const INNER_TOL: f64 = 1e-9;
/// Tail mass of `T` left out of the convolution integral.
const INNER_TAIL: f64 = 1e-12;
/// Arrival half-width of the extended axis, in standard deviations.
const ARRIVAL_SPAN_SD: f64 = 6.0;
/// Quantile of `T` added to the right end of the extended axis.
const CHARGING_SPAN_QUANTILE: f64 = 0.999;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("invalid charger model: {0}")]
    InvalidModel(String),
    #[error("convolution quadrature failed at t = {t} h: {source}")]
    Quadrature { t: f64, source: QuadratureError },
    #[error("extended axis does not align with the grid: {0}")]
    Misaligned(String),
    #[error("no unique interior maximum: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Distribution(#[from] DistError),
}

/// Constant-power charger with random arrival and charging time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargerModel {
    power_kw: f64,
    arrival: Distribution,
    charging_time: Distribution,
}

impl ChargerModel {
    pub fn new(
        power_kw: f64,
        arrival: DistributionSpec,
        charging_time: DistributionSpec,
    ) -> Result<Self, AnalyticError> {
        if !(power_kw.is_finite() && power_kw > 0.0) {
            return Err(AnalyticError::InvalidModel(format!("power must be positive, got {power_kw}")));
        }
        let arrival = Distribution::new(arrival)?;
        let charging_time = Distribution::new(charging_time)?;
        if charging_time.support_min() < 0.0 {
            return Err(AnalyticError::InvalidModel(format!(
                "charging time needs non-negative support, got {}",
                charging_time.spec()
            )));
        }
        Ok(Self { power_kw, arrival, charging_time })
    }

    pub fn power_kw(&self) -> f64 {
        self.power_kw
    }

    pub fn arrival(&self) -> &Distribution {
        &self.arrival
    }

    pub fn charging_time(&self) -> &Distribution {
        &self.charging_time
    }

    /// Energy per session for a given duration.
    pub fn session_energy(&self, duration_hours: f64) -> f64 {
        self.power_kw * duration_hours
    }

    /// Same charger with a different arrival law.
    pub fn with_arrival(&self, arrival: DistributionSpec) -> Result<Self, AnalyticError> {
        Self::new(self.power_kw, arrival, self.charging_time.spec())
    }

    /// Same charger with a different charging-time law.
    pub fn with_charging_time(&self, charging_time: DistributionSpec) -> Result<Self, AnalyticError> {
        Self::new(self.power_kw, self.arrival.spec(), charging_time)
    }

    fn charging_bounds(&self) -> (f64, f64) {
        (self.charging_time.support_min(), self.charging_time.tail_cutoff(INNER_TAIL))
    }
}

/// Expected power (kW) at time `t` on the linear axis.
pub fn expected_power_at(model: &ChargerModel, t: f64) -> Result<f64, AnalyticError> {
    let arrival = model.arrival();
    let charging = model.charging_time();
    let (lo, hi) = model.charging_bounds();
    let shifted = adaptive_simpson(|s| arrival.cdf(t - s) * charging.pdf(s), lo, hi, INNER_TOL)
        .map_err(|source| AnalyticError::Quadrature { t, source })?;
    let p = (arrival.cdf(t) - shifted).clamp(0.0, 1.0);
    Ok(model.power_kw() * p)
}

/// `a * P(t - T <= t0 <= t)` for a Gaussian arrival and uniform `T` on `[c, d)`, in closed form.
pub fn uniform_closed_form_at(power_kw: f64, mu: f64, sigma: f64, c: f64, d: f64, t: f64) -> f64 {
    let tp = (t - mu) / sigma;
    let cp = (t - c - mu) / sigma;
    let dp = (t - d - mu) / sigma;
    let bracket = cp * q_function(cp) - dp * q_function(dp) + normal_pdf(dp) - normal_pdf(cp) + dp - cp;
    power_kw * (1.0 - q_function(tp) + sigma / (d - c) * bracket)
}

/// Slot-averaged values on a linear axis of slots `start_index, start_index + 1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedProfile {
    start_index: i64,
    resolution_hours: f64,
    values: Vec<f64>,
}

impl ExtendedProfile {
    /// `start_hours` must be an integer multiple of `resolution_hours`.
    pub fn new(start_hours: f64, resolution_hours: f64, values: Vec<f64>) -> Result<Self, AnalyticError> {
        if !(resolution_hours > 0.0) {
            return Err(AnalyticError::Misaligned(format!("resolution {resolution_hours} must be positive")));
        }
        let k = start_hours / resolution_hours;
        if (k - k.round()).abs() > 1e-9 * k.abs().max(1.0) {
            return Err(AnalyticError::Misaligned(format!(
                "start {start_hours} h is not a whole number of {resolution_hours} h slots"
            )));
        }
        Ok(Self { start_index: k.round() as i64, resolution_hours, values })
    }

    pub fn start_hours(&self) -> f64 {
        self.start_index as f64 * self.resolution_hours
    }

    pub fn resolution_hours(&self) -> f64 {
        self.resolution_hours
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self, i: usize) -> f64 {
        (self.start_index + i as i64) as f64 * self.resolution_hours
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.resolution_hours
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_hours,value_kw\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{}\n", format_sig(self.time(i)), format_sig(*v)));
        }
        out
    }
}

/// Folds a linear-axis profile onto the grid by summing slots congruent modulo the horizon.
pub fn wrap_mod24(extended: &ExtendedProfile, grid: &TimeGrid) -> Result<DemandProfile, AnalyticError> {
    let res = grid.resolution_hours();
    if ((extended.resolution_hours - res) / res).abs() > 1e-9 {
        return Err(AnalyticError::Misaligned(format!(
            "extended resolution {} h differs from grid resolution {res} h",
            extended.resolution_hours
        )));
    }
    let n = grid.slot_count() as i64;
    let mut values = vec![0.0; grid.slot_count()];
    for (i, v) in extended.values.iter().enumerate() {
        values[(extended.start_index + i as i64).rem_euclid(n) as usize] += v;
    }
    Ok(DemandProfile::new(*grid, values)?)
}

/// Longest linear time axis evaluated before folding.
const MAX_EXTENDED_SLOTS: i64 = 1 << 20;

/// Slot range `[first, last)` of the extended axis for `model` at resolution `res`.
fn extended_slots(model: &ChargerModel, res: f64) -> Result<(i64, i64), AnalyticError> {
    let (mean, var) = model.arrival().moments();
    let sd = var.sqrt();
    let q = model.charging_time().quantile(CHARGING_SPAN_QUANTILE)?;
    let first = ((mean - ARRIVAL_SPAN_SD * sd) / res).floor();
    let last = ((mean + ARRIVAL_SPAN_SD * sd + q) / res).ceil();
    if !(last - first <= MAX_EXTENDED_SLOTS as f64) {
        return Err(AnalyticError::Degenerate(format!(
            "time axis of {} slots exceeds the limit of {MAX_EXTENDED_SLOTS}; the arrival or charging law is too wide",
            last - first
        )));
    }
    let (first, last) = (first as i64, last as i64);
    Ok((first, last.max(first + 3)))
}

/// Slot averages of a pointwise curve by Simpson's rule on each slot.
fn slot_averages<F>(first: i64, last: i64, res: f64, f: F) -> Result<Vec<f64>, AnalyticError>
where
    F: Fn(f64) -> Result<f64, AnalyticError> + Sync,
{
    let half_slots = (2 * (last - first) + 1) as usize;
    let nodes: Vec<f64> =
        (0..half_slots).into_par_iter().map(|j| f((first as f64 + 0.5 * j as f64) * res)).collect::<Result<_, _>>()?;
    Ok((0..(last - first) as usize).map(|k| (nodes[2 * k] + 4.0 * nodes[2 * k + 1] + nodes[2 * k + 2]) / 6.0).collect())
}

/// Expected profile on the linear axis, before folding.
pub fn expected_profile_extended(
    model: &ChargerModel,
    resolution_hours: f64,
) -> Result<ExtendedProfile, AnalyticError> {
    let (first, last) = extended_slots(model, resolution_hours)?;
    let values = slot_averages(first, last, resolution_hours, |t| expected_power_at(model, t))?;
    Ok(ExtendedProfile { start_index: first, resolution_hours, values })
}

/// Expected daily demand of one EV, folded onto `grid`.
pub fn expected_profile(model: &ChargerModel, grid: &TimeGrid) -> Result<DemandProfile, AnalyticError> {
    wrap_mod24(&expected_profile_extended(model, grid.resolution_hours())?, grid)
}

/// Closed-form counterpart of [`expected_profile`] for Gaussian arrivals and
/// uniform charging time, sampled on the same extended axis.
pub fn expected_profile_uniform_closed_form(
    power_kw: f64,
    mu: f64,
    sigma: f64,
    c: f64,
    d: f64,
    grid: &TimeGrid,
) -> Result<DemandProfile, AnalyticError> {
    let model =
        ChargerModel::new(power_kw, DistributionSpec::Gaussian { mu, sigma }, DistributionSpec::Uniform { c, d })?;
    let res = grid.resolution_hours();
    let (first, last) = extended_slots(&model, res)?;
    let values = slot_averages(first, last, res, |t| Ok(uniform_closed_form_at(power_kw, mu, sigma, c, d, t)))?;
    wrap_mod24(&ExtendedProfile { start_index: first, resolution_hours: res, values }, grid)
}

/// Location of the expected demand peak on the unwrapped axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakTime {
    /// Refined peak time (hours, linear axis).
    pub t_max: f64,
    /// Grid point with the largest expected power.
    pub grid_argmax: f64,
    pub peak_kw: f64,
    /// `f_t0(t) - (f_t0 * f_T)(t)` at `t_max`; zero at a stationary point.
    pub residual: f64,
    pub tolerance: f64,
}

impl PeakTime {
    pub fn verified(&self) -> bool {
        self.residual.abs() <= self.tolerance
    }
}

/// Residual of the stationarity condition `f_t0(t) = (f_t0 * f_T)(t)`.
pub fn peak_condition_residual(model: &ChargerModel, t: f64) -> Result<f64, AnalyticError> {
    let arrival = model.arrival();
    let charging = model.charging_time();
    let (lo, hi) = model.charging_bounds();
    let conv = adaptive_simpson(|s| arrival.pdf(t - s) * charging.pdf(s), lo, hi, 1e-12)
        .map_err(|source| AnalyticError::Quadrature { t, source })?;
    Ok(arrival.pdf(t) - conv)
}

/// Grid argmax of the expected power (earliest on ties), refined by a local
/// quadratic fit, then checked against the stationarity condition.
///
/// The tolerance is the residual slope times a tenth of a slot.
pub fn peak_time(model: &ChargerModel, grid: &TimeGrid) -> Result<PeakTime, AnalyticError> {
    let res = grid.resolution_hours();
    let (first, last) = extended_slots(model, res)?;
    let values: Vec<f64> =
        (first..=last).into_par_iter().map(|k| expected_power_at(model, k as f64 * res)).collect::<Result<_, _>>()?;
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi - lo <= 1e-12 * model.power_kw() {
        return Err(AnalyticError::Degenerate("expected profile is flat".into()));
    }
    if best == 0 || best == values.len() - 1 {
        return Err(AnalyticError::Degenerate("maximum sits on the edge of the time axis".into()));
    }
    let grid_argmax = (first + best as i64) as f64 * res;
    let (ym, y0, yp) = (values[best - 1], values[best], values[best + 1]);
    let curvature = ym - 2.0 * y0 + yp;
    let shift = if curvature < 0.0 { (0.5 * (ym - yp) / curvature).clamp(-0.5, 0.5) } else { 0.0 };
    let t_max = grid_argmax + shift * res;

    let residual = peak_condition_residual(model, t_max)?;
    let h = 0.01 * res;
    let slope = (peak_condition_residual(model, t_max + h)? - peak_condition_residual(model, t_max - h)?) / (2.0 * h);
    let tolerance = slope.abs() * 0.1 * res + 1e-12;
    Ok(PeakTime { t_max, grid_argmax, peak_kw: y0, residual, tolerance })
}

/// Expected profile of each charging-time family moment-matched to the same
/// mean and variance (the exponential law matches the mean only).
#[derive(Debug, Clone)]
pub struct FamilyCurve {
    pub family: Family,
    pub spec: DistributionSpec,
    pub profile: DemandProfile,
}

pub const COMPARED_FAMILIES: [Family; 4] =
    [Family::Uniform, Family::Exponential, Family::TruncatedGaussian, Family::Rician];

pub fn family_curves(
    power_kw: f64,
    arrival: DistributionSpec,
    mean: f64,
    variance: f64,
    grid: &TimeGrid,
) -> Result<Vec<FamilyCurve>, AnalyticError> {
    COMPARED_FAMILIES
        .iter()
        .map(|&family| {
            let spec = match_moments(family, mean, variance)?.spec;
            let model = ChargerModel::new(power_kw, arrival, spec)?;
            Ok(FamilyCurve { family, spec, profile: expected_profile(&model, grid)? })
        })
        .collect()
}
