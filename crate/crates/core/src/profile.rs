//! Time discretization and per-slot power profiles.
//!
//! A [`DemandProfile`] holds the average power (kW) drawn during each slot of a
//! [`TimeGrid`]. Every operation returns a fresh profile; nothing mutates in
//! place through the public surface.

use std::fmt::Write as _;
use std::io;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("profile length {got} does not match grid slot count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("profile value at slot {slot} is not finite ({value})")]
    NonFinite { slot: usize, value: f64 },
    #[error("profiles live on different grids")]
    GridMismatch,
    #[error("peak-to-average ratio undefined for non-positive mean {0}")]
    NonPositiveMean(f64),
}

/// Discretization of the scheduling horizon into equal slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon_hours: f64,
    resolution_hours: f64,
    slot_count: usize,
    circular: bool,
}

impl TimeGrid {
    pub const DAY_HOURS: f64 = 24.0;

    pub fn new(horizon_hours: f64, resolution_hours: f64, circular: bool) -> Result<Self, ProfileError> {
        if !(horizon_hours.is_finite() && horizon_hours > 0.0) {
            return Err(ProfileError::InvalidGrid(format!("horizon_hours must be positive, got {horizon_hours}")));
        }
        if !(resolution_hours.is_finite() && resolution_hours > 0.0) {
            return Err(ProfileError::InvalidGrid(format!(
                "resolution_hours must be positive, got {resolution_hours}"
            )));
        }
        let ratio = horizon_hours / resolution_hours;
        let slot_count = ratio.round();
        if ((slot_count - ratio) / ratio).abs() > 1e-9 {
            return Err(ProfileError::InvalidGrid(format!(
                "horizon {horizon_hours} h is not an integer multiple of resolution {resolution_hours} h"
            )));
        }
        if slot_count < 2.0 {
            return Err(ProfileError::InvalidGrid(format!("need at least 2 slots, got {slot_count}")));
        }
        Ok(Self { horizon_hours, resolution_hours, slot_count: slot_count as usize, circular })
    }

    /// Circular 24 h day at the given resolution.
    pub fn day(resolution_hours: f64) -> Result<Self, ProfileError> {
        Self::new(Self::DAY_HOURS, resolution_hours, true)
    }

    pub fn horizon_hours(&self) -> f64 {
        self.horizon_hours
    }

    pub fn resolution_hours(&self) -> f64 {
        self.resolution_hours
    }

    pub fn slot_count(&self) -> usize {
        self.slot_count
    }

    pub fn is_circular(&self) -> bool {
        self.circular
    }

    /// Start time of slot `slot`.
    pub fn slot_start(&self, slot: usize) -> f64 {
        slot as f64 * self.resolution_hours
    }

    /// Maps an arbitrary (possibly negative) slot index onto the grid.
    ///
    /// Returns `None` for out-of-range indices on a non-circular grid.
    pub fn wrap_index(&self, index: i64) -> Option<usize> {
        let n = self.slot_count as i64;
        if self.circular {
            Some(index.rem_euclid(n) as usize)
        } else if (0..n).contains(&index) {
            Some(index as usize)
        } else {
            None
        }
    }

    /// Spreads the interval `[start, end)` (hours) over the slots, returning
    /// `(slot, overlap_hours)` pairs. On a circular grid the interval wraps
    /// modulo the horizon as often as needed; on a linear grid the portion
    /// outside `[0, horizon)` is dropped.
    pub fn interval_overlaps(&self, start: f64, end: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if !(end > start) {
            return out;
        }
        let dt = self.resolution_hours;
        let first = (start / dt).floor() as i64;
        let last = (end / dt).ceil() as i64;
        for k in first..last {
            let lo = (k as f64 * dt).max(start);
            let hi = ((k + 1) as f64 * dt).min(end);
            if hi > lo {
                if let Some(slot) = self.wrap_index(k) {
                    out.push((slot, hi - lo));
                }
            }
        }
        out
    }
}

/// Per-slot power values in kW over one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl DemandProfile {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self, ProfileError> {
        if values.len() != grid.slot_count() {
            return Err(ProfileError::LengthMismatch { expected: grid.slot_count(), got: values.len() });
        }
        if let Some((slot, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ProfileError::NonFinite { slot, value });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self { grid, values: vec![0.0; grid.slot_count()] }
    }

    pub fn constant(grid: TimeGrid, kw: f64) -> Result<Self, ProfileError> {
        Self::new(grid, vec![kw; grid.slot_count()])
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Energy in kWh: sum of slot powers times the slot length.
    pub fn energy(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.resolution_hours()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Slot index of the maximum; ties resolve to the earliest slot.
    pub fn peak_slot(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Peak-to-average ratio.
    pub fn par(&self) -> Result<f64, ProfileError> {
        let mean = self.mean();
        if !(mean > 0.0) {
            return Err(ProfileError::NonPositiveMean(mean));
        }
        Ok(self.peak() / mean)
    }

    pub fn add(&self, other: &DemandProfile) -> Result<DemandProfile, ProfileError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DemandProfile) -> Result<DemandProfile, ProfileError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> DemandProfile {
        DemandProfile { grid: self.grid, values: self.values.iter().map(|v| v * k).collect() }
    }

    /// Largest absolute slot-wise difference.
    pub fn max_abs_diff(&self, other: &DemandProfile) -> Result<f64, ProfileError> {
        self.check_grid(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Inner product of slot values.
    pub fn dot(&self, other: &DemandProfile) -> Result<f64, ProfileError> {
        self.check_grid(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    /// Sums profiles sharing one grid; `None` for an empty iterator.
    pub fn sum<'a, I>(profiles: I) -> Result<Option<DemandProfile>, ProfileError>
    where
        I: IntoIterator<Item = &'a DemandProfile>,
    {
        let mut iter = profiles.into_iter();
        let Some(first) = iter.next() else { return Ok(None) };
        let mut values = first.values.clone();
        for p in iter {
            first.check_grid(p)?;
            for (acc, v) in values.iter_mut().zip(&p.values) {
                *acc += v;
            }
        }
        Ok(Some(DemandProfile { grid: first.grid, values }))
    }

    fn zip_with(&self, other: &DemandProfile, f: impl Fn(f64, f64) -> f64) -> Result<DemandProfile, ProfileError> {
        self.check_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(DemandProfile { grid: self.grid, values })
    }

    fn check_grid(&self, other: &DemandProfile) -> Result<(), ProfileError> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(ProfileError::GridMismatch)
        }
    }

    /// Renders the profile as CSV: `time_hours,value_kw`, time at slot start.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_hours,value_kw\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{}", format_sig(self.grid.slot_start(i)), format_sig(*v));
        }
        out
    }

    /// CSV with an extra `stderr_kw` column.
    pub fn to_csv_with_stderr(&self, stderr: &[f64]) -> Result<String, ProfileError> {
        if stderr.len() != self.values.len() {
            return Err(ProfileError::LengthMismatch { expected: self.values.len(), got: stderr.len() });
        }
        let mut out = String::from("time_hours,value_kw,stderr_kw\n");
        for (i, (v, se)) in self.values.iter().zip(stderr).enumerate() {
            let _ = writeln!(out, "{},{},{}", format_sig(self.grid.slot_start(i)), format_sig(*v), format_sig(*se));
        }
        Ok(out)
    }

    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }
}

/// Formats `x` with 6 significant digits, in the style of C's `%g`.
pub fn format_sig(x: f64) -> String {
    const DIGITS: i32 = 6;
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    // Round first so the exponent reflects carries like 999999.5 -> 1e6.
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..DIGITS).contains(&exp) {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
