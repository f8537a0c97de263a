//! Sampling of individual charging sessions and fleet-level Monte Carlo.
//!
//! Every draw comes from its own ChaCha stream keyed by `(seed, user, sample)`,
//! so results do not depend on thread count or evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::ChargerModel;
use crate::distributions::{DistError, Distribution, DistributionSpec};
use crate::profile::{DemandProfile, ProfileError, TimeGrid};

/// Accept-reject attempts allowed per session before giving up.
pub const SESSION_ATTEMPT_CAP: usize = 1_000_000;

/// Stream lane reserved for the departure-free draws of
/// [`empirical_expected_profile`].
const EMPIRICAL_LANE: u32 = u32::MAX;

const SAMPLES_PER_CHUNK: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid session: {0}")]
    InvalidSession(String),
    #[error("invalid fleet: {0}")]
    InvalidFleet(String),
    #[error(
        "user {user}: no feasible (arrival, duration, departure) triple in {attempts} attempts; \
         check the distribution configuration"
    )]
    Infeasible { user: usize, attempts: usize },
    #[error(transparent)]
    Distribution(#[from] DistError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// One vehicle's charging need for the day. Times are hours on the arrival
/// day's axis; `departure` may exceed 24 for next-morning departures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvSession {
    arrival: f64,
    duration: f64,
    departure: f64,
    energy_kwh: f64,
    p_max_kw: f64,
}

impl EvSession {
    pub fn new(
        arrival: f64,
        duration: f64,
        departure: f64,
        energy_kwh: f64,
        p_max_kw: f64,
    ) -> Result<Self, SamplingError> {
        let bad = |msg: String| Err(SamplingError::InvalidSession(msg));
        if ![arrival, duration, departure, energy_kwh, p_max_kw].iter().all(|v| v.is_finite()) {
            return bad("non-finite field".into());
        }
        if duration <= 0.0 {
            return bad(format!("duration must be positive, got {duration}"));
        }
        if p_max_kw <= 0.0 {
            return bad(format!("p_max must be positive, got {p_max_kw}"));
        }
        if energy_kwh < 0.0 {
            return bad(format!("energy must be non-negative, got {energy_kwh}"));
        }
        if departure < arrival + duration - 1e-12 {
            return bad(format!("departure {departure} precedes arrival {arrival} + duration {duration}"));
        }
        if energy_kwh > p_max_kw * (departure - arrival) * (1.0 + 1e-12) {
            return bad(format!(
                "{energy_kwh} kWh cannot be delivered at {p_max_kw} kW within {} h",
                departure - arrival
            ));
        }
        Ok(Self { arrival, duration, departure, energy_kwh, p_max_kw })
    }

    /// Session charging at the model's constant power for `duration` hours.
    pub fn from_model(
        model: &ChargerModel,
        arrival: f64,
        duration: f64,
        departure: f64,
        p_max_kw: f64,
    ) -> Result<Self, SamplingError> {
        Self::new(arrival, duration, departure, model.session_energy(duration), p_max_kw)
    }

    pub fn arrival(&self) -> f64 {
        self.arrival
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn departure(&self) -> f64 {
        self.departure
    }

    pub fn energy_kwh(&self) -> f64 {
        self.energy_kwh
    }

    pub fn p_max_kw(&self) -> f64 {
        self.p_max_kw
    }

    /// Fraction of each slot that lies inside the plug-in window
    /// `[arrival, departure)`, folded onto the grid and capped at 1.
    pub fn window_fractions(&self, grid: &TimeGrid) -> Vec<f64> {
        let mut frac = vec![0.0; grid.slot_count()];
        for (slot, overlap) in grid.interval_overlaps(self.arrival, self.departure) {
            frac[slot] += overlap / grid.resolution_hours();
        }
        frac.iter_mut().for_each(|f| *f = f.min(1.0));
        frac
    }
}

/// Population whose sessions are drawn independently per user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FleetSpec {
    n_users: usize,
    charger: ChargerModel,
    departure: Distribution,
    seed: u64,
    p_max_kw: f64,
}

impl FleetSpec {
    /// `p_max_kw` defaults to the charger power.
    pub fn new(
        n_users: usize,
        charger: ChargerModel,
        departure: DistributionSpec,
        seed: u64,
        p_max_kw: Option<f64>,
    ) -> Result<Self, SamplingError> {
        if n_users == 0 {
            return Err(SamplingError::InvalidFleet("need at least one user".into()));
        }
        let p_max_kw = p_max_kw.unwrap_or(charger.power_kw());
        if !(p_max_kw >= charger.power_kw()) {
            return Err(SamplingError::InvalidFleet(format!(
                "p_max {p_max_kw} kW is below the charger power {} kW",
                charger.power_kw()
            )));
        }
        Ok(Self { n_users, charger, departure: Distribution::new(departure)?, seed, p_max_kw })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn charger(&self) -> &ChargerModel {
        &self.charger
    }

    pub fn departure(&self) -> &Distribution {
        &self.departure
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn p_max_kw(&self) -> f64 {
        self.p_max_kw
    }
}

/// Deterministic random stream for `(seed, user_index, sample_index)`.
pub fn stream_rng(seed: u64, user_index: u32, sample_index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(user_index) << 32) | u64::from(sample_index));
    rng
}

/// Draws arrival, duration and departure until the vehicle can finish
/// charging before it leaves. Departures whose clock time precedes the
/// arrival are read as the next day.
pub fn sample_session(fleet: &FleetSpec, user_index: usize, rng: &mut ChaCha8Rng) -> Result<EvSession, SamplingError> {
    let charger = fleet.charger();
    let day = TimeGrid::DAY_HOURS;
    for _ in 0..SESSION_ATTEMPT_CAP {
        let arrival = charger.arrival().sample(rng)?;
        let duration = charger.charging_time().sample(rng)?;
        let mut departure = fleet.departure().sample(rng)?;
        if departure < arrival {
            departure += day;
        }
        if duration > 0.0 && departure >= arrival + duration {
            return EvSession::from_model(charger, arrival, duration, departure, fleet.p_max_kw());
        }
    }
    Err(SamplingError::Infeasible { user: user_index, attempts: SESSION_ATTEMPT_CAP })
}

/// One feasible session per user, each from its own stream.
pub fn sample_fleet(fleet: &FleetSpec) -> Result<Vec<EvSession>, SamplingError> {
    (0..fleet.n_users())
        .into_par_iter()
        .map(|user| {
            let mut rng = stream_rng(fleet.seed(), user as u32, 0);
            sample_session(fleet, user, &mut rng)
        })
        .collect()
}

/// Constant `power_kw` over `[arrival, arrival + duration)`, folded onto the
/// grid with partial slots weighted by their overlap.
pub fn realize_demand(session: &EvSession, power_kw: f64, grid: &TimeGrid) -> Result<DemandProfile, SamplingError> {
    let mut values = vec![0.0; grid.slot_count()];
    add_realization(&mut values, session.arrival(), session.duration(), power_kw, grid);
    Ok(DemandProfile::new(*grid, values)?)
}

fn add_realization(values: &mut [f64], start: f64, duration: f64, power_kw: f64, grid: &TimeGrid) {
    let dt = grid.resolution_hours();
    for (slot, overlap) in grid.interval_overlaps(start, start + duration) {
        values[slot] += power_kw * overlap / dt;
    }
}

/// Sample mean of many single-EV realizations with its per-slot standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalProfile {
    pub mean: DemandProfile,
    pub stderr: Vec<f64>,
    pub n_samples: usize,
}

impl EmpiricalProfile {
    pub fn to_csv(&self) -> String {
        self.mean.to_csv_with_stderr(&self.stderr).expect("stderr has one entry per slot")
    }
}

/// Monte Carlo estimate of the expected single-EV profile, drawing
/// `(arrival, duration)` only; there is no departure constraint here.
pub fn empirical_expected_profile(
    fleet: &FleetSpec,
    n_samples: usize,
    grid: &TimeGrid,
) -> Result<EmpiricalProfile, SamplingError> {
    if n_samples == 0 {
        return Err(SamplingError::InvalidFleet("need at least one sample".into()));
    }
    let charger = *fleet.charger();
    let seed = fleet.seed();
    let slots = grid.slot_count();
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..n_samples.div_ceil(SAMPLES_PER_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut sum = vec![0.0; slots];
            let mut sumsq = vec![0.0; slots];
            let mut scratch = vec![0.0; slots];
            let lo = chunk * SAMPLES_PER_CHUNK;
            let hi = (lo + SAMPLES_PER_CHUNK).min(n_samples);
            for s in lo..hi {
                let mut rng = stream_rng(seed, EMPIRICAL_LANE, s as u32);
                let arrival = charger.arrival().sample(&mut rng)?;
                let duration = charger.charging_time().sample(&mut rng)?;
                scratch.iter_mut().for_each(|v| *v = 0.0);
                add_realization(&mut scratch, arrival, duration, charger.power_kw(), grid);
                for ((a, q), v) in sum.iter_mut().zip(sumsq.iter_mut()).zip(&scratch) {
                    *a += v;
                    *q += v * v;
                }
            }
            Ok((sum, sumsq))
        })
        .collect::<Result<_, SamplingError>>()?;

    // Combine in chunk order.
    let mut sum = vec![0.0; slots];
    let mut sumsq = vec![0.0; slots];
    for (s, q) in &chunks {
        for i in 0..slots {
            sum[i] += s[i];
            sumsq[i] += q[i];
        }
    }
    let n = n_samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr = if n_samples == 1 {
        vec![0.0; slots]
    } else {
        mean.iter().zip(&sumsq).map(|(m, q)| ((q - n * m * m).max(0.0) / (n - 1.0) / n).sqrt()).collect()
    };
    Ok(EmpiricalProfile { mean: DemandProfile::new(*grid, mean)?, stderr, n_samples })
}
