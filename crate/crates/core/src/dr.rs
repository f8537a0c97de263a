//! Autonomous demand response.
//!
//! Each user picks the EV schedule with the smallest inner product against
//! the load it sees (its own inflexible load plus every other user's total),
//! subject to delivering its energy inside the plug-in window at no more than
//! `p_max`. The aggregator repeats these best responses until the aggregate
//! stops moving.

use thiserror::Error;

use crate::montecarlo::{realize_demand, EvSession, SamplingError};
use crate::profile::{DemandProfile, ProfileError, TimeGrid};

/// Energy tolerance (kWh) of the post-hoc feasibility check.
pub const ENERGY_TOL_KWH: f64 = 1e-9;
const BOX_TOL_KW: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DrError {
    #[error("session needs {needed_kwh} kWh but its window holds at most {capacity_kwh} kWh on this grid")]
    Infeasible { needed_kwh: f64, capacity_kwh: f64 },
    #[error("user {user}: {source}")]
    User { user: usize, source: Box<DrError> },
    #[error("schedule violates its constraints: {0}")]
    Violation(String),
    #[error("invalid demand response input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

impl DrError {
    fn for_user(self, user: usize) -> Self {
        DrError::User { user, source: Box::new(self) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateDiscipline {
    /// Users respond one after another against the latest aggregate.
    #[default]
    GaussSeidel,
    /// All users respond to the aggregate from the start of the sweep.
    Jacobi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrConfig {
    pub v2g_enabled: bool,
    pub max_iterations: usize,
    /// Stop once a sweep moves no aggregate slot by this much. `None` means
    /// 1e-3 times the mean of the starting aggregate.
    pub convergence_eps_kw: Option<f64>,
    /// Permutation of user indices; `None` is the identity.
    pub update_order: Option<Vec<usize>>,
    pub discipline: UpdateDiscipline,
}

impl Default for DrConfig {
    fn default() -> Self {
        Self {
            v2g_enabled: false,
            max_iterations: 50,
            convergence_eps_kw: None,
            update_order: None,
            discipline: UpdateDiscipline::GaussSeidel,
        }
    }
}

impl DrConfig {
    pub fn validate(&self) -> Result<(), DrError> {
        if self.max_iterations == 0 {
            return Err(DrError::InvalidInput("max_iterations must be at least 1".into()));
        }
        if let Some(eps) = self.convergence_eps_kw {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(DrError::InvalidInput(format!("convergence_eps_kw must be positive, got {eps}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrOutcome {
    /// Per-user EV schedules.
    pub schedules: Vec<DemandProfile>,
    /// Inflexible load plus EV schedules, summed over users.
    pub aggregate: DemandProfile,
    /// Aggregate under uncoordinated charging, the starting point.
    pub initial_aggregate: DemandProfile,
    /// Sweeps needed to reach the reported aggregate. A converged run also
    /// performs one confirming sweep, which is recorded in `trace` only.
    pub iterations_used: usize,
    pub converged: bool,
    pub par_before: f64,
    pub par_after: f64,
    pub peak_before_kw: f64,
    pub peak_after_kw: f64,
    /// Largest aggregate change (kW) of each sweep.
    pub trace: Vec<f64>,
    pub convergence_eps_kw: f64,
}

/// Charge at the charger power from arrival until the energy is delivered.
pub fn uncoordinated_schedule(session: &EvSession, power_kw: f64, grid: &TimeGrid) -> Result<DemandProfile, DrError> {
    Ok(realize_demand(session, power_kw, grid)?)
}

/// Per-slot power limit (kW): `p_max` scaled by how much of the slot the
/// vehicle is plugged in.
pub fn slot_limits(session: &EvSession, grid: &TimeGrid) -> Vec<f64> {
    session.window_fractions(grid).into_iter().map(|f| f * session.p_max_kw()).collect()
}

/// User objective: inner product of the EV schedule with the load it sees.
pub fn objective(schedule: &DemandProfile, others_load: &DemandProfile) -> Result<f64, DrError> {
    Ok(schedule.dot(others_load)?)
}

/// Exact minimizer of `<schedule, others_load>` over the feasible set.
///
/// Without V2G the cheapest in-window slots are filled to their limit until
/// the energy is placed (ties go to the earlier slot). With V2G, starting
/// from that solution, charge is moved into the cheapest slots with headroom
/// and matched by discharge from the most expensive ones while that lowers
/// the objective.
pub fn best_response(
    session: &EvSession,
    others_load: &DemandProfile,
    v2g: bool,
    grid: &TimeGrid,
) -> Result<DemandProfile, DrError> {
    if others_load.grid() != grid {
        return Err(ProfileError::GridMismatch.into());
    }
    let dt = grid.resolution_hours();
    let limits = slot_limits(session, grid);
    let capacity_kwh: f64 = limits.iter().sum::<f64>() * dt;
    let needed_kwh = session.energy_kwh();
    if needed_kwh > capacity_kwh * (1.0 + 1e-12) + 1e-12 {
        return Err(DrError::Infeasible { needed_kwh, capacity_kwh });
    }
    let cost = others_load.values();
    let mut cheap_first: Vec<usize> = (0..limits.len()).filter(|&t| limits[t] > 0.0).collect();
    cheap_first.sort_by(|&a, &b| cost[a].total_cmp(&cost[b]).then(a.cmp(&b)));

    let mut x = vec![0.0; limits.len()];
    let mut remaining = needed_kwh;
    for &t in &cheap_first {
        if remaining <= 0.0 {
            break;
        }
        let take = (limits[t] * dt).min(remaining);
        x[t] = take / dt;
        remaining -= take;
    }
    if remaining > 0.0 {
        // Round-off left a sliver; put it in the cheapest slot with headroom.
        if let Some(&t) = cheap_first.iter().find(|&&t| x[t] < limits[t]) {
            x[t] += remaining / dt;
        }
    }

    if v2g {
        let mut dear_first = cheap_first.clone();
        dear_first.sort_by(|&a, &b| cost[b].total_cmp(&cost[a]).then(a.cmp(&b)));
        let (mut i, mut j) = (0, 0);
        while i < cheap_first.len() && j < dear_first.len() {
            let (c, d) = (cheap_first[i], dear_first[j]);
            if !(cost[c] < cost[d]) {
                break;
            }
            let headroom = limits[c] - x[c];
            if headroom <= 0.0 {
                i += 1;
                continue;
            }
            let room = x[d] + limits[d];
            if room <= 0.0 {
                j += 1;
                continue;
            }
            let moved = headroom.min(room);
            x[c] += moved;
            x[d] -= moved;
            // Snap the exhausted side to its bound exactly.
            if moved == headroom {
                x[c] = limits[c];
                i += 1;
            }
            if moved == room {
                x[d] = -limits[d];
                j += 1;
            }
        }
    }
    Ok(DemandProfile::new(*grid, x)?)
}

/// Checks energy, power bounds and window support of one schedule.
pub fn check_schedule(
    schedule: &DemandProfile,
    session: &EvSession,
    v2g: bool,
    grid: &TimeGrid,
) -> Result<(), DrError> {
    let limits = slot_limits(session, grid);
    let energy = schedule.energy();
    if (energy - session.energy_kwh()).abs() > ENERGY_TOL_KWH {
        return Err(DrError::Violation(format!("delivers {energy} kWh instead of {}", session.energy_kwh())));
    }
    for (t, (&x, &limit)) in schedule.values().iter().zip(&limits).enumerate() {
        if limit == 0.0 && x != 0.0 {
            return Err(DrError::Violation(format!("slot {t} is outside the window but carries {x} kW")));
        }
        let lower = if v2g { -limit } else { 0.0 };
        if x < lower - BOX_TOL_KW || x > limit + BOX_TOL_KW {
            return Err(DrError::Violation(format!("slot {t} carries {x} kW outside [{lower}, {limit}]")));
        }
    }
    Ok(())
}

/// Iterated best responses from the uncoordinated starting point.
pub fn run_dr(
    sessions: &[EvSession],
    base_loads: &[DemandProfile],
    charger_power_kw: f64,
    cfg: &DrConfig,
    grid: &TimeGrid,
) -> Result<DrOutcome, DrError> {
    cfg.validate()?;
    let n = sessions.len();
    if n == 0 || base_loads.len() != n {
        return Err(DrError::InvalidInput(format!(
            "need one base load per session, got {} sessions and {} loads",
            n,
            base_loads.len()
        )));
    }
    if base_loads.iter().any(|b| b.grid() != grid) {
        return Err(ProfileError::GridMismatch.into());
    }
    let order: Vec<usize> = match &cfg.update_order {
        None => (0..n).collect(),
        Some(order) => {
            let mut seen = vec![false; n];
            for &u in order {
                if u >= n || std::mem::replace(&mut seen[u], true) {
                    return Err(DrError::InvalidInput("update_order must be a permutation of the users".into()));
                }
            }
            if order.len() != n {
                return Err(DrError::InvalidInput("update_order must be a permutation of the users".into()));
            }
            order.clone()
        }
    };

    let base_total = DemandProfile::sum(base_loads)?.expect("non-empty");
    let mut schedules = sessions
        .iter()
        .enumerate()
        .map(|(u, s)| uncoordinated_schedule(s, charger_power_kw, grid).map_err(|e| e.for_user(u)))
        .collect::<Result<Vec<_>, _>>()?;
    for (u, s) in sessions.iter().enumerate() {
        if slot_limits(s, grid).iter().sum::<f64>() * grid.resolution_hours() < s.energy_kwh() * (1.0 - 1e-12) {
            return Err(DrError::Infeasible {
                needed_kwh: s.energy_kwh(),
                capacity_kwh: slot_limits(s, grid).iter().sum::<f64>() * grid.resolution_hours(),
            }
            .for_user(u));
        }
    }

    let total = |schedules: &[DemandProfile]| -> Result<DemandProfile, DrError> {
        let ev = DemandProfile::sum(schedules)?.expect("non-empty");
        Ok(base_total.add(&ev)?)
    };
    let initial_aggregate = total(&schedules)?;
    let eps = cfg.convergence_eps_kw.unwrap_or_else(|| (1e-3 * initial_aggregate.mean().abs()).max(1e-12));

    let mut aggregate = initial_aggregate.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iterations {
        let start = aggregate.clone();
        match cfg.discipline {
            UpdateDiscipline::GaussSeidel => {
                for &u in &order {
                    let others = aggregate.sub(&schedules[u])?;
                    let next =
                        best_response(&sessions[u], &others, cfg.v2g_enabled, grid).map_err(|e| e.for_user(u))?;
                    aggregate = others.add(&next)?;
                    schedules[u] = next;
                }
            }
            UpdateDiscipline::Jacobi => {
                let next = order
                    .iter()
                    .map(|&u| {
                        let others = start.sub(&schedules[u])?;
                        best_response(&sessions[u], &others, cfg.v2g_enabled, grid).map_err(|e| e.for_user(u))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                for (&u, s) in order.iter().zip(next) {
                    schedules[u] = s;
                }
            }
        }
        // Rebuild from the parts.
        aggregate = total(&schedules)?;
        let change = aggregate.max_abs_diff(&start)?;
        trace.push(change);
        if change < eps {
            converged = true;
            break;
        }
    }

    Ok(DrOutcome {
        par_before: initial_aggregate.par()?,
        peak_before_kw: initial_aggregate.peak(),
        par_after: aggregate.par()?,
        peak_after_kw: aggregate.peak(),
        iterations_used: if converged { trace.len() - 1 } else { trace.len() },
        converged,
        trace,
        convergence_eps_kw: eps,
        schedules,
        aggregate,
        initial_aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3() -> TimeGrid {
        TimeGrid::new(3.0, 1.0, true).unwrap()
    }

    fn whole_day_session(grid: &TimeGrid, energy: f64, p_max: f64) -> EvSession {
        // Plugged in for the whole horizon; duration only has to be positive.
        let duration = (energy / p_max).max(1e-3);
        EvSession::new(0.0, duration, grid.horizon_hours(), energy, p_max).unwrap()
    }

    #[test]
    fn fills_cheapest_slots() {
        let g = grid3();
        let others = DemandProfile::new(g, vec![5.0, 1.0, 3.0]).unwrap();
        let s = whole_day_session(&g, 2.0, 1.0);
        let x = best_response(&s, &others, false, &g).unwrap();
        assert_eq!(x.values(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn v2g_discharges_into_the_peak() {
        let g = grid3();
        let others = DemandProfile::new(g, vec![5.0, 1.0, 3.0]).unwrap();
        let s = EvSession::new(0.0, 1e-3, 3.0, 0.0, 1.0).unwrap();
        let x = best_response(&s, &others, true, &g).unwrap();
        assert_eq!(x.values(), &[-1.0, 1.0, 0.0]);
        assert_eq!(objective(&x, &others).unwrap(), -4.0);
    }

    #[test]
    fn constant_load_takes_earliest_slots() {
        let g = TimeGrid::new(6.0, 1.0, true).unwrap();
        let others = DemandProfile::constant(g, 2.0).unwrap();
        let s = whole_day_session(&g, 2.5, 1.0);
        let x = best_response(&s, &others, false, &g).unwrap();
        assert_eq!(x.values(), &[1.0, 1.0, 0.5, 0.0, 0.0, 0.0]);
        assert_eq!(objective(&x, &others).unwrap(), 2.5 * 2.0);
    }

    #[test]
    fn respects_window_and_partial_slots() {
        let g = TimeGrid::day(1.0).unwrap();
        let s = EvSession::new(19.5, 2.0, 31.25, 6.0, 3.0).unwrap();
        let mut load = vec![10.0; 24];
        load[12] = 0.0; // cheap, but outside the window
        load[19] = 1.0;
        load[7] = 1.0;
        let others = DemandProfile::new(g, load).unwrap();
        let x = best_response(&s, &others, false, &g).unwrap();
        assert_eq!(x.values()[12], 0.0);
        assert_eq!(x.values()[19], 1.5);
        assert_eq!(x.values()[7], 0.75);
        check_schedule(&x, &s, false, &g).unwrap();
    }

    #[test]
    fn fills_window_to_capacity() {
        let g = TimeGrid::day(1.0).unwrap();
        let s = EvSession::new(19.5, 1.5, 21.0, 4.5, 3.0).unwrap();
        let x = best_response(&s, &DemandProfile::zeros(g), false, &g).unwrap();
        assert_eq!(x.values()[19], 1.5);
        assert_eq!(x.values()[20], 3.0);
        check_schedule(&x, &s, false, &g).unwrap();
    }

    #[test]
    fn uncoordinated_matches_realization() {
        let g = TimeGrid::day(1.0).unwrap();
        let s = EvSession::new(22.25, 4.0, 31.5, 12.0, 3.0).unwrap();
        let u = uncoordinated_schedule(&s, 3.0, &g).unwrap();
        assert_eq!(u, realize_demand(&s, 3.0, &g).unwrap());
        assert!((u.energy() - 12.0).abs() < 1e-12);
        check_schedule(&u, &s, false, &g).unwrap();
    }

    #[test]
    fn check_schedule_flags_violations() {
        let g = grid3();
        let s = EvSession::new(0.0, 1.0, 2.0, 1.0, 1.0).unwrap();
        let ok = DemandProfile::new(g, vec![0.5, 0.5, 0.0]).unwrap();
        check_schedule(&ok, &s, false, &g).unwrap();
        let outside = DemandProfile::new(g, vec![0.5, 0.0, 0.5]).unwrap();
        assert!(check_schedule(&outside, &s, false, &g).is_err());
        let negative = DemandProfile::new(g, vec![1.5, -0.5, 0.0]).unwrap();
        assert!(check_schedule(&negative, &s, false, &g).is_err());
        let short = DemandProfile::new(g, vec![0.5, 0.4, 0.0]).unwrap();
        assert!(check_schedule(&short, &s, false, &g).is_err());
    }

    #[test]
    fn single_user_fills_own_valley() {
        let g = TimeGrid::day(1.0).unwrap();
        let base: Vec<f64> = (0..24).map(|t| if (17..22).contains(&t) { 3.0 } else { 1.0 + 0.01 * t as f64 }).collect();
        let base = DemandProfile::new(g, base).unwrap();
        let s = EvSession::new(18.0, 4.0, 31.0, 12.0, 3.0).unwrap();
        let out = run_dr(&[s], std::slice::from_ref(&base), 3.0, &DrConfig::default(), &g).unwrap();
        assert!(out.converged);
        // The first sweep settles; the second confirms nothing moves.
        assert_eq!(out.iterations_used, 1);
        assert_eq!(out.trace.len(), 2);
        assert!(out.trace[0] > 0.0 && out.trace[1] == 0.0);
        let direct = best_response(&s, &base, false, &g).unwrap();
        assert_eq!(out.schedules[0], direct);
    }

    #[test]
    fn disjoint_windows_decouple() {
        let g = TimeGrid::day(1.0).unwrap();
        let base: Vec<DemandProfile> = (0..3)
            .map(|u| DemandProfile::new(g, (0..24).map(|t| 1.0 + ((t * (u + 2)) % 5) as f64).collect()).unwrap())
            .collect();
        let sessions = [
            EvSession::new(0.0, 2.0, 6.0, 4.0, 2.0).unwrap(),
            EvSession::new(8.0, 2.0, 14.0, 4.0, 2.0).unwrap(),
            EvSession::new(16.0, 2.0, 23.0, 4.0, 2.0).unwrap(),
        ];
        let out = run_dr(&sessions, &base, 2.0, &DrConfig::default(), &g).unwrap();
        assert!(out.converged);
        assert_eq!(out.trace.last(), Some(&0.0));
        assert_eq!(out.iterations_used, 1);
        for (u, s) in sessions.iter().enumerate() {
            // With disjoint windows only the own base load matters in-window.
            let others: DemandProfile = out.aggregate.sub(&out.schedules[u]).unwrap();
            let solo = best_response(s, &others, false, &g).unwrap();
            assert_eq!(solo, out.schedules[u]);
            let base_only = best_response(s, &DemandProfile::sum(&base).unwrap().unwrap(), false, &g).unwrap();
            assert_eq!(base_only, out.schedules[u]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = TimeGrid::day(1.0).unwrap();
        let s = EvSession::new(18.0, 4.0, 31.0, 12.0, 3.0).unwrap();
        let base = DemandProfile::constant(g, 1.0).unwrap();
        assert!(run_dr(&[s], &[], 3.0, &DrConfig::default(), &g).is_err());
        let cfg = DrConfig { update_order: Some(vec![1]), ..DrConfig::default() };
        assert!(run_dr(&[s], std::slice::from_ref(&base), 3.0, &cfg, &g).is_err());
        let cfg = DrConfig { max_iterations: 0, ..DrConfig::default() };
        assert!(run_dr(&[s], &[base], 3.0, &cfg, &g).is_err());
    }
}
