mod common;

use common::{lp_vertex_min, random_costs, random_session};
use evload_core::dr::{best_response, check_schedule, objective, run_dr, slot_limits, DrConfig, UpdateDiscipline};
use evload_core::montecarlo::EvSession;
use evload_core::profile::{DemandProfile, TimeGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn oracle_min(session: &EvSession, cost: &[f64], v2g: bool, grid: &TimeGrid) -> f64 {
    let upper = slot_limits(session, grid);
    let lower: Vec<f64> = upper.iter().map(|&u| if v2g { -u } else { 0.0 }).collect();
    let target = session.energy_kwh() / grid.resolution_hours();
    lp_vertex_min(cost, &lower, &upper, target).expect("feasible instance")
}

#[test]
fn greedy_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..300 {
        let slots = rng.random_range(2..=6);
        let dt = if rng.random_bool(0.5) { 1.0 } else { 0.5 };
        let grid = TimeGrid::new(slots as f64 * dt, dt, true).unwrap();
        let session = random_session(&mut rng, &grid);
        let cost = random_costs(&mut rng, slots);
        let v2g = rng.random_bool(0.5);
        let others = DemandProfile::new(grid, cost.clone()).unwrap();
        let x = best_response(&session, &others, v2g, &grid).unwrap();
        check_schedule(&x, &session, v2g, &grid).unwrap();
        let got = objective(&x, &others).unwrap();
        let want = oracle_min(&session, &cost, v2g, &grid);
        assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "{got} vs {want}");
    }
}

/// Every schedule with entries in `levels` on in-window slots and the given total.
fn lattice_schedules(window: &[bool], levels: &[f64], total: f64) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for &inside in window {
        let choices: &[f64] = if inside { levels } else { &[0.0] };
        out = out
            .into_iter()
            .flat_map(|prefix| {
                choices.iter().map(move |&c| {
                    let mut next = prefix.clone();
                    next.push(c);
                    next
                })
            })
            .collect();
    }
    out.retain(|x| (x.iter().sum::<f64>() - total).abs() < 1e-9);
    out
}

#[test]
fn three_users_reach_a_nash_point() {
    let grid = TimeGrid::new(4.0, 1.0, true).unwrap();
    let sessions = [
        EvSession::new(0.0, 2.0, 3.0, 2.0, 1.0).unwrap(),
        EvSession::new(1.0, 2.0, 4.0, 2.0, 1.0).unwrap(),
        EvSession::new(2.0, 1.0, 5.0, 1.0, 1.0).unwrap(),
    ];
    let base = vec![
        DemandProfile::new(grid, vec![1.0, 2.0, 0.5, 3.0]).unwrap(),
        DemandProfile::new(grid, vec![0.5, 1.0, 2.0, 1.0]).unwrap(),
        DemandProfile::new(grid, vec![2.0, 0.0, 1.0, 0.5]).unwrap(),
    ];
    for v2g in [false, true] {
        let cfg = DrConfig { v2g_enabled: v2g, convergence_eps_kw: Some(1e-12), ..DrConfig::default() };
        let out = run_dr(&sessions, &base, 1.0, &cfg, &grid).unwrap();
        assert!(out.converged);
        let levels: &[f64] = if v2g { &[-1.0, 0.0, 1.0] } else { &[0.0, 1.0] };
        for (u, s) in sessions.iter().enumerate() {
            let others = out.aggregate.sub(&out.schedules[u]).unwrap();
            let current = objective(&out.schedules[u], &others).unwrap();
            let window: Vec<bool> = slot_limits(s, &grid).iter().map(|&l| l > 0.0).collect();
            for alt in lattice_schedules(&window, levels, s.energy_kwh()) {
                let alt = DemandProfile::new(grid, alt).unwrap();
                assert!(objective(&alt, &others).unwrap() >= current - 1e-9, "user {u} can deviate (v2g={v2g})");
            }
        }
    }
}

const POWER_KW: f64 = 2.0;

/// Sessions charged at `POWER_KW`, so uncoordinated charging delivers each
/// session's energy.
fn random_fleet(rng: &mut ChaCha8Rng, n: usize, grid: &TimeGrid) -> (Vec<EvSession>, Vec<DemandProfile>) {
    let horizon = grid.horizon_hours();
    let sessions: Vec<EvSession> = (0..n)
        .map(|_| {
            let arrival = rng.random_range(0.0..horizon);
            let span = rng.random_range(0.5..=horizon);
            let duration = rng.random_range(0.05..=span);
            let p_max = POWER_KW * rng.random_range(1.0..2.0);
            EvSession::new(arrival, duration, arrival + span, POWER_KW * duration, p_max).unwrap()
        })
        .collect();
    let base = (0..n)
        .map(|_| {
            DemandProfile::new(*grid, (0..grid.slot_count()).map(|_| rng.random_range(0.0..3.0)).collect()).unwrap()
        })
        .collect();
    (sessions, base)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sweeps_keep_schedules_feasible_and_energy_fixed(seed in any::<u64>(), n in 1usize..8, v2g in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = TimeGrid::new(12.0, 1.0, true).unwrap();
        let (sessions, base) = random_fleet(&mut rng, n, &grid);
        let total: f64 = sessions.iter().map(EvSession::energy_kwh).sum();
        for sweeps in 1..=4 {
            let cfg = DrConfig { v2g_enabled: v2g, max_iterations: sweeps, ..DrConfig::default() };
            let out = run_dr(&sessions, &base, POWER_KW, &cfg, &grid).unwrap();
            let mut energy = 0.0;
            for (s, x) in sessions.iter().zip(&out.schedules) {
                check_schedule(x, s, v2g, &grid).unwrap();
                energy += x.energy();
            }
            prop_assert!((energy - total).abs() < 1e-9 * (1.0 + total));
            let rebuilt = DemandProfile::sum(&base).unwrap().unwrap()
                .add(&DemandProfile::sum(&out.schedules).unwrap().unwrap()).unwrap();
            prop_assert_eq!(rebuilt, out.aggregate);
        }
    }

    #[test]
    fn best_response_never_raises_objective(seed in any::<u64>(), v2g in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = TimeGrid::new(8.0, 1.0, true).unwrap();
        let (sessions, base) = random_fleet(&mut rng, 4, &grid);
        let mut schedules: Vec<DemandProfile> = sessions
            .iter()
            .map(|s| best_response(s, &DemandProfile::zeros(grid), false, &grid).unwrap())
            .collect();
        let base_total = DemandProfile::sum(&base).unwrap().unwrap();
        for _ in 0..3 {
            for u in 0..sessions.len() {
                let mut others = base_total.clone();
                for (i, x) in schedules.iter().enumerate() {
                    if i != u {
                        others = others.add(x).unwrap();
                    }
                }
                let before = objective(&schedules[u], &others).unwrap();
                let next = best_response(&sessions[u], &others, v2g, &grid).unwrap();
                let after = objective(&next, &others).unwrap();
                prop_assert!(after <= before + 1e-9 * (1.0 + before.abs()));
                schedules[u] = next;
            }
        }
    }

    #[test]
    fn dr_does_not_raise_par_at_fleet_scale(seed in any::<u64>(), n in 50usize..150, v2g in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = TimeGrid::day(1.0).unwrap();
        let (sessions, base) = random_fleet(&mut rng, n, &grid);
        let cfg = DrConfig { v2g_enabled: v2g, ..DrConfig::default() };
        let out = run_dr(&sessions, &base, POWER_KW, &cfg, &grid).unwrap();
        prop_assert!(out.par_after <= out.par_before + 1e-12, "{} > {}", out.par_after, out.par_before);
    }
}

#[test]
fn jacobi_is_available_and_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = TimeGrid::day(1.0).unwrap();
    let (sessions, base) = random_fleet(&mut rng, 10, &grid);
    let cfg = DrConfig { discipline: UpdateDiscipline::Jacobi, max_iterations: 10, ..DrConfig::default() };
    let out = run_dr(&sessions, &base, POWER_KW, &cfg, &grid).unwrap();
    for (s, x) in sessions.iter().zip(&out.schedules) {
        check_schedule(x, s, false, &grid).unwrap();
    }
    assert_eq!(out.trace.len(), if out.converged { out.iterations_used + 1 } else { out.iterations_used });
}

#[test]
fn update_order_is_honoured() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = TimeGrid::day(1.0).unwrap();
    let (sessions, base) = random_fleet(&mut rng, 5, &grid);
    let cfg = DrConfig { update_order: Some(vec![4, 3, 2, 1, 0]), max_iterations: 1, ..DrConfig::default() };
    let reversed = run_dr(&sessions, &base, POWER_KW, &cfg, &grid).unwrap();
    let again = run_dr(&sessions, &base, POWER_KW, &cfg, &grid).unwrap();
    assert_eq!(reversed, again);
}

#[test]
fn one_large_vehicle_can_overshoot_the_valley() {
    // Best responses are bang-bang, so a vehicle that is large next to the
    // load it sees moves its whole power into one slot and makes a new peak.
    let grid = TimeGrid::new(4.0, 1.0, true).unwrap();
    let base = DemandProfile::new(grid, vec![3.0, 1.0, 2.0, 2.0]).unwrap();
    let session = EvSession::new(2.0, 1.0, 6.0, 4.0, 4.0).unwrap();
    let out = run_dr(&[session], &[base], 4.0, &DrConfig::default(), &grid).unwrap();
    assert_eq!(out.aggregate.values(), &[3.0, 5.0, 2.0, 2.0]);
    assert!(out.par_after < out.par_before);
    let big = EvSession::new(0.0, 1.0, 4.0, 1.0, 3.0).unwrap();
    let base = DemandProfile::new(grid, vec![2.0, 1.0, 2.0, 2.0]).unwrap();
    let out = run_dr(&[big], &[base], 1.0, &DrConfig::default(), &grid).unwrap();
    // Uncoordinated: [3, 1, 2, 2] at 1 kW. DR puts 1 kWh at up to 3 kW in slot 1.
    assert_eq!(out.aggregate.values(), &[2.0, 2.0, 2.0, 2.0]);
    let v2g = DrConfig { v2g_enabled: true, ..DrConfig::default() };
    let out = run_dr(&[big], &[DemandProfile::new(grid, vec![2.0, 1.0, 2.0, 2.0]).unwrap()], 1.0, &v2g, &grid).unwrap();
    assert!(out.peak_after_kw > out.peak_before_kw, "{:?}", out.aggregate.values());
}
