//! Fixtures shared by the benchmarks.

use evload_core::dr::uncoordinated_schedule;
use evload_core::montecarlo::sample_fleet;
use evload_core::scenario::{synth_baseline, ScenarioConfig};
use evload_core::{ChargerModel, DemandProfile, DistributionSpec, EvSession, TimeGrid};

/// Gaussian arrivals around 19:00 with variance 10 and the given charging law.
pub fn evening_model(charging: DistributionSpec) -> ChargerModel {
    ChargerModel::new(1.0, DistributionSpec::Gaussian { mu: 19.0, sigma: 10f64.sqrt() }, charging).expect("valid model")
}

/// Sessions and baselines of the reference scenario at `n_users`.
pub fn reference_fleet(n_users: usize) -> (ScenarioConfig, Vec<EvSession>, Vec<DemandProfile>) {
    let mut cfg = ScenarioConfig::default_scenario();
    cfg.n_users = n_users;
    let sessions = sample_fleet(&cfg.fleet().expect("valid fleet")).expect("feasible fleet");
    let baselines = synth_baseline(&cfg.baseline, n_users, &cfg.grid);
    (cfg, sessions, baselines)
}

/// Load seen by user 0 of the reference fleet under uncoordinated charging.
pub fn others_load(cfg: &ScenarioConfig, sessions: &[EvSession], baselines: &[DemandProfile]) -> DemandProfile {
    let mut total = DemandProfile::sum(baselines).expect("same grid").expect("non-empty");
    for s in &sessions[1..] {
        total = total
            .add(&uncoordinated_schedule(s, cfg.charger_power_kw, &cfg.grid).expect("feasible"))
            .expect("same grid");
    }
    total
}

pub fn fine_day() -> TimeGrid {
    TimeGrid::day(0.1).expect("valid grid")
}
