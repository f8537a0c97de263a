//! End-to-end experiment runner.
//!
//! A scenario is a flat `key=value` file with dotted section prefixes. See
//! `docs/scenario-config.md` for the full schema. [`run_cases`] samples one
//! fleet and one set of household baselines, runs every requested case on
//! them, and writes one CSV per case plus `summary.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::analytic::{expected_profile, expected_profile_extended, family_curves, AnalyticError, ChargerModel};
use crate::distributions::{match_moments, DistError, Distribution, DistributionSpec, Family, MomentMatch};
use crate::dr::{run_dr, uncoordinated_schedule, DrConfig, DrError, DrOutcome, UpdateDiscipline};
use crate::montecarlo::{empirical_expected_profile, sample_fleet, EvSession, FleetSpec, SamplingError};
use crate::profile::{format_sig, DemandProfile, ProfileError, TimeGrid};

#[derive(Debug, Error)]
#[error("{}{message}", key.as_ref().map(|k| format!("{k}: ")).unwrap_or_default())]
pub struct ConfigError {
    /// Offending key, when the problem can be pinned to one.
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn at(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self { key: Some(key.into()), message: message.into() }
    }

    fn general(message: impl Into<String>) -> Self {
        Self { key: None, message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Dr(#[from] DrError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Distribution(#[from] DistError),
}

/// Broad failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Numeric,
    Io,
}

impl ScenarioError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            ScenarioError::Config(_) => ErrorCategory::Config,
            ScenarioError::Io { .. } => ErrorCategory::Io,
            ScenarioError::Sampling(SamplingError::Infeasible { .. }) => ErrorCategory::Config,
            _ => ErrorCategory::Numeric,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        ScenarioError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Case {
    NoEv,
    Uncoordinated,
    Dr,
    DrV2g,
    AnalyticComparison,
}

impl Case {
    pub const ALL: [Case; 5] = [Case::NoEv, Case::Uncoordinated, Case::Dr, Case::DrV2g, Case::AnalyticComparison];

    pub fn name(self) -> &'static str {
        match self {
            Case::NoEv => "no_ev",
            Case::Uncoordinated => "uncoordinated",
            Case::Dr => "dr",
            Case::DrV2g => "dr_v2g",
            Case::AnalyticComparison => "analytic_comparison",
        }
    }

    fn needs_fleet(self) -> bool {
        matches!(self, Case::Uncoordinated | Case::Dr | Case::DrV2g)
    }
}

impl FromStr for Case {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Case::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<_> = Case::ALL.iter().map(|c| c.name()).collect();
            format!("unknown case {s:?}, expected one of {}", names.join(", "))
        })
    }
}

/// Household inflexible load: a constant plus a morning and an evening
/// Gaussian bump, each amplitude scaled per user by `1 + jitter * u` with
/// `u` uniform on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineTemplate {
    pub base_kw: f64,
    pub morning_peak_kw: f64,
    pub morning_center_hours: f64,
    pub morning_width_hours: f64,
    pub evening_peak_kw: f64,
    pub evening_center_hours: f64,
    pub evening_width_hours: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for BaselineTemplate {
    fn default() -> Self {
        Self {
            base_kw: 0.4,
            morning_peak_kw: 0.8,
            morning_center_hours: 7.5,
            morning_width_hours: 1.5,
            evening_peak_kw: 2.0,
            evening_center_hours: 19.0,
            evening_width_hours: 2.5,
            jitter: 0.2,
            seed: 7,
        }
    }
}

impl BaselineTemplate {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("baseline.base_kw", self.base_kw),
            ("baseline.morning_peak_kw", self.morning_peak_kw),
            ("baseline.evening_peak_kw", self.evening_peak_kw),
        ];
        for (key, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::at(key, format!("must be a non-negative power, got {v}")));
            }
        }
        for (key, v) in [
            ("baseline.morning_width_hours", self.morning_width_hours),
            ("baseline.evening_width_hours", self.evening_width_hours),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::at(key, format!("must be positive, got {v}")));
            }
        }
        for (key, v) in [
            ("baseline.morning_center_hours", self.morning_center_hours),
            ("baseline.evening_center_hours", self.evening_center_hours),
        ] {
            if !v.is_finite() {
                return Err(ConfigError::at(key, "must be finite"));
            }
        }
        if !(0.0..=0.5).contains(&self.jitter) {
            return Err(ConfigError::at("baseline.jitter", format!("must lie in [0, 0.5], got {}", self.jitter)));
        }
        Ok(())
    }

    /// Template value at hour `t` with the given amplitude factors.
    fn value_at(&self, t: f64, horizon: f64, factors: [f64; 3]) -> f64 {
        let bump = |center: f64, width: f64| {
            let d = (t - center).rem_euclid(horizon);
            let d = d.min(horizon - d);
            (-0.5 * (d / width).powi(2)).exp()
        };
        factors[0] * self.base_kw
            + factors[1] * self.morning_peak_kw * bump(self.morning_center_hours, self.morning_width_hours)
            + factors[2] * self.evening_peak_kw * bump(self.evening_center_hours, self.evening_width_hours)
    }
}

/// Per-user baselines sampled at slot starts.
pub fn synth_baseline(template: &BaselineTemplate, n_users: usize, grid: &TimeGrid) -> Vec<DemandProfile> {
    let horizon = grid.horizon_hours();
    (0..n_users)
        .map(|user| {
            let mut rng = ChaCha8Rng::seed_from_u64(template.seed);
            rng.set_stream(user as u64);
            let factors = [(); 3].map(|_| 1.0 + template.jitter * rng.random_range(-1.0..=1.0));
            let values =
                (0..grid.slot_count()).map(|i| template.value_at(grid.slot_start(i), horizon, factors)).collect();
            DemandProfile::new(*grid, values).expect("template values are finite")
        })
        .collect()
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub grid: TimeGrid,
    pub n_users: usize,
    pub seed: u64,
    pub charger_power_kw: f64,
    pub p_max_kw: Option<f64>,
    pub arrival: DistributionSpec,
    pub charging: DistributionSpec,
    pub departure: DistributionSpec,
    /// Moment-match directives that were resolved while loading, by section.
    pub matched: BTreeMap<String, MomentMatch>,
    pub baseline: BaselineTemplate,
    pub dr: DrConfig,
    /// Moments used for the family comparison; default to those of `charging`.
    pub comparison_mean: f64,
    pub comparison_variance: f64,
    /// Monte Carlo samples for the empirical profile; 0 skips it.
    pub samples: usize,
    pub output_dir: PathBuf,
    pub per_user_schedules: bool,
    pub emit_extended: bool,
    pub cases: Vec<Case>,
}

impl ScenarioConfig {
    /// The reference 200-user scenario shipped as `scenarios/default.conf`.
    pub fn default_scenario() -> Self {
        let charging = DistributionSpec::Uniform { c: 1.0, d: 11.0 };
        let (comparison_mean, comparison_variance) = Distribution::new(charging).expect("valid").moments();
        Self {
            grid: TimeGrid::day(1.0).expect("valid grid"),
            n_users: 200,
            seed: 42,
            charger_power_kw: 3.0,
            p_max_kw: None,
            arrival: DistributionSpec::Gaussian { mu: 19.0, sigma: 10f64.sqrt() },
            charging,
            departure: DistributionSpec::Gaussian { mu: 31.5, sigma: 1.0 },
            matched: BTreeMap::new(),
            baseline: BaselineTemplate::default(),
            dr: DrConfig::default(),
            comparison_mean,
            comparison_variance,
            samples: 0,
            output_dir: PathBuf::from("out"),
            per_user_schedules: false,
            emit_extended: false,
            cases: Case::ALL.to_vec(),
        }
    }

    pub fn charger(&self) -> Result<ChargerModel, ScenarioError> {
        Ok(ChargerModel::new(self.charger_power_kw, self.arrival, self.charging)?)
    }

    pub fn fleet(&self) -> Result<FleetSpec, ScenarioError> {
        Ok(FleetSpec::new(self.n_users, self.charger()?, self.departure, self.seed, self.p_max_kw)?)
    }

    /// Resolved settings as `key=value` lines.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        line("grid.horizon_hours", format_sig(self.grid.horizon_hours()));
        line("grid.resolution_hours", format_sig(self.grid.resolution_hours()));
        line("fleet.n_users", self.n_users.to_string());
        line("fleet.seed", self.seed.to_string());
        line("fleet.charger_power_kw", format_sig(self.charger_power_kw));
        line("fleet.p_max_kw", format_sig(self.p_max_kw.unwrap_or(self.charger_power_kw)));
        for (section, spec) in [("arrival", self.arrival), ("charging", self.charging), ("departure", self.departure)] {
            describe_spec(&mut line, section, &spec);
        }
        line("comparison.mean", format_sig(self.comparison_mean));
        line("comparison.variance", format_sig(self.comparison_variance));
        line("comparison.samples", self.samples.to_string());
        line("dr.max_iterations", self.dr.max_iterations.to_string());
        if let Some(eps) = self.dr.convergence_eps_kw {
            line("dr.convergence_eps_kw", format_sig(eps));
        }
        line(
            "dr.discipline",
            match self.dr.discipline {
                UpdateDiscipline::GaussSeidel => "gauss_seidel",
                UpdateDiscipline::Jacobi => "jacobi",
            }
            .into(),
        );
        line("output.dir", self.output_dir.display().to_string());
        line("run.cases", self.cases.iter().map(|c| c.name()).collect::<Vec<_>>().join(","));
        out
    }
}

fn describe_spec(line: &mut impl FnMut(&str, String), section: &str, spec: &DistributionSpec) {
    line(&format!("{section}.family"), spec.family().name().into());
    let params: Vec<(&str, f64)> = match *spec {
        DistributionSpec::Gaussian { mu, sigma } | DistributionSpec::TruncatedGaussian { mu, sigma } => {
            vec![("mu", mu), ("sigma", sigma)]
        }
        DistributionSpec::Uniform { c, d } => vec![("c", c), ("d", d)],
        DistributionSpec::Exponential { lambda } => vec![("lambda", lambda)],
        DistributionSpec::Rician { nu, sigma } => vec![("nu", nu), ("sigma", sigma)],
    };
    for (name, v) in params {
        line(&format!("{section}.{name}"), format_sig(v));
    }
}

const DIST_PARAMS: [&str; 11] =
    ["family", "mu", "sigma", "variance", "c", "d", "lambda", "mean", "nu", "match_mean", "match_variance"];

const KEYS: [&str; 26] = [
    "grid.horizon_hours",
    "grid.resolution_hours",
    "fleet.n_users",
    "fleet.seed",
    "fleet.charger_power_kw",
    "fleet.p_max_kw",
    "baseline.base_kw",
    "baseline.morning_peak_kw",
    "baseline.morning_center_hours",
    "baseline.morning_width_hours",
    "baseline.evening_peak_kw",
    "baseline.evening_center_hours",
    "baseline.evening_width_hours",
    "baseline.jitter",
    "baseline.seed",
    "dr.max_iterations",
    "dr.convergence_eps_kw",
    "dr.update_order",
    "dr.discipline",
    "comparison.mean",
    "comparison.variance",
    "comparison.samples",
    "output.dir",
    "output.per_user_schedules",
    "output.emit_extended",
    "run.cases",
];

fn known_key(key: &str) -> bool {
    if KEYS.contains(&key) {
        return true;
    }
    match key.split_once('.') {
        Some((section, param)) => {
            ["arrival", "charging", "departure"].contains(&section) && DIST_PARAMS.contains(&param)
        }
        None => false,
    }
}

/// Raw `key=value` pairs. `#` starts a comment; blank lines are ignored.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut pairs = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::general(format!("line {}: expected key=value, got {line:?}", n + 1)));
        };
        let (key, value) = (key.trim(), value.trim());
        if !known_key(key) {
            return Err(ConfigError::at(key, format!("unknown key (line {})", n + 1)));
        }
        if pairs.insert(key.to_string(), value.to_string()).is_some() {
            return Err(ConfigError::at(key, format!("set more than once (line {})", n + 1)));
        }
    }
    Ok(pairs)
}

struct Pairs(BTreeMap<String, String>);

impl Pairs {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.0
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| ConfigError::at(key, format!("cannot parse {v:?}: {e}"))))
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| ConfigError::at(key, "required"))
    }

    fn has(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::at(key, format!("must be positive, got {v}")))
    }
}

/// Reads one distribution section: `family` plus named parameters, or
/// `family` plus `match_mean` (and `match_variance`) for moment matching.
fn dist_section(p: &Pairs, section: &str) -> Result<(DistributionSpec, Option<MomentMatch>), ConfigError> {
    let key = |name: &str| format!("{section}.{name}");
    let family: Family = p
        .require::<String>(&key("family"))?
        .parse()
        .map_err(|e: DistError| ConfigError::at(key("family"), e.to_string()))?;
    let allowed: &[&str] = match family {
        Family::Gaussian | Family::TruncatedGaussian => &["mu", "sigma", "variance"],
        Family::Uniform => &["c", "d"],
        Family::Exponential => &["lambda", "mean"],
        Family::Rician => &["nu", "sigma"],
    };

    if p.has(&key("match_mean")) || p.has(&key("match_variance")) {
        for name in DIST_PARAMS.iter().filter(|n| !["family", "match_mean", "match_variance"].contains(n)) {
            if p.has(&key(name)) {
                return Err(ConfigError::at(key(name), "cannot be combined with match_mean/match_variance"));
            }
        }
        let mean = positive(&key("match_mean"), p.require(&key("match_mean"))?)?;
        let variance = if family == Family::Exponential {
            if p.has(&key("match_variance")) {
                return Err(ConfigError::at(
                    key("match_variance"),
                    "the exponential law has one parameter; give match_mean only",
                ));
            }
            mean * mean
        } else {
            positive(&key("match_variance"), p.require(&key("match_variance"))?)?
        };
        let m =
            match_moments(family, mean, variance).map_err(|e| ConfigError::at(key("match_variance"), e.to_string()))?;
        return Ok((m.spec, Some(m)));
    }

    for name in DIST_PARAMS.iter().filter(|&&n| n != "family") {
        if p.has(&key(name)) && !allowed.contains(name) {
            return Err(ConfigError::at(key(name), format!("not a parameter of the {family} family")));
        }
    }
    let sigma = |p: &Pairs| -> Result<f64, ConfigError> {
        match (p.get::<f64>(&key("sigma"))?, p.get::<f64>(&key("variance"))?) {
            (Some(_), Some(_)) => Err(ConfigError::at(key("variance"), "give sigma or variance, not both")),
            (Some(s), None) => positive(&key("sigma"), s),
            (None, Some(v)) => Ok(positive(&key("variance"), v)?.sqrt()),
            (None, None) => Err(ConfigError::at(key("sigma"), "required")),
        }
    };
    let spec = match family {
        Family::Gaussian => DistributionSpec::Gaussian { mu: p.require(&key("mu"))?, sigma: sigma(p)? },
        Family::TruncatedGaussian => {
            DistributionSpec::TruncatedGaussian { mu: p.require(&key("mu"))?, sigma: sigma(p)? }
        }
        Family::Uniform => {
            let c: f64 = p.require(&key("c"))?;
            let d: f64 = p.require(&key("d"))?;
            if !(c.is_finite() && c >= 0.0) {
                return Err(ConfigError::at(key("c"), format!("must be non-negative, got {c}")));
            }
            if !(d.is_finite() && d > c) {
                return Err(ConfigError::at(key("d"), format!("must exceed c={c}, got {d}")));
            }
            DistributionSpec::Uniform { c, d }
        }
        Family::Exponential => {
            let lambda = match (p.get::<f64>(&key("lambda"))?, p.get::<f64>(&key("mean"))?) {
                (Some(_), Some(_)) => return Err(ConfigError::at(key("mean"), "give lambda or mean, not both")),
                (Some(l), None) => positive(&key("lambda"), l)?,
                (None, Some(m)) => 1.0 / positive(&key("mean"), m)?,
                (None, None) => return Err(ConfigError::at(key("lambda"), "required")),
            };
            DistributionSpec::Exponential { lambda }
        }
        Family::Rician => {
            let nu: f64 = p.require(&key("nu"))?;
            if !(nu.is_finite() && nu >= 0.0) {
                return Err(ConfigError::at(key("nu"), format!("must be non-negative, got {nu}")));
            }
            DistributionSpec::Rician { nu, sigma: positive(&key("sigma"), p.require(&key("sigma"))?)? }
        }
    };
    spec.validate().map_err(|e| ConfigError::at(key("family"), e.to_string()))?;
    Ok((spec, None))
}

/// Parses and validates a scenario file's contents.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let p = Pairs(parse_pairs(text)?);
    let horizon = positive("grid.horizon_hours", p.or("grid.horizon_hours", TimeGrid::DAY_HOURS)?)?;
    let resolution = positive("grid.resolution_hours", p.or("grid.resolution_hours", 1.0)?)?;
    let grid = TimeGrid::new(horizon, resolution, true)
        .map_err(|e| ConfigError::at("grid.resolution_hours", e.to_string()))?;

    let n_users: usize = p.require("fleet.n_users")?;
    if n_users == 0 {
        return Err(ConfigError::at("fleet.n_users", "must be at least 1"));
    }
    let charger_power_kw = positive("fleet.charger_power_kw", p.or("fleet.charger_power_kw", 1.0)?)?;
    let p_max_kw = p.get::<f64>("fleet.p_max_kw")?.map(|v| positive("fleet.p_max_kw", v)).transpose()?;
    if let Some(pm) = p_max_kw {
        if pm < charger_power_kw {
            return Err(ConfigError::at(
                "fleet.p_max_kw",
                format!("must be at least the charger power {charger_power_kw}"),
            ));
        }
    }

    let mut matched = BTreeMap::new();
    let mut section = |name: &str| -> Result<DistributionSpec, ConfigError> {
        let (spec, m) = dist_section(&p, name)?;
        if let Some(m) = m {
            matched.insert(name.to_string(), m);
        }
        Ok(spec)
    };
    let arrival = section("arrival")?;
    let charging = section("charging")?;
    let departure = section("departure")?;
    if Distribution::new(charging).map_err(|e| ConfigError::at("charging.family", e.to_string()))?.support_min() < 0.0 {
        return Err(ConfigError::at("charging.family", "charging time must be non-negative; use truncated_gaussian"));
    }

    let d = BaselineTemplate::default();
    let baseline = BaselineTemplate {
        base_kw: p.or("baseline.base_kw", d.base_kw)?,
        morning_peak_kw: p.or("baseline.morning_peak_kw", d.morning_peak_kw)?,
        morning_center_hours: p.or("baseline.morning_center_hours", d.morning_center_hours)?,
        morning_width_hours: p.or("baseline.morning_width_hours", d.morning_width_hours)?,
        evening_peak_kw: p.or("baseline.evening_peak_kw", d.evening_peak_kw)?,
        evening_center_hours: p.or("baseline.evening_center_hours", d.evening_center_hours)?,
        evening_width_hours: p.or("baseline.evening_width_hours", d.evening_width_hours)?,
        jitter: p.or("baseline.jitter", d.jitter)?,
        seed: p.or("baseline.seed", d.seed)?,
    };
    baseline.validate()?;

    let update_order = match p.get::<String>("dr.update_order")?.as_deref() {
        None | Some("identity") => None,
        Some("reverse") => Some((0..n_users).rev().collect()),
        Some(list) => {
            let order =
                list.split(',').map(|s| s.trim().parse::<usize>()).collect::<Result<Vec<_>, _>>().map_err(|e| {
                    ConfigError::at(
                        "dr.update_order",
                        format!("expected identity, reverse or a list of user indices: {e}"),
                    )
                })?;
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..n_users).collect::<Vec<_>>() {
                return Err(ConfigError::at("dr.update_order", "must be a permutation of 0..n_users"));
            }
            Some(order)
        }
    };
    let discipline = match p.get::<String>("dr.discipline")?.as_deref() {
        None | Some("gauss_seidel") => UpdateDiscipline::GaussSeidel,
        Some("jacobi") => UpdateDiscipline::Jacobi,
        Some(other) => {
            return Err(ConfigError::at("dr.discipline", format!("expected gauss_seidel or jacobi, got {other:?}")))
        }
    };
    let dr = DrConfig {
        v2g_enabled: false,
        max_iterations: p.or("dr.max_iterations", 50)?,
        convergence_eps_kw: p.get("dr.convergence_eps_kw")?,
        update_order,
        discipline,
    };
    if dr.max_iterations == 0 {
        return Err(ConfigError::at("dr.max_iterations", "must be at least 1"));
    }
    if let Some(eps) = dr.convergence_eps_kw {
        positive("dr.convergence_eps_kw", eps)?;
    }

    let (charging_mean, charging_var) = Distribution::new(charging).expect("validated").moments();
    let comparison_mean = positive("comparison.mean", p.or("comparison.mean", charging_mean)?)?;
    let comparison_variance = positive("comparison.variance", p.or("comparison.variance", charging_var)?)?;

    let cases = match p.get::<String>("run.cases")? {
        None => Case::ALL.to_vec(),
        Some(list) => {
            let mut cases = list
                .split(',')
                .map(|s| s.trim().parse::<Case>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ConfigError::at("run.cases", e))?;
            cases.sort_unstable();
            cases.dedup();
            if cases.is_empty() {
                return Err(ConfigError::at("run.cases", "no cases selected"));
            }
            cases
        }
    };

    Ok(ScenarioConfig {
        grid,
        n_users,
        seed: p.or("fleet.seed", 0)?,
        charger_power_kw,
        p_max_kw,
        arrival,
        charging,
        departure,
        matched,
        baseline,
        dr,
        comparison_mean,
        comparison_variance,
        samples: p.or("comparison.samples", 0)?,
        output_dir: PathBuf::from(p.or("output.dir", "out".to_string())?),
        per_user_schedules: p.or("output.per_user_schedules", false)?,
        emit_extended: p.or("output.emit_extended", false)?,
        cases,
    })
}

/// Reads and validates a scenario file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
    Ok(parse_config(&text)?)
}

/// Everything a run produced, in addition to the files it wrote.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub baselines: Vec<DemandProfile>,
    pub sessions: Vec<EvSession>,
    /// Aggregate profile per executed case (not for `analytic_comparison`).
    pub aggregates: BTreeMap<Case, DemandProfile>,
    pub dr: Option<DrOutcome>,
    pub dr_v2g: Option<DrOutcome>,
    pub ev_energy_kwh: f64,
    pub valley_capacity_kwh: f64,
    /// Names of the files written, relative to the output directory.
    pub files: Vec<String>,
    pub summary: Vec<(String, String)>,
}

/// Energy that fits under the baseline peak, counted only in slots where at
/// least one vehicle is plugged in.
pub fn valley_capacity_kwh(baseline_total: &DemandProfile, sessions: &[EvSession]) -> f64 {
    let grid = baseline_total.grid();
    let mut covered = vec![false; grid.slot_count()];
    for s in sessions {
        for (slot, frac) in s.window_fractions(grid).into_iter().enumerate() {
            covered[slot] |= frac > 0.0;
        }
    }
    let peak = baseline_total.peak();
    baseline_total.values().iter().zip(&covered).filter(|(_, &c)| c).map(|(v, _)| (peak - v).max(0.0)).sum::<f64>()
        * grid.resolution_hours()
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Writer<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<(), ScenarioError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| ScenarioError::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn schedules_csv(schedules: &[DemandProfile]) -> String {
    let mut out = String::from("user,time_hours,value_kw\n");
    for (u, s) in schedules.iter().enumerate() {
        for (i, v) in s.values().iter().enumerate() {
            let _ = writeln!(out, "{u},{},{}", format_sig(s.grid().slot_start(i)), format_sig(*v));
        }
    }
    out
}

fn summary_text(summary: &[(String, String)]) -> String {
    summary.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Runs every requested case on one shared fleet and baseline, writing
/// results into `cfg.output_dir`. On failure the files already written are
/// kept and `summary.txt` ends with `status=failed`.
pub fn run_cases(cfg: &ScenarioConfig) -> Result<RunReport, ScenarioError> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| ScenarioError::io(dir, e))?;
    let mut writer = Writer { dir, files: Vec::new() };
    let mut summary: Vec<(String, String)> = vec![
        ("seed".into(), cfg.seed.to_string()),
        ("n_users".into(), cfg.n_users.to_string()),
        ("cases".into(), cfg.cases.iter().map(|c| c.name()).collect::<Vec<_>>().join(",")),
    ];
    let mut report = RunReport {
        baselines: Vec::new(),
        sessions: Vec::new(),
        aggregates: BTreeMap::new(),
        dr: None,
        dr_v2g: None,
        ev_energy_kwh: 0.0,
        valley_capacity_kwh: 0.0,
        files: Vec::new(),
        summary: Vec::new(),
    };

    let result = execute(cfg, &mut writer, &mut summary, &mut report);
    match &result {
        Ok(()) => summary.push(("status".into(), "ok".into())),
        Err(e) => {
            summary.push(("status".into(), "failed".into()));
            summary.push(("error".into(), e.to_string().replace('\n', " ")));
        }
    }
    let text = summary_text(&summary);
    let path = dir.join("summary.txt");
    fs::write(&path, text).map_err(|e| ScenarioError::io(&path, e))?;
    writer.files.push("summary.txt".into());
    result?;
    report.files = writer.files;
    report.summary = summary;
    Ok(report)
}

fn execute(
    cfg: &ScenarioConfig,
    writer: &mut Writer<'_>,
    summary: &mut Vec<(String, String)>,
    report: &mut RunReport,
) -> Result<(), ScenarioError> {
    let grid = cfg.grid;
    let mut kv = |k: String, v: String| summary.push((k, v));
    let needs_loads = cfg.cases.iter().any(|&c| c != Case::AnalyticComparison);
    let needs_fleet = cfg.cases.iter().any(|c| c.needs_fleet());

    let baselines = if needs_loads { synth_baseline(&cfg.baseline, cfg.n_users, &grid) } else { Vec::new() };
    let baseline_total = DemandProfile::sum(&baselines)?;
    let sessions = if needs_fleet { sample_fleet(&cfg.fleet()?)? } else { Vec::new() };
    if needs_fleet {
        let energy: f64 = sessions.iter().map(EvSession::energy_kwh).sum();
        let capacity = valley_capacity_kwh(baseline_total.as_ref().expect("fleet cases need loads"), &sessions);
        kv("ev_energy_kwh".into(), format_sig(energy));
        kv("valley_capacity_kwh".into(), format_sig(capacity));
        report.ev_energy_kwh = energy;
        report.valley_capacity_kwh = capacity;
    }

    for &case in &cfg.cases {
        let name = case.name();
        let aggregate = match case {
            Case::NoEv => Some(baseline_total.clone().expect("loads present")),
            Case::Uncoordinated => {
                let ev = sessions
                    .iter()
                    .map(|s| uncoordinated_schedule(s, cfg.charger_power_kw, &grid))
                    .collect::<Result<Vec<_>, _>>()?;
                let ev_total = DemandProfile::sum(&ev)?.expect("n_users >= 1");
                Some(baseline_total.as_ref().expect("loads present").add(&ev_total)?)
            }
            Case::Dr | Case::DrV2g => {
                let dr_cfg = DrConfig { v2g_enabled: case == Case::DrV2g, ..cfg.dr.clone() };
                let out = run_dr(&sessions, &baselines, cfg.charger_power_kw, &dr_cfg, &grid)?;
                kv(format!("{name}.iterations"), out.iterations_used.to_string());
                kv(format!("{name}.converged"), out.converged.to_string());
                kv(format!("{name}.par_before"), format_sig(out.par_before));
                kv(format!("{name}.par_after"), format_sig(out.par_after));
                kv(format!("{name}.peak_before_kw"), format_sig(out.peak_before_kw));
                kv(format!("{name}.peak_after_kw"), format_sig(out.peak_after_kw));
                kv(format!("{name}.trace_kw"), out.trace.iter().map(|&v| format_sig(v)).collect::<Vec<_>>().join(","));
                if cfg.per_user_schedules {
                    writer.write(&format!("{name}_schedules.csv"), &schedules_csv(&out.schedules))?;
                }
                let aggregate = out.aggregate.clone();
                if case == Case::Dr {
                    report.dr = Some(out);
                } else {
                    report.dr_v2g = Some(out);
                }
                Some(aggregate)
            }
            Case::AnalyticComparison => {
                analytic_comparison(cfg, writer, &mut kv)?;
                None
            }
        };
        if let Some(aggregate) = aggregate {
            writer.write(&format!("{name}.csv"), &aggregate.to_csv())?;
            kv(format!("{name}.peak_kw"), format_sig(aggregate.peak()));
            kv(format!("{name}.par"), format_sig(aggregate.par()?));
            kv(format!("{name}.energy_kwh"), format_sig(aggregate.energy()));
            report.aggregates.insert(case, aggregate);
        }
    }
    report.baselines = baselines;
    report.sessions = sessions;
    Ok(())
}

fn analytic_comparison(
    cfg: &ScenarioConfig,
    writer: &mut Writer<'_>,
    kv: &mut impl FnMut(String, String),
) -> Result<(), ScenarioError> {
    let model = cfg.charger()?;
    let expected = expected_profile(&model, &cfg.grid)?;
    writer.write("expected.csv", &expected.to_csv())?;
    kv("expected.peak_kw".into(), format_sig(expected.peak()));
    kv("expected.energy_kwh".into(), format_sig(expected.energy()));
    if cfg.emit_extended {
        let extended = expected_profile_extended(&model, cfg.grid.resolution_hours())?;
        writer.write("expected_extended.csv", &extended.to_csv())?;
    }
    for curve in
        family_curves(cfg.charger_power_kw, cfg.arrival, cfg.comparison_mean, cfg.comparison_variance, &cfg.grid)?
    {
        let name = curve.family.name();
        writer.write(&format!("expected_{name}.csv"), &curve.profile.to_csv())?;
        kv(format!("expected_{name}.spec"), curve.spec.to_string());
        kv(format!("expected_{name}.peak_kw"), format_sig(curve.profile.peak()));
    }
    if cfg.samples > 0 {
        let empirical = empirical_expected_profile(&cfg.fleet()?, cfg.samples, &cfg.grid)?;
        writer.write("empirical.csv", &empirical.to_csv())?;
        kv("empirical.samples".into(), cfg.samples.to_string());
        let deviation = empirical.mean.max_abs_diff(&expected)?;
        kv("empirical.max_abs_deviation_kw".into(), format_sig(deviation));
    }
    Ok(())
}
