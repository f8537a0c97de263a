//! Probability laws for arrival, charging and departure times.
//!
//! [`DistributionSpec`] is the plain tagged description used in configs;
//! [`Distribution`] is the validated form that evaluation and sampling work on.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use thiserror::Error;

use crate::optimize::nelder_mead;
use crate::quadrature::adaptive_simpson;
use crate::special::{bessel_i0e, bessel_i1e, normal_cdf, normal_pdf, q_function};

/// Cap on accept-reject attempts for one truncated Gaussian draw.
pub const TRUNCATION_ATTEMPT_CAP: usize = 1_000_000;

const RICIAN_CDF_TOL: f64 = 1e-10;
const MATCH_REL_TOL: f64 = 1e-6;
const MATCH_MAX_ITER: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid {family} distribution: {reason}")]
    InvalidSpec { family: Family, reason: String },
    #[error("cannot match mean {mean} and variance {variance} with a {family} law: {reason}")]
    Infeasible { family: Family, mean: f64, variance: f64, reason: String },
    #[error("truncated gaussian sampler exceeded {attempts} attempts")]
    RejectionCap { attempts: usize },
    #[error("unknown distribution family `{0}`")]
    UnknownFamily(String),
    #[error("probability {0} outside (0, 1)")]
    BadProbability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Gaussian,
    Uniform,
    Exponential,
    TruncatedGaussian,
    Rician,
}

impl Family {
    pub const ALL: [Family; 5] =
        [Family::Gaussian, Family::Uniform, Family::Exponential, Family::TruncatedGaussian, Family::Rician];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Uniform => "uniform",
            Family::Exponential => "exponential",
            Family::TruncatedGaussian => "truncated_gaussian",
            Family::Rician => "rician",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = DistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| DistError::UnknownFamily(s.to_string()))
    }
}

/// Tagged description of a probability law. Times are in hours.
///
/// `TruncatedGaussian` carries the parameters of the parent Gaussian before
/// truncation to `[0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistributionSpec {
    Gaussian { mu: f64, sigma: f64 },
    Uniform { c: f64, d: f64 },
    Exponential { lambda: f64 },
    TruncatedGaussian { mu: f64, sigma: f64 },
    Rician { nu: f64, sigma: f64 },
}

impl DistributionSpec {
    pub fn family(&self) -> Family {
        match self {
            DistributionSpec::Gaussian { .. } => Family::Gaussian,
            DistributionSpec::Uniform { .. } => Family::Uniform,
            DistributionSpec::Exponential { .. } => Family::Exponential,
            DistributionSpec::TruncatedGaussian { .. } => Family::TruncatedGaussian,
            DistributionSpec::Rician { .. } => Family::Rician,
        }
    }

    pub fn validate(&self) -> Result<(), DistError> {
        let fail = |reason: String| Err(DistError::InvalidSpec { family: self.family(), reason });
        let finite = |name: &str, v: f64| if v.is_finite() { Ok(()) } else { fail(format!("{name} must be finite")) };
        match *self {
            DistributionSpec::Gaussian { mu, sigma } | DistributionSpec::TruncatedGaussian { mu, sigma } => {
                finite("mu", mu)?;
                finite("sigma", sigma)?;
                if sigma <= 0.0 {
                    return fail(format!("sigma must be positive, got {sigma}"));
                }
            }
            DistributionSpec::Uniform { c, d } => {
                finite("c", c)?;
                finite("d", d)?;
                if !(0.0 <= c && c < d) {
                    return fail(format!("need 0 <= c < d, got c={c}, d={d}"));
                }
            }
            DistributionSpec::Exponential { lambda } => {
                finite("lambda", lambda)?;
                if lambda <= 0.0 {
                    return fail(format!("lambda must be positive, got {lambda}"));
                }
            }
            DistributionSpec::Rician { nu, sigma } => {
                finite("nu", nu)?;
                finite("sigma", sigma)?;
                if nu < 0.0 {
                    return fail(format!("nu must be non-negative, got {nu}"));
                }
                if sigma <= 0.0 {
                    return fail(format!("sigma must be positive, got {sigma}"));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DistributionSpec::Gaussian { mu, sigma } => write!(f, "gaussian(mu={mu}, sigma={sigma})"),
            DistributionSpec::Uniform { c, d } => write!(f, "uniform(c={c}, d={d})"),
            DistributionSpec::Exponential { lambda } => write!(f, "exponential(lambda={lambda})"),
            DistributionSpec::TruncatedGaussian { mu, sigma } => {
                write!(f, "truncated_gaussian(mu={mu}, sigma={sigma})")
            }
            DistributionSpec::Rician { nu, sigma } => write!(f, "rician(nu={nu}, sigma={sigma})"),
        }
    }
}

/// A validated probability law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distribution {
    spec: DistributionSpec,
}

impl TryFrom<DistributionSpec> for Distribution {
    type Error = DistError;

    fn try_from(spec: DistributionSpec) -> Result<Self, Self::Error> {
        Distribution::new(spec)
    }
}

impl Distribution {
    pub fn new(spec: DistributionSpec) -> Result<Self, DistError> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> DistributionSpec {
        self.spec
    }

    pub fn family(&self) -> Family {
        self.spec.family()
    }

    /// Lower end of the support.
    pub fn support_min(&self) -> f64 {
        match self.spec {
            DistributionSpec::Gaussian { .. } => f64::NEG_INFINITY,
            DistributionSpec::Uniform { c, .. } => c,
            _ => 0.0,
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self.spec {
            DistributionSpec::Gaussian { mu, sigma } => normal_pdf((x - mu) / sigma) / sigma,
            DistributionSpec::Uniform { c, d } => {
                if c <= x && x < d {
                    1.0 / (d - c)
                } else {
                    0.0
                }
            }
            DistributionSpec::Exponential { lambda } => {
                if x < 0.0 {
                    0.0
                } else {
                    lambda * (-lambda * x).exp()
                }
            }
            DistributionSpec::TruncatedGaussian { mu, sigma } => {
                if x < 0.0 {
                    0.0
                } else {
                    normal_pdf((x - mu) / sigma) / (sigma * q_function(-mu / sigma))
                }
            }
            DistributionSpec::Rician { nu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    let s2 = sigma * sigma;
                    // exp(-(x^2 + nu^2) / 2s2) I0(x nu / s2) with the Bessel growth folded in.
                    x / s2 * (-(x - nu) * (x - nu) / (2.0 * s2)).exp() * bessel_i0e(x * nu / s2)
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self.spec {
            DistributionSpec::Gaussian { mu, sigma } => normal_cdf((x - mu) / sigma),
            DistributionSpec::Uniform { c, d } => ((x - c) / (d - c)).clamp(0.0, 1.0),
            DistributionSpec::Exponential { lambda } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-lambda * x).exp_m1()
                }
            }
            DistributionSpec::TruncatedGaussian { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    let z = q_function(-mu / sigma);
                    ((z - q_function((x - mu) / sigma)) / z).clamp(0.0, 1.0)
                }
            }
            DistributionSpec::Rician { .. } => {
                if x <= 0.0 {
                    0.0
                } else {
                    self.rician_cdf(x)
                }
            }
        }
    }

    fn rician_cdf(&self, x: f64) -> f64 {
        let upper = self.tail_cutoff(1e-16);
        if x >= upper {
            return 1.0;
        }
        let (mean, _) = self.moments();
        let split = mean.clamp(0.0, upper);
        // Integrate the shorter side.
        let value = if x <= split {
            adaptive_simpson(|t| self.pdf(t), 0.0, x, RICIAN_CDF_TOL)
        } else {
            adaptive_simpson(|t| self.pdf(t), x, upper, RICIAN_CDF_TOL).map(|v| 1.0 - v)
        };
        // Adaptive Simpson on a smooth bounded density does not fail in practice;
        // fall back to the last estimate if it ever does.
        value.unwrap_or_else(|e| e.estimate).clamp(0.0, 1.0)
    }

    /// A point `x` with `P(X > x) <= tail`, from closed-form tail bounds.
    pub fn tail_cutoff(&self, tail: f64) -> f64 {
        let tail = tail.clamp(1e-300, 0.5);
        match self.spec {
            DistributionSpec::Gaussian { mu, sigma } => mu + sigma * inverse_q(tail),
            DistributionSpec::Uniform { d, .. } => d,
            DistributionSpec::Exponential { lambda } => -tail.ln() / lambda,
            DistributionSpec::TruncatedGaussian { mu, sigma } => {
                (mu + sigma * inverse_q(tail * q_function(-mu / sigma))).max(0.0)
            }
            // X = |(nu + s Z1, s Z2)| <= nu + s |(Z1, Z2)|, and the Rayleigh tail is exp(-r^2/2).
            DistributionSpec::Rician { nu, sigma } => nu + sigma * (-2.0 * tail.ln()).sqrt(),
        }
    }

    /// Inverse cdf by bisection (closed form where available).
    pub fn quantile(&self, p: f64) -> Result<f64, DistError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(DistError::BadProbability(p));
        }
        match self.spec {
            DistributionSpec::Uniform { c, d } => return Ok(c + p * (d - c)),
            DistributionSpec::Exponential { lambda } => return Ok(-(-p).ln_1p() / lambda),
            DistributionSpec::Gaussian { mu, sigma } => return Ok(mu - sigma * inverse_q(p)),
            _ => {}
        }
        let mut lo = self.support_min();
        let mut hi = self.tail_cutoff((1.0 - p) * 0.5);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi.abs().max(1.0) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Analytic mean and variance.
    pub fn moments(&self) -> (f64, f64) {
        match self.spec {
            DistributionSpec::Gaussian { mu, sigma } => (mu, sigma * sigma),
            DistributionSpec::Uniform { c, d } => (0.5 * (c + d), (d - c).powi(2) / 12.0),
            DistributionSpec::Exponential { lambda } => (1.0 / lambda, 1.0 / (lambda * lambda)),
            DistributionSpec::TruncatedGaussian { mu, sigma } => {
                let alpha = -mu / sigma;
                let hazard = normal_pdf(alpha) / q_function(alpha);
                let mean = mu + sigma * hazard;
                let var = sigma * sigma * (1.0 + alpha * hazard - hazard * hazard);
                (mean, var)
            }
            DistributionSpec::Rician { nu, sigma } => {
                // mean = sigma sqrt(pi/2) L_{1/2}(-nu^2 / 2 sigma^2), written with scaled Bessels.
                let y = nu * nu / (4.0 * sigma * sigma);
                let laguerre = (1.0 + 2.0 * y) * bessel_i0e(y) + 2.0 * y * bessel_i1e(y);
                let mean = sigma * (PI / 2.0).sqrt() * laguerre;
                let second = 2.0 * sigma * sigma + nu * nu;
                (mean, (second - mean * mean).max(0.0))
            }
        }
    }

    /// One draw. Only the truncated Gaussian can fail, by hitting its attempt cap.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, DistError> {
        let draw = match self.spec {
            DistributionSpec::Gaussian { mu, sigma } => mu + sigma * rng.sample::<f64, _>(StandardNormal),
            DistributionSpec::Uniform { c, d } => c + (d - c) * rng.random::<f64>(),
            DistributionSpec::Exponential { lambda } => rng.sample::<f64, _>(Exp1) / lambda,
            DistributionSpec::TruncatedGaussian { mu, sigma } => {
                for _ in 0..TRUNCATION_ATTEMPT_CAP {
                    let x = mu + sigma * rng.sample::<f64, _>(StandardNormal);
                    if x >= 0.0 {
                        return Ok(x);
                    }
                }
                return Err(DistError::RejectionCap { attempts: TRUNCATION_ATTEMPT_CAP });
            }
            DistributionSpec::Rician { nu, sigma } => {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                (nu + sigma * z1).hypot(sigma * z2)
            }
        };
        Ok(draw)
    }
}

/// Inverse of the Gaussian tail probability, by bisection on `q_function`.
fn inverse_q(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if q_function(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Result of [`match_moments`]: the fitted law and the moments it actually has.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentMatch {
    pub spec: DistributionSpec,
    pub mean: f64,
    pub variance: f64,
}

/// Chooses parameters of `family` so that its mean and variance equal the targets.
///
/// Exponential has one degree of freedom: only the mean is matched and the
/// resulting variance is reported in the returned [`MomentMatch`].
pub fn match_moments(family: Family, target_mean: f64, target_variance: f64) -> Result<MomentMatch, DistError> {
    let infeasible = |reason: &str| DistError::Infeasible {
        family,
        mean: target_mean,
        variance: target_variance,
        reason: reason.to_string(),
    };
    if !(target_mean.is_finite() && target_mean > 0.0) {
        return Err(infeasible("mean must be positive"));
    }
    let variance_needed = family != Family::Exponential;
    if variance_needed && !(target_variance.is_finite() && target_variance > 0.0) {
        return Err(infeasible("variance must be positive"));
    }
    let spec = match family {
        Family::Gaussian => DistributionSpec::Gaussian { mu: target_mean, sigma: target_variance.sqrt() },
        Family::Exponential => DistributionSpec::Exponential { lambda: 1.0 / target_mean },
        Family::Uniform => {
            let half = (3.0 * target_variance).sqrt();
            let c = target_mean - half;
            if c < -1e-12 * target_mean {
                return Err(infeasible("variance too large for a non-negative uniform support"));
            }
            DistributionSpec::Uniform { c: c.max(0.0), d: target_mean + half }
        }
        Family::TruncatedGaussian => {
            // Post-truncation variance tends to mean^2 (the exponential limit) as mu -> -inf.
            if target_variance >= target_mean * target_mean {
                return Err(infeasible("a gaussian truncated at zero needs variance < mean^2"));
            }
            fit_two_parameter(
                target_mean,
                target_variance,
                |p| DistributionSpec::TruncatedGaussian { mu: p[0], sigma: p[1].exp() },
                [target_mean, 0.5 * target_variance.ln()],
            )
            .ok_or_else(|| infeasible("root finder did not reach the target moments"))?
        }
        Family::Rician => {
            // Var/mean^2 is largest in the Rayleigh case nu = 0, where it is (4 - pi) / pi.
            let ratio = target_variance / (target_mean * target_mean);
            if ratio > (4.0 - PI) / PI * (1.0 + 1e-12) {
                return Err(infeasible("variance/mean^2 exceeds the Rayleigh limit (4 - pi)/pi"));
            }
            // Moment start ignoring the Bessel terms: nu^2 + 2 sigma^2 = E[T^2], sigma^2 ~ var.
            let nu0 = (target_mean * target_mean - target_variance).max(1e-6 * target_mean).sqrt();
            fit_two_parameter(
                target_mean,
                target_variance,
                |p| DistributionSpec::Rician { nu: p[0].abs(), sigma: p[1].exp() },
                [nu0, 0.5 * target_variance.ln()],
            )
            .ok_or_else(|| infeasible("root finder did not reach the target moments"))?
        }
    };
    let dist = Distribution::new(spec)?;
    let (mean, variance) = dist.moments();
    Ok(MomentMatch { spec, mean, variance })
}

/// Nelder–Mead on squared relative moment residuals, restarted from the best
/// point a few times. Returns `None` if the residual stays above tolerance.
fn fit_two_parameter(
    target_mean: f64,
    target_variance: f64,
    make: impl Fn(&[f64]) -> DistributionSpec,
    start: [f64; 2],
) -> Option<DistributionSpec> {
    let residual = |p: &[f64]| -> f64 {
        let spec = make(p);
        if spec.validate().is_err() {
            return f64::INFINITY;
        }
        let (m, v) = Distribution { spec }.moments();
        ((m - target_mean) / target_mean).powi(2) + ((v - target_variance) / target_variance).powi(2)
    };
    let mut x = start.to_vec();
    let mut step = vec![0.25 * target_variance.sqrt(), 0.25];
    for _ in 0..6 {
        let m = nelder_mead(residual, &x, &step, 1e-30, MATCH_MAX_ITER);
        x = m.x;
        if m.value.sqrt() < 0.01 * MATCH_REL_TOL {
            break;
        }
        step.iter_mut().for_each(|s| *s *= 0.1);
    }
    let spec = make(&x);
    let (m, v) = Distribution { spec }.moments();
    let ok = ((m - target_mean) / target_mean).abs() <= MATCH_REL_TOL
        && ((v - target_variance) / target_variance).abs() <= MATCH_REL_TOL;
    ok.then_some(spec)
}
