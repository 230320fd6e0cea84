//! Transition kernels of nonnegative Markov recursions.
//!
//! The workhorse is [`MultiplicativeKernel`], the law of
//! `M' = φ(M)·Λ` with iid positive innovations `Λ ~ F`, whose transition
//! distribution function is `ρ(s, x) = F(x / φ(s))`. Samplers take the
//! uniform variate as an argument; all randomness stays with the caller.

use crate::error::{QsdError, Result};
use crate::normal;

/// Transition distribution function `ρ(s, x) = P(M' ≤ x | M = s)` plus
/// inverse-CDF samplers for the free and the conditioned one-step laws.
pub trait TransitionKernel: Send + Sync {
    /// `ρ(s, x)`.
    fn rho(&self, s: f64, x: f64) -> Result<f64>;

    /// The `u`-quantile of `ρ(s, ·)`.
    fn sample_step(&self, s: f64, u: f64) -> Result<f64>;

    /// The `u`-quantile of `ρ(s, ·) / ρ(s, A)` on `[0, A]`.
    fn sample_step_conditioned(&self, s: f64, threshold: f64, u: f64) -> Result<f64>;

    /// Infimum of reachable states; grid builders never go below it.
    fn state_space_floor(&self) -> f64 {
        0.0
    }

    /// `ρ(s, x) / ρ(s, A)` for `0 ≤ x ≤ A`.
    fn rho_conditioned(&self, s: f64, x: f64, threshold: f64) -> Result<f64> {
        if !(0.0..=threshold).contains(&x) {
            return Err(QsdError::Domain(format!(
                "conditioned kernel needs 0 <= x <= A, got x={x}, A={threshold}"
            )));
        }
        let denom = self.rho(s, threshold)?;
        if denom <= 0.0 {
            return Err(QsdError::DegenerateKernel {
                state: s,
                threshold,
            });
        }
        if x == threshold {
            return Ok(1.0);
        }
        Ok((self.rho(s, x)? / denom).clamp(0.0, 1.0))
    }
}

/// The deterministic part `φ` of `M' = φ(M)·Λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiFunction {
    /// `t^α`; the EWMA family in multiplicative form. In-family for `0 ≤ α < 1`.
    Power { alpha: f64 },
    /// `t + a`; the Shiryaev–Roberts recursion when `a = 1`.
    Affine { a: f64 },
    /// `max(1, t)`; the reflected random walk (CUSUM) in multiplicative form.
    MaxOne,
}

impl PhiFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            PhiFunction::Power { alpha } => {
                if alpha == 0.0 {
                    1.0
                } else {
                    t.powf(alpha)
                }
            }
            PhiFunction::Affine { a } => t + a,
            PhiFunction::MaxOne => t.max(1.0),
        }
    }

    /// Rejects parameters for which `φ` is not a positive map. Out-of-family
    /// but well-defined choices such as `Power { alpha: 2.0 }` are accepted so
    /// the condition checkers can reject them on their merits.
    pub fn validate(&self) -> Result<()> {
        match *self {
            PhiFunction::Power { alpha } if !(alpha.is_finite() && alpha >= 0.0) => {
                Err(QsdError::Domain(format!(
                    "power exponent must be finite and >= 0, got {alpha}"
                )))
            }
            PhiFunction::Affine { a } if !(a.is_finite() && a > 0.0) => Err(QsdError::Domain(
                format!("affine shift must be finite and > 0, got {a}"),
            )),
            _ => Ok(()),
        }
    }

    /// Whether `φ(0) > 0`, i.e. zero is a legal source state.
    pub fn positive_at_zero(&self) -> bool {
        !matches!(self, PhiFunction::Power { alpha } if *alpha > 0.0)
    }
}

/// Which measure the observations follow for a likelihood-ratio innovation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Pre,
    Post,
}

/// Law of the iid positive innovations `Λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnovationDistribution {
    /// `log Λ ~ Normal(mu, sigma²)`.
    LogNormal { mu: f64, sigma: f64 },
    /// `Λ = f₁(X)/f₀(X)` for `f₀ = N(0,1)`, `f₁ = N(θ,1)`, so
    /// `log Λ = θX − θ²/2`. Under the pre-change measure `E Λ = 1`.
    LikelihoodRatioGaussian { theta: f64, measure: Measure },
}

impl InnovationDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InnovationDistribution::LogNormal { mu, sigma } => {
                if !mu.is_finite() || !(sigma.is_finite() && sigma > 0.0) {
                    return Err(QsdError::Domain(format!(
                        "lognormal needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
                    )));
                }
            }
            InnovationDistribution::LikelihoodRatioGaussian { theta, .. } => {
                if !theta.is_finite() || theta == 0.0 {
                    return Err(QsdError::Domain(format!(
                        "likelihood-ratio shift must be finite and nonzero, got {theta}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Location and scale of `log Λ`.
    pub fn log_params(&self) -> (f64, f64) {
        match *self {
            InnovationDistribution::LogNormal { mu, sigma } => (mu, sigma),
            InnovationDistribution::LikelihoodRatioGaussian { theta, measure } => {
                let half = 0.5 * theta * theta;
                let mu = match measure {
                    Measure::Pre => -half,
                    Measure::Post => half,
                };
                (mu, theta.abs())
            }
        }
    }

    /// Standardized log argument `(ln u − μ)/σ`.
    #[inline]
    fn z(&self, u: f64) -> f64 {
        let (mu, sigma) = self.log_params();
        (u.ln() - mu) / sigma
    }

    /// `F(u)`; zero for `u ≤ 0`.
    pub fn cdf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        normal::cdf(self.z(u))
    }

    /// `F⁻¹(p)` for `p ∈ (0, 1)`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(QsdError::Domain(format!(
                "quantile level must be in (0,1), got {p}"
            )));
        }
        let (mu, sigma) = self.log_params();
        Ok((mu + sigma * normal::quantile(p)).exp())
    }

    /// Inverse-CDF draw from a uniform variate.
    pub fn sample(&self, u: f64) -> Result<f64> {
        self.quantile(u)
    }
}

/// `ρ(s, x) = F(x / φ(s))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiplicativeKernel {
    pub phi: PhiFunction,
    pub innovation: InnovationDistribution,
    pub state_space_floor: f64,
}

impl MultiplicativeKernel {
    pub fn new(
        phi: PhiFunction,
        innovation: InnovationDistribution,
        state_space_floor: f64,
    ) -> Result<Self> {
        phi.validate()?;
        innovation.validate()?;
        if !(state_space_floor.is_finite() && state_space_floor >= 0.0) {
            return Err(QsdError::Domain(format!(
                "state space floor must be finite and >= 0, got {state_space_floor}"
            )));
        }
        Ok(MultiplicativeKernel {
            phi,
            innovation,
            state_space_floor,
        })
    }

    fn phi_checked(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(QsdError::Domain(format!(
                "state must be finite and >= 0, got {s}"
            )));
        }
        let v = self.phi.eval(s);
        if !(v > 0.0) || !v.is_finite() {
            return Err(QsdError::Domain(format!("phi({s}) = {v} is not positive")));
        }
        Ok(v)
    }

    fn check_uniform(u: f64) -> Result<()> {
        if u > 0.0 && u < 1.0 {
            Ok(())
        } else {
            Err(QsdError::Domain(format!(
                "uniform variate must be in (0,1), got {u}"
            )))
        }
    }
}

impl TransitionKernel for MultiplicativeKernel {
    fn rho(&self, s: f64, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(QsdError::Domain(format!(
                "target state must be >= 0, got {x}"
            )));
        }
        let phi = self.phi_checked(s)?;
        Ok(self.innovation.cdf(x / phi))
    }

    fn sample_step(&self, s: f64, u: f64) -> Result<f64> {
        Self::check_uniform(u)?;
        let phi = self.phi_checked(s)?;
        Ok(phi * self.innovation.quantile(u)?)
    }

    fn sample_step_conditioned(&self, s: f64, threshold: f64, u: f64) -> Result<f64> {
        Self::check_uniform(u)?;
        if !(threshold > 0.0) {
            return Err(QsdError::Domain(format!(
                "threshold must be > 0, got {threshold}"
            )));
        }
        let phi = self.phi_checked(s)?;
        let (mu, sigma) = self.innovation.log_params();
        let z_top = ((threshold / phi).ln() - mu) / sigma;
        let top = normal::cdf(z_top);
        if top <= 0.0 {
            return Err(QsdError::DegenerateKernel {
                state: s,
                threshold,
            });
        }
        let z = normal::quantile(u * top).min(z_top);
        Ok((phi * (mu + sigma * z).exp()).min(threshold))
    }

    fn state_space_floor(&self) -> f64 {
        self.state_space_floor
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lr_pre(theta: f64) -> InnovationDistribution {
        InnovationDistribution::LikelihoodRatioGaussian {
            theta,
            measure: Measure::Pre,
        }
    }

    fn kernel(phi: PhiFunction, inn: InnovationDistribution) -> MultiplicativeKernel {
        MultiplicativeKernel::new(phi, inn, 0.0).unwrap()
    }

    #[test]
    fn rho_eval_examples() {
        let k = kernel(PhiFunction::MaxOne, lr_pre(1.0));
        assert_eq!(k.rho(0.5, 1.0).unwrap(), k.innovation.cdf(1.0));
        let p = kernel(PhiFunction::Power { alpha: 0.5 }, lr_pre(1.0));
        assert_eq!(p.rho(4.0, 2.0).unwrap(), p.innovation.cdf(1.0));
    }

    #[test]
    fn rho_eval_domain_errors() {
        let k = kernel(PhiFunction::MaxOne, lr_pre(1.0));
        assert!(matches!(k.rho(-1.0, 1.0), Err(QsdError::Domain(_))));
        assert!(matches!(k.rho(1.0, -1.0), Err(QsdError::Domain(_))));
        let p = kernel(PhiFunction::Power { alpha: 0.5 }, lr_pre(1.0));
        assert!(matches!(p.rho(0.0, 1.0), Err(QsdError::Domain(_))));
    }

    #[test]
    fn rho_conditioned_edges() {
        let k = kernel(PhiFunction::Affine { a: 1.0 }, lr_pre(1.0));
        assert_eq!(k.rho_conditioned(0.3, 2.0, 2.0).unwrap(), 1.0);
        assert_eq!(k.rho_conditioned(0.3, 0.0, 2.0).unwrap(), 0.0);
        assert!(k.rho_conditioned(0.3, 3.0, 2.0).is_err());
    }

    #[test]
    fn conditioned_degenerate_when_escape_is_sure() {
        // log Λ ~ N(-0.5, 1); A/φ(s) = 1e-200 puts the cutoff 460 sd below.
        let k = kernel(PhiFunction::Affine { a: 1.0 }, lr_pre(1.0));
        let err = k.sample_step_conditioned(1e200, 1.0, 0.5).unwrap_err();
        assert!(matches!(err, QsdError::DegenerateKernel { .. }));
        assert!(matches!(
            k.rho_conditioned(1e200, 0.5, 1.0),
            Err(QsdError::DegenerateKernel { .. })
        ));
    }

    #[test]
    fn sample_step_examples() {
        let inn = InnovationDistribution::LogNormal {
            mu: 0.0,
            sigma: 1.0,
        };
        let p = kernel(PhiFunction::Power { alpha: 0.5 }, inn);
        assert!((p.sample_step(4.0, 0.5).unwrap() - 2.0).abs() < 1e-15);
        // F⁻¹(0.5) = 1 for LogNormal(0, 1)
        let a = kernel(PhiFunction::Affine { a: 1.0 }, inn);
        assert!((a.sample_step(1.0, 0.5).unwrap() - 2.0).abs() < 1e-15);
        assert!(a.sample_step(1.0, 0.0).is_err());
        assert!(a.sample_step(1.0, 1.0).is_err());
        assert!(a.sample_step(-1.0, 0.5).is_err());
    }

    #[test]
    fn conditioned_sampler_without_truncation_matches_free_sampler() {
        let k = kernel(PhiFunction::MaxOne, lr_pre(1.0));
        for &u in &[0.01, 0.3, 0.5, 0.9] {
            let free = k.sample_step(2.0, u).unwrap();
            let cond = k.sample_step_conditioned(2.0, 1e12, u).unwrap();
            assert!((free - cond).abs() <= 1e-13 * free, "u={u}");
        }
    }

    #[test]
    fn conditioned_sampler_top_quantile_reaches_threshold() {
        let k = kernel(PhiFunction::MaxOne, lr_pre(1.0));
        let a = std::f64::consts::E;
        let v = k.sample_step_conditioned(1.0, a, 1.0 - 1e-15).unwrap();
        assert!(v <= a && a - v < 1e-10);
    }

    #[test]
    fn lr_gaussian_log_params() {
        assert_eq!(lr_pre(2.0).log_params(), (-2.0, 2.0));
        let post = InnovationDistribution::LikelihoodRatioGaussian {
            theta: -2.0,
            measure: Measure::Post,
        };
        assert_eq!(post.log_params(), (2.0, 2.0));
    }

    #[test]
    fn validation() {
        assert!(PhiFunction::Affine { a: 0.0 }.validate().is_err());
        assert!(PhiFunction::Power { alpha: -0.1 }.validate().is_err());
        assert!(PhiFunction::Power { alpha: 2.0 }.validate().is_ok());
        assert!(lr_pre(0.0).validate().is_err());
        assert!(InnovationDistribution::LogNormal {
            mu: 0.0,
            sigma: 0.0
        }
        .validate()
        .is_err());
    }
}
