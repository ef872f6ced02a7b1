//! Noise-aware replacements for the standard allocation rules.
//!
//! Both repairs rely on the Laplace noise law being known: posterior repair
//! for coverage decisions on D-Laplace releases, and inflationary repair for
//! Title I fractions computed from Laplace counts.

use serde::{Deserialize, Serialize};

use crate::allocators::{vra_classify, VraThresholds};
use crate::error::{Error, Result};
use crate::mechanisms::{decompose_vra, recompose_vra};
use crate::model::CoverageLabel;
use crate::rng::NoiseSource;

/// Rejection attempts allowed per requested posterior sample.
pub const REJECTION_CAP_FACTOR: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairParams {
    /// Posterior probability at or above which a jurisdiction is covered.
    pub p: f64,
    pub n_samples: usize,
}

impl Default for RepairParams {
    fn default() -> Self {
        Self {
            p: 0.5,
            n_samples: 100,
        }
    }
}

impl RepairParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidConfig(format!(
                "p must lie in [0,1], got {}",
                self.p
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// One draw from Laplace(`center`, `scale`) conditioned on being non-negative.
///
/// Centres at or above zero use rejection (acceptance at least one half).
/// Below zero the conditioned law is exactly an exponential with mean
/// `scale`, which is sampled directly.
fn truncated_laplace<R: NoiseSource + ?Sized>(
    center: f64,
    scale: f64,
    rng: &mut R,
    attempts: &mut usize,
    cap: usize,
) -> Result<f64> {
    if center < 0.0 {
        *attempts += 1;
        return Ok(-scale * rng.next_uniform().ln());
    }
    loop {
        if *attempts >= cap {
            return Err(Error::SamplingExhausted(cap));
        }
        *attempts += 1;
        let v = center + rng.laplace(scale);
        if v >= 0.0 {
            return Ok(v);
        }
    }
}

/// Monte Carlo posterior probability that `predicate` holds for the true
/// components, given noisy components observed under independent
/// Laplace(`scale`) noise and a flat prior on the non-negative orthant.
pub fn posterior_probability<R, F>(
    noisy: &[f64],
    scale: f64,
    n_samples: usize,
    rng: &mut R,
    mut predicate: F,
) -> Result<f64>
where
    R: NoiseSource + ?Sized,
    F: FnMut(&[f64]) -> bool,
{
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::NonPositiveScale(scale));
    }
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
    }
    if noisy.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let cap = REJECTION_CAP_FACTOR * n_samples * noisy.len().max(1);
    let mut attempts = 0;
    let mut candidate = vec![0.0; noisy.len()];
    let mut hits = 0usize;
    for _ in 0..n_samples {
        for (c, &center) in candidate.iter_mut().zip(noisy) {
            *c = truncated_laplace(center, scale, rng, &mut attempts, cap)?;
        }
        if predicate(&candidate) {
            hits += 1;
        }
    }
    Ok(hits as f64 / n_samples as f64)
}

/// Posterior probability that a jurisdiction is covered given its D-Laplace
/// release `(vac, lep, lit)` at privacy level `eps`.
pub fn posterior_covered<R: NoiseSource + ?Sized>(
    noisy: (f64, f64, f64),
    eps: f64,
    n_samples: usize,
    rng: &mut R,
    t: &VraThresholds,
) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::NonPositiveEpsilon(eps));
    }
    let (vac, lep, lit) = noisy;
    let components = decompose_vra(vac, lep, lit);
    posterior_probability(&components, 1.0 / eps, n_samples, rng, |q| {
        let (vac, lep, lit) = recompose_vra([q[0], q[1], q[2]]);
        vra_classify(vac, lep, lit, t).is_ok_and(CoverageLabel::is_covered)
    })
}

/// Covered iff the posterior coverage probability is at least `params.p`.
pub fn repair_classify<R: NoiseSource + ?Sized>(
    noisy: (f64, f64, f64),
    eps: f64,
    params: &RepairParams,
    rng: &mut R,
    t: &VraThresholds,
) -> Result<CoverageLabel> {
    params.validate()?;
    let post = posterior_covered(noisy, eps, params.n_samples, rng, t)?;
    Ok(CoverageLabel::from_bool(post >= params.p))
}

/// Which constant multiplies the per-district slack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlackRule {
    /// `Delta = 2 ln(2k/delta) / eps`, as used in the guarantee's proof.
    #[default]
    Proof,
    /// `Delta = ln(2k/delta) / eps`.
    Short,
}

/// Slack values and the resulting budget of one inflationary allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationParams {
    pub k: usize,
    pub epsilon: f64,
    pub delta: f64,
    /// Added to each weighted count.
    pub slack: f64,
    /// Subtracted from the weighted total.
    pub total_slack: f64,
    /// Sum of the inflated fractions: the budget as a multiple of the original.
    pub budget_factor: f64,
}

/// `(Delta, Delta')` with the proof's constants.
pub fn inflation_slacks(k: usize, eps: f64, delta: f64) -> Result<(f64, f64)> {
    inflation_slacks_with(k, eps, delta, SlackRule::Proof)
}

pub fn inflation_slacks_with(
    k: usize,
    eps: f64,
    delta: f64,
    rule: SlackRule,
) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::DomainError("k must be at least 1".into()));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::DomainError(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::DomainError(format!(
            "delta must lie in (0,1), got {delta}"
        )));
    }
    let k = k as f64;
    let factor = match rule {
        SlackRule::Proof => 2.0,
        SlackRule::Short => 1.0,
    };
    let slack = factor * (2.0 * k / delta).ln() / eps;
    let total_slack = k * (2.0 * k * k / delta).ln() / eps;
    Ok((slack, total_slack))
}

/// `M'(a) = (exp_a * eli_a + Delta) / (sum_b exp_b * eli_b - Delta')`.
pub fn inflationary_allocate(
    noisy_eli: &[f64],
    exp: &[f64],
    eps: f64,
    delta: f64,
) -> Result<(Vec<f64>, InflationParams)> {
    inflationary_allocate_with(noisy_eli, exp, eps, delta, SlackRule::Proof)
}

pub fn inflationary_allocate_with(
    noisy_eli: &[f64],
    exp: &[f64],
    eps: f64,
    delta: f64,
    rule: SlackRule,
) -> Result<(Vec<f64>, InflationParams)> {
    if noisy_eli.len() != exp.len() {
        return Err(Error::LengthMismatch {
            left: noisy_eli.len(),
            right: exp.len(),
        });
    }
    if noisy_eli.iter().chain(exp).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let k = noisy_eli.len();
    let (slack, total_slack) = inflation_slacks_with(k, eps, delta, rule)?;
    let weighted: Vec<f64> = noisy_eli.iter().zip(exp).map(|(e, x)| e * x).collect();
    let denominator = weighted.iter().sum::<f64>() - total_slack;
    if !(denominator > 0.0) {
        return Err(Error::NonPositiveDenominator(denominator));
    }
    let fractions: Vec<f64> = weighted.iter().map(|w| (w + slack) / denominator).collect();
    let budget_factor = fractions.iter().sum();
    Ok((
        fractions,
        InflationParams {
            k,
            epsilon: eps,
            delta,
            slack,
            total_slack,
            budget_factor,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn slack_values() {
        let (d, dp) = inflation_slacks(10, 0.1, 0.05).unwrap();
        assert!((d - 2.0 * 400f64.ln() / 0.1).abs() < 1e-9);
        assert!((d - 119.829).abs() < 1e-3);
        assert!((dp - 829.405).abs() < 1e-3);
        let (d2, dp2) = inflation_slacks(10, 0.05, 0.05).unwrap();
        assert!((d2 - 2.0 * d).abs() < 1e-9);
        assert!((dp2 - 2.0 * dp).abs() < 1e-9);
        let (d_near_one, _) = inflation_slacks(1, 1.0, 0.999_999).unwrap();
        assert!(d_near_one > 0.0);
        let (short, _) = inflation_slacks_with(10, 0.1, 0.05, SlackRule::Short).unwrap();
        assert!((2.0 * short - d).abs() < 1e-9);
    }

    #[test]
    fn slack_domain_errors() {
        assert!(inflation_slacks(0, 1.0, 0.05).is_err());
        assert!(inflation_slacks(3, 0.0, 0.05).is_err());
        assert!(inflation_slacks(3, 1.0, 0.0).is_err());
        assert!(inflation_slacks(3, 1.0, 1.0).is_err());
    }

    #[test]
    fn inflation_dominates_truth_without_noise() {
        let x = vec![1000.0; 50];
        let exp = vec![1.0; 50];
        let (m, params) = inflationary_allocate(&x, &exp, 0.1, 0.05).unwrap();
        assert!(m.iter().all(|v| *v >= 1000.0 / 50_000.0));
        assert!(params.budget_factor > 1.0);
        assert_eq!(params.k, 50);
    }

    #[test]
    fn inflation_rejects_small_totals() {
        let err = inflationary_allocate(&[1.0, 1.0], &[1.0, 1.0], 0.1, 0.05).unwrap_err();
        assert!(matches!(err, Error::NonPositiveDenominator(_)));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn posterior_extremes() {
        let t = VraThresholds::default();
        let mut rng = RngStream::new(11, 0);
        // lep share 20%, illiteracy 25%: margins of thousands at scale 1
        let deep_in = posterior_covered((100_000.0, 20_000.0, 5000.0), 1.0, 500, &mut rng, &t);
        assert_eq!(deep_in.unwrap(), 1.0);
        let deep_out = posterior_covered((100_000.0, 100.0, 0.0), 1.0, 500, &mut rng, &t);
        assert_eq!(deep_out.unwrap(), 0.0);
    }

    #[test]
    fn posterior_handles_negative_noisy_components() {
        let t = VraThresholds::default();
        let mut rng = RngStream::new(12, 0);
        let p = posterior_covered((-50.0, -80.0, -100.0), 1.0, 200, &mut rng, &t).unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn repair_p_boundaries() {
        let t = VraThresholds::default();
        let noisy = (1000.0, 40.0, 0.3);
        let mut rng = RngStream::new(13, 0);
        let always = RepairParams {
            p: 0.0,
            n_samples: 50,
        };
        assert_eq!(
            repair_classify(noisy, 0.5, &always, &mut rng, &t).unwrap(),
            CoverageLabel::Covered
        );
        let strict = RepairParams {
            p: 1.0,
            n_samples: 50,
        };
        assert_eq!(
            repair_classify(noisy, 0.5, &strict, &mut rng, &t).unwrap(),
            CoverageLabel::NotCovered
        );
        assert!(RepairParams {
            p: 1.5,
            n_samples: 1
        }
        .validate()
        .is_err());
        assert!(RepairParams {
            p: 0.5,
            n_samples: 0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn rejection_cap_is_enforced() {
        /// Always returns a large negative Laplace value.
        struct Hostile;
        impl NoiseSource for Hostile {
            fn next_uniform(&mut self) -> f64 {
                0.5
            }
            fn laplace(&mut self, _scale: f64) -> f64 {
                -1e9
            }
        }
        let err = posterior_probability(&[1.0], 1.0, 2, &mut Hostile, |_| true).unwrap_err();
        assert!(matches!(err, Error::SamplingExhausted(2000)));
    }
}
