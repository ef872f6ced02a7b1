//! Deterministic allocation rules applied to true or noisy statistics.

use serde::{Deserialize, Serialize};

pub use crate::model::CoverageLabel;

use crate::error::{Error, Result};

/// Minority-language coverage thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VraThresholds {
    /// LEP share of voting-age citizens.
    pub pct: f64,
    /// Absolute LEP count.
    pub abs: f64,
    /// Illiteracy rate among LEP citizens.
    pub illit: f64,
}

impl Default for VraThresholds {
    fn default() -> Self {
        Self {
            pct: 0.05,
            abs: 10_000.0,
            illit: 0.0131,
        }
    }
}

impl VraThresholds {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.pct) || !(self.abs > 0.0) || !unit(self.illit) {
            return Err(Error::InvalidConfig(format!("invalid thresholds {self:?}")));
        }
        Ok(())
    }
}

/// `(lep/vac > pct OR lep > abs) AND lit/lep > illit`, strict inequalities.
/// A ratio with a zero denominator is false.
pub fn vra_classify(vac: f64, lep: f64, lit: f64, t: &VraThresholds) -> Result<CoverageLabel> {
    if !(vac.is_finite() && lep.is_finite() && lit.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let ratio_above = |num: f64, den: f64, threshold: f64| den != 0.0 && num / den > threshold;
    let enough_lep = ratio_above(lep, vac, t.pct) || lep > t.abs;
    let illiterate = ratio_above(lit, lep, t.illit);
    Ok(CoverageLabel::from_bool(enough_lep && illiterate))
}

/// Title I basic-grant fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct FundsAllocation {
    pub fractions: Vec<f64>,
    /// The weighted total was zero and the uniform vector was returned.
    pub degenerate: bool,
}

/// `fraction_a = exp_a * eli_a / sum_b exp_b * eli_b`.
pub fn title1_allocate(eli: &[f64], exp: &[f64]) -> Result<FundsAllocation> {
    if eli.len() != exp.len() {
        return Err(Error::LengthMismatch {
            left: eli.len(),
            right: exp.len(),
        });
    }
    if eli.iter().chain(exp).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let weighted: Vec<f64> = eli.iter().zip(exp).map(|(e, x)| e * x).collect();
    let total: f64 = weighted.iter().sum();
    if total == 0.0 {
        let n = eli.len();
        return Ok(FundsAllocation {
            fractions: vec![1.0 / n as f64; n],
            degenerate: true,
        });
    }
    Ok(FundsAllocation {
        fractions: weighted.into_iter().map(|w| w / total).collect(),
        degenerate: false,
    })
}

/// Exact proportional seat shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotaVector {
    pub quotas: Vec<f64>,
    pub seat_total: u32,
}

pub const DEFAULT_SEATS: u32 = 543;

pub fn quotas(tot: &[f64], seats: u32) -> Result<QuotaVector> {
    if tot.is_empty() {
        return Err(Error::EmptyInput);
    }
    if tot.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    if tot.iter().any(|v| *v < 0.0) {
        return Err(Error::DomainError(
            "populations must be non-negative".into(),
        ));
    }
    let total: f64 = tot.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroTotalPopulation);
    }
    let seats_f = f64::from(seats);
    Ok(QuotaVector {
        quotas: tot.iter().map(|t| t / total * seats_f).collect(),
        seat_total: seats,
    })
}

/// Round each quota half away from zero, with a floor of one seat. The
/// total may differ from `seats`.
pub fn apportion(tot: &[f64], seats: u32) -> Result<Vec<u32>> {
    let q = quotas(tot, seats)?;
    Ok(q.quotas.iter().map(|x| (x.round() as u32).max(1)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> VraThresholds {
        VraThresholds::default()
    }

    #[test]
    fn vra_examples() {
        assert_eq!(
            vra_classify(1000.0, 60.0, 2.0, &t()).unwrap(),
            CoverageLabel::Covered
        );
        assert_eq!(
            vra_classify(1e6, 12_000.0, 200.0, &t()).unwrap(),
            CoverageLabel::Covered
        );
        assert_eq!(
            vra_classify(1000.0, 40.0, 40.0, &t()).unwrap(),
            CoverageLabel::NotCovered
        );
    }

    #[test]
    fn vra_zero_denominators_are_false() {
        assert_eq!(
            vra_classify(0.0, 0.0, 0.0, &t()).unwrap(),
            CoverageLabel::NotCovered
        );
        // lep above the absolute threshold but no vac: still needs lit/lep
        assert_eq!(
            vra_classify(0.0, 20_000.0, 1000.0, &t()).unwrap(),
            CoverageLabel::Covered
        );
        assert!(matches!(
            vra_classify(f64::NAN, 1.0, 1.0, &t()),
            Err(Error::NonFiniteInput)
        ));
    }

    #[test]
    fn vra_strict_at_boundaries() {
        // exactly 5% and exactly 10000 are not enough
        assert_eq!(
            vra_classify(1000.0, 50.0, 10.0, &t()).unwrap(),
            CoverageLabel::NotCovered
        );
        assert_eq!(
            vra_classify(1e6, 10_000.0, 500.0, &t()).unwrap(),
            CoverageLabel::NotCovered
        );
    }

    #[test]
    fn title1_examples() {
        assert_eq!(
            title1_allocate(&[1.0, 1.0], &[1.0, 1.0]).unwrap().fractions,
            vec![0.5, 0.5]
        );
        assert_eq!(
            title1_allocate(&[1.0, 3.0], &[1.0, 1.0]).unwrap().fractions,
            vec![0.25, 0.75]
        );
        assert_eq!(
            title1_allocate(&[2.0, 2.0], &[1.0, 3.0]).unwrap().fractions,
            vec![0.25, 0.75]
        );
    }

    #[test]
    fn title1_degenerate_and_errors() {
        let a = title1_allocate(&[0.0, 0.0, 0.0, 0.0], &[1.0; 4]).unwrap();
        assert!(a.degenerate);
        assert_eq!(a.fractions, vec![0.25; 4]);
        assert!(matches!(
            title1_allocate(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            title1_allocate(&[f64::INFINITY], &[1.0]),
            Err(Error::NonFiniteInput)
        ));
    }

    #[test]
    fn apportion_examples() {
        assert_eq!(apportion(&[2.0, 1.0], 543).unwrap(), vec![362, 181]);
        assert_eq!(apportion(&[1000.0, 1.0], 543).unwrap(), vec![542, 1]);
        // quota 0.2 still gets a seat
        let s = apportion(&[1.0, 2714.0], 543).unwrap();
        assert_eq!(s[0], 1);
        assert!(matches!(
            apportion(&[0.0, 0.0], 543),
            Err(Error::ZeroTotalPopulation)
        ));
        assert!(matches!(apportion(&[], 543), Err(Error::EmptyInput)));
    }

    #[test]
    fn apportion_rounds_half_away_from_zero() {
        // quotas [1.5, 2.5]
        assert_eq!(apportion(&[3.0, 5.0], 4).unwrap(), vec![2, 3]);
    }

    #[test]
    fn quota_examples() {
        assert_eq!(
            quotas(&[1.0, 1.0, 2.0], 4).unwrap().quotas,
            vec![1.0, 1.0, 2.0]
        );
        assert_eq!(quotas(&[3.0], 543).unwrap().quotas, vec![543.0]);
    }
}
