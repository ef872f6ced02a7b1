//! Disparity measures over trial ensembles versus ground truth.
//!
//! Every ensemble mean is reduced in trial order, so results do not depend on
//! how trials were scheduled.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::allocators::{vra_classify, QuotaVector, VraThresholds};
use crate::error::{Error, Result};
use crate::model::{CoverageLabel, OutcomeVector, TrialEnsemble};

pub const MISALLOCATION_SCALE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "class_rate")]
    ClassRate,
    #[serde(rename = "mult_err")]
    MultErr,
    #[serde(rename = "misalloc")]
    Misalloc,
    #[serde(rename = "max_mult")]
    MaxMult,
    #[serde(rename = "avg_exp_dev")]
    AvgExpDev,
    #[serde(rename = "inversions")]
    Inversions,
    #[serde(rename = "dist_thresh")]
    DistThresh,
}

impl MetricKind {
    pub const ALL: [MetricKind; 7] = [
        MetricKind::ClassRate,
        MetricKind::MultErr,
        MetricKind::Misalloc,
        MetricKind::MaxMult,
        MetricKind::AvgExpDev,
        MetricKind::Inversions,
        MetricKind::DistThresh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::ClassRate => "class_rate",
            MetricKind::MultErr => "mult_err",
            MetricKind::Misalloc => "misalloc",
            MetricKind::MaxMult => "max_mult",
            MetricKind::AvgExpDev => "avg_exp_dev",
            MetricKind::Inversions => "inversions",
            MetricKind::DistThresh => "dist_thresh",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric `{s}`")))
    }
}

fn check_shape(ens: &TrialEnsemble, truth: &OutcomeVector) -> Result<()> {
    if ens.n_trials() == 0 {
        return Err(Error::ShapeMismatch("ensemble has no trials".into()));
    }
    if ens.n_assignees() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "ensemble has {} assignees, truth has {}",
            ens.n_assignees(),
            truth.len()
        )));
    }
    let kind = ens.trials()[0].outcomes().kind();
    if kind != truth.outcomes().kind() {
        return Err(Error::ShapeMismatch(format!(
            "ensemble holds {kind}, truth holds {}",
            truth.outcomes().kind()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRateReport {
    /// Fraction of trials agreeing with the true label.
    pub rates: Vec<f64>,
    pub truth: Vec<CoverageLabel>,
    pub min_covered: Option<f64>,
    pub min_not_covered: Option<f64>,
    /// Expected number of truly not-covered assignees labelled Covered.
    pub expected_false_positives: f64,
    pub expected_false_negatives: f64,
}

pub fn classification_rates(
    ens: &TrialEnsemble,
    truth: &OutcomeVector,
) -> Result<ClassificationRateReport> {
    check_shape(ens, truth)?;
    let truth_labels = truth
        .labels()
        .ok_or_else(|| Error::ShapeMismatch("classification needs labels".into()))?;
    let mut correct = vec![0usize; truth_labels.len()];
    for trial in ens.trials() {
        let labels = trial.labels().expect("kind checked");
        for ((c, got), want) in correct.iter_mut().zip(labels).zip(truth_labels) {
            if got == want {
                *c += 1;
            }
        }
    }
    let n = ens.n_trials() as f64;
    let rates: Vec<f64> = correct.iter().map(|&c| c as f64 / n).collect();
    let min_where = |label: CoverageLabel| {
        rates
            .iter()
            .zip(truth_labels)
            .filter(|(_, l)| **l == label)
            .map(|(r, _)| *r)
            .reduce(f64::min)
    };
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (r, l) in rates.iter().zip(truth_labels) {
        match l {
            CoverageLabel::NotCovered => fp += 1.0 - r,
            CoverageLabel::Covered => fn_ += 1.0 - r,
        }
    }
    Ok(ClassificationRateReport {
        min_covered: min_where(CoverageLabel::Covered),
        min_not_covered: min_where(CoverageLabel::NotCovered),
        rates,
        truth: truth_labels.to_vec(),
        expected_false_positives: fp,
        expected_false_negatives: fn_,
    })
}

/// `mean(õ_a) / o_a`; `None` where the true outcome is zero.
pub fn multiplicative_error(
    ens: &TrialEnsemble,
    truth: &OutcomeVector,
) -> Result<Vec<Option<f64>>> {
    check_shape(ens, truth)?;
    Ok(ens
        .mean_outcomes()
        .iter()
        .zip(truth.values())
        .map(|(m, o)| if o == 0.0 { None } else { Some(m / o) })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisallocationReport {
    /// `(mean(õ_a) - o_a) * 10^6`: dollars per million allocated.
    pub gamma: Vec<f64>,
    pub total_abs: f64,
    pub min: f64,
    pub max: f64,
}

pub fn misallocation(ens: &TrialEnsemble, truth: &OutcomeVector) -> Result<MisallocationReport> {
    check_shape(ens, truth)?;
    let gamma: Vec<f64> = ens
        .mean_outcomes()
        .iter()
        .zip(truth.values())
        .map(|(m, o)| (m - o) * MISALLOCATION_SCALE)
        .collect();
    Ok(MisallocationReport {
        total_abs: gamma.iter().map(|g| g.abs()).sum(),
        min: gamma.iter().copied().fold(f64::INFINITY, f64::min),
        max: gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        gamma,
    })
}

fn check_quotas(ens: &TrialEnsemble, quotas: &QuotaVector) -> Result<()> {
    if ens.n_trials() == 0 {
        return Err(Error::ShapeMismatch("ensemble has no trials".into()));
    }
    if ens.n_assignees() != quotas.quotas.len() {
        return Err(Error::ShapeMismatch(format!(
            "ensemble has {} assignees, {} quotas",
            ens.n_assignees(),
            quotas.quotas.len()
        )));
    }
    Ok(())
}

/// Mean over trials of `max_a õ_a/q_a - min_b õ_b/q_b`.
pub fn max_multiplicative(ens: &TrialEnsemble, quotas: &QuotaVector) -> Result<f64> {
    check_quotas(ens, quotas)?;
    if let Some(i) = quotas.quotas.iter().position(|q| !(*q > 0.0)) {
        return Err(Error::ZeroQuota(i));
    }
    let mut sum = 0.0;
    for trial in ens.trials() {
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for (i, q) in quotas.quotas.iter().enumerate() {
            let r = trial.value(i) / q;
            hi = hi.max(r);
            lo = lo.min(r);
        }
        sum += hi - lo;
    }
    Ok(sum / ens.n_trials() as f64)
}

/// Per-assignee `|mean(õ_a) - q_a|`.
pub fn expected_deviations(ens: &TrialEnsemble, quotas: &QuotaVector) -> Result<Vec<f64>> {
    check_quotas(ens, quotas)?;
    Ok(ens
        .mean_outcomes()
        .iter()
        .zip(&quotas.quotas)
        .map(|(m, q)| (m - q).abs())
        .collect())
}

/// `(1/|A|) * sum_a |mean(õ_a) - q_a|`.
pub fn avg_expected_deviation(ens: &TrialEnsemble, quotas: &QuotaVector) -> Result<f64> {
    let d = expected_deviations(ens, quotas)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Marks assignees that take part in at least one inverted pair: a pair whose
/// expected allocations are strictly ordered against their entitlements.
pub fn inversion_flags(expected: &[f64], entitlement: &[f64]) -> Result<Vec<bool>> {
    if expected.len() != entitlement.len() {
        return Err(Error::LengthMismatch {
            left: expected.len(),
            right: entitlement.len(),
        });
    }
    let n = expected.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| entitlement[a].total_cmp(&entitlement[b]));

    // groups of equal entitlement, ascending
    let mut groups: Vec<&[usize]> = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || entitlement[order[i]] != entitlement[order[start]] {
            groups.push(&order[start..i]);
            start = i;
        }
    }

    let mut flags = vec![false; n];
    // largest expected value among strictly smaller entitlements
    let mut max_below = f64::NEG_INFINITY;
    for g in &groups {
        for &a in *g {
            if expected[a] < max_below {
                flags[a] = true;
            }
        }
        for &a in *g {
            max_below = max_below.max(expected[a]);
        }
    }
    // smallest expected value among strictly larger entitlements
    let mut min_above = f64::INFINITY;
    for g in groups.iter().rev() {
        for &a in *g {
            if expected[a] > min_above {
                flags[a] = true;
            }
        }
        for &a in *g {
            min_above = min_above.min(expected[a]);
        }
    }
    Ok(flags)
}

pub fn count_inversions(expected: &[f64], entitlement: &[f64]) -> Result<usize> {
    Ok(inversion_flags(expected, entitlement)?
        .into_iter()
        .filter(|f| *f)
        .count())
}

/// Coordinate system for [`distance_to_threshold`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSpace {
    /// Raw count space.
    #[default]
    Raw,
    /// Counts divided by the noise scale 1/eps, i.e. raw distance times eps.
    NoiseScaled,
}

type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Closed half-space `normal . p <= offset`.
#[derive(Debug, Clone, Copy)]
struct HalfSpace {
    normal: Vec3,
    offset: f64,
}

impl HalfSpace {
    fn excess(&self, p: Vec3) -> f64 {
        dot(self.normal, p) - self.offset
    }

    fn contains(&self, p: Vec3) -> bool {
        // tolerate round-off from projecting onto the boundary
        self.excess(p) <= 1e-9 * (1.0 + self.offset.abs())
    }

    fn distance(&self, p: Vec3) -> f64 {
        self.excess(p).max(0.0) / dot(self.normal, self.normal).sqrt()
    }

    fn project(&self, p: Vec3) -> Vec3 {
        let t = self.excess(p) / dot(self.normal, self.normal);
        [
            p[0] - t * self.normal[0],
            p[1] - t * self.normal[1],
            p[2] - t * self.normal[2],
        ]
    }
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    dot(d, d).sqrt()
}

/// Euclidean distance from `p` to the intersection of two closed half-spaces,
/// by enumerating the active sets of the projection problem.
fn distance_to_intersection(p: Vec3, h1: HalfSpace, h2: HalfSpace) -> f64 {
    if h1.contains(p) && h2.contains(p) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (h, other) in [(h1, h2), (h2, h1)] {
        if !h.contains(p) {
            let q = h.project(p);
            if other.contains(q) {
                best = best.min(dist(p, q));
            }
        }
    }
    // both constraints active: project onto the line where the planes meet
    let (a, b) = (h1.normal, h2.normal);
    let (g11, g12, g22) = (dot(a, a), dot(a, b), dot(b, b));
    let det = g11 * g22 - g12 * g12;
    if det.abs() > 1e-12 * g11 * g22 {
        let (r1, r2) = (h1.excess(p), h2.excess(p));
        let l1 = (r1 * g22 - r2 * g12) / det;
        let l2 = (r2 * g11 - r1 * g12) / det;
        let q = [
            p[0] - l1 * a[0] - l2 * b[0],
            p[1] - l1 * a[1] - l2 * b[1],
            p[2] - l1 * a[2] - l2 * b[2],
        ];
        best = best.min(dist(p, q));
    }
    best
}

/// Distance in `(vac, lep, lit)` space from a point to the coverage decision
/// boundary, measured only to the surfaces whose crossing flips the label.
///
/// The boundary pieces are the planes `lep = pct*vac`, `lep = abs` and
/// `lit = illit*lep`. A covered point leaves coverage by crossing the
/// illiteracy plane or by dropping below both population thresholds; an
/// uncovered point needs the illiteracy condition together with one of the
/// population conditions.
pub fn distance_to_threshold(vac: f64, lep: f64, lit: f64, t: &VraThresholds) -> Result<f64> {
    let label = vra_classify(vac, lep, lit, t)?;
    let p = [vac, lep, lit];
    // closures of the three conditions and their complements, as half-spaces
    let pct_met = HalfSpace {
        normal: [t.pct, -1.0, 0.0],
        offset: 0.0,
    };
    let pct_unmet = HalfSpace {
        normal: [-t.pct, 1.0, 0.0],
        offset: 0.0,
    };
    let abs_met = HalfSpace {
        normal: [0.0, -1.0, 0.0],
        offset: -t.abs,
    };
    let abs_unmet = HalfSpace {
        normal: [0.0, 1.0, 0.0],
        offset: t.abs,
    };
    let illit_met = HalfSpace {
        normal: [0.0, t.illit, -1.0],
        offset: 0.0,
    };
    let illit_unmet = HalfSpace {
        normal: [0.0, -t.illit, 1.0],
        offset: 0.0,
    };
    Ok(match label {
        CoverageLabel::Covered => illit_unmet
            .distance(p)
            .min(distance_to_intersection(p, pct_unmet, abs_unmet)),
        CoverageLabel::NotCovered => distance_to_intersection(p, pct_met, illit_met)
            .min(distance_to_intersection(p, abs_met, illit_met)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AssigneeId, Assignees, Outcomes};

    fn assignees(n: usize) -> Assignees {
        (0..n)
            .map(|i| AssigneeId::new(format!("a{i}")).unwrap())
            .collect::<Vec<_>>()
            .into()
    }

    fn label_ensemble(trials: Vec<Vec<bool>>) -> TrialEnsemble {
        let a = assignees(trials[0].len());
        let t = trials
            .into_iter()
            .map(|v| {
                let labels = v.into_iter().map(CoverageLabel::from_bool).collect();
                OutcomeVector::new(a.clone(), Outcomes::Labels(labels)).unwrap()
            })
            .collect();
        TrialEnsemble::new(t, 0).unwrap()
    }

    fn fraction_ensemble(trials: Vec<Vec<f64>>) -> TrialEnsemble {
        let a = assignees(trials[0].len());
        let t = trials
            .into_iter()
            .map(|v| OutcomeVector::new(a.clone(), Outcomes::Fractions(v)).unwrap())
            .collect();
        TrialEnsemble::new(t, 0).unwrap()
    }

    fn seat_ensemble(trials: Vec<Vec<u32>>) -> TrialEnsemble {
        let a = assignees(trials[0].len());
        let t = trials
            .into_iter()
            .map(|v| OutcomeVector::new(a.clone(), Outcomes::Seats(v)).unwrap())
            .collect();
        TrialEnsemble::new(t, 0).unwrap()
    }

    fn truth_labels(v: Vec<bool>) -> OutcomeVector {
        OutcomeVector::new(
            assignees(v.len()),
            Outcomes::Labels(v.into_iter().map(CoverageLabel::from_bool).collect()),
        )
        .unwrap()
    }

    fn truth_fractions(v: Vec<f64>) -> OutcomeVector {
        OutcomeVector::new(assignees(v.len()), Outcomes::Fractions(v)).unwrap()
    }

    fn q(quotas: Vec<f64>) -> QuotaVector {
        QuotaVector {
            quotas,
            seat_total: 543,
        }
    }

    #[test]
    fn class_rate_all_correct() {
        let ens = label_ensemble(vec![vec![true, false]; 5]);
        let r = classification_rates(&ens, &truth_labels(vec![true, false])).unwrap();
        assert_eq!(r.rates, vec![1.0, 1.0]);
        assert_eq!(r.min_covered, Some(1.0));
        assert_eq!(r.expected_false_positives, 0.0);
    }

    #[test]
    fn class_rate_constructed_63_percent() {
        let trials = (0..1000).map(|i| vec![i < 630]).collect();
        let ens = label_ensemble(trials);
        let r = classification_rates(&ens, &truth_labels(vec![true])).unwrap();
        assert_eq!(r.rates, vec![0.63]);
        assert!((r.expected_false_negatives - 0.37).abs() < 1e-12);
    }

    #[test]
    fn class_rate_none_correct_and_shape_errors() {
        let ens = label_ensemble(vec![vec![false]; 3]);
        let r = classification_rates(&ens, &truth_labels(vec![true])).unwrap();
        assert_eq!(r.rates, vec![0.0]);
        assert_eq!(r.min_not_covered, None);
        assert!(classification_rates(&ens, &truth_labels(vec![true, true])).is_err());
        assert!(classification_rates(&ens, &truth_fractions(vec![1.0])).is_err());
    }

    #[test]
    fn mult_err_examples() {
        let ens = fraction_ensemble(vec![vec![0.002, 0.998, 0.0]]);
        let m = multiplicative_error(&ens, &truth_fractions(vec![0.001, 0.999, 0.0])).unwrap();
        assert!((m[0].unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(m[2], None);
        let same = fraction_ensemble(vec![vec![0.3, 0.7], vec![0.3, 0.7]]);
        let m = multiplicative_error(&same, &truth_fractions(vec![0.3, 0.7])).unwrap();
        assert_eq!(m, vec![Some(1.0), Some(1.0)]);
    }

    #[test]
    fn misallocation_examples() {
        let ens = fraction_ensemble(vec![vec![0.5, 0.5]]);
        let r = misallocation(&ens, &truth_fractions(vec![0.5, 0.5])).unwrap();
        assert_eq!(r.gamma, vec![0.0, 0.0]);

        let ens = fraction_ensemble(vec![vec![0.1, 0.9]]);
        let r = misallocation(&ens, &truth_fractions(vec![0.131137, 0.868863])).unwrap();
        assert!((r.gamma[0] + 31_137.0).abs() < 1e-6);
        assert!((r.gamma.iter().sum::<f64>()).abs() < 1e-6);
        assert!((r.min + 31_137.0).abs() < 1e-6);
        assert!((r.total_abs - 62_274.0).abs() < 1e-6);
    }

    #[test]
    fn max_mult_examples() {
        let ens = seat_ensemble(vec![vec![362, 181]]);
        assert_eq!(
            max_multiplicative(&ens, &q(vec![362.0, 181.0])).unwrap(),
            0.0
        );
        let ens = seat_ensemble(vec![vec![11, 9]]);
        let v = max_multiplicative(&ens, &q(vec![10.0, 10.0])).unwrap();
        assert!((v - 0.2).abs() < 1e-12);
        assert!(matches!(
            max_multiplicative(&ens, &q(vec![0.0, 10.0])),
            Err(Error::ZeroQuota(0))
        ));
    }

    #[test]
    fn avg_exp_dev_examples() {
        let ens = seat_ensemble(vec![vec![1], vec![2]]);
        assert_eq!(avg_expected_deviation(&ens, &q(vec![1.5])).unwrap(), 0.0);
        let ens = seat_ensemble(vec![vec![1], vec![1]]);
        let v = avg_expected_deviation(&ens, &q(vec![1.4])).unwrap();
        assert!((v - 0.4).abs() < 1e-12);
        assert!(avg_expected_deviation(&ens, &q(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn inversion_examples() {
        assert_eq!(
            count_inversions(&[0.1, 0.2, 0.7], &[1.0, 2.0, 7.0]).unwrap(),
            0
        );
        assert_eq!(count_inversions(&[0.6, 0.4], &[1.0, 2.0]).unwrap(), 2);
        let f = inversion_flags(&[0.2, 0.5, 0.3], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(f, vec![false, true, true]);
        // ties in entitlement never invert
        assert_eq!(count_inversions(&[0.1, 0.9], &[5.0, 5.0]).unwrap(), 0);
        assert!(count_inversions(&[0.1], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn distance_on_absolute_boundary_is_zero() {
        let t = VraThresholds::default();
        let d = distance_to_threshold(1e6, 10_000.0, 200.0, &t).unwrap();
        assert!(d.abs() < 1e-9, "{d}");
    }

    #[test]
    fn distance_near_illiteracy_plane() {
        let t = VraThresholds::default();
        let d = distance_to_threshold(1000.0, 60.0, 2.0, &t).unwrap();
        let plane = (2.0 - 0.0131 * 60.0) / (1.0f64 + 0.0131 * 0.0131).sqrt();
        assert!(d <= plane + 1e-12);
        assert!((d - plane).abs() < 1e-9);
    }

    #[test]
    fn distance_grows_with_scale_for_interior_point() {
        let t = VraThresholds::default();
        let d1 = distance_to_threshold(1000.0, 200.0, 50.0, &t).unwrap();
        let d10 = distance_to_threshold(10_000.0, 2000.0, 500.0, &t).unwrap();
        assert!(d10 > d1);
    }
}
