//! Differentially private release mechanisms over statistic vectors with a
//! declared sensitivity, and the non-negativity post-processing step.
//!
//! Mechanisms never clip; pipelines call [`clip_nonnegative`] explicitly so
//! that unbiasedness can be checked on the raw release.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NoisyRelease;
use crate::model::StatMatrix;
use crate::rng::NoiseSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Laplace,
    #[serde(rename = "dlaplace")]
    DLaplace,
    #[serde(rename = "groupsmooth")]
    GroupSmooth,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Laplace => "laplace",
            Mechanism::DLaplace => "dlaplace",
            Mechanism::GroupSmooth => "groupsmooth",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplace" => Ok(Mechanism::Laplace),
            "dlaplace" => Ok(Mechanism::DLaplace),
            "groupsmooth" => Ok(Mechanism::GroupSmooth),
            other => Err(Error::InvalidConfig(format!("unknown mechanism `{other}`"))),
        }
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveEpsilon(eps))
    }
}

/// One mean-zero Laplace draw of the given scale.
pub fn sample_laplace<R: NoiseSource + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::NonPositiveScale(scale));
    }
    Ok(rng.laplace(scale))
}

/// Log-density of a product of independent Laplace(`center_i`, `scale`) laws at `point`.
pub fn laplace_log_density(center: &[f64], point: &[f64], scale: f64) -> f64 {
    center
        .iter()
        .zip(point)
        .map(|(c, x)| -(x - c).abs() / scale - (2.0 * scale).ln())
        .sum()
}

/// Adds independent Laplace(`sensitivity / eps`) noise to every cell.
pub fn vector_laplace<R: NoiseSource + ?Sized>(
    x: &StatMatrix,
    sensitivity: f64,
    eps: f64,
    rng: &mut R,
) -> Result<NoisyRelease> {
    check_epsilon(eps)?;
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(Error::DomainError(format!(
            "sensitivity must be positive, got {sensitivity}"
        )));
    }
    let scale = sensitivity / eps;
    let values = x.values().iter().map(|v| v + rng.laplace(scale)).collect();
    NoisyRelease::new(
        x.with_values(values)?,
        eps,
        Mechanism::Laplace.name(),
        rng.seed_record(),
    )
}

/// Disjoint components `(lit, lep - lit, vac - lep)`.
pub fn decompose_vra(vac: f64, lep: f64, lit: f64) -> [f64; 3] {
    [lit, lep - lit, vac - lep]
}

/// Inverse of [`decompose_vra`]: returns `(vac, lep, lit)` by cumulative sums.
pub fn recompose_vra(q: [f64; 3]) -> (f64, f64, f64) {
    let lit = q[0];
    let lep = lit + q[1];
    let vac = lep + q[2];
    (vac, lep, lit)
}

pub(crate) struct VraColumns {
    pub vac: usize,
    pub lep: usize,
    pub lit: usize,
}

pub(crate) fn vra_columns(stats: &StatMatrix) -> Result<VraColumns> {
    let find = |q: &str| {
        stats
            .query_index(q)
            .ok_or_else(|| Error::MissingQuery(q.to_string()))
    };
    Ok(VraColumns {
        vac: find("vac")?,
        lep: find("lep")?,
        lit: find("lit")?,
    })
}

pub(crate) fn check_vra_ordering(stats: &StatMatrix, cols: &VraColumns) -> Result<()> {
    for (a, row) in stats.assignees().iter().zip(stats.rows()) {
        let (vac, lep, lit) = (row[cols.vac], row[cols.lep], row[cols.lit]);
        if !(0.0 <= lit && lit <= lep && lep <= vac) {
            return Err(Error::OrderingViolation(a.to_string()));
        }
    }
    Ok(())
}

/// D-Laplace: noise the sensitivity-one decomposition of `{vac, lep, lit}`
/// with Laplace(1/eps) and rebuild the three counts by cumulative sums.
/// Other columns pass through unchanged.
pub fn d_laplace<R: NoiseSource + ?Sized>(
    vra_stats: &StatMatrix,
    eps: f64,
    rng: &mut R,
) -> Result<NoisyRelease> {
    check_epsilon(eps)?;
    let cols = vra_columns(vra_stats)?;
    check_vra_ordering(vra_stats, &cols)?;
    let scale = 1.0 / eps;
    let mut values = vra_stats.values().to_vec();
    let w = vra_stats.n_queries();
    for (i, row) in vra_stats.rows().enumerate() {
        let q = decompose_vra(row[cols.vac], row[cols.lep], row[cols.lit]);
        let noisy = q.map(|c| c + rng.laplace(scale));
        let (vac, lep, lit) = recompose_vra(noisy);
        values[i * w + cols.vac] = vac;
        values[i * w + cols.lep] = lep;
        values[i * w + cols.lit] = lit;
    }
    NoisyRelease::new(
        vra_stats.with_values(values)?,
        eps,
        Mechanism::DLaplace.name(),
        rng.seed_record(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSmoothParams {
    /// Share of the budget spent choosing the partition.
    pub rho: f64,
    /// Longest bucket the partition search considers.
    pub max_bucket: Option<usize>,
    /// Interval costs are perturbed with Laplace(`cost_noise_factor / eps_1`).
    pub cost_noise_factor: f64,
    /// When false, the partition is chosen on exact costs (testing only; not private).
    pub perturb_costs: bool,
}

impl Default for GroupSmoothParams {
    fn default() -> Self {
        Self {
            rho: 0.25,
            max_bucket: None,
            cost_noise_factor: 2.0,
            perturb_costs: true,
        }
    }
}

impl GroupSmoothParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rho must lie in (0,1), got {}",
                self.rho
            )));
        }
        if self.max_bucket == Some(0) {
            return Err(Error::InvalidConfig("max_bucket must be positive".into()));
        }
        if !(self.cost_noise_factor > 0.0) {
            return Err(Error::InvalidConfig(
                "cost_noise_factor must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Contiguous buckets over `0..n`, stored as exclusive end indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    breakpoints: Vec<usize>,
}

impl Partition {
    pub fn new(breakpoints: Vec<usize>) -> Result<Self> {
        let mut prev = 0;
        for &b in &breakpoints {
            if b <= prev {
                return Err(Error::DomainError(format!(
                    "breakpoints must be strictly increasing and positive: {breakpoints:?}"
                )));
            }
            prev = b;
        }
        if breakpoints.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self { breakpoints })
    }

    pub fn single(n: usize) -> Result<Self> {
        Self::new(vec![n])
    }

    pub fn breakpoints(&self) -> &[usize] {
        &self.breakpoints
    }

    pub fn len(&self) -> usize {
        *self.breakpoints.last().unwrap_or(&0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_buckets(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn buckets(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        let starts = std::iter::once(0).chain(self.breakpoints.iter().copied());
        starts
            .zip(self.breakpoints.iter().copied())
            .map(|(s, e)| s..e)
    }
}

/// Prefix counts and sums over value ranks.
struct Fenwick {
    cnt: Vec<u32>,
    sum: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            cnt: vec![0; n + 1],
            sum: vec![0.0; n + 1],
        }
    }

    fn clear(&mut self) {
        self.cnt.fill(0);
        self.sum.fill(0.0);
    }

    fn add(&mut self, rank: usize, v: f64) {
        let mut i = rank + 1;
        while i < self.cnt.len() {
            self.cnt[i] += 1;
            self.sum[i] += v;
            i += i & i.wrapping_neg();
        }
    }

    /// Count and sum of entries with rank < `r`.
    fn prefix(&self, r: usize) -> (u32, f64) {
        let (mut c, mut s) = (0, 0.0);
        let mut i = r;
        while i > 0 {
            c += self.cnt[i];
            s += self.sum[i];
            i -= i & i.wrapping_neg();
        }
        (c, s)
    }
}

/// Minimum-cost contiguous partition of `x` where a bucket costs its total
/// absolute deviation from its mean plus `penalty`, optionally perturbed by
/// `noise(scale)` once per evaluated interval.
///
/// Intervals are visited by end index, then by start index descending, and
/// every visit consumes one noise draw in that order. Returns the partition
/// and its total (perturbed) cost.
pub fn optimal_partition<R: NoiseSource + ?Sized>(
    x: &[f64],
    penalty: f64,
    max_bucket: Option<usize>,
    cost_noise: Option<(f64, &mut R)>,
) -> Result<(Partition, f64)> {
    let n = x.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let ranks: Vec<usize> = x
        .iter()
        .map(|v| sorted.partition_point(|s| s < v))
        .collect();

    let max_len = max_bucket.unwrap_or(n).min(n);
    let mut cost_noise = cost_noise;
    let mut best = vec![f64::INFINITY; n + 1];
    let mut start_of = vec![0usize; n + 1];
    best[0] = 0.0;
    let mut fen = Fenwick::new(sorted.len());

    for end in 0..n {
        fen.clear();
        let mut total = 0.0;
        let lo = (end + 1).saturating_sub(max_len);
        for start in (lo..=end).rev() {
            fen.add(ranks[start], x[start]);
            total += x[start];
            let len = (end - start + 1) as f64;
            let mean = total / len;
            let r = sorted.partition_point(|s| *s <= mean);
            let (c_le, s_le) = fen.prefix(r);
            let c_le = f64::from(c_le);
            let scaled = len * ((total - s_le) - s_le) - total * ((len - c_le) - c_le);
            let deviation = (scaled / len).max(0.0);
            let mut cost = deviation + penalty;
            if let Some((scale, rng)) = cost_noise.as_mut() {
                cost += rng.laplace(*scale);
            }
            let candidate = best[start] + cost;
            if candidate < best[end + 1] {
                best[end + 1] = candidate;
                start_of[end + 1] = start;
            }
        }
    }

    let mut breakpoints = Vec::new();
    let mut e = n;
    while e > 0 {
        breakpoints.push(e);
        e = start_of[e];
    }
    breakpoints.reverse();
    Ok((Partition::new(breakpoints)?, best[n]))
}

/// Grouping-and-smoothing release of an ordered vector.
///
/// Stage one spends `rho * eps` choosing a contiguous partition on noisy
/// interval costs; stage two spends the rest noising each bucket total with
/// Laplace(1/eps_2) and spreads it evenly over the bucket.
pub fn group_smooth<R: NoiseSource + ?Sized>(
    x: &[f64],
    eps: f64,
    params: &GroupSmoothParams,
    rng: &mut R,
) -> Result<(Vec<f64>, Partition)> {
    check_epsilon(eps)?;
    params.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let eps_partition = params.rho * eps;
    let eps_measure = (1.0 - params.rho) * eps;
    let penalty = 1.0 / eps_measure;
    let (partition, _) = if params.perturb_costs {
        let scale = params.cost_noise_factor / eps_partition;
        optimal_partition(x, penalty, params.max_bucket, Some((scale, &mut *rng)))?
    } else {
        optimal_partition::<R>(x, penalty, params.max_bucket, None)?
    };
    let scale = 1.0 / eps_measure;
    let mut out = vec![0.0; x.len()];
    for bucket in partition.buckets() {
        let total: f64 = x[bucket.clone()].iter().sum();
        let noisy = total + rng.laplace(scale);
        let share = noisy / bucket.len() as f64;
        out[bucket].fill(share);
    }
    Ok((out, partition))
}

/// Replaces every negative cell with zero.
pub fn clip_nonnegative(r: NoisyRelease) -> NoisyRelease {
    let values = r.stats.values().iter().map(|v| v.max(0.0)).collect();
    let stats = r
        .stats
        .with_values(values)
        .expect("clipping preserves shape");
    NoisyRelease { stats, ..r }
}

/// Count difference no epsilon-DP algorithm can distinguish except with probability delta.
pub fn indist_threshold(eps: f64, delta: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::DomainError(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::DomainError(format!(
            "delta must lie in (0,1], got {delta}"
        )));
    }
    Ok((1.0 / eps) * (1.0 / delta).ln())
}
