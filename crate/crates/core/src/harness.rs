//! Seeded Monte Carlo ensembles over the three allocation problems.
//!
//! Every trial draws from its own stream, keyed by `(base_seed, epsilon
//! index)` with the trial index as stream number, so trials can run in any
//! order on any number of threads and still produce identical ensembles.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::allocators::{
    apportion, quotas, title1_allocate, vra_classify, VraThresholds, DEFAULT_SEATS,
};
use crate::error::{Error, Result};
use crate::mechanisms::{
    check_vra_ordering, clip_nonnegative, d_laplace, decompose_vra, group_smooth, recompose_vra,
    vector_laplace, vra_columns, GroupSmoothParams, Mechanism,
};
use crate::metrics::{
    classification_rates, distance_to_threshold, expected_deviations, inversion_flags,
    max_multiplicative, misallocation, multiplicative_error, DistanceSpace, MetricKind,
};
use crate::model::{
    validate_stat_matrix, DataMode, EpsilonSection, FairnessReport, NoisyRelease, OutcomeVector,
    Outcomes, StatMatrix, TrialEnsemble,
};
use crate::repair::{inflationary_allocate_with, repair_classify, RepairParams, SlackRule};
use crate::rng::{ForkableNoise, RngStream};

pub const DEFAULT_TRIALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Vra,
    Title1,
    Apportionment,
}

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Problem::Vra => "vra",
            Problem::Title1 => "title1",
            Problem::Apportionment => "apportionment",
        }
    }

    /// Required statistic columns, in file order.
    pub fn schema(self) -> &'static [&'static str] {
        match self {
            Problem::Vra => &["vac", "lep", "lit"],
            Problem::Title1 => &["eli", "exp"],
            Problem::Apportionment => &["tot"],
        }
    }

    pub fn default_metrics(self) -> Vec<MetricKind> {
        match self {
            Problem::Vra => vec![MetricKind::ClassRate, MetricKind::DistThresh],
            Problem::Title1 => vec![
                MetricKind::MultErr,
                MetricKind::Misalloc,
                MetricKind::Inversions,
            ],
            Problem::Apportionment => vec![MetricKind::MaxMult, MetricKind::AvgExpDev],
        }
    }

    fn supports(self, metric: MetricKind) -> bool {
        use MetricKind::*;
        match self {
            Problem::Vra => matches!(metric, ClassRate | DistThresh),
            Problem::Title1 => matches!(metric, MultErr | Misalloc | Inversions),
            Problem::Apportionment => matches!(metric, MaxMult | AvgExpDev | MultErr),
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Problem {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vra" => Ok(Problem::Vra),
            "title1" => Ok(Problem::Title1),
            "apportionment" => Ok(Problem::Apportionment),
            other => Err(Error::InvalidConfig(format!("unknown problem `{other}`"))),
        }
    }
}

/// Noise-aware allocation replacing the standard rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RepairSpec {
    Vra(RepairParams),
    Title1 { delta: f64, rule: SlackRule },
}

/// Ordering key used when counting inversions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntitlementKey {
    /// `exp * eli`, the quantity the allocation is proportional to.
    #[default]
    Weighted,
    EligibleOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub thresholds: VraThresholds,
    pub seats: u32,
    pub group_smooth: GroupSmoothParams,
    pub repair: Option<RepairSpec>,
    pub distance_space: DistanceSpace,
    pub entitlement: EntitlementKey,
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self {
            thresholds: VraThresholds::default(),
            seats: DEFAULT_SEATS,
            group_smooth: GroupSmoothParams::default(),
            repair: None,
            distance_space: DistanceSpace::Raw,
            entitlement: EntitlementKey::Weighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub mechanism: Mechanism,
    pub epsilons: Vec<f64>,
    pub n_trials: usize,
    pub base_seed: u64,
    pub params: ProblemParams,
    /// `None` selects the problem's default metric suite.
    pub metrics: Option<Vec<MetricKind>>,
    pub data_path: Option<PathBuf>,
    /// Worker threads; `None` uses the global pool. Never affects results.
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(problem: Problem, mechanism: Mechanism, epsilons: Vec<f64>) -> Self {
        Self {
            problem,
            mechanism,
            epsilons,
            n_trials: DEFAULT_TRIALS,
            base_seed: 0,
            params: ProblemParams::default(),
            metrics: None,
            data_path: None,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::InvalidConfig("n_trials must be at least 1".into()));
        }
        if self.epsilons.is_empty() {
            return Err(Error::InvalidConfig("epsilon list is empty".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::NonPositiveEpsilon(*e));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        if self.params.seats == 0 {
            return Err(Error::InvalidConfig("seat total must be positive".into()));
        }
        self.params.thresholds.validate()?;
        self.params.group_smooth.validate()?;
        let allowed = match self.problem {
            Problem::Vra => true,
            Problem::Title1 | Problem::Apportionment => self.mechanism != Mechanism::DLaplace,
        };
        if !allowed {
            return Err(Error::InvalidConfig(format!(
                "mechanism {} does not apply to problem {}",
                self.mechanism, self.problem
            )));
        }
        match (self.problem, &self.params.repair) {
            (_, None) => {}
            (Problem::Vra, Some(RepairSpec::Vra(p))) => {
                p.validate()?;
                if self.mechanism != Mechanism::DLaplace {
                    return Err(Error::InvalidConfig(
                        "posterior repair needs the dlaplace mechanism".into(),
                    ));
                }
            }
            (Problem::Title1, Some(RepairSpec::Title1 { delta, .. })) => {
                if !(*delta > 0.0 && *delta < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "delta must lie in (0,1), got {delta}"
                    )));
                }
                if self.mechanism != Mechanism::Laplace {
                    return Err(Error::InvalidConfig(
                        "inflationary repair needs the laplace mechanism".into(),
                    ));
                }
            }
            (p, Some(_)) => {
                return Err(Error::InvalidConfig(format!(
                    "repair does not match problem {p}"
                )))
            }
        }
        for m in self.selected_metrics() {
            if !self.problem.supports(m) {
                return Err(Error::InvalidConfig(format!(
                    "metric {m} does not apply to problem {}",
                    self.problem
                )));
            }
        }
        Ok(())
    }

    pub fn selected_metrics(&self) -> Vec<MetricKind> {
        self.metrics
            .clone()
            .unwrap_or_else(|| self.problem.default_metrics())
    }

    /// Stage names in execution order.
    pub fn pipeline(&self) -> Vec<&'static str> {
        let mech = self.mechanism.name();
        match (self.problem, &self.params.repair) {
            (Problem::Vra, Some(_)) => vec![mech, "posterior_repair"],
            (Problem::Vra, None) => vec![mech, "clip_nonnegative", "vra_classify"],
            (Problem::Title1, Some(_)) => vec![mech, "clip_nonnegative", "inflationary_allocate"],
            (Problem::Title1, None) => vec![mech, "clip_nonnegative", "title1_allocate"],
            (Problem::Apportionment, _) => vec![mech, "clip_nonnegative", "apportion"],
        }
    }

    /// Configuration echo embedded in reports. Thread count is omitted: it
    /// never changes results.
    pub fn echo(&self) -> IndexMap<String, serde_json::Value> {
        let mut e = IndexMap::new();
        e.insert("problem".into(), json!(self.problem.name()));
        e.insert("mechanism".into(), json!(self.mechanism.name()));
        e.insert("epsilons".into(), json!(self.epsilons));
        e.insert("n_trials".into(), json!(self.n_trials));
        e.insert("base_seed".into(), json!(self.base_seed));
        e.insert("pipeline".into(), json!(self.pipeline()));
        let names: Vec<&str> = self.selected_metrics().iter().map(|m| m.name()).collect();
        e.insert("metrics".into(), json!(names));
        match self.problem {
            Problem::Vra => {
                e.insert("thresholds".into(), json!(self.params.thresholds));
                e.insert("distance_space".into(), json!(self.params.distance_space));
            }
            Problem::Title1 => {
                e.insert("entitlement".into(), json!(self.params.entitlement));
            }
            Problem::Apportionment => {
                e.insert("seats".into(), json!(self.params.seats));
            }
        }
        if self.mechanism == Mechanism::GroupSmooth {
            e.insert("group_smooth".into(), json!(self.params.group_smooth));
        }
        if let Some(r) = &self.params.repair {
            e.insert("repair".into(), json!(r));
        }
        if let Some(p) = &self.data_path {
            e.insert("data".into(), json!(p.display().to_string()));
        }
        e
    }
}

/// Stream for one trial: key `(base_seed, epsilon_index)`, stream `trial_index`.
pub fn derive_trial_stream(base_seed: u64, epsilon_index: usize, trial_index: usize) -> RngStream {
    let key = (u128::from(base_seed) << 64) | epsilon_index as u128;
    RngStream::new(key, trial_index as u64)
}

/// Ground-truth outcome: the standard rule on the true statistics.
pub fn true_outcome(cfg: &ExperimentConfig, data: &StatMatrix) -> Result<OutcomeVector> {
    let assignees = data.assignees().clone();
    let n = data.n_assignees();
    match cfg.problem {
        Problem::Vra => {
            let labels = classify_all(data, &cfg.params.thresholds)?;
            OutcomeVector::new(assignees, Outcomes::Labels(labels))
        }
        Problem::Title1 => {
            let a = title1_allocate(&data.column("eli")?, &data.column("exp")?)?;
            Ok(
                OutcomeVector::new(assignees, Outcomes::Fractions(a.fractions))?
                    .with_degenerate(a.degenerate),
            )
        }
        Problem::Apportionment => {
            let seats = apportion(&data.column("tot")?, cfg.params.seats)?;
            debug_assert_eq!(seats.len(), n);
            OutcomeVector::new(assignees, Outcomes::Seats(seats))
        }
    }
}

fn classify_all(stats: &StatMatrix, t: &VraThresholds) -> Result<Vec<crate::model::CoverageLabel>> {
    let cols = vra_columns(stats)?;
    stats
        .rows()
        .map(|r| vra_classify(r[cols.vac], r[cols.lep], r[cols.lit], t))
        .collect()
}

/// Runs the privacy mechanism on the statistics the problem privatizes.
fn release<R: ForkableNoise>(
    cfg: &ExperimentConfig,
    data: &StatMatrix,
    eps: f64,
    rng: &mut R,
) -> Result<NoisyRelease> {
    let private: &[&str] = match cfg.problem {
        Problem::Vra => &["vac", "lep", "lit"],
        Problem::Title1 => &["eli"],
        Problem::Apportionment => &["tot"],
    };
    let stats = data.select(private)?;
    match (cfg.mechanism, cfg.problem) {
        // the three raw counts jointly have sensitivity 3
        (Mechanism::Laplace, Problem::Vra) => vector_laplace(&stats, 3.0, eps, rng),
        (Mechanism::Laplace, _) => vector_laplace(&stats, 1.0, eps, rng),
        (Mechanism::DLaplace, Problem::Vra) => d_laplace(&stats, eps, rng),
        (Mechanism::GroupSmooth, Problem::Vra) => {
            let cols = vra_columns(&stats)?;
            check_vra_ordering(&stats, &cols)?;
            // cells ordered by assignee, then component
            let flat: Vec<f64> = stats
                .rows()
                .flat_map(|r| decompose_vra(r[cols.vac], r[cols.lep], r[cols.lit]))
                .collect();
            let (noisy, _) = group_smooth(&flat, eps, &cfg.params.group_smooth, rng)?;
            let w = stats.n_queries();
            let mut values = stats.values().to_vec();
            for (i, q) in noisy.chunks_exact(3).enumerate() {
                let (vac, lep, lit) = recompose_vra([q[0], q[1], q[2]]);
                values[i * w + cols.vac] = vac;
                values[i * w + cols.lep] = lep;
                values[i * w + cols.lit] = lit;
            }
            NoisyRelease::new(
                stats.with_values(values)?,
                eps,
                "groupsmooth",
                rng.seed_record(),
            )
        }
        (Mechanism::GroupSmooth, _) => {
            let (noisy, _) = group_smooth(stats.values(), eps, &cfg.params.group_smooth, rng)?;
            NoisyRelease::new(
                stats.with_values(noisy)?,
                eps,
                "groupsmooth",
                rng.seed_record(),
            )
        }
        (Mechanism::DLaplace, p) => Err(Error::InvalidConfig(format!(
            "mechanism dlaplace does not apply to problem {p}"
        ))),
    }
}

/// One trial of the configured pipeline.
pub fn run_trial<R: ForkableNoise>(
    cfg: &ExperimentConfig,
    data: &StatMatrix,
    eps: f64,
    rng: &mut R,
) -> Result<OutcomeVector> {
    let assignees = data.assignees().clone();
    let noisy = release(cfg, data, eps, rng)?;
    match (cfg.problem, &cfg.params.repair) {
        (Problem::Vra, Some(RepairSpec::Vra(params))) => {
            // the posterior needs the unclipped release to recover the noisy components
            let cols = vra_columns(&noisy.stats)?;
            let labels = noisy
                .stats
                .rows()
                .enumerate()
                .map(|(i, r)| {
                    let mut sub = rng.fork(i as u64);
                    repair_classify(
                        (r[cols.vac], r[cols.lep], r[cols.lit]),
                        eps,
                        params,
                        &mut sub,
                        &cfg.params.thresholds,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            OutcomeVector::new(assignees, Outcomes::Labels(labels))
        }
        (Problem::Vra, _) => {
            let clipped = clip_nonnegative(noisy);
            let labels = classify_all(&clipped.stats, &cfg.params.thresholds)?;
            OutcomeVector::new(assignees, Outcomes::Labels(labels))
        }
        (Problem::Title1, repair) => {
            let clipped = clip_nonnegative(noisy);
            let eli = clipped.stats.values();
            let exp = data.column("exp")?;
            match repair {
                Some(RepairSpec::Title1 { delta, rule }) => {
                    let (m, _) = inflationary_allocate_with(eli, &exp, eps, *delta, *rule)?;
                    OutcomeVector::new(assignees, Outcomes::Fractions(m))
                }
                _ => {
                    let a = title1_allocate(eli, &exp)?;
                    Ok(
                        OutcomeVector::new(assignees, Outcomes::Fractions(a.fractions))?
                            .with_degenerate(a.degenerate),
                    )
                }
            }
        }
        (Problem::Apportionment, _) => {
            let clipped = clip_nonnegative(noisy);
            let seats = apportion(clipped.stats.values(), cfg.params.seats)?;
            OutcomeVector::new(assignees, Outcomes::Seats(seats))
        }
    }
}

/// Ensemble for one privacy level.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonEnsemble {
    pub epsilon: f64,
    pub ensemble: TrialEnsemble,
}

/// Runs `n_trials` seeded trials for every configured epsilon.
pub fn run_ensemble(cfg: &ExperimentConfig, data: &StatMatrix) -> Result<Vec<EpsilonEnsemble>> {
    cfg.validate()?;
    validate_stat_matrix(data, cfg.problem.schema(), DataMode::True)?;
    let work = || {
        cfg.epsilons
            .iter()
            .enumerate()
            .map(|(ei, &eps)| {
                let trials = (0..cfg.n_trials)
                    .into_par_iter()
                    .map(|t| {
                        let mut rng = derive_trial_stream(cfg.base_seed, ei, t);
                        run_trial(cfg, data, eps, &mut rng)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(EpsilonEnsemble {
                    epsilon: eps,
                    ensemble: TrialEnsemble::new(trials, cfg.base_seed)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Assembles the configured metric suite for every epsilon.
pub fn aggregate(
    cfg: &ExperimentConfig,
    data: &StatMatrix,
    truth: &OutcomeVector,
    ensembles: &[EpsilonEnsemble],
) -> Result<FairnessReport> {
    let metrics = cfg.selected_metrics();
    let mut report = FairnessReport {
        config_echo: cfg.echo(),
        sections: Vec::new(),
    };
    if metrics.is_empty() {
        return Ok(report);
    }
    if truth.len() != data.n_assignees() {
        return Err(Error::ShapeMismatch("truth and data disagree".into()));
    }
    let names: Vec<String> = data.assignees().iter().map(|a| a.to_string()).collect();

    let distances = if metrics.contains(&MetricKind::DistThresh) {
        let cols = vra_columns(data)?;
        Some(
            data.rows()
                .map(|r| {
                    distance_to_threshold(
                        r[cols.vac],
                        r[cols.lep],
                        r[cols.lit],
                        &cfg.params.thresholds,
                    )
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let entitlement = if cfg.problem == Problem::Title1 {
        let eli = data.column("eli")?;
        Some(match cfg.params.entitlement {
            EntitlementKey::Weighted => {
                let exp = data.column("exp")?;
                eli.iter().zip(&exp).map(|(e, x)| e * x).collect::<Vec<_>>()
            }
            EntitlementKey::EligibleOnly => eli,
        })
    } else {
        None
    };
    let quota = if cfg.problem == Problem::Apportionment {
        Some(quotas(&data.column("tot")?, cfg.params.seats)?)
    } else {
        None
    };

    for EpsilonEnsemble { epsilon, ensemble } in ensembles {
        if ensemble.n_assignees() != truth.len() {
            return Err(Error::ShapeMismatch(format!(
                "ensemble at epsilon {epsilon} has {} assignees, truth has {}",
                ensemble.n_assignees(),
                truth.len()
            )));
        }
        let mut per: Vec<IndexMap<String, Option<f64>>> = vec![IndexMap::new(); names.len()];
        let mut agg = IndexMap::new();
        let mut put = |metric: &str, values: Vec<Option<f64>>| {
            for (row, v) in per.iter_mut().zip(values) {
                row.insert(metric.to_string(), v);
            }
        };
        for m in &metrics {
            match m {
                MetricKind::ClassRate => {
                    let r = classification_rates(ensemble, truth)?;
                    put(m.name(), r.rates.iter().map(|v| Some(*v)).collect());
                    if let Some(v) = r.min_covered {
                        agg.insert("class_rate_min_covered".into(), v);
                    }
                    if let Some(v) = r.min_not_covered {
                        agg.insert("class_rate_min_not_covered".into(), v);
                    }
                    agg.insert(
                        "expected_false_positives".into(),
                        r.expected_false_positives,
                    );
                    agg.insert(
                        "expected_false_negatives".into(),
                        r.expected_false_negatives,
                    );
                }
                MetricKind::DistThresh => {
                    let d = distances.as_ref().expect("computed above");
                    let scale = match cfg.params.distance_space {
                        DistanceSpace::Raw => 1.0,
                        DistanceSpace::NoiseScaled => *epsilon,
                    };
                    put(m.name(), d.iter().map(|v| Some(v * scale)).collect());
                }
                MetricKind::MultErr => {
                    let e = multiplicative_error(ensemble, truth)?;
                    let defined = e.iter().flatten().copied();
                    if let Some(v) = defined.clone().reduce(f64::min) {
                        agg.insert("mult_err_min".into(), v);
                    }
                    if let Some(v) = defined.reduce(f64::max) {
                        agg.insert("mult_err_max".into(), v);
                    }
                    put(m.name(), e);
                }
                MetricKind::Misalloc => {
                    let r = misallocation(ensemble, truth)?;
                    agg.insert("misalloc_total".into(), r.total_abs);
                    agg.insert("misalloc_min".into(), r.min);
                    agg.insert("misalloc_max".into(), r.max);
                    put(m.name(), r.gamma.iter().map(|v| Some(*v)).collect());
                }
                MetricKind::Inversions => {
                    let ent = entitlement.as_ref().expect("title1 only");
                    let flags = inversion_flags(&ensemble.mean_outcomes(), ent)?;
                    let count = flags.iter().filter(|f| **f).count();
                    agg.insert("inversions".into(), count as f64);
                    put(
                        m.name(),
                        flags
                            .iter()
                            .map(|f| Some(if *f { 1.0 } else { 0.0 }))
                            .collect(),
                    );
                }
                MetricKind::MaxMult => {
                    let q = quota.as_ref().expect("apportionment only");
                    agg.insert("max_mult".into(), max_multiplicative(ensemble, q)?);
                    let baseline = TrialEnsemble::new(vec![truth.clone()], 0)?;
                    agg.insert(
                        "max_mult_baseline".into(),
                        max_multiplicative(&baseline, q)?,
                    );
                    // per-state mean ratio of seats to quota, the terms the spread is taken over
                    let n = ensemble.n_trials() as f64;
                    let ratios = q
                        .quotas
                        .iter()
                        .enumerate()
                        .map(|(i, qa)| {
                            let s: f64 = ensemble.trials().iter().map(|t| t.value(i) / qa).sum();
                            Some(s / n)
                        })
                        .collect();
                    put(m.name(), ratios);
                }
                MetricKind::AvgExpDev => {
                    let q = quota.as_ref().expect("apportionment only");
                    let d = expected_deviations(ensemble, q)?;
                    agg.insert("avg_exp_dev".into(), d.iter().sum::<f64>() / d.len() as f64);
                    let baseline = TrialEnsemble::new(vec![truth.clone()], 0)?;
                    let b = expected_deviations(&baseline, q)?;
                    agg.insert(
                        "avg_exp_dev_baseline".into(),
                        b.iter().sum::<f64>() / b.len() as f64,
                    );
                    put(m.name(), d.iter().map(|v| Some(*v)).collect());
                }
            }
        }
        if cfg.problem == Problem::Title1 {
            // total allocated relative to the original budget
            agg.insert(
                "budget_factor".into(),
                ensemble.mean_outcomes().iter().sum(),
            );
        }
        report.sections.push(EpsilonSection {
            epsilon: *epsilon,
            n_trials: ensemble.n_trials(),
            degenerate_trials: ensemble.degenerate_trials(),
            per_assignee: names.iter().cloned().zip(per).collect(),
            aggregates: agg,
        });
    }
    Ok(report)
}

/// Runs the ensembles and assembles the report.
pub fn run_experiment(cfg: &ExperimentConfig, data: &StatMatrix) -> Result<FairnessReport> {
    let ensembles = run_ensemble(cfg, data)?;
    let truth = true_outcome(cfg, data)?;
    aggregate(cfg, data, &truth, &ensembles)
}
