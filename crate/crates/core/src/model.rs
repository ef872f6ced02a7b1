//! Assignment-problem data model: statistic matrices, noisy releases,
//! outcome vectors, trial ensembles and fairness reports.
//!
//! All values are immutable after construction. Assignee lists are shared
//! through [`Assignees`] so that thousands of per-trial outcome vectors do not
//! copy identifier strings.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Key of one assignee population (district, state, jurisdiction x language).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AssigneeId(String);

impl AssigneeId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::EmptyId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AssigneeId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::new(s)
    }
}

impl From<AssigneeId> for String {
    fn from(id: AssigneeId) -> String {
        id.0
    }
}

impl fmt::Display for AssigneeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Name of one statistic (`vac`, `lep`, `lit`, `eli`, `exp`, `tot`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct QueryId(String);

impl QueryId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::EmptyId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for QueryId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::new(s)
    }
}

impl From<QueryId> for String {
    fn from(id: QueryId) -> String {
        id.0
    }
}

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Shared, ordered assignee list.
pub type Assignees = Arc<[AssigneeId]>;

/// Whether a matrix holds ground truth (non-negative) or privatized values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    True,
    Noisy,
}

/// Statistics `X[a][q]`, stored row-major by assignee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStatMatrix", into = "RawStatMatrix")]
pub struct StatMatrix {
    assignees: Assignees,
    queries: Arc<[QueryId]>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawStatMatrix {
    assignees: Vec<AssigneeId>,
    queries: Vec<QueryId>,
    values: Vec<Vec<f64>>,
}

impl TryFrom<RawStatMatrix> for StatMatrix {
    type Error = Error;
    fn try_from(raw: RawStatMatrix) -> Result<Self> {
        StatMatrix::from_rows(raw.assignees, raw.queries, raw.values)
    }
}

impl From<StatMatrix> for RawStatMatrix {
    fn from(m: StatMatrix) -> Self {
        let values = m.rows().map(<[f64]>::to_vec).collect();
        RawStatMatrix {
            assignees: m.assignees.to_vec(),
            queries: m.queries.to_vec(),
            values,
        }
    }
}

impl StatMatrix {
    pub fn from_rows(
        assignees: Vec<AssigneeId>,
        queries: Vec<QueryId>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if rows.len() != assignees.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows for {} assignees",
                rows.len(),
                assignees.len()
            )));
        }
        let width = queries.len();
        let mut values = Vec::with_capacity(rows.len() * width);
        for (a, row) in assignees.iter().zip(&rows) {
            if row.len() != width {
                return Err(Error::ShapeMismatch(format!(
                    "row `{a}` has {} values for {width} queries",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::from_parts(assignees.into(), queries.into(), values)
    }

    /// Builds a matrix from per-query columns, in query order.
    pub fn from_columns(
        assignees: Vec<AssigneeId>,
        columns: Vec<(QueryId, Vec<f64>)>,
    ) -> Result<Self> {
        let n = assignees.len();
        let mut queries = Vec::with_capacity(columns.len());
        for (q, col) in &columns {
            if col.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "column `{q}` has {} values for {n} assignees",
                    col.len()
                )));
            }
            queries.push(q.clone());
        }
        let width = columns.len();
        let mut values = vec![0.0; n * width];
        for (j, (_, col)) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                values[i * width + j] = *v;
            }
        }
        Self::from_parts(assignees.into(), queries.into(), values)
    }

    fn from_parts(assignees: Assignees, queries: Arc<[QueryId]>, values: Vec<f64>) -> Result<Self> {
        if values.len() != assignees.len() * queries.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {}x{} matrix",
                values.len(),
                assignees.len(),
                queries.len()
            )));
        }
        let mut seen = HashSet::new();
        for a in assignees.iter() {
            if !seen.insert(a.as_str()) {
                return Err(Error::DuplicateAssignee(a.to_string()));
            }
        }
        let mut seen = HashSet::new();
        for q in queries.iter() {
            if !seen.insert(q.as_str()) {
                return Err(Error::DuplicateQuery(q.to_string()));
            }
        }
        Ok(Self {
            assignees,
            queries,
            values,
        })
    }

    /// Same shape and labels, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {}x{} matrix",
                values.len(),
                self.n_assignees(),
                self.n_queries()
            )));
        }
        Ok(Self {
            assignees: self.assignees.clone(),
            queries: self.queries.clone(),
            values,
        })
    }

    pub fn assignees(&self) -> &Assignees {
        &self.assignees
    }

    pub fn queries(&self) -> &[QueryId] {
        &self.queries
    }

    pub fn n_assignees(&self) -> usize {
        self.assignees.len()
    }

    pub fn n_queries(&self) -> usize {
        self.queries.len()
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn query_index(&self, query: &str) -> Option<usize> {
        self.queries.iter().position(|q| q.as_str() == query)
    }

    pub fn get(&self, assignee: usize, query: usize) -> f64 {
        self.values[assignee * self.n_queries() + query]
    }

    pub fn row(&self, assignee: usize) -> &[f64] {
        let w = self.n_queries();
        &self.values[assignee * w..(assignee + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let w = self.n_queries();
        (0..self.n_assignees()).map(move |i| &self.values[i * w..(i + 1) * w])
    }

    /// Copy of one column by query name.
    pub fn column(&self, query: &str) -> Result<Vec<f64>> {
        let j = self
            .query_index(query)
            .ok_or_else(|| Error::MissingQuery(query.to_string()))?;
        Ok(self.rows().map(|r| r[j]).collect())
    }

    /// Keeps only the named queries, in the given order.
    pub fn select(&self, queries: &[&str]) -> Result<Self> {
        let cols = queries
            .iter()
            .map(|q| Ok((QueryId::new(*q)?, self.column(q)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_columns(self.assignees.to_vec(), cols)
    }
}

/// Checks that every schema query is present and all values are finite;
/// in [`DataMode::True`] values must also be non-negative.
pub fn validate_stat_matrix(m: &StatMatrix, schema: &[&str], mode: DataMode) -> Result<()> {
    for q in schema {
        if m.query_index(q).is_none() {
            return Err(Error::MissingQuery(q.to_string()));
        }
    }
    for (a, row) in m.assignees().iter().zip(m.rows()) {
        for (q, &v) in m.queries().iter().zip(row) {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    assignee: a.to_string(),
                    query: q.to_string(),
                });
            }
            if mode == DataMode::True && v < 0.0 {
                return Err(Error::NegativeTrueCount {
                    assignee: a.to_string(),
                    query: q.to_string(),
                    value: v,
                });
            }
        }
    }
    Ok(())
}

/// Privatized statistics with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyRelease {
    pub stats: StatMatrix,
    pub epsilon: f64,
    pub mechanism: String,
    /// Stream index of the generator that produced the noise.
    pub trial_seed: u64,
}

impl NoisyRelease {
    pub fn new(stats: StatMatrix, epsilon: f64, mechanism: &str, trial_seed: u64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::NonPositiveEpsilon(epsilon));
        }
        Ok(Self {
            stats,
            epsilon,
            mechanism: mechanism.to_string(),
            trial_seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoverageLabel {
    Covered,
    NotCovered,
}

impl CoverageLabel {
    pub fn from_bool(covered: bool) -> Self {
        if covered {
            Self::Covered
        } else {
            Self::NotCovered
        }
    }

    pub fn is_covered(self) -> bool {
        self == Self::Covered
    }
}

/// Homogeneous per-assignee outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcomes {
    Fractions(Vec<f64>),
    Seats(Vec<u32>),
    Labels(Vec<CoverageLabel>),
}

impl Outcomes {
    pub fn len(&self) -> usize {
        match self {
            Outcomes::Fractions(v) => v.len(),
            Outcomes::Seats(v) => v.len(),
            Outcomes::Labels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Outcomes::Fractions(_) => "fractions",
            Outcomes::Seats(_) => "seats",
            Outcomes::Labels(_) => "labels",
        }
    }

    /// Numeric view: fractions as-is, seats as reals, labels as 1/0 for Covered.
    pub fn value(&self, i: usize) -> f64 {
        match self {
            Outcomes::Fractions(v) => v[i],
            Outcomes::Seats(v) => f64::from(v[i]),
            Outcomes::Labels(v) => {
                if v[i].is_covered() {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One allocation outcome per assignee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeVector {
    assignees: Assignees,
    outcomes: Outcomes,
    /// Set when the allocator fell back to a default (e.g. a zero Title I denominator).
    #[serde(default)]
    degenerate: bool,
}

impl OutcomeVector {
    pub fn new(assignees: Assignees, outcomes: Outcomes) -> Result<Self> {
        if assignees.len() != outcomes.len() {
            return Err(Error::LengthMismatch {
                left: assignees.len(),
                right: outcomes.len(),
            });
        }
        Ok(Self {
            assignees,
            outcomes,
            degenerate: false,
        })
    }

    pub fn with_degenerate(mut self, degenerate: bool) -> Self {
        self.degenerate = degenerate;
        self
    }

    pub fn assignees(&self) -> &Assignees {
        &self.assignees
    }

    pub fn outcomes(&self) -> &Outcomes {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn value(&self, i: usize) -> f64 {
        self.outcomes.value(i)
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }

    pub fn fractions(&self) -> Option<&[f64]> {
        match &self.outcomes {
            Outcomes::Fractions(v) => Some(v),
            _ => None,
        }
    }

    pub fn seats(&self) -> Option<&[u32]> {
        match &self.outcomes {
            Outcomes::Seats(v) => Some(v),
            _ => None,
        }
    }

    pub fn labels(&self) -> Option<&[CoverageLabel]> {
        match &self.outcomes {
            Outcomes::Labels(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::NonPositiveEpsilon(epsilon));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::DomainError(format!(
                "delta must lie in (0,1), got {delta}"
            )));
        }
        Ok(Self { epsilon, delta })
    }
}

/// Outcome vectors of seeded trials, ordered by trial index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEnsemble {
    trials: Vec<OutcomeVector>,
    base_seed: u64,
}

impl TrialEnsemble {
    pub fn new(trials: Vec<OutcomeVector>, base_seed: u64) -> Result<Self> {
        if let Some(first) = trials.first() {
            for t in &trials[1..] {
                let same = Arc::ptr_eq(t.assignees(), first.assignees())
                    || t.assignees() == first.assignees();
                if !same {
                    return Err(Error::ShapeMismatch(
                        "trials disagree on assignee ordering".into(),
                    ));
                }
                if t.outcomes().kind() != first.outcomes().kind() {
                    return Err(Error::ShapeMismatch("trials mix outcome kinds".into()));
                }
            }
        }
        Ok(Self { trials, base_seed })
    }

    pub fn trials(&self) -> &[OutcomeVector] {
        &self.trials
    }

    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn n_assignees(&self) -> usize {
        self.trials.first().map_or(0, OutcomeVector::len)
    }

    pub fn assignees(&self) -> Option<&Assignees> {
        self.trials.first().map(OutcomeVector::assignees)
    }

    pub fn degenerate_trials(&self) -> usize {
        self.trials.iter().filter(|t| t.is_degenerate()).count()
    }

    /// Per-assignee sample mean of the numeric outcome, reduced in trial order.
    pub fn mean_outcomes(&self) -> Vec<f64> {
        let n = self.n_assignees();
        let mut sums = vec![0.0; n];
        for t in &self.trials {
            for (i, s) in sums.iter_mut().enumerate() {
                *s += t.value(i);
            }
        }
        let k = self.trials.len() as f64;
        sums.into_iter().map(|s| s / k).collect()
    }
}

/// Metrics for one privacy level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSection {
    pub epsilon: f64,
    pub n_trials: usize,
    pub degenerate_trials: usize,
    /// assignee -> metric name -> value (`None` when undefined).
    pub per_assignee: IndexMap<String, IndexMap<String, Option<f64>>>,
    pub aggregates: IndexMap<String, f64>,
}

/// Per-assignee and aggregate disparity metrics across a sweep of privacy levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub config_echo: IndexMap<String, serde_json::Value>,
    pub sections: Vec<EpsilonSection>,
}

impl FairnessReport {
    pub fn epsilons(&self) -> Vec<f64> {
        self.sections.iter().map(|s| s.epsilon).collect()
    }
}
