//! CSV ingestion, synthetic datasets and report emission.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::harness::Problem;
use crate::model::{AssigneeId, FairnessReport, QueryId, StatMatrix};
use crate::rng::RngStream;

/// Loads a dataset whose header is exactly `assignee,<schema columns>`.
/// Row order becomes assignee order.
pub fn load_csv(path: impl AsRef<Path>, schema: Problem) -> Result<StatMatrix> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_csv(file, path, schema)
}

pub fn read_csv<R: io::Read>(reader: R, path: &Path, schema: Problem) -> Result<StatMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let expected: Vec<&str> = std::iter::once("assignee")
        .chain(schema.schema().iter().copied())
        .collect();
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r?,
        None => {
            return Err(Error::SchemaMismatch {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("empty file; expected header `{}`", expected.join(",")),
            })
        }
    };
    let found: Vec<&str> = header.iter().collect();
    if found != expected {
        return Err(Error::SchemaMismatch {
            path: path.to_path_buf(),
            line: header.position().map_or(1, |p| p.line()),
            msg: format!(
                "header `{}`, expected `{}`",
                found.join(","),
                expected.join(",")
            ),
        });
    }

    let mut ids = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut rows = Vec::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let wrap = |e: Error| Error::Row {
            path: path.to_path_buf(),
            line,
            source: Box::new(e),
        };
        if record.len() != expected.len() {
            return Err(Error::SchemaMismatch {
                path: path.to_path_buf(),
                line,
                msg: format!("{} fields, expected {}", record.len(), expected.len()),
            });
        }
        let name = &record[0];
        let id = AssigneeId::new(name).map_err(wrap)?;
        if !seen.insert(name.to_string()) {
            return Err(wrap(Error::DuplicateAssignee(name.to_string())));
        }
        let mut row = Vec::with_capacity(expected.len() - 1);
        for (field, column) in record.iter().skip(1).zip(&expected[1..]) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("`{column}` value `{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(wrap(Error::NonFiniteValue {
                    assignee: name.to_string(),
                    query: column.to_string(),
                }));
            }
            if v < 0.0 {
                return Err(wrap(Error::NegativeTrueCount {
                    assignee: name.to_string(),
                    query: column.to_string(),
                    value: v,
                }));
            }
            row.push(v);
        }
        ids.push(id);
        rows.push(row);
    }
    let queries = expected[1..]
        .iter()
        .map(|q| QueryId::new(*q))
        .collect::<Result<Vec<_>>>()?;
    StatMatrix::from_rows(ids, queries, rows)
}

/// Writes a matrix as `assignee,<queries>` CSV with shortest round-trip numbers.
pub fn save_csv(m: &StatMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    write_matrix(m, &mut w)?;
    w.flush()?;
    Ok(())
}

fn write_matrix<W: io::Write>(m: &StatMatrix, w: &mut csv::Writer<W>) -> Result<()> {
    let mut header = vec!["assignee".to_string()];
    header.extend(m.queries().iter().map(|q| q.to_string()));
    w.write_record(&header)?;
    for (a, row) in m.assignees().iter().zip(m.rows()) {
        let mut rec = vec![a.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthProfile {
    /// Many small districts, minimum 8 students, heavy right tail.
    MichiganLike,
    /// Fewer, larger districts, minimum 49 students.
    FloridaLike,
    /// State populations spread log-uniformly over 10^4..10^8.
    IndiaLike,
}

impl SynthProfile {
    pub fn name(self) -> &'static str {
        match self {
            SynthProfile::MichiganLike => "michigan-like",
            SynthProfile::FloridaLike => "florida-like",
            SynthProfile::IndiaLike => "india-like",
        }
    }

    pub fn problem(self) -> Problem {
        match self {
            SynthProfile::MichiganLike | SynthProfile::FloridaLike => Problem::Title1,
            SynthProfile::IndiaLike => Problem::Apportionment,
        }
    }

    fn tag(self) -> u128 {
        match self {
            SynthProfile::MichiganLike => 1,
            SynthProfile::FloridaLike => 2,
            SynthProfile::IndiaLike => 3,
        }
    }
}

impl fmt::Display for SynthProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "michigan-like" => Ok(SynthProfile::MichiganLike),
            "florida-like" => Ok(SynthProfile::FloridaLike),
            "india-like" => Ok(SynthProfile::IndiaLike),
            other => Err(Error::InvalidConfig(format!("unknown profile `{other}`"))),
        }
    }
}

const MICHIGAN_FLOOR: f64 = 8.0;
const FLORIDA_FLOOR: f64 = 49.0;
const MICHIGAN_EXP: f64 = 11_000.0;
const FLORIDA_EXP: f64 = 9_000.0;

fn padded_names(prefix: &str, n: usize) -> Result<Vec<AssigneeId>> {
    let width = n.to_string().len();
    (1..=n)
        .map(|i| AssigneeId::new(format!("{prefix}-{i:0width$}")))
        .collect()
}

/// Deterministic synthetic dataset. Names sort in row order, so the row
/// order is also the alphabetical order.
pub fn synth_generate(profile: SynthProfile, n: usize, seed: u64) -> Result<StatMatrix> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let mut rng = RngStream::new((profile.tag() << 64) | u128::from(seed), 0);
    match profile {
        SynthProfile::MichiganLike | SynthProfile::FloridaLike => {
            let (floor, median, sigma, exp) = if profile == SynthProfile::MichiganLike {
                (MICHIGAN_FLOOR, 150.0_f64, 1.3, MICHIGAN_EXP)
            } else {
                (FLORIDA_FLOOR, 4000.0_f64, 1.0, FLORIDA_EXP)
            };
            let dist = LogNormal::new(median.ln(), sigma)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let mut eli: Vec<f64> = (0..n)
                .map(|_| floor + dist.sample(&mut rng).round())
                .collect();
            // pin the smallest district at the floor
            if let Some(min) = eli.iter_mut().min_by(|a, b| a.total_cmp(b)) {
                *min = floor;
            }
            StatMatrix::from_columns(
                padded_names("district", n)?,
                vec![
                    (QueryId::new("eli")?, eli),
                    (QueryId::new("exp")?, vec![exp; n]),
                ],
            )
        }
        SynthProfile::IndiaLike => {
            // one draw per equal-width stratum of log10 population in [4, 8]
            let mut tot: Vec<f64> = (0..n)
                .map(|i| {
                    let u = if n == 1 {
                        rng.random::<f64>()
                    } else {
                        (i as f64 + rng.random::<f64>()) / n as f64
                    };
                    10f64.powf(4.0 + 4.0 * u).round()
                })
                .collect();
            tot.shuffle(&mut rng);
            StatMatrix::from_columns(padded_names("state", n)?, vec![(QueryId::new("tot")?, tot)])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    CsvLong,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv-long" => Ok(ReportFormat::CsvLong),
            other => Err(Error::InvalidConfig(format!("unknown format `{other}`"))),
        }
    }
}

/// Seventeen significant digits: enough to round-trip every `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Pretty JSON with every float written by [`format_f64`].
struct SigFigFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for SigFigFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn write_json<W: io::Write, T: Serialize>(writer: W, value: &T) -> Result<()> {
    let mut ser =
        serde_json::Serializer::with_formatter(writer, SigFigFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    Ok(())
}

pub fn report_to_json(report: &FairnessReport) -> Result<String> {
    let mut buf = Vec::new();
    write_json(&mut buf, report)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn report_from_json(s: &str) -> Result<FairnessReport> {
    Ok(serde_json::from_str(s)?)
}

/// Long-format rows `assignee,epsilon,metric,value`. Per-assignee rows come
/// first for each epsilon, followed by aggregate rows with an empty assignee.
/// Undefined values are written as `NA`.
pub fn write_csv_long<W: io::Write>(report: &FairnessReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["assignee", "epsilon", "metric", "value"])?;
    for section in &report.sections {
        let eps = format_f64(section.epsilon);
        for (assignee, metrics) in &section.per_assignee {
            for (metric, value) in metrics {
                let v = value.map_or_else(|| "NA".to_string(), format_f64);
                w.write_record([assignee.as_str(), &eps, metric, &v])?;
            }
        }
        for (metric, value) in &section.aggregates {
            w.write_record(["", &eps, metric, &format_f64(*value)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn emit_report(
    report: &FairnessReport,
    format: ReportFormat,
    out: impl AsRef<Path>,
) -> Result<()> {
    let mut file = BufWriter::new(File::create(out)?);
    match format {
        ReportFormat::Json => file.write_all(report_to_json(report)?.as_bytes())?,
        ReportFormat::CsvLong => write_csv_long(report, &mut file)?,
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EpsilonSection;
    use indexmap::IndexMap;

    fn parse(text: &str, schema: Problem) -> Result<StatMatrix> {
        read_csv(text.as_bytes(), Path::new("mem.csv"), schema)
    }

    #[test]
    fn loads_in_file_order() {
        let m = parse(
            "assignee,vac,lep,lit\nzeta,100,50,10\nalpha,3,2,1\n",
            Problem::Vra,
        )
        .unwrap();
        assert_eq!(m.n_assignees(), 2);
        assert_eq!(m.assignees()[0].as_str(), "zeta");
        assert_eq!(m.row(1), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn rejects_duplicates_with_line() {
        let err = parse("assignee,tot\na,1\nb,2\na,3\n", Problem::Apportionment).unwrap_err();
        match err {
            Error::Row { line, source, .. } => {
                assert_eq!(line, 4);
                assert!(matches!(*source, Error::DuplicateAssignee(_)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_error_names_line() {
        let err = parse("assignee,vac,lep,lit\na,1,1,1\nb,abc,1,1\n", Problem::Vra).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(
            parse("assignee,eli\na,1\n", Problem::Title1),
            Err(Error::SchemaMismatch { line: 1, .. })
        ));
        assert!(matches!(
            parse("", Problem::Title1),
            Err(Error::SchemaMismatch { .. })
        ));
        assert!(matches!(
            parse("assignee,tot\na,1,2\n", Problem::Apportionment),
            Err(Error::SchemaMismatch { line: 2, .. })
        ));
        let err = parse("assignee,tot\na,-4\n", Problem::Apportionment).unwrap_err();
        assert!(
            matches!(&err, Error::Row { source, .. } if matches!(**source, Error::NegativeTrueCount { .. }))
        );
        let err = parse("assignee,tot\na,inf\n", Problem::Apportionment).unwrap_err();
        assert!(
            matches!(&err, Error::Row { source, .. } if matches!(**source, Error::NonFiniteValue { .. }))
        );
    }

    #[test]
    fn synth_profiles() {
        let m = synth_generate(SynthProfile::MichiganLike, 888, 1).unwrap();
        let eli = m.column("eli").unwrap();
        let mut sorted = eli.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted[0], 8.0);
        assert!(sorted[887] / sorted[444] > 10.0);

        let f = synth_generate(SynthProfile::FloridaLike, 74, 1).unwrap();
        assert!(f.column("eli").unwrap().iter().all(|v| *v >= 49.0));

        let i = synth_generate(SynthProfile::IndiaLike, 35, 1).unwrap();
        let tot = i.column("tot").unwrap();
        let lo = tot.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = tot.iter().copied().fold(0.0, f64::max);
        assert!(
            (1e4..1e5).contains(&lo) && hi > 1e7 && hi <= 1e8,
            "{lo} {hi}"
        );

        assert_eq!(
            m,
            synth_generate(SynthProfile::MichiganLike, 888, 1).unwrap()
        );
        assert_ne!(
            m,
            synth_generate(SynthProfile::MichiganLike, 888, 2).unwrap()
        );
        assert!(synth_generate(SynthProfile::IndiaLike, 0, 1).is_err());
    }

    #[test]
    fn synth_round_trips_through_csv() {
        let m = synth_generate(SynthProfile::FloridaLike, 10, 3).unwrap();
        let mut w = csv::Writer::from_writer(Vec::new());
        write_matrix(&m, &mut w).unwrap();
        let bytes = w.into_inner().unwrap();
        let back = read_csv(bytes.as_slice(), Path::new("mem"), Problem::Title1).unwrap();
        assert_eq!(back, m);
    }

    fn sample_report() -> FairnessReport {
        let mut per = IndexMap::new();
        for a in ["x", "y", "z"] {
            let mut m = IndexMap::new();
            m.insert("mult_err".to_string(), Some(1.0 / 3.0));
            m.insert(
                "misalloc".to_string(),
                if a == "z" { None } else { Some(-0.1) },
            );
            per.insert(a.to_string(), m);
        }
        let mut agg = IndexMap::new();
        agg.insert("misalloc_total".to_string(), 0.2);
        let section = |eps: f64| EpsilonSection {
            epsilon: eps,
            n_trials: 10,
            degenerate_trials: 0,
            per_assignee: per.clone(),
            aggregates: agg.clone(),
        };
        let mut echo = IndexMap::new();
        echo.insert("problem".to_string(), serde_json::json!("title1"));
        echo.insert("epsilons".to_string(), serde_json::json!([0.1, 1e-6]));
        FairnessReport {
            config_echo: echo,
            sections: vec![section(0.1), section(1e-6)],
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let r = sample_report();
        let text = report_to_json(&r).unwrap();
        assert!(text.contains("3.3333333333333331e-1"));
        assert_eq!(report_from_json(&text).unwrap(), r);
    }

    #[test]
    fn json_with_aggregates_only() {
        let mut r = sample_report();
        for s in &mut r.sections {
            s.per_assignee.clear();
        }
        let text = report_to_json(&r).unwrap();
        assert_eq!(report_from_json(&text).unwrap(), r);
    }

    #[test]
    fn csv_long_row_counts() {
        let r = sample_report();
        let mut buf = Vec::new();
        write_csv_long(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        let per_assignee = rows.iter().filter(|l| !l.starts_with(',')).count();
        assert_eq!(per_assignee, 3 * 2 * 2);
        assert_eq!(rows.len() - per_assignee, 2);
        assert!(text.contains(&format!("z,{},misalloc,NA", format_f64(0.1))));
    }
}
