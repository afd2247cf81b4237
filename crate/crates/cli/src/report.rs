//! Versioned CSV and JSON result files.
//!
//! Every CSV row carries `schema_version`; readers refuse any other
//! version. Floats are written in Rust's shortest round-trip form so equal
//! results give byte-identical files.

use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use v2x_noma::config::RunConfig;
use v2x_noma::engine::{Mode, RunReport, Scheme};

pub const SCHEMA_VERSION: u32 = 1;

/// One seed's metrics, optionally tagged with a sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    /// Swept parameter path; empty for plain runs.
    pub parameter: String,
    pub value: String,
    pub scheme: Scheme,
    pub mode: Mode,
    pub seed: u64,
    pub generated: u64,
    pub decoded: u64,
    pub failed: u64,
    pub deferred: u64,
    pub prp_overall: f64,
    /// (bin label, PRP) with `None` for empty bins.
    pub prp_bins: Vec<(String, Option<f64>)>,
    pub latency_satisfaction_ratio: f64,
    pub zero_denominator_flag: bool,
    pub decoded_per_period: f64,
    pub mean_utility: f64,
}

impl MetricsRow {
    pub fn from_report(parameter: &str, value: &str, cfg: &RunConfig, report: &RunReport) -> Self {
        let m = &report.metrics;
        let labels = cfg.distance_bins().labels();
        let mean_utility = if m.utility_trace.is_empty() {
            0.0
        } else {
            m.utility_trace.iter().sum::<f64>() / m.utility_trace.len() as f64
        };
        Self {
            parameter: parameter.to_owned(),
            value: value.to_owned(),
            scheme: report.scheme,
            mode: report.mode,
            seed: report.seed,
            generated: m.generated,
            decoded: m.decoded,
            failed: m.failed,
            deferred: m.deferred,
            prp_overall: m.packet_reception_probability,
            prp_bins: labels.into_iter().zip(m.distance_bins.iter().map(|b| b.prp)).collect(),
            latency_satisfaction_ratio: m.latency_satisfaction_ratio,
            zero_denominator_flag: m.latency_zero_denominator,
            decoded_per_period: m.decoded_per_period,
            mean_utility,
        }
    }
}

const LEADING: [&str; 6] = ["schema_version", "parameter", "value", "scheme", "mode", "seed"];
const TRAILING: [&str; 8] = [
    "prp_overall",
    "latency_satisfaction_ratio",
    "zero_denominator_flag",
    "decoded_per_period",
    "mean_utility",
    "generated",
    "decoded",
    "failed",
];
const LAST: &str = "deferred";

fn bin_column(label: &str) -> String {
    format!("prp_bin_{label}_m")
}

fn header(bins: &[(String, Option<f64>)]) -> Vec<String> {
    LEADING
        .iter()
        .map(|s| s.to_string())
        .chain(bins.iter().map(|(l, _)| bin_column(l)))
        .chain(TRAILING.iter().map(|s| s.to_string()))
        .chain(std::iter::once(LAST.to_string()))
        .collect()
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = rows.first() else {
        w.flush()?;
        return Ok(());
    };
    let layout: Vec<&String> = first.prp_bins.iter().map(|(l, _)| l).collect();
    w.write_record(header(&first.prp_bins))?;
    for r in rows {
        if r.prp_bins.iter().map(|(l, _)| l).ne(layout.iter().copied()) {
            bail!("rows disagree on distance bins; sweep parameters must not change the bin layout");
        }
        let mut rec = vec![
            SCHEMA_VERSION.to_string(),
            r.parameter.clone(),
            r.value.clone(),
            r.scheme.to_string(),
            r.mode.to_string(),
            r.seed.to_string(),
        ];
        rec.extend(
            r.prp_bins
                .iter()
                .map(|(_, p)| p.map(|v| v.to_string()).unwrap_or_default()),
        );
        rec.extend([
            r.prp_overall.to_string(),
            r.latency_satisfaction_ratio.to_string(),
            r.zero_denominator_flag.to_string(),
            r.decoded_per_period.to_string(),
            r.mean_utility.to_string(),
            r.generated.to_string(),
            r.decoded.to_string(),
            r.failed.to_string(),
            r.deferred.to_string(),
        ]);
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_scheme(s: &str) -> Result<Scheme> {
    match s {
        "noma_mcd" => Ok(Scheme::NomaMcd),
        "oma_baseline" => Ok(Scheme::OmaBaseline),
        _ => bail!("unknown scheme {s:?}"),
    }
}

fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "unicast" => Ok(Mode::Unicast),
        "broadcast" => Ok(Mode::Broadcast),
        _ => bail!("unknown mode {s:?}"),
    }
}

/// Reads a metrics CSV written by [`write_metrics_csv`]. Fails on a missing
/// or unsupported `schema_version`.
pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("missing column {name}"))
    };
    let version_col = col("schema_version")?;
    let bin_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.strip_prefix("prp_bin_")
                .and_then(|rest| rest.strip_suffix("_m"))
                .map(|label| (i, label.to_owned()))
        })
        .collect();
    let idx: Vec<usize> = LEADING[1..]
        .iter()
        .chain(TRAILING.iter())
        .chain(std::iter::once(&LAST))
        .map(|c| col(c))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let version = &rec[version_col];
        if version != SCHEMA_VERSION.to_string() {
            bail!(
                "row {}: unsupported schema_version {version:?} (this reader knows {SCHEMA_VERSION})",
                line + 1
            );
        }
        let f = |i: usize| -> Result<f64> {
            rec[idx[i]]
                .parse()
                .with_context(|| format!("row {}: bad number {:?}", line + 1, &rec[idx[i]]))
        };
        let u = |i: usize| -> Result<u64> {
            rec[idx[i]]
                .parse()
                .with_context(|| format!("row {}: bad integer {:?}", line + 1, &rec[idx[i]]))
        };
        rows.push(MetricsRow {
            parameter: rec[idx[0]].to_owned(),
            value: rec[idx[1]].to_owned(),
            scheme: parse_scheme(&rec[idx[2]])?,
            mode: parse_mode(&rec[idx[3]])?,
            seed: u(4)?,
            prp_bins: bin_cols
                .iter()
                .map(|(i, l)| {
                    let cell = &rec[*i];
                    let v = if cell.is_empty() { None } else { Some(cell.parse()?) };
                    Ok((l.clone(), v))
                })
                .collect::<Result<_>>()?,
            prp_overall: f(5)?,
            latency_satisfaction_ratio: f(6)?,
            zero_denominator_flag: rec[idx[7]].parse()?,
            decoded_per_period: f(8)?,
            mean_utility: f(9)?,
            generated: u(10)?,
            decoded: u(11)?,
            failed: u(12)?,
            deferred: u(13)?,
        });
    }
    Ok(rows)
}

/// Mean, sample standard deviation and two-sided Student-t confidence
/// interval across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub parameter: String,
    pub value: String,
    pub scheme: Scheme,
    pub mode: Mode,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci95_lo: f64,
    pub ci95_hi: f64,
}

pub fn mean_std_ci(values: &[f64], level: f64) -> (f64, f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0, mean, mean);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + level / 2.0);
    let half = t * std / (n as f64).sqrt();
    (mean, std, mean - half, mean + half)
}

const AGGREGATED: [&str; 3] = ["prp_overall", "latency_satisfaction_ratio", "decoded_per_period"];

/// Aggregates rows sharing (parameter, value, scheme, mode), in order of
/// first appearance.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<AggregateRow> {
    let mut groups: Vec<(&MetricsRow, Vec<&MetricsRow>)> = Vec::new();
    for r in rows {
        match groups
            .iter_mut()
            .find(|(k, _)| k.parameter == r.parameter && k.value == r.value && k.scheme == r.scheme && k.mode == r.mode)
        {
            Some((_, members)) => members.push(r),
            None => groups.push((r, vec![r])),
        }
    }
    let mut out = Vec::new();
    for (key, members) in groups {
        for metric in AGGREGATED {
            let values: Vec<f64> = members
                .iter()
                .map(|r| match metric {
                    "prp_overall" => r.prp_overall,
                    "latency_satisfaction_ratio" => r.latency_satisfaction_ratio,
                    _ => r.decoded_per_period,
                })
                .collect();
            let (mean, std, lo, hi) = mean_std_ci(&values, 0.95);
            out.push(AggregateRow {
                parameter: key.parameter.clone(),
                value: key.value.clone(),
                scheme: key.scheme,
                mode: key.mode,
                metric: metric.to_owned(),
                n: values.len(),
                mean,
                std,
                ci95_lo: lo,
                ci95_hi: hi,
            });
        }
    }
    out
}

pub fn write_aggregate_csv<W: Write>(out: W, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "schema_version",
        "parameter",
        "value",
        "scheme",
        "mode",
        "metric",
        "n",
        "mean",
        "std",
        "ci95_lo",
        "ci95_hi",
    ])?;
    for r in rows {
        w.write_record([
            SCHEMA_VERSION.to_string(),
            r.parameter.clone(),
            r.value.clone(),
            r.scheme.to_string(),
            r.mode.to_string(),
            r.metric.clone(),
            r.n.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.ci95_lo.to_string(),
            r.ci95_hi.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Single-run JSON report: effective config, per-seed reports with
/// diagnostics, and the aggregate.
#[derive(Debug, Serialize)]
pub struct RunJson<'a> {
    pub schema_version: u32,
    pub config: &'a RunConfig,
    pub runs: &'a [RunReport],
    pub aggregate: &'a [AggregateRow],
}
