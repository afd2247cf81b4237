//! Command implementations behind the `v2x-noma` binary.

pub mod oracle;
pub mod report;
pub mod sweep;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use v2x_noma::config::RunConfig;
use v2x_noma::engine::{run_simulation_traced, RunReport};

pub use oracle::{cmd_oracle_check, OracleOptions, OracleSummary};
pub use report::{aggregate, read_metrics_csv, AggregateRow, MetricsRow, SCHEMA_VERSION};
pub use sweep::SweepSpec;

pub const METRICS_CSV: &str = "metrics.csv";
pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const REPORT_JSON: &str = "report.json";
pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads; 0 lets rayon decide.
    pub workers: usize,
    pub dump_power_traces: bool,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

#[derive(Debug)]
pub struct RunSummary {
    pub reports: Vec<RunReport>,
    pub rows: Vec<MetricsRow>,
    pub aggregate: Vec<AggregateRow>,
}

/// Runs every seed of `cfg` and writes `metrics.csv`, `aggregate.csv` and
/// `report.json` into `opts.out_dir`.
pub fn cmd_run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let reports: Vec<RunReport> = pool(opts.workers)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_simulation_traced(cfg, seed, opts.dump_power_traces))
            .collect::<Result<_, _>>()
    })?;
    let rows: Vec<MetricsRow> = reports
        .iter()
        .map(|r| MetricsRow::from_report("", "", cfg, r))
        .collect();
    let agg = aggregate(&rows);

    fs::create_dir_all(&opts.out_dir).with_context(|| format!("cannot create {}", opts.out_dir.display()))?;
    report::write_metrics_csv(create(&opts.out_dir, METRICS_CSV)?, &rows)?;
    report::write_aggregate_csv(create(&opts.out_dir, AGGREGATE_CSV)?, &agg)?;
    let json = report::RunJson {
        schema_version: SCHEMA_VERSION,
        config: cfg,
        runs: &reports,
        aggregate: &agg,
    };
    serde_json::to_writer_pretty(create(&opts.out_dir, REPORT_JSON)?, &json)?;
    Ok(RunSummary {
        reports,
        rows,
        aggregate: agg,
    })
}

/// Runs the full (value, scheme, seed) grid and writes `sweep.csv` and
/// `aggregate.csv`. Rows come out in grid order whatever the worker count.
pub fn cmd_sweep(spec: &SweepSpec, opts: &RunOptions) -> Result<Vec<MetricsRow>> {
    let points = spec.points()?;
    let jobs: Vec<(usize, u64)> = points
        .iter()
        .enumerate()
        .flat_map(|(i, p)| p.config.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let rows: Vec<MetricsRow> = pool(opts.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| {
                let p = &points[i];
                let report = run_simulation_traced(&p.config, seed, false)
                    .with_context(|| format!("{} = {}, {}, seed {seed}", spec.parameter, p.value, p.scheme))?;
                Ok(MetricsRow::from_report(&spec.parameter, &p.value, &p.config, &report))
            })
            .collect::<Result<_>>()
    })?;
    fs::create_dir_all(&opts.out_dir).with_context(|| format!("cannot create {}", opts.out_dir.display()))?;
    report::write_metrics_csv(create(&opts.out_dir, SWEEP_CSV)?, &rows)?;
    report::write_aggregate_csv(create(&opts.out_dir, AGGREGATE_CSV)?, &aggregate(&rows))?;
    Ok(rows)
}
