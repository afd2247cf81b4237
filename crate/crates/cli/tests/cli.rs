use std::fs;
use std::path::Path;
use std::process::Command;

use v2x_noma::config::parse_config;
use v2x_noma_cli::{cmd_run, read_metrics_csv, RunOptions, AGGREGATE_CSV, METRICS_CSV, REPORT_JSON, SWEEP_CSV};

const SMALL: &str = r#"
seeds = [3, 4]

[time]
periods_per_run = 4
"#;

const SWEEP: &str = r#"
parameter = "channel.subchannel_count"
values = [5, 10]
schemes = ["noma_mcd", "oma_baseline"]

[base]
seeds = [0, 1]

[base.time]
periods_per_run = 3
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_v2x-noma"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_writes_metrics_aggregate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(SMALL).unwrap();
    let opts = RunOptions {
        out_dir: dir.path().join("out"),
        workers: 2,
        dump_power_traces: true,
    };
    let summary = cmd_run(&cfg, &opts).unwrap();
    assert_eq!(summary.reports.len(), 2);

    let rows = read_metrics_csv(fs::File::open(opts.out_dir.join(METRICS_CSV)).unwrap()).unwrap();
    assert_eq!(rows, summary.rows);
    assert_eq!(rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![3, 4]);
    for r in &rows {
        assert_eq!(r.generated, r.decoded + r.failed + r.deferred);
    }

    let agg = fs::read_to_string(opts.out_dir.join(AGGREGATE_CSV)).unwrap();
    assert!(agg.lines().count() > 1);

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(opts.out_dir.join(REPORT_JSON)).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["runs"].as_array().unwrap().len(), 2);
    assert!(!json["runs"][0]["diagnostics"]["power_traces"]
        .as_array()
        .unwrap()
        .is_empty());
}

#[test]
fn binary_run_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(out.join(METRICS_CSV).exists());
    assert!(String::from_utf8_lossy(&status.stdout).contains("noma_mcd unicast"));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[scenario]\ntx_fraction = 1.5\n");
    let out = bin().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("scenario.tx_fraction"), "{err}");

    let unknown = write(dir.path(), "unknown.toml", "[scenario]\nvehicles = 3\n");
    let out = bin().args(["run", "--config"]).arg(&unknown).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("vehicles"));
}

#[test]
fn sweep_output_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "sweep.toml", SWEEP);
    let mut csvs = Vec::new();
    for workers in ["1", "4"] {
        let out = dir.path().join(format!("w{workers}"));
        let res = bin()
            .args(["sweep", "--workers", workers, "--config"])
            .arg(&spec)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        csvs.push(fs::read(out.join(SWEEP_CSV)).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let rows = read_metrics_csv(&csvs[0][..]).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    assert_eq!(rows[0].parameter, "channel.subchannel_count");
    assert_eq!(rows[0].value, "5");
}

#[test]
fn metrics_reader_rejects_other_schema_versions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(SMALL).unwrap();
    let opts = RunOptions {
        out_dir: dir.path().to_path_buf(),
        workers: 1,
        dump_power_traces: false,
    };
    cmd_run(&cfg, &opts).unwrap();
    let text = fs::read_to_string(dir.path().join(METRICS_CSV)).unwrap();
    let bumped: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                format!("{l}\n")
            } else {
                format!("2{}\n", &l[1..])
            }
        })
        .collect();
    assert!(read_metrics_csv(bumped.as_bytes()).is_err());
}

#[test]
fn oracle_check_reports_no_violations() {
    let out = bin()
        .args(["oracle-check", "--trials", "25", "--seed", "7"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("25 instances"));
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["dense.toml", "broadcast.toml"] {
        v2x_noma::config::load_config(&root.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let spec = v2x_noma_cli::SweepSpec::load(&root.join("sweep_density.toml")).unwrap();
    assert_eq!(spec.points().unwrap().len(), 10);
}
