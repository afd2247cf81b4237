//! Parameter sweeps: one base config, one dotted parameter path, a list of
//! values and the schemes to compare.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use toml::{Table, Value};
use v2x_noma::config::RunConfig;
use v2x_noma::engine::Scheme;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Dotted path into the run config, e.g. `scenario.vehicle_count`.
    pub parameter: String,
    pub values: Vec<Value>,
    #[serde(default = "all_schemes")]
    pub schemes: Vec<Scheme>,
    /// Base run config; omitted keys take their defaults.
    #[serde(default)]
    pub base: Table,
}

fn all_schemes() -> Vec<Scheme> {
    vec![Scheme::NomaMcd, Scheme::OmaBaseline]
}

/// One sweep point with its effective config.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub scheme: Scheme,
    pub config: RunConfig,
}

/// Text form of a swept value as it appears in the CSV.
pub fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Integer(i) => i.to_string(),
        Value::Float(f) => f.to_string(),
        Value::Boolean(b) => b.to_string(),
        other => other.to_string(),
    }
}

fn set_path(table: &mut Table, path: &str, value: Value) -> Result<()> {
    let mut keys: Vec<&str> = path.split('.').collect();
    let last = keys.pop().expect("split yields at least one key");
    let mut cur = table;
    for k in keys {
        let entry = cur.entry(k).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => bail!("{path}: {k} is not a table"),
        };
    }
    cur.insert(last.to_owned(), value);
    Ok(())
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: SweepSpec = toml::from_str(text)?;
        if spec.values.is_empty() {
            bail!("values: must list at least one value");
        }
        if spec.schemes.is_empty() {
            bail!("schemes: must list at least one scheme");
        }
        if matches!(spec.parameter.as_str(), "scheme" | "seeds") || spec.parameter.is_empty() {
            bail!("parameter: cannot sweep {:?}", spec.parameter);
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::parse(&text)
    }

    /// Every (value, scheme) point in sweep order, each validated.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        let mut out = Vec::with_capacity(self.values.len() * self.schemes.len());
        for (i, v) in self.values.iter().enumerate() {
            let mut table = self.base.clone();
            set_path(&mut table, &self.parameter, v.clone())?;
            let base: RunConfig = Value::Table(table)
                .try_into()
                .with_context(|| format!("values[{i}] = {v} for {}", self.parameter))?;
            for &scheme in &self.schemes {
                let config = RunConfig { scheme, ..base.clone() };
                config
                    .validate()
                    .with_context(|| format!("values[{i}] = {v} for {}", self.parameter))?;
                out.push(SweepPoint {
                    value: value_label(v),
                    scheme,
                    config,
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = r#"
parameter = "scenario.vehicle_count"
values = [20, 40]

[base]
seeds = [1, 2]

[base.time]
periods_per_run = 3
"#;

    #[test]
    fn expands_in_value_then_scheme_order() {
        let spec = SweepSpec::parse(SPEC).unwrap();
        let pts = spec.points().unwrap();
        let keys: Vec<(String, Scheme)> = pts.iter().map(|p| (p.value.clone(), p.scheme)).collect();
        assert_eq!(
            keys,
            vec![
                ("20".into(), Scheme::NomaMcd),
                ("20".into(), Scheme::OmaBaseline),
                ("40".into(), Scheme::NomaMcd),
                ("40".into(), Scheme::OmaBaseline),
            ]
        );
        assert_eq!(pts[2].config.scenario.vehicle_count, 40);
        assert_eq!(pts[2].config.time.periods_per_run, 3);
        assert_eq!(pts[2].config.seeds, vec![1, 2]);
    }

    #[test]
    fn invalid_value_names_field() {
        let text = SPEC
            .replace("scenario.vehicle_count", "scenario.tx_fraction")
            .replace("[20, 40]", "[0.2, 1.5]");
        let err = SweepSpec::parse(&text).unwrap().points().unwrap_err();
        let msg = format!("{err:#}");
        assert!(
            msg.contains("values[1]") && msg.contains("scenario.tx_fraction"),
            "{msg}"
        );
    }

    #[test]
    fn unknown_parameter_rejected() {
        let text = SPEC.replace("scenario.vehicle_count", "scenario.vehicles");
        assert!(SweepSpec::parse(&text).unwrap().points().is_err());
        assert!(SweepSpec::parse(&SPEC.replace("[20, 40]", "[]")).is_err());
        assert!(SweepSpec::parse(&SPEC.replace("scenario.vehicle_count", "seeds")).is_err());
    }
}
