//! Run configuration: one TOML document with a section per module.
//!
//! Unknown keys are rejected, omitted keys take their defaults, and every
//! validation error names the offending field by its dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::AllocatorConfig;
use crate::channel::ChannelConfig;
use crate::engine::{DistanceBins, Mode, Scheme, TimeConfig};
use crate::phy::PhyConfig;
use crate::powerctl::ControlConfig;
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub output_path: PathBuf,
    pub distance_bin_width_m: f64,
    /// Bins below the overflow bin.
    pub distance_bin_count: u32,
    pub scenario: ScenarioConfig,
    pub channel: ChannelConfig,
    pub phy: PhyConfig,
    pub allocator: AllocatorConfig,
    pub control: ControlConfig,
    pub time: TimeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::NomaMcd,
            mode: Mode::Unicast,
            seeds: vec![0],
            output_path: PathBuf::from("results"),
            distance_bin_width_m: 50.0,
            distance_bin_count: 4,
            scenario: ScenarioConfig::default(),
            channel: ChannelConfig::default(),
            phy: PhyConfig::default(),
            allocator: AllocatorConfig::default(),
            control: ControlConfig::default(),
            time: TimeConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    /// Dotted path of the offending field, for validation errors.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_owned(),
        reason: reason.into(),
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and > 0, got {v}")))
    }
}

fn finite(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite, got {v}")))
    }
}

fn at_least(field: &str, v: u64, min: u64) -> Result<(), ConfigError> {
    if v >= min {
        Ok(())
    } else {
        Err(invalid(field, format!("must be >= {min}, got {v}")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "must list at least one seed"));
        }
        positive("distance_bin_width_m", self.distance_bin_width_m)?;
        at_least("distance_bin_count", self.distance_bin_count.into(), 1)?;

        let s = &self.scenario;
        positive("scenario.road.length_m", s.road.length_m)?;
        at_least("scenario.road.lane_count", s.road.lane_count.into(), 1)?;
        positive("scenario.road.lane_width_m", s.road.lane_width_m)?;
        finite("scenario.road.speed_min_mps", s.road.speed_min_mps)?;
        finite("scenario.road.speed_max_mps", s.road.speed_max_mps)?;
        if s.road.speed_min_mps < 0.0 {
            return Err(invalid("scenario.road.speed_min_mps", "must be >= 0"));
        }
        if s.road.speed_max_mps < s.road.speed_min_mps {
            return Err(invalid(
                "scenario.road.speed_max_mps",
                "must be >= scenario.road.speed_min_mps",
            ));
        }
        at_least("scenario.vehicle_count", s.vehicle_count.into(), 2)?;
        if !(s.tx_fraction > 0.0 && s.tx_fraction <= 1.0) {
            return Err(invalid(
                "scenario.tx_fraction",
                format!("must lie in (0, 1], got {}", s.tx_fraction),
            ));
        }
        if self.mode == Mode::Unicast {
            let tx = s.tx_count();
            if tx == 0 {
                return Err(invalid("scenario.tx_fraction", "yields no Tx vehicle"));
            }
            if 2 * tx > s.vehicle_count as usize {
                return Err(invalid(
                    "scenario.tx_fraction",
                    format!(
                        "{tx} Tx users need as many Rx users, only {} left",
                        s.vehicle_count as usize - tx
                    ),
                ));
            }
        }
        positive("scenario.comm_range_m", s.comm_range_m)?;

        let c = &self.channel;
        positive("channel.pathloss_exponent", c.pathloss_exponent)?;
        finite("channel.reference_loss_db", c.reference_loss_db)?;
        positive("channel.reference_distance_m", c.reference_distance_m)?;
        finite("channel.shadowing_sigma_db", c.shadowing_sigma_db)?;
        if c.shadowing_sigma_db < 0.0 {
            return Err(invalid("channel.shadowing_sigma_db", "must be >= 0"));
        }
        finite("channel.noise_psd_dbm_per_hz", c.noise_psd_dbm_per_hz)?;
        if let Some(n) = c.noise_power_dbm_per_subchannel {
            finite("channel.noise_power_dbm_per_subchannel", n)?;
        }
        positive("channel.subchannel_bandwidth_hz", c.subchannel_bandwidth_hz)?;
        at_least("channel.subchannel_count", c.subchannel_count.into(), 1)?;

        let p = &self.phy;
        positive("phy.rate_threshold_bps", p.rate_threshold_bps)?;
        positive("phy.logistic_slope_per_mbps", p.logistic_slope_per_mbps)?;
        finite("phy.tx_power_max_dbm", p.tx_power_max_dbm)?;
        finite("phy.interference_threshold_dbm", p.interference_threshold_dbm)?;

        let a = &self.allocator;
        at_least("allocator.q_tx", a.q_tx.into(), 1)?;
        at_least("allocator.q_sc", a.q_sc.into(), 1)?;
        at_least("allocator.max_swap_iterations", a.max_swap_iterations.into(), 1)?;

        let k = &self.control;
        at_least("control.tc_iterations", k.tc_iterations.into(), 1)?;
        if !(k.broadcast_coverage_fraction > 0.0 && k.broadcast_coverage_fraction <= 1.0) {
            return Err(invalid(
                "control.broadcast_coverage_fraction",
                format!("must lie in (0, 1], got {}", k.broadcast_coverage_fraction),
            ));
        }
        finite("control.convergence_epsilon_w", k.convergence_epsilon_w)?;
        if k.convergence_epsilon_w < 0.0 {
            return Err(invalid("control.convergence_epsilon_w", "must be >= 0"));
        }

        let t = &self.time;
        at_least("time.sps_period_slots", t.sps_period_slots.into(), 1)?;
        positive("time.slot_duration_s", t.slot_duration_s)?;
        at_least("time.periods_per_run", t.periods_per_run.into(), 1)?;
        positive("time.latency_deadline_s", t.latency_deadline_s)?;
        if t.latency_deadline_s < t.slot_duration_s {
            return Err(invalid("time.latency_deadline_s", "must be >= time.slot_duration_s"));
        }
        Ok(())
    }

    pub fn distance_bins(&self) -> DistanceBins {
        DistanceBins {
            width_m: self.distance_bin_width_m,
            count: self.distance_bin_count as usize,
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }
}

/// Parses, defaults and validates a TOML run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config("[scenario]\nvehicle_count = 20\n").unwrap();
        assert_eq!(cfg.scenario.vehicle_count, 20);
        let expected = RunConfig {
            scenario: ScenarioConfig {
                vehicle_count: 20,
                ..ScenarioConfig::default()
            },
            ..RunConfig::default()
        };
        assert_eq!(cfg, expected);
        assert_eq!(cfg.time.sps_period_slots, 10);
        assert_eq!(cfg.channel.subchannel_count, 10);
        assert_eq!(cfg.control.tc_iterations, 4);
    }

    #[test]
    fn bad_tx_fraction_names_field() {
        let err = parse_config("[scenario]\ntx_fraction = 1.5\n").unwrap_err();
        assert_eq!(err.field(), Some("scenario.tx_fraction"));
        assert!(err.to_string().contains("scenario.tx_fraction"));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config("[channel]\npathloss_exponent = 3.0\nfoo_db = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        assert!(err.to_string().contains("foo_db"), "{err}");
        assert!(parse_config("typo = 1\n").is_err());
    }

    #[test]
    fn round_trip_is_stable() {
        let text = "scheme = \"oma_baseline\"\nmode = \"broadcast\"\nseeds = [3, 4]\n\
                    [scenario]\nvehicle_count = 30\n[scenario.road]\nwraparound = false\n\
                    [channel]\nnoise_power_dbm_per_subchannel = -100.0\n";
        let a = parse_config(text).unwrap();
        let b = parse_config(&a.to_toml_string()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_toml_string(), b.to_toml_string());
        let d = RunConfig::default();
        assert_eq!(parse_config(&d.to_toml_string()).unwrap(), d);
    }

    #[test]
    fn other_validation_paths() {
        let cases = [
            ("seeds = []\n", "seeds"),
            ("[time]\nlatency_deadline_s = 0.0001\n", "time.latency_deadline_s"),
            ("[control]\ntc_iterations = 0\n", "control.tc_iterations"),
            (
                "[control]\nbroadcast_coverage_fraction = 0.0\n",
                "control.broadcast_coverage_fraction",
            ),
            ("[allocator]\nq_sc = 0\n", "allocator.q_sc"),
            ("[channel]\nsubchannel_count = 0\n", "channel.subchannel_count"),
            ("[scenario]\ntx_fraction = 0.8\n", "scenario.tx_fraction"),
            ("[scenario.road]\nspeed_min_mps = 40.0\n", "scenario.road.speed_max_mps"),
        ];
        for (text, field) in cases {
            assert_eq!(parse_config(text).unwrap_err().field(), Some(field), "{text}");
        }
        // Broadcast has no Rx-count constraint.
        assert!(parse_config("mode = \"broadcast\"\n[scenario]\ntx_fraction = 0.8\n").is_ok());
    }
}
