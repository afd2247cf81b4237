//! SIC ordering, sequential-cancellation SINR, Shannon rate, hard decoding
//! and the logistic decoding-success proxy.

use serde::{Deserialize, Serialize};

use crate::channel::dbm_to_watts;
use crate::scenario::VehicleId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhyConfig {
    /// Minimum rate for a successful decode.
    pub rate_threshold_bps: f64,
    /// Slope of the logistic success proxy, per Mbit/s of rate gap.
    pub logistic_slope_per_mbps: f64,
    pub tx_power_max_dbm: f64,
    pub interference_threshold_dbm: f64,
}

impl Default for PhyConfig {
    fn default() -> Self {
        Self {
            rate_threshold_bps: 2.4e6,
            logistic_slope_per_mbps: 5.0,
            tx_power_max_dbm: 23.0,
            interference_threshold_dbm: -90.0,
        }
    }
}

impl PhyConfig {
    pub fn params(&self) -> PhyParams {
        PhyParams {
            rate_threshold_bps: self.rate_threshold_bps,
            logistic_slope: self.logistic_slope_per_mbps / 1e6,
            tx_power_max_w: dbm_to_watts(self.tx_power_max_dbm),
            interference_threshold_w: dbm_to_watts(self.interference_threshold_dbm),
        }
    }
}

/// Linear-unit PHY parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhyParams {
    pub rate_threshold_bps: f64,
    /// Per bit/s.
    pub logistic_slope: f64,
    pub tx_power_max_w: f64,
    pub interference_threshold_w: f64,
}

/// Decoding order at one receiver on one subchannel, strongest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SicOrder {
    pub rx: VehicleId,
    pub subchannel: usize,
    pub txs: Vec<VehicleId>,
}

impl SicOrder {
    /// Transmitters decoded before `tx`, i.e. the stronger co-channel set.
    pub fn stronger_than(&self, tx: VehicleId) -> &[VehicleId] {
        let pos = self.txs.iter().position(|&t| t == tx).unwrap_or(self.txs.len());
        &self.txs[..pos]
    }
}

/// Sorts `candidates` (tx, gain at `rx`) by decreasing gain; equal gains go
/// to the lower Tx id first.
pub fn sic_order(rx: VehicleId, subchannel: usize, candidates: &[(VehicleId, f64)]) -> SicOrder {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    SicOrder {
        rx,
        subchannel,
        txs: sorted.into_iter().map(|(t, _)| t).collect(),
    }
}

/// One received signal in SIC order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SicSignal {
    pub tx: VehicleId,
    pub power_w: f64,
    pub gain: f64,
}

/// SINR of each non-silent signal assuming every stronger signal has been
/// cancelled and every weaker one is still interference.
pub fn sic_sinr_chain(signals: &[SicSignal], noise_w: f64) -> Vec<(VehicleId, f64)> {
    let active: Vec<&SicSignal> = signals.iter().filter(|s| s.power_w > 0.0).collect();
    // Accumulate weakest-first so dropping an interferer can only shrink
    // every partial sum, even under rounding.
    let mut out = vec![(0, 0.0); active.len()];
    let mut residual = 0.0;
    for (i, s) in active.iter().enumerate().rev() {
        let rx_power = s.power_w * s.gain;
        out[i] = (s.tx, rx_power / (noise_w + residual));
        residual += rx_power;
    }
    out
}

/// Shannon rate in bit/s.
pub fn rate(sinr: f64, bandwidth_hz: f64) -> f64 {
    bandwidth_hz * (1.0 + sinr).log2()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeResult {
    pub tx: VehicleId,
    pub sinr: f64,
    pub rate_bps: f64,
    pub decoded: bool,
}

/// Walks the chain strongest first. A signal decodes iff its rate meets the
/// threshold and every stronger signal decoded; the first failure breaks
/// cancellation for everything weaker. Silent signals are skipped.
pub fn decode_outcomes(
    signals: &[SicSignal],
    noise_w: f64,
    bandwidth_hz: f64,
    rate_threshold_bps: f64,
) -> Vec<DecodeResult> {
    let mut chain_ok = true;
    sic_sinr_chain(signals, noise_w)
        .into_iter()
        .map(|(tx, sinr)| {
            let r = rate(sinr, bandwidth_hz);
            chain_ok = chain_ok && r >= rate_threshold_bps;
            DecodeResult {
                tx,
                sinr,
                rate_bps: r,
                decoded: chain_ok,
            }
        })
        .collect()
}

/// Logistic approximation of the probability that a link at `rate_bps`
/// decodes. Evaluated in the form that never overflows.
pub fn logistic_success(rate_bps: f64, rate_threshold_bps: f64, slope: f64) -> f64 {
    let x = slope * (rate_bps - rate_threshold_bps);
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
