use serde::Serialize;

use super::TimeConfig;
use crate::scenario::VehicleId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketFate {
    Decoded,
    /// Expired at the end of a period in which its Tx was scheduled.
    Failed,
    /// Still waiting for a scheduling opportunity when the run ended.
    Deferred,
}

/// Final state of one generated packet (one per unicast pair, or one per
/// Tx-neighbour link in broadcast mode).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacketRecord {
    pub tx: VehicleId,
    pub rx: VehicleId,
    pub generated_slot: u64,
    /// Tx-Rx distance at generation time.
    pub distance_m: f64,
    pub fate: PacketFate,
    /// Slots from generation to the end of the first decoding slot.
    pub latency_slots: Option<u64>,
}

/// `count` equal-width bins starting at 0 m plus one overflow bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceBins {
    pub width_m: f64,
    pub count: usize,
}

impl DistanceBins {
    pub fn index(&self, distance_m: f64) -> usize {
        ((distance_m / self.width_m).floor() as usize).min(self.count)
    }

    /// Column-friendly bin labels, e.g. `0_50` and `200_inf`.
    pub fn labels(&self) -> Vec<String> {
        (0..=self.count)
            .map(|i| {
                let lo = self.width_m * i as f64;
                if i == self.count {
                    format!("{lo}_inf")
                } else {
                    format!("{lo}_{}", lo + self.width_m)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceBin {
    pub lo_m: f64,
    /// `None` for the overflow bin.
    pub hi_m: Option<f64>,
    pub generated: u64,
    pub decoded: u64,
    /// `None` when no packet fell in the bin.
    pub prp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub generated: u64,
    pub decoded: u64,
    pub failed: u64,
    pub deferred: u64,
    pub within_deadline: u64,
    pub packet_reception_probability: f64,
    pub latency_satisfaction_ratio: f64,
    /// Set when nothing was decoded; the ratio is then reported as 1.0.
    pub latency_zero_denominator: bool,
    pub decoded_per_period: f64,
    pub distance_bins: Vec<DistanceBin>,
    /// Allocation utility per period.
    pub utility_trace: Vec<f64>,
}

impl RunMetrics {
    pub fn is_conserved(&self) -> bool {
        self.generated == self.decoded + self.failed + self.deferred
    }
}

pub fn aggregate_metrics(records: &[PacketRecord], bins: &DistanceBins, time: &TimeConfig, periods: u32) -> RunMetrics {
    let deadline_slots = (time.latency_deadline_s / time.slot_duration_s + 1e-9).floor() as u64;
    let mut per_bin = vec![(0u64, 0u64); bins.count + 1];
    let (mut decoded, mut failed, mut deferred, mut within) = (0, 0, 0, 0);
    for r in records {
        let b = &mut per_bin[bins.index(r.distance_m)];
        b.0 += 1;
        match r.fate {
            PacketFate::Decoded => {
                decoded += 1;
                b.1 += 1;
                if r.latency_slots.is_some_and(|l| l <= deadline_slots) {
                    within += 1;
                }
            }
            PacketFate::Failed => failed += 1,
            PacketFate::Deferred => deferred += 1,
        }
    }
    let generated = records.len() as u64;
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    RunMetrics {
        generated,
        decoded,
        failed,
        deferred,
        within_deadline: within,
        packet_reception_probability: ratio(decoded, generated).unwrap_or(0.0),
        latency_satisfaction_ratio: ratio(within, decoded).unwrap_or(1.0),
        latency_zero_denominator: decoded == 0,
        decoded_per_period: if periods > 0 {
            decoded as f64 / f64::from(periods)
        } else {
            0.0
        },
        distance_bins: per_bin
            .iter()
            .enumerate()
            .map(|(i, &(g, d))| DistanceBin {
                lo_m: bins.width_m * i as f64,
                hi_m: (i < bins.count).then(|| bins.width_m * (i + 1) as f64),
                generated: g,
                decoded: d,
                prp: ratio(d, g),
            })
            .collect(),
        utility_trace: Vec::new(),
    }
}
