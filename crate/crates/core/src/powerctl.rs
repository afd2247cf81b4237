//! Distributed per-slot power control.
//!
//! The control portion of a slot runs a fixed number of Tx-Rx iterations.
//! In the Tx block every transmitter picks its power on each assigned
//! subchannel from the feedback of the previous Rx block (all updates use
//! the same snapshot). In the Rx block every receiver measures the reference
//! signals it hears and reports interference back. The receivers' final
//! measurements are the prior knowledge used for SIC in the data portion.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::phy::{self, PhyParams};
use crate::scenario::VehicleId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub tc_iterations: u32,
    /// Fraction of neighbouring receivers a broadcast Tx must cover.
    pub broadcast_coverage_fraction: f64,
    pub convergence_epsilon_w: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            tc_iterations: 4,
            broadcast_coverage_fraction: 0.9,
            convergence_epsilon_w: 1e-9,
        }
    }
}

/// Multiplicative headroom over the equality-achieving power, so the
/// resulting rate strictly exceeds the threshold.
pub const POWER_MARGIN: f64 = 1.001;

/// Points in the broadcast power grid.
pub const BROADCAST_GRID_POINTS: usize = 50;

/// Dynamic range of the broadcast power grid below P_max.
pub const BROADCAST_GRID_SPAN_DB: f64 = 100.0;

/// Instantaneous gain of an ordered link on one subchannel.
pub trait GainTable {
    fn gain(&self, tx: VehicleId, rx: VehicleId, subchannel: usize) -> f64;
}

impl<F: Fn(VehicleId, VehicleId, usize) -> f64> GainTable for F {
    fn gain(&self, tx: VehicleId, rx: VehicleId, subchannel: usize) -> f64 {
        self(tx, rx, subchannel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    Unicast,
    Broadcast,
}

/// A transmitter taking part in the control portion.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTx {
    pub id: VehicleId,
    /// Unicast target; `None` in broadcast mode.
    pub target: Option<VehicleId>,
    pub subchannels: Vec<usize>,
    /// Receivers inside this Tx's interference disk.
    pub disk_rx: Vec<VehicleId>,
}

pub struct SlotState<'a, G: GainTable> {
    pub txs: &'a [ControlTx],
    pub gains: &'a G,
    pub noise_w: f64,
    pub bandwidth_hz: f64,
    pub phy: PhyParams,
}

/// A reference signal as measured by one receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceSignal {
    pub tx: VehicleId,
    pub subchannel: usize,
    pub gain: f64,
    pub power_w: f64,
}

/// What a receiver sends back after an Rx block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedbackReport {
    pub rx: VehicleId,
    pub target: Option<VehicleId>,
    /// Subchannels on which this Rx expects data from its target.
    pub listening: Vec<usize>,
    /// Heard, non-silent signals per subchannel.
    pub signals: BTreeMap<usize, Vec<ReferenceSignal>>,
}

impl FeedbackReport {
    /// Total received power on `subchannel` from everyone except the target.
    pub fn aggregate_interference(&self, subchannel: usize) -> f64 {
        self.signals
            .get(&subchannel)
            .map(|sigs| {
                sigs.iter()
                    .filter(|s| Some(s.tx) != self.target)
                    .map(|s| s.power_w * s.gain)
                    .sum()
            })
            .unwrap_or(0.0)
    }

    /// Interference still present when `tx` (with gain `tx_gain` here) is
    /// decoded: every heard signal that comes later in SIC order.
    pub fn residual_interference(&self, subchannel: usize, tx: VehicleId, tx_gain: f64) -> f64 {
        self.signals
            .get(&subchannel)
            .map(|sigs| {
                sigs.iter()
                    .filter(|s| s.tx != tx)
                    .filter(|s| s.gain < tx_gain || (s.gain == tx_gain && s.tx > tx))
                    .map(|s| s.power_w * s.gain)
                    .sum()
            })
            .unwrap_or(0.0)
    }

    /// Received power of `tx` on `subchannel`, zero if silent or unheard.
    pub fn caused_by(&self, subchannel: usize, tx: VehicleId) -> f64 {
        self.signals
            .get(&subchannel)
            .and_then(|sigs| sigs.iter().find(|s| s.tx == tx))
            .map(|s| s.power_w * s.gain)
            .unwrap_or(0.0)
    }

    /// Like [`Self::caused_by`], but zero unless this Rx is receiving on
    /// `subchannel`: only co-channel receivers are harmed.
    pub fn co_channel_harm(&self, subchannel: usize, tx: VehicleId) -> f64 {
        if self.listening.contains(&subchannel) {
            self.caused_by(subchannel, tx)
        } else {
            0.0
        }
    }
}

/// Builds the report of `rx` from the reference signals it received. Silent
/// transmitters contribute nothing.
pub fn rx_feedback(
    rx: VehicleId,
    target: Option<VehicleId>,
    listening: &[usize],
    received: &[ReferenceSignal],
) -> FeedbackReport {
    let mut signals: BTreeMap<usize, Vec<ReferenceSignal>> = BTreeMap::new();
    for s in received.iter().filter(|s| s.power_w > 0.0) {
        signals.entry(s.subchannel).or_default().push(*s);
    }
    FeedbackReport {
        rx,
        target,
        listening: listening.to_vec(),
        signals,
    }
}

/// Transmit power at which `gain * p / (interference + noise)` reaches the
/// SINR needed for `rate_threshold_bps`.
pub fn required_power(rate_threshold_bps: f64, bandwidth_hz: f64, interference_w: f64, noise_w: f64, gain: f64) -> f64 {
    (rate_threshold_bps / bandwidth_hz * std::f64::consts::LN_2).exp_m1() * (interference_w + noise_w) / gain
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "decision", content = "power_w")]
pub enum PowerDecision {
    Transmit(f64),
    /// Interference caused at non-target receivers exceeds the threshold.
    AbstainInterference,
    /// Even P_max would not reach the rate threshold.
    AbstainPowerCap,
}

impl PowerDecision {
    pub fn power(&self) -> f64 {
        match *self {
            PowerDecision::Transmit(p) => p,
            _ => 0.0,
        }
    }
}

/// Unicast rule on one subchannel: silence if the interference this Tx
/// caused last round exceeds the threshold, otherwise the minimum power
/// that lets the target decode, or silence if that exceeds P_max.
pub fn unicast_power_rule(
    caused_interference_w: f64,
    direct_gain: f64,
    target_interference_w: f64,
    noise_w: f64,
    bandwidth_hz: f64,
    phy: &PhyParams,
) -> PowerDecision {
    if caused_interference_w > phy.interference_threshold_w {
        return PowerDecision::AbstainInterference;
    }
    let p = POWER_MARGIN
        * required_power(
            phy.rate_threshold_bps,
            bandwidth_hz,
            target_interference_w,
            noise_w,
            direct_gain,
        );
    if p > phy.tx_power_max_w {
        PowerDecision::AbstainPowerCap
    } else {
        PowerDecision::Transmit(p)
    }
}

/// Per-subchannel feedback as seen by one Tx.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TxFeedback {
    pub caused_interference_w: f64,
    pub target_interference_w: f64,
}

/// Unicast Tx-block update for every assigned subchannel of `tx`.
pub fn tx_power_update(
    direct_gains: &[f64],
    feedback: &[TxFeedback],
    noise_w: f64,
    bandwidth_hz: f64,
    phy: &PhyParams,
) -> Vec<PowerDecision> {
    direct_gains
        .iter()
        .zip(feedback)
        .map(|(&g, fb)| {
            unicast_power_rule(
                fb.caused_interference_w,
                g,
                fb.target_interference_w,
                noise_w,
                bandwidth_hz,
                phy,
            )
        })
        .collect()
}

/// Logarithmic power grid over (0, P_max], ascending, last point P_max.
pub fn broadcast_power_grid(tx_power_max_w: f64) -> Vec<f64> {
    let last = (BROADCAST_GRID_POINTS - 1) as f64;
    (0..BROADCAST_GRID_POINTS)
        .map(|i| {
            let below_db = BROADCAST_GRID_SPAN_DB * (last - i as f64) / last;
            tx_power_max_w * 10f64.powf(-below_db / 10.0)
        })
        .collect()
}

/// Number of neighbours that must decode for coverage fraction `rho`.
pub fn coverage_requirement(neighbor_count: usize, rho: f64) -> usize {
    (rho * neighbor_count as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Smallest grid power at which at least `ceil(rho * n)` of the `n`
/// neighbours, each given as (gain, reported interference), reach the rate
/// threshold. Zero when no grid point qualifies.
pub fn broadcast_tx_power_update(
    neighbors: &[(f64, f64)],
    coverage_fraction: f64,
    noise_w: f64,
    bandwidth_hz: f64,
    phy: &PhyParams,
) -> f64 {
    if neighbors.is_empty() {
        return 0.0;
    }
    let needed = coverage_requirement(neighbors.len(), coverage_fraction).max(1);
    broadcast_power_grid(phy.tx_power_max_w)
        .into_iter()
        .find(|&p| {
            let covered = neighbors
                .iter()
                .filter(|&&(g, i)| phy::rate(p * g / (i + noise_w), bandwidth_hz) >= phy.rate_threshold_bps)
                .count();
            covered >= needed
        })
        .unwrap_or(0.0)
}

/// Final transmit powers of one slot.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PowerProfile {
    pub power_w: BTreeMap<(VehicleId, usize), f64>,
}

impl PowerProfile {
    /// Zero for unassigned subchannels.
    pub fn get(&self, tx: VehicleId, subchannel: usize) -> f64 {
        self.power_w.get(&(tx, subchannel)).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutcome {
    pub powers: PowerProfile,
    /// Per receiver, the non-silent signals it measured in the last Rx
    /// block.
    pub rx_knowledge: BTreeMap<VehicleId, Vec<ReferenceSignal>>,
    /// Powers after each Tx block.
    pub trace: Vec<PowerProfile>,
    /// Largest per-entry power change in the last iteration.
    pub last_change_w: f64,
    pub decisions: BTreeMap<(VehicleId, usize), PowerDecision>,
}

/// Runs `tc_iterations` Tx-block/Rx-block rounds.
pub fn run_control_portion<G: GainTable>(
    state: &SlotState<'_, G>,
    mode: ControlMode,
    config: &ControlConfig,
) -> ControlOutcome {
    // Channel is static within the slot: measure every relevant link once.
    let mut link: HashMap<(VehicleId, VehicleId, usize), f64> = HashMap::new();
    for tx in state.txs {
        for &k in &tx.subchannels {
            for &rx in tx.disk_rx.iter().chain(tx.target.iter()) {
                link.entry((tx.id, rx, k))
                    .or_insert_with(|| state.gains.gain(tx.id, rx, k));
            }
        }
    }
    let gain = |tx: VehicleId, rx: VehicleId, k: usize| link[&(tx, rx, k)];

    let mut receivers: Vec<VehicleId> = state
        .txs
        .iter()
        .flat_map(|t| t.disk_rx.iter().chain(t.target.iter()).copied())
        .collect();
    receivers.sort_unstable();
    receivers.dedup();
    let target_of: HashMap<VehicleId, &ControlTx> = state.txs.iter().filter_map(|t| t.target.map(|r| (r, t))).collect();

    let mut reports: BTreeMap<VehicleId, FeedbackReport> = BTreeMap::new();
    let mut powers = PowerProfile::default();
    let mut decisions = BTreeMap::new();
    let mut trace = Vec::new();
    let mut last_change_w = 0.0;

    for _ in 0..config.tc_iterations.max(1) {
        // Tx block: every update reads the same report snapshot.
        let mut next = PowerProfile::default();
        for tx in state.txs {
            let per_sc: Vec<PowerDecision> = match mode {
                ControlMode::Unicast => {
                    let target = tx.target.expect("unicast Tx has a target");
                    let direct: Vec<f64> = tx.subchannels.iter().map(|&k| gain(tx.id, target, k)).collect();
                    let feedback: Vec<TxFeedback> = tx
                        .subchannels
                        .iter()
                        .zip(&direct)
                        .map(|(&k, &g)| TxFeedback {
                            caused_interference_w: tx
                                .disk_rx
                                .iter()
                                .filter(|&&r| r != target)
                                .filter_map(|r| reports.get(r))
                                .map(|rep| rep.co_channel_harm(k, tx.id))
                                .sum(),
                            target_interference_w: reports
                                .get(&target)
                                .map(|rep| rep.residual_interference(k, tx.id, g))
                                .unwrap_or(0.0),
                        })
                        .collect();
                    tx_power_update(&direct, &feedback, state.noise_w, state.bandwidth_hz, &state.phy)
                }
                ControlMode::Broadcast => tx
                    .subchannels
                    .iter()
                    .map(|&k| {
                        let neighbors: Vec<(f64, f64)> = tx
                            .disk_rx
                            .iter()
                            .map(|&r| {
                                let g = gain(tx.id, r, k);
                                let i = reports
                                    .get(&r)
                                    .map(|rep| rep.residual_interference(k, tx.id, g))
                                    .unwrap_or(0.0);
                                (g, i)
                            })
                            .collect();
                        let p = broadcast_tx_power_update(
                            &neighbors,
                            config.broadcast_coverage_fraction,
                            state.noise_w,
                            state.bandwidth_hz,
                            &state.phy,
                        );
                        if p > 0.0 {
                            PowerDecision::Transmit(p)
                        } else {
                            PowerDecision::AbstainPowerCap
                        }
                    })
                    .collect(),
            };
            for (&k, d) in tx.subchannels.iter().zip(per_sc) {
                next.power_w.insert((tx.id, k), d.power());
                decisions.insert((tx.id, k), d);
            }
        }
        last_change_w = next
            .power_w
            .iter()
            .map(|(key, &p)| (p - powers.get(key.0, key.1)).abs())
            .fold(0.0, f64::max);
        powers = next;
        trace.push(powers.clone());

        // Rx block.
        reports = receivers
            .iter()
            .map(|&rx| {
                let heard: Vec<ReferenceSignal> = state
                    .txs
                    .iter()
                    .filter(|t| t.disk_rx.contains(&rx))
                    .flat_map(|t| {
                        t.subchannels.iter().map(|&k| ReferenceSignal {
                            tx: t.id,
                            subchannel: k,
                            gain: gain(t.id, rx, k),
                            power_w: powers.get(t.id, k),
                        })
                    })
                    .collect();
                let (target, listening) = match target_of.get(&rx) {
                    Some(t) => (Some(t.id), t.subchannels.as_slice()),
                    None => (None, &[][..]),
                };
                (rx, rx_feedback(rx, target, listening, &heard))
            })
            .collect();
    }

    let rx_knowledge = reports
        .into_iter()
        .map(|(rx, rep)| (rx, rep.signals.into_values().flatten().collect()))
        .collect();
    ControlOutcome {
        powers,
        rx_knowledge,
        trace,
        last_change_w,
        decisions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phy() -> PhyParams {
        PhyParams {
            rate_threshold_bps: 1.0,
            logistic_slope: 1.0,
            tx_power_max_w: 10.0,
            interference_threshold_w: 0.5,
        }
    }

    #[test]
    fn required_power_hand_example() {
        // g = 0.5, I + N = 2 W, Rate_th / B = 1 -> (2 - 1) * 2 / 0.5.
        assert!((required_power(1.0, 1.0, 1.5, 0.5, 0.5) - 4.0).abs() < 1e-14);
        // No interference: (2^(R/B) - 1) N / g.
        assert!((required_power(2.0, 1.0, 0.0, 0.5, 0.25) - 6.0).abs() < 1e-14);
    }

    #[test]
    fn rule_abstains_on_caused_interference() {
        assert_eq!(
            unicast_power_rule(0.6, 1.0, 0.0, 0.1, 1.0, &phy()),
            PowerDecision::AbstainInterference
        );
        assert_eq!(
            unicast_power_rule(0.0, 1e-3, 0.0, 0.1, 1.0, &phy()),
            PowerDecision::AbstainPowerCap
        );
        let p = unicast_power_rule(0.5, 1.0, 0.0, 0.1, 1.0, &phy()).power();
        assert!((p - 0.1 * POWER_MARGIN).abs() < 1e-15);
    }

    #[test]
    fn feedback_examples() {
        let silent = [
            ReferenceSignal {
                tx: 1,
                subchannel: 0,
                gain: 0.1,
                power_w: 0.0,
            },
            ReferenceSignal {
                tx: 2,
                subchannel: 0,
                gain: 0.3,
                power_w: 0.0,
            },
        ];
        let rep = rx_feedback(9, None, &[0], &silent);
        assert_eq!(rep.aggregate_interference(0), 0.0);
        assert_eq!(rep.caused_by(0, 1), 0.0);

        let two = [
            ReferenceSignal {
                tx: 1,
                subchannel: 0,
                gain: 0.1,
                power_w: 1.0,
            },
            ReferenceSignal {
                tx: 2,
                subchannel: 0,
                gain: 0.05,
                power_w: 2.0,
            },
            ReferenceSignal {
                tx: 3,
                subchannel: 0,
                gain: 0.9,
                power_w: 1.0,
            },
        ];
        let rep = rx_feedback(9, Some(3), &[0], &two);
        assert!((rep.aggregate_interference(0) - 0.2).abs() < 1e-15);
        assert_eq!(rep, rx_feedback(9, Some(3), &[0], &two));
        // Target 3 is strongest: both others remain after it is decoded.
        assert!((rep.residual_interference(0, 3, 0.9) - 0.2).abs() < 1e-15);
        // For tx 1 only the weaker tx 2 remains.
        assert!((rep.residual_interference(0, 1, 0.1) - 0.1).abs() < 1e-15);
        assert_eq!(rep.co_channel_harm(0, 1), 0.1);
        let deaf = rx_feedback(9, Some(3), &[4], &two);
        assert_eq!(deaf.co_channel_harm(0, 1), 0.0);
        assert_eq!(deaf.caused_by(0, 1), 0.1);
    }

    #[test]
    fn broadcast_single_neighbor_matches_unicast_within_grid_step() {
        let p = phy();
        let grid = broadcast_power_grid(p.tx_power_max_w);
        let step = grid[1] / grid[0];
        let (g, i, n) = (0.02, 0.01, 0.05);
        let needed = required_power(p.rate_threshold_bps, 1.0, i, n, g);
        let b = broadcast_tx_power_update(&[(g, i)], 1.0, n, 1.0, &p);
        assert!(b >= needed && b < needed * step * (1.0 + 1e-12), "{b} vs {needed}");
    }

    #[test]
    fn broadcast_abstains_when_infeasible() {
        assert_eq!(broadcast_tx_power_update(&[(1e-9, 0.0)], 1.0, 1.0, 1.0, &phy()), 0.0);
        assert_eq!(broadcast_tx_power_update(&[], 1.0, 1.0, 1.0, &phy()), 0.0);
    }

    #[test]
    fn broadcast_partial_coverage_against_grid_scan() {
        let p = phy();
        let nbrs = [(0.5, 0.1), (0.05, 0.2), (0.001, 0.0)];
        let noise = 0.1;
        let got = broadcast_tx_power_update(&nbrs, 0.66, noise, 1.0, &p);
        // Independent scan: first grid point covering two neighbours.
        let covers = |pw: f64| {
            nbrs.iter()
                .filter(|&&(g, i)| (1.0 + pw * g / (i + noise)).log2() >= 1.0)
                .count()
        };
        let expected = broadcast_power_grid(p.tx_power_max_w)
            .into_iter()
            .find(|&pw| covers(pw) >= 2)
            .unwrap();
        assert_eq!(got, expected);
        assert!(covers(got) >= 2);
        assert!(covers(got) < 3);
    }

    #[test]
    fn grid_shape() {
        let g = broadcast_power_grid(2.0);
        assert_eq!(g.len(), BROADCAST_GRID_POINTS);
        assert_eq!(*g.last().unwrap(), 2.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g[0] > 0.0);
        assert_eq!(coverage_requirement(3, 0.66), 2);
        assert_eq!(coverage_requirement(4, 0.5), 2);
        assert_eq!(coverage_requirement(1, 1.0), 1);
    }

    fn isolated_state_gains(tx: VehicleId, rx: VehicleId, _k: usize) -> f64 {
        if (tx, rx) == (0, 1) {
            0.2
        } else {
            0.01
        }
    }

    #[test]
    fn isolated_pair_constant_after_first_iteration() {
        let txs = vec![ControlTx {
            id: 0,
            target: Some(1),
            subchannels: vec![3],
            disk_rx: vec![1],
        }];
        let gains = isolated_state_gains;
        let state = SlotState {
            txs: &txs,
            gains: &gains,
            noise_w: 0.1,
            bandwidth_hz: 1.0,
            phy: phy(),
        };
        for tc in [1, 4] {
            let out = run_control_portion(
                &state,
                ControlMode::Unicast,
                &ControlConfig {
                    tc_iterations: tc,
                    ..ControlConfig::default()
                },
            );
            let closed = POWER_MARGIN * required_power(1.0, 1.0, 0.0, 0.1, 0.2);
            assert_eq!(out.trace.len(), tc as usize);
            assert!(out.trace.iter().all(|p| p.get(0, 3) == closed));
            assert_eq!(out.powers.get(0, 3), closed);
            assert_eq!(out.powers.get(0, 4), 0.0);
            assert_eq!(out.rx_knowledge[&1].len(), 1);
        }
    }

    #[test]
    fn knowledge_excludes_silent_tx() {
        // Tx 2 cannot reach its target with P_max and stays silent.
        let txs = vec![
            ControlTx {
                id: 0,
                target: Some(1),
                subchannels: vec![0],
                disk_rx: vec![1, 3],
            },
            ControlTx {
                id: 2,
                target: Some(3),
                subchannels: vec![0],
                disk_rx: vec![1, 3],
            },
        ];
        let gains = |tx: VehicleId, rx: VehicleId, _k: usize| match (tx, rx) {
            (0, 1) => 0.5,
            (2, 3) => 1e-6,
            _ => 1e-3,
        };
        let state = SlotState {
            txs: &txs,
            gains: &gains,
            noise_w: 0.1,
            bandwidth_hz: 1.0,
            phy: phy(),
        };
        let out = run_control_portion(&state, ControlMode::Unicast, &ControlConfig::default());
        assert_eq!(out.powers.get(2, 0), 0.0);
        assert!(out
            .rx_knowledge
            .values()
            .flatten()
            .all(|s| s.tx == 0 && s.power_w > 0.0));
        assert_eq!(out.decisions[&(2, 0)], PowerDecision::AbstainPowerCap);
    }
}
