//! The SPS-period simulation loop.
//!
//! At the start of every period vehicles move, shadowing is redrawn,
//! packets are generated and the BS allocates subchannels from partial CSI.
//! Each slot then draws fading, runs the control portion and decodes the
//! data portion with SIC using what each receiver learned during control.

mod broadcast;
pub mod metrics;
mod oma;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{
    init_matching, matching_utility, priority_order, swap_matching, AllocError, Matching, UtilityContext,
};
use crate::channel::{keyed_rng, ChannelModel, LargeScaleGains, SlotChannel, TAG_ALLOCATION};
use crate::config::RunConfig;
use crate::phy::{decode_outcomes, sic_order, PhyParams, SicSignal};
use crate::powerctl::{run_control_portion, ControlMode, ControlOutcome, ControlTx, ReferenceSignal, SlotState};
use crate::scenario::{
    advance_mobility, generate_vehicles, pair_unicast, Role, ScenarioError, V2VPair, Vehicle, VehicleId,
};

pub use broadcast::broadcast_txrx_selection;
pub use metrics::{aggregate_metrics, DistanceBin, DistanceBins, PacketFate, PacketRecord, RunMetrics};
pub use oma::oma_baseline_allocate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub sps_period_slots: u32,
    pub slot_duration_s: f64,
    pub periods_per_run: u32,
    pub latency_deadline_s: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            sps_period_slots: 10,
            slot_duration_s: 1e-3,
            periods_per_run: 100,
            latency_deadline_s: 10e-3,
        }
    }
}

impl TimeConfig {
    pub fn period_duration_s(&self) -> f64 {
        f64::from(self.sps_period_slots) * self.slot_duration_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    NomaMcd,
    OmaBaseline,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::NomaMcd => "noma_mcd",
            Scheme::OmaBaseline => "oma_baseline",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Unicast,
    Broadcast,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Unicast => "unicast",
            Mode::Broadcast => "broadcast",
        })
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

/// One data-portion attempt of a Tx towards one receiver.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotOutcome {
    pub slot: u64,
    pub tx: VehicleId,
    pub rx: VehicleId,
    pub decoded: bool,
    /// Best rate over the Tx's subchannels; 0 when the Rx heard nothing.
    pub rate_bps: f64,
    pub latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerEntry {
    pub tx: VehicleId,
    pub subchannel: usize,
    pub power_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotPowerTrace {
    pub slot: u64,
    /// Powers after each Tx block.
    pub iterations: Vec<Vec<PowerEntry>>,
    pub last_change_w: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StarvationEvent {
    pub period: u32,
    pub vehicle: VehicleId,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    /// Executed swap moves per allocation call.
    pub allocator_iterations: Vec<u32>,
    pub allocator_hit_cap: u32,
    pub control_slots: u64,
    /// Slots whose last control iteration still moved some power by at
    /// least the convergence epsilon (only counted for two or more
    /// iterations).
    pub unconverged_slots: u64,
    /// Broadcast vehicles with pending packets that were never scheduled
    /// in a period.
    pub starvation: Vec<StarvationEvent>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub power_traces: Vec<SlotPowerTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub scheme: Scheme,
    pub mode: Mode,
    pub metrics: RunMetrics,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
struct Packet {
    tx: VehicleId,
    rx: VehicleId,
    generated_slot: u64,
    distance_m: f64,
    fate: Option<PacketFate>,
    latency_slots: Option<u64>,
}

/// Decodes `tx` at `rx` from the receiver's control-portion knowledge. The
/// packet gets through if any of the Tx's subchannels decodes it. Returns
/// the decode flag and the best rate seen.
pub fn decode_from_knowledge(
    knowledge: &BTreeMap<VehicleId, Vec<ReferenceSignal>>,
    rx: VehicleId,
    tx: VehicleId,
    subchannels: &[usize],
    noise_w: f64,
    bandwidth_hz: f64,
    rate_threshold_bps: f64,
) -> (bool, f64) {
    let Some(heard) = knowledge.get(&rx) else {
        return (false, 0.0);
    };
    let mut decoded = false;
    let mut best_rate = 0.0f64;
    for &k in subchannels {
        let on_k: Vec<&ReferenceSignal> = heard.iter().filter(|s| s.subchannel == k).collect();
        let cands: Vec<(VehicleId, f64)> = on_k.iter().map(|s| (s.tx, s.gain)).collect();
        let signals: Vec<SicSignal> = sic_order(rx, k, &cands)
            .txs
            .iter()
            .map(|&t| {
                let s = on_k.iter().find(|s| s.tx == t).expect("ordered from on_k");
                SicSignal {
                    tx: t,
                    power_w: s.power_w,
                    gain: s.gain,
                }
            })
            .collect();
        if let Some(d) = decode_outcomes(&signals, noise_w, bandwidth_hz, rate_threshold_bps)
            .into_iter()
            .find(|d| d.tx == tx)
        {
            decoded |= d.decoded;
            best_rate = best_rate.max(d.rate_bps);
        }
    }
    (decoded, best_rate)
}

/// A single seeded run, advanced one SPS period at a time.
pub struct Simulation<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    model: ChannelModel,
    phy: PhyParams,
    vehicles: Vec<Vehicle>,
    pairs: Vec<V2VPair>,
    period: u32,
    packets: Vec<Packet>,
    queues: BTreeMap<VehicleId, VecDeque<usize>>,
    /// Periods since each unicast Tx last delivered.
    waits: BTreeMap<VehicleId, u32>,
    utility_trace: Vec<f64>,
    diagnostics: Diagnostics,
    trace_power: bool,
    /// Broadcast tx_set of every slot of the latest period.
    scheduled: Vec<(u64, Vec<VehicleId>)>,
}

impl<'a> Simulation<'a> {
    /// Places vehicles and, in unicast mode, pairs every Tx with its nearest
    /// free Rx. A Tx whose nearest free Rx lies outside the communication
    /// range keeps it as target; such packets cannot be decoded.
    pub fn new(cfg: &'a RunConfig, seed: u64) -> Result<Self, EngineError> {
        let vehicles = generate_vehicles(&cfg.scenario, seed);
        let pairs = match cfg.mode {
            Mode::Unicast => pair_unicast(&vehicles, f64::INFINITY)?,
            Mode::Broadcast => Vec::new(),
        };
        let queues = pairs.iter().map(|p| (p.tx_id, VecDeque::new())).collect();
        let waits = pairs.iter().map(|p| (p.tx_id, 0)).collect();
        Ok(Self {
            cfg,
            seed,
            model: cfg.channel.model(),
            phy: cfg.phy.params(),
            vehicles,
            pairs,
            period: 0,
            packets: Vec::new(),
            queues,
            waits,
            utility_trace: Vec::new(),
            diagnostics: Diagnostics::default(),
            trace_power: false,
            scheduled: Vec::new(),
        })
    }

    pub fn with_power_traces(mut self, enabled: bool) -> Self {
        self.trace_power = enabled;
        self
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn pairs(&self) -> &[V2VPair] {
        &self.pairs
    }

    /// Number of periods simulated so far.
    pub fn period(&self) -> u32 {
        self.period
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    /// (slot, tx_set) for every slot of the latest broadcast period,
    /// including slots where nobody was selected.
    pub fn scheduled_tx_sets(&self) -> &[(u64, Vec<VehicleId>)] {
        &self.scheduled
    }

    /// Runs one SPS period and returns every data-portion attempt in it.
    /// After the call, [`Self::vehicles`] holds the positions used during
    /// that period.
    pub fn run_sps_period(&mut self) -> Result<Vec<SlotOutcome>, EngineError> {
        if self.period > 0 {
            advance_mobility(
                &mut self.vehicles,
                &self.cfg.scenario.road,
                self.cfg.time.period_duration_s(),
            );
        }
        let large = LargeScaleGains::build(&self.model, &self.vehicles, u64::from(self.period), self.seed);
        self.utility_trace.push(0.0);
        self.scheduled.clear();
        let outcomes = match self.cfg.mode {
            Mode::Unicast => self.unicast_period(&large)?,
            Mode::Broadcast => self.broadcast_period(&large)?,
        };
        self.period += 1;
        Ok(outcomes)
    }

    /// Closes the run: packets still waiting for a first transmission
    /// opportunity are counted as deferred.
    pub fn finish(self) -> RunReport {
        let records: Vec<PacketRecord> = self
            .packets
            .iter()
            .map(|p| PacketRecord {
                tx: p.tx,
                rx: p.rx,
                generated_slot: p.generated_slot,
                distance_m: p.distance_m,
                fate: p.fate.unwrap_or(PacketFate::Deferred),
                latency_slots: p.latency_slots,
            })
            .collect();
        let mut metrics = aggregate_metrics(&records, &self.cfg.distance_bins(), &self.cfg.time, self.period);
        metrics.utility_trace = self.utility_trace;
        RunReport {
            seed: self.seed,
            scheme: self.cfg.scheme,
            mode: self.cfg.mode,
            metrics,
            diagnostics: self.diagnostics,
        }
    }

    fn first_slot(&self) -> u64 {
        u64::from(self.period) * u64::from(self.cfg.time.sps_period_slots)
    }

    fn allocation_seed(&self, slot: u64) -> u64 {
        keyed_rng(self.seed, TAG_ALLOCATION, self.period, 0, 0, slot).next_u64()
    }

    /// Partial-CSI utility context scoring each Tx at `eval_rx[j]`.
    fn utility_context(&self, large: &LargeScaleGains, tx_ids: &[VehicleId], eval_rx: &[VehicleId]) -> UtilityContext {
        let range = self.cfg.scenario.comm_range_m;
        let mut cross = Vec::with_capacity(tx_ids.len() * tx_ids.len());
        let mut covers = Vec::with_capacity(tx_ids.len() * tx_ids.len());
        for &a in tx_ids {
            for &rx in eval_rx {
                cross.push(large.gain(a, rx));
                covers.push(large.distance(a, rx) <= range);
            }
        }
        UtilityContext::new(
            tx_ids.to_vec(),
            self.model.subchannel_count,
            cross,
            covers,
            self.model.noise_w,
            self.model.bandwidth_hz,
            &self.phy,
        )
    }

    /// NOMA allocation: random initial matching refined by swap matching.
    fn noma_allocate(&mut self, ctx: &UtilityContext, waits: &[u32], slot: u64) -> Result<Matching, EngineError> {
        let alloc = &self.cfg.allocator;
        let priority = priority_order(&ctx.tx_ids, waits, alloc.priority_rule);
        let init = init_matching(
            ctx.tx_count(),
            ctx.subchannel_count,
            &priority,
            alloc,
            self.allocation_seed(slot),
        )?;
        let out = swap_matching(init, ctx, alloc)?;
        self.diagnostics.allocator_iterations.push(out.iterations);
        self.diagnostics.allocator_hit_cap += u32::from(out.hit_iteration_cap);
        self.utility_trace_add(out.utility());
        Ok(out.matching)
    }

    fn utility_trace_add(&mut self, u: f64) {
        *self.utility_trace.last_mut().expect("entry pushed at period start") += u;
    }

    fn control<G: Fn(VehicleId, VehicleId, usize) -> f64>(
        &mut self,
        slot: u64,
        txs: &[ControlTx],
        gains: &G,
        mode: ControlMode,
    ) -> ControlOutcome {
        let state = SlotState {
            txs,
            gains,
            noise_w: self.model.noise_w,
            bandwidth_hz: self.model.bandwidth_hz,
            phy: self.phy,
        };
        let out = run_control_portion(&state, mode, &self.cfg.control);
        self.diagnostics.control_slots += 1;
        if self.cfg.control.tc_iterations >= 2 && out.last_change_w >= self.cfg.control.convergence_epsilon_w {
            self.diagnostics.unconverged_slots += 1;
        }
        if self.trace_power {
            self.diagnostics.power_traces.push(SlotPowerTrace {
                slot,
                iterations: out
                    .trace
                    .iter()
                    .map(|profile| {
                        profile
                            .power_w
                            .iter()
                            .map(|(&(tx, subchannel), &power_w)| PowerEntry {
                                tx,
                                subchannel,
                                power_w,
                            })
                            .collect()
                    })
                    .collect(),
                last_change_w: out.last_change_w,
            });
        }
        out
    }

    fn decode(&self, out: &ControlOutcome, rx: VehicleId, tx: VehicleId, subchannels: &[usize]) -> (bool, f64) {
        decode_from_knowledge(
            &out.rx_knowledge,
            rx,
            tx,
            subchannels,
            self.model.noise_w,
            self.model.bandwidth_hz,
            self.phy.rate_threshold_bps,
        )
    }

    fn new_packet(&mut self, tx: VehicleId, rx: VehicleId, slot: u64, distance_m: f64) -> usize {
        self.packets.push(Packet {
            tx,
            rx,
            generated_slot: slot,
            distance_m,
            fate: None,
            latency_slots: None,
        });
        self.packets.len() - 1
    }

    fn mark_decoded(&mut self, idx: usize, slot: u64) -> f64 {
        let p = &mut self.packets[idx];
        let latency = slot + 1 - p.generated_slot;
        p.fate = Some(PacketFate::Decoded);
        p.latency_slots = Some(latency);
        latency as f64 * self.cfg.time.slot_duration_s
    }

    fn unicast_period(&mut self, large: &LargeScaleGains) -> Result<Vec<SlotOutcome>, EngineError> {
        let start = self.first_slot();
        let range = self.cfg.scenario.comm_range_m;
        let pairs = self.pairs.clone();
        for pair in &pairs {
            let idx = self.new_packet(pair.tx_id, pair.rx_id, start, large.distance(pair.tx_id, pair.rx_id));
            self.queues.get_mut(&pair.tx_id).expect("queue per Tx").push_back(idx);
        }

        let tx_ids: Vec<VehicleId> = pairs.iter().map(|p| p.tx_id).collect();
        let targets: Vec<VehicleId> = pairs.iter().map(|p| p.rx_id).collect();
        let ctx = self.utility_context(large, &tx_ids, &targets);
        let n_sc = self.model.subchannel_count;
        let matching = match self.cfg.scheme {
            Scheme::NomaMcd => {
                let waits: Vec<u32> = tx_ids.iter().map(|t| self.waits[t]).collect();
                self.noma_allocate(&ctx, &waits, start)?
            }
            Scheme::OmaBaseline => {
                let m = oma_baseline_allocate(tx_ids.len(), n_sc, u64::from(self.period));
                self.utility_trace_add(matching_utility(&m, &ctx)?);
                m
            }
        };

        let control_txs: Vec<ControlTx> = pairs
            .iter()
            .enumerate()
            .map(|(j, pair)| ControlTx {
                id: pair.tx_id,
                target: Some(pair.rx_id),
                subchannels: matching.subchannels_of(j),
                disk_rx: self
                    .vehicles
                    .iter()
                    .filter(|v| v.role == Role::Rx && large.distance(pair.tx_id, v.id) <= range)
                    .map(|v| v.id)
                    .collect(),
            })
            .collect();

        let mut outcomes = Vec::new();
        let mut delivered: BTreeMap<VehicleId, bool> = BTreeMap::new();
        for slot in start..start + u64::from(self.cfg.time.sps_period_slots) {
            let active: Vec<ControlTx> = control_txs
                .iter()
                .filter(|t| !t.subchannels.is_empty() && !self.queues[&t.id].is_empty())
                .cloned()
                .collect();
            if active.is_empty() {
                continue;
            }
            let model = self.model.clone();
            let channel = SlotChannel {
                model: &model,
                large_scale: large,
                slot,
                seed: self.seed,
            };
            let gains = |t: VehicleId, r: VehicleId, k: usize| channel.gain(t, r, k);
            let ctl = self.control(slot, &active, &gains, ControlMode::Unicast);
            for t in &active {
                let rx = t.target.expect("unicast target");
                let (decoded, rate_bps) = self.decode(&ctl, rx, t.id, &t.subchannels);
                let latency_s = if decoded {
                    let idx = self
                        .queues
                        .get_mut(&t.id)
                        .and_then(VecDeque::pop_front)
                        .expect("non-empty queue");
                    delivered.insert(t.id, true);
                    Some(self.mark_decoded(idx, slot))
                } else {
                    None
                };
                outcomes.push(SlotOutcome {
                    slot,
                    tx: t.id,
                    rx,
                    decoded,
                    rate_bps,
                    latency_s,
                });
            }
        }

        // Packets expire at period end unless the Tx never got a turn under
        // the OMA round-robin, in which case they wait for the next one.
        for (j, t) in control_txs.iter().enumerate() {
            let served = !t.subchannels.is_empty();
            if served || self.cfg.scheme == Scheme::NomaMcd {
                let queue = self.queues.get_mut(&t.id).expect("queue per Tx");
                for idx in queue.drain(..) {
                    self.packets[idx].fate = Some(PacketFate::Failed);
                }
            }
            let w = self.waits.get_mut(&tx_ids[j]).expect("wait per Tx");
            *w = if delivered.contains_key(&t.id) { 0 } else { *w + 1 };
        }
        Ok(outcomes)
    }
}

/// Runs every period of one seed.
pub fn run_simulation(cfg: &RunConfig, seed: u64) -> Result<RunReport, EngineError> {
    run_simulation_traced(cfg, seed, false)
}

pub fn run_simulation_traced(cfg: &RunConfig, seed: u64, trace_power: bool) -> Result<RunReport, EngineError> {
    let mut sim = Simulation::new(cfg, seed)?.with_power_traces(trace_power);
    for _ in 0..cfg.time.periods_per_run {
        sim.run_sps_period()?;
    }
    Ok(sim.finish())
}
