use super::{EngineError, Scheme, Simulation, SlotOutcome, StarvationEvent};
use crate::allocator::{matching_utility, Matching};
use crate::channel::{LargeScaleGains, SlotChannel};
use crate::powerctl::{coverage_requirement, ControlMode, ControlTx};
use crate::scenario::VehicleId;

/// Greedy maximal independent set of the communication graph over the
/// vehicles flagged in `pending`, visiting vehicles in id order rotated by
/// `slot`. At most `capacity` vehicles are picked. Returns the Tx set and
/// its complement, both ascending.
///
/// `neighbors[v]` lists the vehicles within communication range of vehicle
/// `v`; ids equal indices.
pub fn broadcast_txrx_selection(
    neighbors: &[Vec<VehicleId>],
    pending: &[bool],
    slot: u64,
    capacity: usize,
) -> (Vec<VehicleId>, Vec<VehicleId>) {
    let n = neighbors.len();
    let mut in_tx = vec![false; n];
    let mut picked = 0;
    if n > 0 {
        let offset = (slot % n as u64) as usize;
        for v in (offset..n).chain(0..offset) {
            if picked == capacity {
                break;
            }
            if pending[v] && !neighbors[v].iter().any(|&u| in_tx[u as usize]) {
                in_tx[v] = true;
                picked += 1;
            }
        }
    }
    let (tx, rx): (Vec<usize>, Vec<usize>) = (0..n).partition(|&v| in_tx[v]);
    (
        tx.into_iter().map(|v| v as VehicleId).collect(),
        rx.into_iter().map(|v| v as VehicleId).collect(),
    )
}

impl Simulation<'_> {
    /// Every vehicle with neighbours generates one packet per neighbour at
    /// period start. Each slot a fresh Tx set is chosen among vehicles with
    /// undelivered packets; a link packet is delivered once its receiver
    /// decodes the Tx.
    pub(super) fn broadcast_period(&mut self, large: &LargeScaleGains) -> Result<Vec<SlotOutcome>, EngineError> {
        let start = self.first_slot();
        let range = self.cfg.scenario.comm_range_m;
        let n = self.vehicles.len();

        // Neighbours nearest first, so the coverage-edge receiver is a
        // plain index.
        let neighbors: Vec<Vec<VehicleId>> = (0..n as VehicleId)
            .map(|v| {
                let mut nb: Vec<VehicleId> = (0..n as VehicleId)
                    .filter(|&u| u != v && large.distance(v, u) <= range)
                    .collect();
                nb.sort_by(|&a, &b| large.distance(v, a).total_cmp(&large.distance(v, b)).then(a.cmp(&b)));
                nb
            })
            .collect();

        let mut pending: Vec<Vec<usize>> = Vec::with_capacity(n);
        for (v, nb) in neighbors.iter().enumerate() {
            let v = v as VehicleId;
            let ids = nb
                .iter()
                .map(|&r| self.new_packet(v, r, start, large.distance(v, r)))
                .collect();
            pending.push(ids);
        }

        let n_sc = self.model.subchannel_count;
        let capacity = match self.cfg.scheme {
            Scheme::NomaMcd => n_sc * self.cfg.allocator.q_sc as usize,
            Scheme::OmaBaseline => n_sc,
        };
        let rho = self.cfg.control.broadcast_coverage_fraction;
        let mut transmitted = vec![false; n];
        let mut outcomes = Vec::new();

        for slot in start..start + u64::from(self.cfg.time.sps_period_slots) {
            let flags: Vec<bool> = pending.iter().map(|p| !p.is_empty()).collect();
            let (tx_set, _) = broadcast_txrx_selection(&neighbors, &flags, slot, capacity);
            self.scheduled.push((slot, tx_set.clone()));
            if tx_set.is_empty() {
                continue;
            }
            let eval_rx: Vec<VehicleId> = tx_set
                .iter()
                .map(|&t| {
                    let nb = &neighbors[t as usize];
                    nb[coverage_requirement(nb.len(), rho).clamp(1, nb.len()) - 1]
                })
                .collect();
            let ctx = self.utility_context(large, &tx_set, &eval_rx);
            let matching = match self.cfg.scheme {
                Scheme::NomaMcd => self.noma_allocate(&ctx, &vec![0; tx_set.len()], slot)?,
                Scheme::OmaBaseline => {
                    let mut m = Matching::empty(tx_set.len(), n_sc, 1, 1);
                    for j in 0..tx_set.len() {
                        m.set(j, j, true);
                    }
                    self.utility_trace_add(matching_utility(&m, &ctx)?);
                    m
                }
            };

            let active: Vec<ControlTx> = tx_set
                .iter()
                .enumerate()
                .filter(|&(j, _)| matching.tx_load(j) > 0)
                .map(|(j, &t)| ControlTx {
                    id: t,
                    target: None,
                    subchannels: matching.subchannels_of(j),
                    disk_rx: neighbors[t as usize].clone(),
                })
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
            let ctl = self.control(slot, &active, &gains, ControlMode::Broadcast);
            for t in &active {
                transmitted[t.id as usize] = true;
                let mut still = Vec::new();
                for idx in std::mem::take(&mut pending[t.id as usize]) {
                    let rx = self.packets[idx].rx;
                    let (decoded, rate_bps) = self.decode(&ctl, rx, t.id, &t.subchannels);
                    let latency_s = if decoded {
                        Some(self.mark_decoded(idx, slot))
                    } else {
                        still.push(idx);
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
                pending[t.id as usize] = still;
            }
        }

        for (v, left) in pending.into_iter().enumerate() {
            if left.is_empty() {
                continue;
            }
            if !transmitted[v] {
                self.diagnostics.starvation.push(StarvationEvent {
                    period: self.period,
                    vehicle: v as VehicleId,
                });
            }
            for idx in left {
                self.packets[idx].fate = Some(super::PacketFate::Failed);
            }
        }
        Ok(outcomes)
    }
}
