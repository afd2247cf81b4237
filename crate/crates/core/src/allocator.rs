//! Centralized per-SPS-period subchannel allocation.
//!
//! The base station scores a Tx-subchannel matching by the sum, over every
//! assignment, of the product of logistic decoding-success terms along the
//! SIC chain up to that Tx (partial CSI, nominal powers). A random
//! priority-ordered start is improved by swap matching, accepted only on
//! strict utility gain, until no blocking pair remains. Unused quota slots
//! of a Tx and spare capacity of a subchannel act as empty partners, so
//! besides pairwise exchanges the neighbourhood contains vacancy moves,
//! acquiring or releasing a subchannel, and handing a subchannel from one
//! Tx to another.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand_distr::{Distribution, StandardNormal};

use crate::channel::{link_gain, ChannelModel};
use crate::phy::{self, PhyParams, SicSignal};
use crate::scenario::VehicleId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorityRule {
    ById,
    ByWaitTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocatorConfig {
    /// Max subchannels per Tx.
    pub q_tx: u32,
    /// Max Tx per subchannel.
    pub q_sc: u32,
    pub max_swap_iterations: u32,
    pub priority_rule: PriorityRule,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        Self {
            q_tx: 2,
            q_sc: 2,
            max_swap_iterations: 1000,
            priority_rule: PriorityRule::ById,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("{tx_count} Tx users exceed subchannel capacity {capacity} (short by {shortfall})")]
    CapacityShortfall {
        tx_count: usize,
        capacity: usize,
        shortfall: usize,
    },
    #[error("quota violated: {0}")]
    QuotaViolation(String),
    #[error("brute force would visit up to {bound} matchings (limit {limit})")]
    InstanceTooLarge { bound: f64, limit: f64 },
}

/// Boolean assignment of Tx users (by index) to subchannels under quotas.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Matching {
    n_tx: usize,
    n_sc: usize,
    q_tx: usize,
    q_sc: usize,
    x: Vec<bool>,
}

impl Matching {
    pub fn empty(n_tx: usize, n_sc: usize, q_tx: usize, q_sc: usize) -> Self {
        Self {
            n_tx,
            n_sc,
            q_tx,
            q_sc,
            x: vec![false; n_tx * n_sc],
        }
    }

    pub fn tx_count(&self) -> usize {
        self.n_tx
    }

    pub fn subchannel_count(&self) -> usize {
        self.n_sc
    }

    pub fn quotas(&self) -> (usize, usize) {
        (self.q_tx, self.q_sc)
    }

    pub fn is_assigned(&self, tx: usize, sc: usize) -> bool {
        self.x[tx * self.n_sc + sc]
    }

    pub fn set(&mut self, tx: usize, sc: usize, value: bool) {
        self.x[tx * self.n_sc + sc] = value;
    }

    pub fn tx_load(&self, tx: usize) -> usize {
        (0..self.n_sc).filter(|&k| self.is_assigned(tx, k)).count()
    }

    pub fn sc_load(&self, sc: usize) -> usize {
        (0..self.n_tx).filter(|&j| self.is_assigned(j, sc)).count()
    }

    pub fn subchannels_of(&self, tx: usize) -> Vec<usize> {
        (0..self.n_sc).filter(|&k| self.is_assigned(tx, k)).collect()
    }

    pub fn txs_on(&self, sc: usize) -> Vec<usize> {
        (0..self.n_tx).filter(|&j| self.is_assigned(j, sc)).collect()
    }

    /// All (tx, subchannel) assignments in lexicographic order.
    pub fn assignments(&self) -> Vec<(usize, usize)> {
        (0..self.n_tx)
            .flat_map(|j| (0..self.n_sc).map(move |k| (j, k)))
            .filter(|&(j, k)| self.is_assigned(j, k))
            .collect()
    }

    pub fn check_quotas(&self) -> Result<(), AllocError> {
        for j in 0..self.n_tx {
            let load = self.tx_load(j);
            if load > self.q_tx {
                return Err(AllocError::QuotaViolation(format!(
                    "Tx index {j} holds {load} subchannels > q_tx {}",
                    self.q_tx
                )));
            }
        }
        for k in 0..self.n_sc {
            let load = self.sc_load(k);
            if load > self.q_sc {
                return Err(AllocError::QuotaViolation(format!(
                    "subchannel {k} carries {load} Tx > q_sc {}",
                    self.q_sc
                )));
            }
        }
        Ok(())
    }
}

/// Everything the utility needs about one allocation instance. Each Tx is
/// scored at a single evaluation receiver (its unicast target, or the
/// coverage-edge neighbour in broadcast mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityContext {
    pub tx_ids: Vec<VehicleId>,
    pub subchannel_count: usize,
    /// `cross_gain[a * n + b]`: partial-CSI gain from Tx `a` to the
    /// evaluation receiver of Tx `b`.
    cross_gain: Vec<f64>,
    /// `covers[a * n + b]`: the receiver of `b` lies in the disk of `a`.
    covers: Vec<bool>,
    pub nominal_power_w: f64,
    pub noise_w: f64,
    pub bandwidth_hz: f64,
    pub rate_threshold_bps: f64,
    pub logistic_slope: f64,
}

impl UtilityContext {
    pub fn new(
        tx_ids: Vec<VehicleId>,
        subchannel_count: usize,
        cross_gain: Vec<f64>,
        covers: Vec<bool>,
        noise_w: f64,
        bandwidth_hz: f64,
        phy: &PhyParams,
    ) -> Self {
        let n = tx_ids.len();
        assert_eq!(cross_gain.len(), n * n);
        assert_eq!(covers.len(), n * n);
        Self {
            tx_ids,
            subchannel_count,
            cross_gain,
            covers,
            nominal_power_w: phy.tx_power_max_w,
            noise_w,
            bandwidth_hz,
            rate_threshold_bps: phy.rate_threshold_bps,
            logistic_slope: phy.logistic_slope,
        }
    }

    pub fn tx_count(&self) -> usize {
        self.tx_ids.len()
    }

    pub fn gain(&self, from: usize, to_rx_of: usize) -> f64 {
        self.cross_gain[from * self.tx_count() + to_rx_of]
    }

    pub fn covers(&self, from: usize, to_rx_of: usize) -> bool {
        from == to_rx_of || self.covers[from * self.tx_count() + to_rx_of]
    }

    /// Co-channel transmitters heard at the evaluation receiver of `tx` on
    /// `sc`, in SIC order (strongest first, ties to the lower Tx id).
    pub fn sic_chain(&self, m: &Matching, tx: usize, sc: usize) -> Vec<usize> {
        let cands: Vec<(VehicleId, f64)> = m
            .txs_on(sc)
            .into_iter()
            .chain((!m.is_assigned(tx, sc)).then_some(tx))
            .filter(|&a| self.covers(a, tx))
            .map(|a| (self.tx_ids[a], self.gain(a, tx)))
            .collect();
        phy::sic_order(0, sc, &cands)
            .txs
            .into_iter()
            .map(|id| self.tx_ids.iter().position(|&t| t == id).expect("known tx id"))
            .collect()
    }

    /// Utility contribution of assignment (tx, sc): product of the logistic
    /// success terms for `tx` and every stronger co-channel signal.
    pub fn assignment_term(&self, m: &Matching, tx: usize, sc: usize) -> f64 {
        let chain = self.sic_chain(m, tx, sc);
        let signals: Vec<SicSignal> = chain
            .iter()
            .map(|&a| SicSignal {
                tx: self.tx_ids[a],
                power_w: self.nominal_power_w,
                gain: self.gain(a, tx),
            })
            .collect();
        let sinrs = phy::sic_sinr_chain(&signals, self.noise_w);
        let pos = chain.iter().position(|&a| a == tx).expect("tx in its own chain");
        sinrs[..=pos]
            .iter()
            .map(|&(_, sinr)| {
                phy::logistic_success(
                    phy::rate(sinr, self.bandwidth_hz),
                    self.rate_threshold_bps,
                    self.logistic_slope,
                )
            })
            .product()
    }
}

pub fn matching_utility(m: &Matching, ctx: &UtilityContext) -> Result<f64, AllocError> {
    m.check_quotas()?;
    Ok(utility_unchecked(m, ctx))
}

fn utility_unchecked(m: &Matching, ctx: &UtilityContext) -> f64 {
    m.assignments()
        .into_iter()
        .map(|(j, k)| ctx.assignment_term(m, j, k))
        .sum()
}

/// Priority order of Tx indices. `waits` (periods since each Tx last
/// delivered) is only consulted by [`PriorityRule::ByWaitTime`]: longer
/// waits first, ties by id.
pub fn priority_order(tx_ids: &[VehicleId], waits: &[u32], rule: PriorityRule) -> Vec<usize> {
    let mut order: Vec<usize> = (0..tx_ids.len()).collect();
    match rule {
        PriorityRule::ById => order.sort_by_key(|&j| tx_ids[j]),
        PriorityRule::ByWaitTime => order.sort_by(|&a, &b| waits[b].cmp(&waits[a]).then(tx_ids[a].cmp(&tx_ids[b]))),
    }
    order
}

/// Random initial matching. Tx users pick, in priority order, uniformly
/// among subchannels with spare capacity; each takes up to `q_tx` but
/// leaves one unit of capacity for every Tx still waiting its turn.
pub fn init_matching(
    n_tx: usize,
    n_sc: usize,
    priority: &[usize],
    config: &AllocatorConfig,
    seed: u64,
) -> Result<Matching, AllocError> {
    let (q_tx, q_sc) = (config.q_tx as usize, config.q_sc as usize);
    let capacity = n_sc * q_sc;
    if n_tx > capacity {
        return Err(AllocError::CapacityShortfall {
            tx_count: n_tx,
            capacity,
            shortfall: n_tx - capacity,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matching::empty(n_tx, n_sc, q_tx, q_sc);
    let mut residual = vec![q_sc; n_sc];
    let mut total_residual = capacity;
    for (rank, &j) in priority.iter().enumerate() {
        let still_waiting = n_tx - rank - 1;
        let open: Vec<usize> = (0..n_sc).filter(|&k| residual[k] > 0).collect();
        let take = q_tx.min(open.len()).min(total_residual - still_waiting);
        for &k in open.choose_multiple(&mut rng, take) {
            m.set(j, k, true);
            residual[k] -= 1;
            total_residual -= 1;
        }
    }
    Ok(m)
}

/// One candidate change to a matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    /// (j1, k1), (j2, k2) become (j1, k2), (j2, k1).
    Swap { j1: usize, k1: usize, j2: usize, k2: usize },
    /// Tx `j` moves from `from` into spare capacity on `to`.
    Vacancy { j: usize, from: usize, to: usize },
    /// Tx `j` fills an unused quota slot with spare capacity on `sc`.
    Acquire { j: usize, sc: usize },
    /// Tx `j` gives up `sc`, possibly its last one.
    Release { j: usize, sc: usize },
    /// `from` hands `sc` to `to`, which fills an unused quota slot with it.
    Handover { from: usize, to: usize, sc: usize },
}

impl Move {
    fn apply(&self, m: &Matching) -> Matching {
        let mut next = m.clone();
        match *self {
            Move::Swap { j1, k1, j2, k2 } => {
                next.set(j1, k1, false);
                next.set(j2, k2, false);
                next.set(j1, k2, true);
                next.set(j2, k1, true);
            }
            Move::Vacancy { j, from, to } => {
                next.set(j, from, false);
                next.set(j, to, true);
            }
            Move::Acquire { j, sc } => next.set(j, sc, true),
            Move::Release { j, sc } => next.set(j, sc, false),
            Move::Handover { from, to, sc } => {
                next.set(from, sc, false);
                next.set(to, sc, true);
            }
        }
        next
    }
}

/// Quota-feasible moves in deterministic lexicographic scan order.
pub fn candidate_moves(m: &Matching) -> Vec<Move> {
    let assigned = m.assignments();
    let mut moves = Vec::new();
    for (i, &(j1, k1)) in assigned.iter().enumerate() {
        for &(j2, k2) in &assigned[i + 1..] {
            if j1 != j2 && k1 != k2 && !m.is_assigned(j1, k2) && !m.is_assigned(j2, k1) {
                moves.push(Move::Swap { j1, k1, j2, k2 });
            }
        }
        for to in 0..m.n_sc {
            if to != k1 && !m.is_assigned(j1, to) && m.sc_load(to) < m.q_sc {
                moves.push(Move::Vacancy { j: j1, from: k1, to });
            }
        }
    }
    // The empty side of a vacancy move: an unused quota slot of a Tx.
    for j in 0..m.n_tx {
        let load = m.tx_load(j);
        for sc in 0..m.n_sc {
            if m.is_assigned(j, sc) {
                moves.push(Move::Release { j, sc });
            } else if load < m.q_tx {
                if m.sc_load(sc) < m.q_sc {
                    moves.push(Move::Acquire { j, sc });
                }
                for from in (0..m.n_tx).filter(|&f| m.is_assigned(f, sc)) {
                    moves.push(Move::Handover { from, to: j, sc });
                }
            }
        }
    }
    moves
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwapOutcome {
    pub matching: Matching,
    /// Utility of the initial matching followed by one entry per executed
    /// move.
    pub utility_trace: Vec<f64>,
    pub iterations: u32,
    pub hit_iteration_cap: bool,
}

impl SwapOutcome {
    pub fn utility(&self) -> f64 {
        *self.utility_trace.last().expect("trace starts with initial utility")
    }
}

/// First-improvement swap matching. Each executed move strictly raises the
/// utility; the scan restarts after every executed move and the search ends
/// on a scan with no blocking pair or after `max_swap_iterations` moves.
pub fn swap_matching(
    initial: Matching,
    ctx: &UtilityContext,
    config: &AllocatorConfig,
) -> Result<SwapOutcome, AllocError> {
    let mut current = initial;
    let mut utility = matching_utility(&current, ctx)?;
    let mut trace = vec![utility];
    let mut iterations = 0;
    loop {
        if iterations >= config.max_swap_iterations {
            return Ok(SwapOutcome {
                matching: current,
                utility_trace: trace,
                iterations,
                hit_iteration_cap: true,
            });
        }
        let improvement = candidate_moves(&current).into_iter().find_map(|mv| {
            let next = mv.apply(&current);
            let u = utility_unchecked(&next, ctx);
            (u > utility).then_some((next, u))
        });
        match improvement {
            Some((next, u)) => {
                debug_assert!(next.check_quotas().is_ok());
                current = next;
                utility = u;
                trace.push(u);
                iterations += 1;
            }
            None => {
                return Ok(SwapOutcome {
                    matching: current,
                    utility_trace: trace,
                    iterations,
                    hit_iteration_cap: false,
                })
            }
        }
    }
}

/// True when no swap or vacancy move strictly improves the utility.
pub fn is_exchange_stable(m: &Matching, ctx: &UtilityContext) -> bool {
    let u = utility_unchecked(m, ctx);
    candidate_moves(m)
        .iter()
        .all(|mv| utility_unchecked(&mv.apply(m), ctx) <= u)
}

pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub matching: Matching,
    pub utility: f64,
    pub feasible_count: u64,
}

/// Exhaustive search over every quota-feasible matching, partial ones
/// included. Earlier matchings in enumeration order win ties.
pub fn brute_force_alloc(ctx: &UtilityContext, q_tx: usize, q_sc: usize) -> Result<BruteForceResult, AllocError> {
    let n_tx = ctx.tx_count();
    let n_sc = ctx.subchannel_count;
    let options: Vec<u32> = (0u32..(1 << n_sc))
        .filter(|mask| mask.count_ones() as usize <= q_tx)
        .collect();
    let bound = (options.len() as f64).powi(n_tx as i32);
    if bound > BRUTE_FORCE_LIMIT {
        return Err(AllocError::InstanceTooLarge {
            bound,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    struct Search<'a> {
        ctx: &'a UtilityContext,
        options: &'a [u32],
        q_sc: usize,
        load: Vec<usize>,
        current: Matching,
        best: Option<(Matching, f64)>,
        count: u64,
    }

    impl Search<'_> {
        fn visit(&mut self, j: usize) {
            if j == self.current.n_tx {
                self.count += 1;
                let u = utility_unchecked(&self.current, self.ctx);
                if self.best.as_ref().is_none_or(|(_, b)| u > *b) {
                    self.best = Some((self.current.clone(), u));
                }
                return;
            }
            for oi in 0..self.options.len() {
                let mask = self.options[oi];
                let n_sc = self.current.n_sc;
                let fits = (0..n_sc).all(|k| mask & (1 << k) == 0 || self.load[k] < self.q_sc);
                if !fits {
                    continue;
                }
                for k in (0..n_sc).filter(|k| mask & (1 << k) != 0) {
                    self.load[k] += 1;
                    self.current.set(j, k, true);
                }
                self.visit(j + 1);
                for k in (0..n_sc).filter(|k| mask & (1 << k) != 0) {
                    self.load[k] -= 1;
                    self.current.set(j, k, false);
                }
            }
        }
    }

    let mut search = Search {
        ctx,
        options: &options,
        q_sc,
        load: vec![0; n_sc],
        current: Matching::empty(n_tx, n_sc, q_tx, q_sc),
        best: None,
        count: 0,
    };
    search.visit(0);
    let (matching, utility) = search.best.expect("the empty matching is always feasible");
    Ok(BruteForceResult {
        matching,
        utility,
        feasible_count: search.count,
    })
}

/// A small random allocation instance, serializable so a failing case can
/// be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleInstance {
    pub seed: u64,
    pub q_tx: usize,
    pub q_sc: usize,
    pub context: UtilityContext,
}

/// Draws a geometric instance: 1..=max_tx V2V pairs on a short road
/// stretch, 1..=max_sc subchannels and quotas in 1..=max_quota, always
/// capacity-feasible. Gains are path loss plus shadowing from `channel`;
/// a Tx covers another pair's receiver when it is within `comm_range_m`.
pub fn random_instance(
    seed: u64,
    max_tx: usize,
    max_sc: usize,
    max_quota: usize,
    channel: &ChannelModel,
    comm_range_m: f64,
    phy: &PhyParams,
) -> OracleInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_tx, n_sc, q_tx, q_sc) = loop {
        let n_tx = rng.random_range(1..=max_tx);
        let n_sc = rng.random_range(1..=max_sc);
        let q_tx = rng.random_range(1..=max_quota);
        let q_sc = rng.random_range(1..=max_quota);
        if n_sc * q_sc >= n_tx {
            break (n_tx, n_sc, q_tx, q_sc);
        }
    };
    let stretch = 2.0 * comm_range_m;
    let tx_pos: Vec<(f64, f64)> = (0..n_tx)
        .map(|_| (rng.random_range(0.0..stretch), rng.random_range(0.0..16.0)))
        .collect();
    let rx_pos: Vec<(f64, f64)> = tx_pos
        .iter()
        .map(|&(x, _)| {
            let offset = rng.random_range(5.0..0.7 * comm_range_m);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (x + sign * offset, rng.random_range(0.0..16.0))
        })
        .collect();
    let mut cross_gain = vec![0.0; n_tx * n_tx];
    let mut covers = vec![false; n_tx * n_tx];
    for a in 0..n_tx {
        for b in 0..n_tx {
            let d = (tx_pos[a].0 - rx_pos[b].0).hypot(tx_pos[a].1 - rx_pos[b].1);
            let z: f64 = StandardNormal.sample(&mut rng);
            cross_gain[a * n_tx + b] = link_gain(channel.path_loss_gain(d), channel.shadowing_sigma_db * z, 1.0);
            covers[a * n_tx + b] = d <= comm_range_m;
        }
    }
    let tx_ids = (0..n_tx as VehicleId).collect();
    OracleInstance {
        seed,
        q_tx,
        q_sc,
        context: UtilityContext::new(
            tx_ids,
            n_sc,
            cross_gain,
            covers,
            channel.noise_w,
            channel.bandwidth_hz,
            phy,
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceCheck {
    pub initial_utility: f64,
    pub final_utility: f64,
    pub optimum_utility: f64,
    pub iterations: u32,
    pub violations: Vec<String>,
}

/// Runs init + swap matching on `inst` and audits termination, quotas,
/// monotonicity, stability and the brute-force bound.
pub fn check_instance(inst: &OracleInstance, max_swap_iterations: u32) -> InstanceCheck {
    let ctx = &inst.context;
    let cfg = AllocatorConfig {
        q_tx: inst.q_tx as u32,
        q_sc: inst.q_sc as u32,
        max_swap_iterations,
        priority_rule: PriorityRule::ById,
    };
    let mut violations = Vec::new();
    let priority = priority_order(&ctx.tx_ids, &vec![0; ctx.tx_count()], cfg.priority_rule);
    let initial = match init_matching(ctx.tx_count(), ctx.subchannel_count, &priority, &cfg, inst.seed) {
        Ok(m) => m,
        Err(e) => {
            violations.push(format!("init failed: {e}"));
            return InstanceCheck {
                initial_utility: f64::NAN,
                final_utility: f64::NAN,
                optimum_utility: f64::NAN,
                iterations: 0,
                violations,
            };
        }
    };
    if (0..ctx.tx_count()).any(|j| initial.tx_load(j) == 0) {
        violations.push("initial matching leaves a Tx without a subchannel".into());
    }
    let initial_utility = utility_unchecked(&initial, ctx);
    let outcome = swap_matching(initial, ctx, &cfg).expect("initial matching is quota-feasible");
    let optimum_utility = match brute_force_alloc(ctx, inst.q_tx, inst.q_sc) {
        Ok(b) => b.utility,
        Err(e) => {
            violations.push(e.to_string());
            f64::NAN
        }
    };

    if outcome.hit_iteration_cap {
        violations.push(format!("no termination within {max_swap_iterations} moves"));
    }
    if outcome.utility() < initial_utility {
        violations.push("final utility below initial utility".into());
    }
    if outcome.utility_trace.windows(2).any(|w| w[1] <= w[0]) {
        violations.push("utility trace not strictly increasing".into());
    }
    if let Err(e) = outcome.matching.check_quotas() {
        violations.push(e.to_string());
    }
    if !outcome.hit_iteration_cap && !is_exchange_stable(&outcome.matching, ctx) {
        violations.push("final matching has a blocking pair".into());
    }
    if optimum_utility < outcome.utility() * (1.0 - 1e-12) {
        violations.push("swap matching beat the exhaustive optimum".into());
    }
    InstanceCheck {
        initial_utility,
        final_utility: outcome.utility(),
        optimum_utility,
        iterations: outcome.iterations,
        violations,
    }
}
