use std::collections::{BTreeMap, BTreeSet};

use v2x_noma::config::RunConfig;
use v2x_noma::engine::{run_simulation, run_simulation_traced, Mode, Scheme, Simulation};
use v2x_noma::scenario::VehicleId;

fn short_road(vehicles: u32, tx_fraction: f64, length_m: f64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.scenario.vehicle_count = vehicles;
    cfg.scenario.tx_fraction = tx_fraction;
    cfg.scenario.road.length_m = length_m;
    cfg
}

#[test]
fn isolated_pair_decodes_in_first_slot() {
    let mut cfg = short_road(2, 0.5, 10.0);
    cfg.phy.rate_threshold_bps = 0.5e6;
    cfg.time.periods_per_run = 1;
    let mut sim = Simulation::new(&cfg, 4).unwrap();
    let outcomes = sim.run_sps_period().unwrap();
    assert_eq!(outcomes.len(), 1);
    let o = &outcomes[0];
    assert!(o.decoded);
    assert_eq!(o.slot, 0);
    assert_eq!(o.latency_s, Some(cfg.time.slot_duration_s));
    let m = sim.finish().metrics;
    assert_eq!((m.generated, m.decoded), (1, 1));
    assert_eq!(m.latency_satisfaction_ratio, 1.0);
}

#[test]
fn no_transmitters_no_outcomes() {
    let cfg = short_road(10, 0.01, 1000.0);
    let mut sim = Simulation::new(&cfg, 1).unwrap();
    assert!(sim.run_sps_period().unwrap().is_empty());
    let m = sim.finish().metrics;
    assert_eq!(m.generated, 0);
    assert!(m.is_conserved());
}

#[test]
fn identical_seeds_identical_reports() {
    for mode in [Mode::Unicast, Mode::Broadcast] {
        let mut cfg = RunConfig {
            mode,
            ..RunConfig::default()
        };
        cfg.time.periods_per_run = 5;
        let a = run_simulation_traced(&cfg, 9, true).unwrap();
        let b = run_simulation_traced(&cfg, 9, true).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, run_simulation_traced(&cfg, 10, true).unwrap());
    }
}

#[test]
fn infeasible_threshold_decodes_nothing() {
    let mut cfg = RunConfig::default();
    cfg.phy.rate_threshold_bps = 1e9;
    cfg.time.periods_per_run = 3;
    let m = run_simulation(&cfg, 2).unwrap().metrics;
    assert!(m.generated > 0);
    assert_eq!(m.packet_reception_probability, 0.0);
    assert_eq!(m.latency_satisfaction_ratio, 1.0);
    assert!(m.latency_zero_denominator);
    assert!(m.is_conserved());
}

#[test]
fn isolated_feasible_links_all_decode() {
    // One Tx per subchannel, short road, modest threshold.
    let mut cfg = short_road(8, 0.5, 60.0);
    cfg.allocator.q_sc = 1;
    cfg.phy.rate_threshold_bps = 0.2e6;
    cfg.time.periods_per_run = 10;
    for seed in 0..3 {
        let m = run_simulation(&cfg, seed).unwrap().metrics;
        assert_eq!(m.packet_reception_probability, 1.0, "seed {seed}");
    }
}

#[test]
fn conservation_across_schemes_and_modes() {
    for mode in [Mode::Unicast, Mode::Broadcast] {
        for scheme in [Scheme::NomaMcd, Scheme::OmaBaseline] {
            let mut cfg = RunConfig {
                mode,
                scheme,
                ..RunConfig::default()
            };
            cfg.time.periods_per_run = 7;
            for seed in 0..3 {
                let m = run_simulation(&cfg, seed).unwrap().metrics;
                assert!(m.is_conserved(), "{mode} {scheme} seed {seed}");
                assert_eq!(m.utility_trace.len(), 7);
                let bins: u64 = m.distance_bins.iter().map(|b| b.generated).sum();
                assert_eq!(bins, m.generated);
                for p in [m.packet_reception_probability, m.latency_satisfaction_ratio] {
                    assert!((0.0..=1.0).contains(&p));
                }
            }
        }
    }
}

#[test]
fn oma_double_load_round_robin() {
    // 4 Tx on 2 subchannels: each Tx is served every other period.
    let mut cfg = short_road(8, 0.5, 60.0);
    cfg.scheme = Scheme::OmaBaseline;
    cfg.channel.subchannel_count = 2;
    cfg.phy.rate_threshold_bps = 0.2e6;
    cfg.time.periods_per_run = 6;
    let mut sim = Simulation::new(&cfg, 5).unwrap();
    let tx_ids: Vec<VehicleId> = sim.pairs().iter().map(|p| p.tx_id).collect();
    for period in 0..6u64 {
        let outcomes = sim.run_sps_period().unwrap();
        let served: BTreeSet<VehicleId> = outcomes.iter().map(|o| o.tx).collect();
        let expected: BTreeSet<VehicleId> = if period % 2 == 0 {
            tx_ids[..2].iter().copied().collect()
        } else {
            tx_ids[2..].iter().copied().collect()
        };
        assert_eq!(served, expected, "period {period}");
        let mut per_slot: BTreeMap<u64, usize> = BTreeMap::new();
        let mut first_decode: BTreeMap<VehicleId, f64> = BTreeMap::new();
        for o in &outcomes {
            *per_slot.entry(o.slot).or_default() += 1;
            if let Some(l) = o.latency_s {
                first_decode.entry(o.tx).or_insert(l);
            }
        }
        if period > 0 {
            // The head of the queue was generated a period earlier and deferred.
            for (&tx, &l) in &first_decode {
                assert!(l > cfg.time.period_duration_s(), "tx {tx} latency {l}");
            }
            assert!(!first_decode.is_empty());
        }
        assert!(per_slot.values().all(|&n| n <= 2));
    }
    let report = sim.finish();
    let m = &report.metrics;
    assert!(m.is_conserved());
    // The last period served the second group, so the first group's packets wait.
    assert_eq!(m.deferred, 2);
    assert!(m.latency_satisfaction_ratio < 1.0);
}

#[test]
fn powers_bounded_and_decodes_meet_threshold() {
    let mut cfg = RunConfig::default();
    cfg.time.periods_per_run = 10;
    let p_max = cfg.phy.params().tx_power_max_w;
    for mode in [Mode::Unicast, Mode::Broadcast] {
        cfg.mode = mode;
        let mut sim = Simulation::new(&cfg, 3).unwrap().with_power_traces(true);
        for _ in 0..cfg.time.periods_per_run {
            for o in sim.run_sps_period().unwrap() {
                if o.decoded {
                    assert!(o.rate_bps >= cfg.phy.rate_threshold_bps);
                }
            }
        }
        let report = sim.finish();
        assert!(!report.diagnostics.power_traces.is_empty());
        for trace in &report.diagnostics.power_traces {
            assert_eq!(trace.iterations.len(), cfg.control.tc_iterations as usize);
            for e in trace.iterations.iter().flatten() {
                assert!(e.power_w >= 0.0 && e.power_w <= p_max, "{e:?}");
                assert!(e.subchannel < cfg.channel.subchannel_count as usize);
            }
        }
    }
}

#[test]
fn broadcast_tx_sets_are_independent() {
    let mut cfg = RunConfig {
        mode: Mode::Broadcast,
        ..RunConfig::default()
    };
    cfg.time.periods_per_run = 5;
    let range = cfg.scenario.comm_range_m;
    let mut sim = Simulation::new(&cfg, 8).unwrap();
    for _ in 0..5 {
        let outcomes = sim.run_sps_period().unwrap();
        let vehicles = sim.vehicles();
        let by_slot: BTreeMap<u64, BTreeSet<VehicleId>> = sim
            .scheduled_tx_sets()
            .iter()
            .map(|(slot, set)| (*slot, set.iter().copied().collect()))
            .collect();
        assert_eq!(by_slot.len(), cfg.time.sps_period_slots as usize);
        for o in &outcomes {
            assert!(by_slot[&o.slot].contains(&o.tx));
            // Half duplex: a receiver never transmits in the same slot.
            assert!(!by_slot[&o.slot].contains(&o.rx));
        }
        for txs in by_slot.values() {
            for &a in txs {
                for &b in txs {
                    if a < b {
                        let d = vehicles[a as usize].distance_to(&vehicles[b as usize]);
                        assert!(d > range, "{a} and {b} transmit together at {d} m");
                    }
                }
            }
        }
    }
}

#[test]
fn undelivered_unicast_packets_fail_not_defer_under_noma() {
    let mut cfg = RunConfig::default();
    cfg.phy.rate_threshold_bps = 1e9;
    cfg.time.periods_per_run = 2;
    let mut sim = Simulation::new(&cfg, 0).unwrap();
    sim.run_sps_period().unwrap();
    sim.run_sps_period().unwrap();
    let m = sim.finish().metrics;
    assert_eq!(m.deferred, 0);
    assert_eq!(m.failed, m.generated);
}
