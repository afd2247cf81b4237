//! Road geometry, vehicles, unicast V2V pairing and mobility.
//!
//! The road is a straight multi-lane highway. A vehicle's position is a
//! longitudinal coordinate along the road plus a lateral lane offset, so
//! distances are exact 2-D Euclidean distances.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type VehicleId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Tx,
    Rx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoadConfig {
    pub length_m: f64,
    pub lane_count: u32,
    pub lane_width_m: f64,
    pub wraparound: bool,
    /// Lower bound of the per-vehicle speed magnitude.
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self {
            length_m: 1000.0,
            lane_count: 4,
            lane_width_m: 4.0,
            wraparound: true,
            speed_min_mps: 20.0,
            speed_max_mps: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub road: RoadConfig,
    pub vehicle_count: u32,
    pub tx_fraction: f64,
    /// Radius of the communication range / interference disk.
    pub comm_range_m: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            road: RoadConfig::default(),
            vehicle_count: 40,
            tx_fraction: 0.2,
            comm_range_m: 150.0,
        }
    }
}

impl ScenarioConfig {
    /// Number of vehicles that take the Tx role in unicast mode.
    pub fn tx_count(&self) -> usize {
        // The epsilon absorbs representation error in products like 0.29 * 100.
        (self.tx_fraction * f64::from(self.vehicle_count) + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: VehicleId,
    pub lane: u32,
    /// Lateral offset of the lane centre from the road edge.
    pub lateral_m: f64,
    pub position_m: f64,
    /// Signed by direction of travel.
    pub speed_mps: f64,
    pub role: Role,
}

impl Vehicle {
    pub fn distance_to(&self, other: &Vehicle) -> f64 {
        (self.position_m - other.position_m).hypot(self.lateral_m - other.lateral_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct V2VPair {
    pub tx_id: VehicleId,
    pub rx_id: VehicleId,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("no unpaired Rx vehicle within communication range of Tx {tx_id}")]
    NoReceiverInRange { tx_id: VehicleId },
    #[error("scenario needs at least one Tx, got tx_fraction * vehicle_count < 1")]
    NoTransmitters,
}

/// Places `vehicle_count` vehicles on the road without assigning pairs.
///
/// Vehicles are spread over lanes round-robin; positions are uniform along
/// the road, even lanes drive in the positive direction and odd lanes in the
/// negative one. Exactly `tx_count()` vehicles, chosen by a seeded shuffle,
/// get the Tx role.
pub fn generate_vehicles(config: &ScenarioConfig, seed: u64) -> Vec<Vehicle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let road = &config.road;
    let lanes = road.lane_count.max(1);
    let mut vehicles: Vec<Vehicle> = (0..config.vehicle_count)
        .map(|id| {
            let lane = id % lanes;
            let position_m = rng.random_range(0.0..road.length_m);
            let magnitude = if road.speed_max_mps > road.speed_min_mps {
                rng.random_range(road.speed_min_mps..=road.speed_max_mps)
            } else {
                road.speed_min_mps
            };
            let direction = if lane.is_multiple_of(2) { 1.0 } else { -1.0 };
            Vehicle {
                id,
                lane,
                lateral_m: (f64::from(lane) + 0.5) * road.lane_width_m,
                position_m,
                speed_mps: direction * magnitude,
                role: Role::Rx,
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..vehicles.len()).collect();
    order.shuffle(&mut rng);
    for &idx in order.iter().take(config.tx_count().min(vehicles.len())) {
        vehicles[idx].role = Role::Tx;
    }
    vehicles
}

/// Pairs every Tx, in ascending id order, with its nearest still-unpaired Rx
/// inside `comm_range_m`. Ties go to the lower Rx id.
pub fn pair_unicast(vehicles: &[Vehicle], comm_range_m: f64) -> Result<Vec<V2VPair>, ScenarioError> {
    let mut txs: Vec<&Vehicle> = vehicles.iter().filter(|v| v.role == Role::Tx).collect();
    txs.sort_by_key(|v| v.id);
    let mut taken = std::collections::BTreeSet::new();
    let mut pairs = Vec::with_capacity(txs.len());
    for tx in txs {
        let best = vehicles
            .iter()
            .filter(|v| v.role == Role::Rx && !taken.contains(&v.id))
            .map(|v| (tx.distance_to(v), v.id))
            .filter(|&(d, _)| d <= comm_range_m)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        match best {
            Some((_, rx_id)) => {
                taken.insert(rx_id);
                pairs.push(V2VPair { tx_id: tx.id, rx_id });
            }
            None => return Err(ScenarioError::NoReceiverInRange { tx_id: tx.id }),
        }
    }
    Ok(pairs)
}

/// Vehicles plus unicast pairs, deterministic in `seed`.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<(Vec<Vehicle>, Vec<V2VPair>), ScenarioError> {
    if config.tx_count() == 0 {
        return Err(ScenarioError::NoTransmitters);
    }
    let vehicles = generate_vehicles(config, seed);
    let pairs = pair_unicast(&vehicles, config.comm_range_m)?;
    Ok((vehicles, pairs))
}

/// Moves every vehicle by `speed * dt`. With wraparound positions are taken
/// modulo the road length; otherwise they are clamped to the road ends and
/// the vehicle turns around.
pub fn advance_mobility(vehicles: &mut [Vehicle], road: &RoadConfig, dt: f64) {
    debug_assert!(dt > 0.0);
    let length = road.length_m;
    for v in vehicles.iter_mut() {
        let next = v.position_m + v.speed_mps * dt;
        if road.wraparound {
            let wrapped = next.rem_euclid(length);
            // rem_euclid can round up to exactly `length` for tiny negatives.
            v.position_m = if wrapped >= length { 0.0 } else { wrapped };
        } else if next > length {
            v.position_m = length;
            v.speed_mps = -v.speed_mps;
        } else if next < 0.0 {
            v.position_m = 0.0;
            v.speed_mps = -v.speed_mps;
        } else {
            v.position_m = next;
        }
    }
}

/// Ids of all other vehicles within `comm_range_m` of `vehicle`.
pub fn neighbors(vehicle: &Vehicle, vehicles: &[Vehicle], comm_range_m: f64) -> Vec<VehicleId> {
    vehicles
        .iter()
        .filter(|v| v.id != vehicle.id && vehicle.distance_to(v) <= comm_range_m)
        .map(|v| v.id)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(id: VehicleId, position_m: f64) -> Vehicle {
        Vehicle {
            id,
            lane: 0,
            lateral_m: 2.0,
            position_m,
            speed_mps: 0.0,
            role: Role::Rx,
        }
    }

    #[test]
    fn twenty_percent_of_ten_are_tx() {
        let cfg = ScenarioConfig {
            vehicle_count: 10,
            tx_fraction: 0.2,
            road: RoadConfig {
                length_m: 100.0,
                ..RoadConfig::default()
            },
            comm_range_m: 150.0,
        };
        let (vehicles, pairs) = generate_scenario(&cfg, 7).unwrap();
        let tx = vehicles.iter().filter(|v| v.role == Role::Tx).count();
        assert_eq!(tx, 2);
        assert_eq!(vehicles.len() - tx, 8);
        assert_eq!(pairs.len(), 2);
    }

    #[test]
    fn single_vehicle_cannot_pair() {
        let cfg = ScenarioConfig {
            vehicle_count: 1,
            tx_fraction: 0.5,
            ..ScenarioConfig::default()
        };
        assert_eq!(generate_scenario(&cfg, 1), Err(ScenarioError::NoTransmitters));

        let cfg = ScenarioConfig {
            vehicle_count: 1,
            tx_fraction: 1.0,
            ..ScenarioConfig::default()
        };
        assert_eq!(
            generate_scenario(&cfg, 1),
            Err(ScenarioError::NoReceiverInRange { tx_id: 0 })
        );
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ScenarioConfig::default();
        assert_eq!(generate_scenario(&cfg, 42), generate_scenario(&cfg, 42));
        assert_ne!(generate_vehicles(&cfg, 42), generate_vehicles(&cfg, 43));
    }

    #[test]
    fn mobility_examples() {
        let road = RoadConfig::default();
        let mut v = vec![Vehicle {
            speed_mps: 20.0,
            ..at(0, 100.0)
        }];
        advance_mobility(&mut v, &road, 1.0);
        assert_eq!(v[0].position_m, 120.0);

        let mut v = vec![at(0, 100.0)];
        advance_mobility(&mut v, &road, 1.0);
        assert_eq!(v[0].position_m, 100.0);

        let mut v = vec![Vehicle {
            speed_mps: 20.0,
            ..at(0, 990.0)
        }];
        advance_mobility(&mut v, &road, 1.0);
        assert!((v[0].position_m - 10.0).abs() < 1e-9);
    }

    #[test]
    fn clamp_flips_direction() {
        let road = RoadConfig {
            wraparound: false,
            ..RoadConfig::default()
        };
        let mut v = vec![Vehicle {
            speed_mps: 20.0,
            ..at(0, 990.0)
        }];
        advance_mobility(&mut v, &road, 1.0);
        assert_eq!(v[0].position_m, 1000.0);
        assert_eq!(v[0].speed_mps, -20.0);
    }

    #[test]
    fn neighbor_examples() {
        let pair = vec![at(0, 0.0), at(1, 50.0)];
        assert_eq!(neighbors(&pair[0], &pair, 100.0), vec![1]);
        assert_eq!(neighbors(&pair[1], &pair, 100.0), vec![0]);

        let far = vec![at(0, 0.0), at(1, 150.0)];
        assert!(neighbors(&far[0], &far, 100.0).is_empty());

        let line = vec![at(0, 0.0), at(1, 80.0), at(2, 160.0)];
        assert_eq!(neighbors(&line[1], &line, 100.0), vec![0, 2]);
        assert_eq!(neighbors(&line[0], &line, 100.0), vec![1]);
        assert_eq!(neighbors(&line[2], &line, 100.0), vec![1]);
    }

    #[test]
    fn pairing_prefers_nearest_then_lowest_id() {
        let mut vs = vec![at(0, 0.0), at(1, 10.0), at(2, -10.0), at(3, 5.0)];
        vs[0].role = Role::Tx;
        vs[3].role = Role::Tx;
        let pairs = pair_unicast(&vs, 100.0).unwrap();
        // Tx 0 sees Rx 1 and Rx 2 at 10 m; lower id wins.
        assert_eq!(pairs[0], V2VPair { tx_id: 0, rx_id: 1 });
        assert_eq!(pairs[1], V2VPair { tx_id: 3, rx_id: 2 });
    }

    proptest! {
        #[test]
        fn pairing_is_injective(seed in 0u64..500, n in 5u32..60) {
            let cfg = ScenarioConfig { vehicle_count: n, ..ScenarioConfig::default() };
            if let Ok((_, pairs)) = generate_scenario(&cfg, seed) {
                let mut rx: Vec<_> = pairs.iter().map(|p| p.rx_id).collect();
                rx.sort_unstable();
                rx.dedup();
                prop_assert_eq!(rx.len(), pairs.len());
                prop_assert!(pairs.iter().all(|p| p.tx_id != p.rx_id));
            }
        }

        #[test]
        fn wraparound_keeps_positions_on_road(seed in 0u64..200, dt in 0.001f64..50.0) {
            let cfg = ScenarioConfig::default();
            let mut vs = generate_vehicles(&cfg, seed);
            let ids: Vec<_> = vs.iter().map(|v| (v.id, v.lane, v.role)).collect();
            advance_mobility(&mut vs, &cfg.road, dt);
            prop_assert_eq!(ids, vs.iter().map(|v| (v.id, v.lane, v.role)).collect::<Vec<_>>());
            prop_assert!(vs.iter().all(|v| v.position_m >= 0.0 && v.position_m < cfg.road.length_m));
        }

        #[test]
        fn neighbors_symmetric_irreflexive(seed in 0u64..200, range in 1.0f64..400.0) {
            let cfg = ScenarioConfig { vehicle_count: 25, ..ScenarioConfig::default() };
            let vs = generate_vehicles(&cfg, seed);
            for a in &vs {
                let na = neighbors(a, &vs, range);
                prop_assert!(!na.contains(&a.id));
                for b in &na {
                    prop_assert!(neighbors(&vs[*b as usize], &vs, range).contains(&a.id));
                }
            }
        }
    }
}
