//! Large-scale (log-distance path loss + log-normal shadowing) and
//! small-scale (Rayleigh) channel gains.
//!
//! Every random draw is keyed by its full index tuple and produced by a
//! freshly seeded ChaCha stream, so a gain never depends on the order in
//! which gains are queried.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scenario::{Vehicle, VehicleId};

/// Channel section of the run configuration; logarithmic units as written
/// by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub pathloss_exponent: f64,
    pub reference_loss_db: f64,
    pub reference_distance_m: f64,
    pub shadowing_sigma_db: f64,
    /// Thermal noise density; integrated over the subchannel bandwidth unless
    /// `noise_power_dbm_per_subchannel` overrides it.
    pub noise_psd_dbm_per_hz: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_power_dbm_per_subchannel: Option<f64>,
    pub subchannel_bandwidth_hz: f64,
    pub subchannel_count: u32,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            pathloss_exponent: 3.0,
            reference_loss_db: 47.0,
            reference_distance_m: 1.0,
            shadowing_sigma_db: 3.0,
            noise_psd_dbm_per_hz: -174.0,
            noise_power_dbm_per_subchannel: None,
            subchannel_bandwidth_hz: 180e3,
            subchannel_count: 10,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

impl ChannelConfig {
    pub fn noise_power_dbm(&self) -> f64 {
        self.noise_power_dbm_per_subchannel
            .unwrap_or(self.noise_psd_dbm_per_hz + 10.0 * self.subchannel_bandwidth_hz.log10())
    }

    pub fn model(&self) -> ChannelModel {
        ChannelModel {
            pathloss_exponent: self.pathloss_exponent,
            reference_gain: db_to_linear(-self.reference_loss_db),
            reference_distance_m: self.reference_distance_m,
            shadowing_sigma_db: self.shadowing_sigma_db,
            noise_w: dbm_to_watts(self.noise_power_dbm()),
            bandwidth_hz: self.subchannel_bandwidth_hz,
            subchannel_count: self.subchannel_count as usize,
        }
    }
}

/// Linear-unit channel model derived from [`ChannelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub pathloss_exponent: f64,
    /// Linear gain at the reference distance.
    pub reference_gain: f64,
    pub reference_distance_m: f64,
    pub shadowing_sigma_db: f64,
    pub noise_w: f64,
    pub bandwidth_hz: f64,
    pub subchannel_count: usize,
}

const TAG_SHADOWING: u8 = 1;
const TAG_FADING: u8 = 2;
pub(crate) const TAG_ALLOCATION: u8 = 3;

pub(crate) fn keyed_rng(seed: u64, tag: u8, a: u32, b: u32, sub: u32, time: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8] = tag;
    key[12..16].copy_from_slice(&sub.to_le_bytes());
    key[16..20].copy_from_slice(&a.to_le_bytes());
    key[20..24].copy_from_slice(&b.to_le_bytes());
    key[24..].copy_from_slice(&time.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

impl ChannelModel {
    /// Log-distance path loss as a linear power gain. Distances below the
    /// reference distance are clamped to it.
    pub fn path_loss_gain(&self, distance_m: f64) -> f64 {
        let d = distance_m.max(self.reference_distance_m);
        self.reference_gain * (d / self.reference_distance_m).powf(-self.pathloss_exponent)
    }

    /// Shadowing offset in dB for the unordered link {a, b} during one SPS
    /// period.
    pub fn sample_shadowing(&self, a: VehicleId, b: VehicleId, period: u64, seed: u64) -> f64 {
        if self.shadowing_sigma_db == 0.0 {
            return 0.0;
        }
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let z: f64 = StandardNormal.sample(&mut keyed_rng(seed, TAG_SHADOWING, lo, hi, 0, period));
        self.shadowing_sigma_db * z
    }

    /// Unit-mean exponential power gain for the ordered link tx -> rx on one
    /// subchannel in one slot.
    pub fn sample_fading(&self, tx: VehicleId, rx: VehicleId, subchannel: usize, slot: u64, seed: u64) -> f64 {
        let mut rng = keyed_rng(seed, TAG_FADING, tx, rx, subchannel as u32, slot);
        loop {
            let g: f64 = Exp1.sample(&mut rng);
            if g > 0.0 {
                return g;
            }
        }
    }
}

/// Composite gain: path loss x shadowing x small-scale fading.
pub fn link_gain(path_loss_gain: f64, shadowing_db: f64, fading: f64) -> f64 {
    path_loss_gain * db_to_linear(shadowing_db) * fading
}

/// BS-visible partial CSI for one SPS period: path loss times shadowing for
/// every ordered vehicle pair. Indexed by vehicle id, which must equal the
/// vehicle's position in the slice it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeScaleGains {
    n: usize,
    gains: Vec<f64>,
    distances: Vec<f64>,
}

impl LargeScaleGains {
    pub fn build(model: &ChannelModel, vehicles: &[Vehicle], period: u64, seed: u64) -> Self {
        let n = vehicles.len();
        let mut gains = vec![0.0; n * n];
        let mut distances = vec![0.0; n * n];
        for (i, a) in vehicles.iter().enumerate() {
            debug_assert_eq!(a.id as usize, i);
            for (j, b) in vehicles.iter().enumerate().skip(i + 1) {
                let d = a.distance_to(b);
                let shadow = model.sample_shadowing(a.id, b.id, period, seed);
                let g = link_gain(model.path_loss_gain(d), shadow, 1.0);
                gains[i * n + j] = g;
                gains[j * n + i] = g;
                distances[i * n + j] = d;
                distances[j * n + i] = d;
            }
        }
        Self { n, gains, distances }
    }

    pub fn gain(&self, a: VehicleId, b: VehicleId) -> f64 {
        self.gains[a as usize * self.n + b as usize]
    }

    pub fn distance(&self, a: VehicleId, b: VehicleId) -> f64 {
        self.distances[a as usize * self.n + b as usize]
    }
}

/// Full CSI for one slot: partial CSI plus freshly sampled fading.
#[derive(Debug, Clone, Copy)]
pub struct SlotChannel<'a> {
    pub model: &'a ChannelModel,
    pub large_scale: &'a LargeScaleGains,
    pub slot: u64,
    pub seed: u64,
}

impl SlotChannel<'_> {
    pub fn gain(&self, tx: VehicleId, rx: VehicleId, subchannel: usize) -> f64 {
        self.large_scale.gain(tx, rx) * self.model.sample_fading(tx, rx, subchannel, self.slot, self.seed)
    }
}
