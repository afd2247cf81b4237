//! Allocator invariant suite against exhaustive search on small instances.

use serde::Serialize;
use v2x_noma::allocator::{check_instance, random_instance, InstanceCheck, OracleInstance};
use v2x_noma::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleOptions {
    pub trials: u32,
    pub seed: u64,
    pub max_tx: usize,
    pub max_sc: usize,
    pub max_quota: usize,
    pub max_swap_iterations: u32,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            trials: 200,
            seed: 0,
            max_tx: 4,
            max_sc: 3,
            max_quota: 2,
            max_swap_iterations: 1000,
        }
    }
}

/// A violating instance plus what it takes to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleFailure {
    pub replay: OracleOptions,
    pub instance: OracleInstance,
    pub check: InstanceCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub trials: u32,
    /// Mean of final / optimum utility (instances with zero optimum count
    /// as 1).
    pub mean_ratio: f64,
    pub min_ratio: f64,
    pub max_iterations: u32,
    pub failures: Vec<OracleFailure>,
}

impl OracleSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Instance `t` uses seed `opts.seed + t`. Channel and PHY parameters come
/// from `cfg`.
pub fn cmd_oracle_check(opts: &OracleOptions, cfg: &RunConfig) -> OracleSummary {
    let model = cfg.channel.model();
    let phy = cfg.phy.params();
    let mut ratios = Vec::with_capacity(opts.trials as usize);
    let mut failures = Vec::new();
    let mut max_iterations = 0;
    for t in 0..opts.trials {
        let seed = opts.seed.wrapping_add(u64::from(t));
        let inst = random_instance(
            seed,
            opts.max_tx,
            opts.max_sc,
            opts.max_quota,
            &model,
            cfg.scenario.comm_range_m,
            &phy,
        );
        let check = check_instance(&inst, opts.max_swap_iterations);
        max_iterations = max_iterations.max(check.iterations);
        ratios.push(if check.optimum_utility > 0.0 {
            check.final_utility / check.optimum_utility
        } else {
            1.0
        });
        if !check.violations.is_empty() {
            failures.push(OracleFailure {
                replay: OracleOptions {
                    trials: 1,
                    seed,
                    ..opts.clone()
                },
                instance: inst,
                check,
            });
        }
    }
    let n = ratios.len().max(1) as f64;
    OracleSummary {
        trials: opts.trials,
        mean_ratio: ratios.iter().sum::<f64>() / n,
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        max_iterations,
        failures,
    }
}
