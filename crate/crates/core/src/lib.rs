//! Slot-based system-level simulator for power-domain NOMA on the V2V
//! sidelink.

pub mod allocator;
pub mod channel;
pub mod config;
pub mod engine;
pub mod phy;
pub mod powerctl;
pub mod scenario;
