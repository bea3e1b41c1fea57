//! Deterministic datagram fault injection: loss, duplication, reordering.
//!
//! UDP gives no delivery guarantees, so the collector must cope with lost,
//! duplicated and out-of-order datagrams. This module turns an emission
//! schedule into an arrival schedule exhibiting those faults, reproducibly
//! for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::Emission;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultProfile {
    /// Probability a datagram is dropped entirely.
    pub loss_probability: f64,
    /// Probability a delivered datagram also arrives a second time,
    /// `reorder_delay_ms` after the first copy.
    pub duplicate_probability: f64,
    /// Probability a delivered datagram is delayed by `reorder_delay_ms`.
    pub reorder_probability: f64,
    pub reorder_delay_ms: u64,
    pub seed: u64,
}

impl Default for FaultProfile {
    fn default() -> Self {
        FaultProfile {
            loss_probability: 0.0,
            duplicate_probability: 0.0,
            reorder_probability: 0.0,
            reorder_delay_ms: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid fault profile: {0}")]
pub struct InvalidProfile(String);

impl FaultProfile {
    pub fn validate(&self) -> Result<(), InvalidProfile> {
        for (name, p) in [
            ("loss_probability", self.loss_probability),
            ("duplicate_probability", self.duplicate_probability),
            ("reorder_probability", self.reorder_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(InvalidProfile(format!("{name} {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One datagram as the collector will see it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub arrival_ms: u64,
    pub bytes: Vec<u8>,
}

/// Ground truth about what the injector did, for accounting oracles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultStats {
    pub input_packets: u64,
    pub input_records: u64,
    pub dropped_packets: u64,
    /// Flow records inside dropped datagrams.
    pub dropped_records: u64,
    pub duplicated_packets: u64,
    pub delayed_packets: u64,
}

/// Applies the fault profile to an emission schedule. Pure function of its
/// inputs: the same emissions and profile always produce the same arrivals.
///
/// Emissions must be ordered by `emit_ms` and hold encodable packets. Three
/// uniform draws are consumed per input datagram (loss, duplicate, delay)
/// regardless of the outcomes, so one decision never shifts the random
/// stream of the others. A dropped datagram produces nothing; delay and
/// duplication apply only to delivered ones. Arrivals are sorted by time,
/// ties broken by emission order with originals before their copies.
pub fn inject_faults(
    emissions: &[Emission],
    profile: &FaultProfile,
) -> Result<(Vec<Delivery>, FaultStats), InvalidProfile> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let mut stats = FaultStats::default();
    // (arrival, emission index, duplicate flag, bytes)
    let mut scheduled: Vec<(u64, usize, u8, Vec<u8>)> = Vec::with_capacity(emissions.len());
    let mut prev_emit = 0u64;
    for (index, emission) in emissions.iter().enumerate() {
        debug_assert!(emission.emit_ms >= prev_emit, "emissions must be time-ordered");
        prev_emit = emission.emit_ms;
        let lost = rng.random::<f64>() < profile.loss_probability;
        let duplicated = rng.random::<f64>() < profile.duplicate_probability;
        let delayed = rng.random::<f64>() < profile.reorder_probability;
        stats.input_packets += 1;
        stats.input_records += emission.packet.header.count as u64;
        if lost {
            stats.dropped_packets += 1;
            stats.dropped_records += emission.packet.header.count as u64;
            continue;
        }
        let bytes = emission
            .packet
            .encode()
            .expect("emissions must hold valid packets");
        let arrival = if delayed {
            stats.delayed_packets += 1;
            emission.emit_ms + profile.reorder_delay_ms
        } else {
            emission.emit_ms
        };
        if duplicated {
            stats.duplicated_packets += 1;
            scheduled.push((arrival + profile.reorder_delay_ms, index, 1, bytes.clone()));
        }
        scheduled.push((arrival, index, 0, bytes));
    }
    scheduled.sort_by_key(|entry| (entry.0, entry.1, entry.2));
    let deliveries = scheduled
        .into_iter()
        .map(|(arrival_ms, _, _, bytes)| Delivery { arrival_ms, bytes })
        .collect();
    Ok((deliveries, stats))
}
