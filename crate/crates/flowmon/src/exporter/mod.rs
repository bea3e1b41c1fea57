//! Router flow-cache simulation.
//!
//! A [`FlowCache`] ingests observed packet metadata, aggregates packets into
//! flows keyed by the seven key fields, expires flows by inactivity or age,
//! and emits sequenced NetFlow v5 datagrams.

use std::collections::{BTreeMap, VecDeque};
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::wire;

pub mod fault;
pub mod trace;

/// A flow is considered inactive after this long without a packet.
pub const DEFAULT_INACTIVE_TIMEOUT_MS: u64 = 15_000;
/// A flow is exported once it has lived this long, even while active.
pub const DEFAULT_ACTIVE_TIMEOUT_MS: u64 = 1_800_000;
/// Queued records are packed into a datagram at the latest this long after
/// the first of them expired.
pub const DEFAULT_FLUSH_INTERVAL_MS: u64 = 1_000;

const TCP_FIN: u8 = 0x01;
const TCP_RST: u8 = 0x04;

/// The seven key fields that define flow identity. Packets agreeing on all
/// seven belong to the same flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowKey {
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    pub tos: u8,
    pub input_if: u16,
}

/// Metadata of one packet seen by the simulated router.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservedPacket {
    /// Absolute trace clock, milliseconds. Must be non-decreasing.
    pub time_ms: u64,
    pub key: FlowKey,
    /// Layer-3 bytes, at least 1.
    pub byte_len: u64,
    pub tcp_flags: u8,
    pub next_hop: Ipv4Addr,
    pub output_if: u16,
}

/// One active flow in the cache.
#[derive(Debug, Clone, Copy)]
pub struct CacheEntry {
    pub key: FlowKey,
    pub first_ms: u64,
    pub last_ms: u64,
    pub packets: u64,
    pub bytes: u64,
    pub tcp_flags_or: u8,
    /// Taken from the flow's first packet; later packets do not update them.
    pub next_hop: Ipv4Addr,
    pub output_if: u16,
}

#[derive(Debug, Clone)]
pub struct ExporterConfig {
    pub exporter_addr: Ipv4Addr,
    pub engine_type: u8,
    pub engine_id: u8,
    pub inactive_timeout_ms: u64,
    pub active_timeout_ms: u64,
    /// Absolute time of exporter boot; record timestamps are expressed as
    /// offsets from it. Must not exceed the first observation time.
    pub boot_time_ms: u64,
    pub max_records_per_packet: usize,
    pub flush_interval_ms: u64,
    /// Export a TCP flow immediately once FIN or RST is seen. Off by default.
    pub expire_on_fin_rst: bool,
}

impl Default for ExporterConfig {
    fn default() -> Self {
        ExporterConfig {
            exporter_addr: Ipv4Addr::LOCALHOST,
            engine_type: 0,
            engine_id: 0,
            inactive_timeout_ms: DEFAULT_INACTIVE_TIMEOUT_MS,
            active_timeout_ms: DEFAULT_ACTIVE_TIMEOUT_MS,
            boot_time_ms: 0,
            max_records_per_packet: wire::MAX_RECORDS_PER_PACKET,
            flush_interval_ms: DEFAULT_FLUSH_INTERVAL_MS,
            expire_on_fin_rst: false,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExporterError {
    #[error("trace time went backwards: {got_ms} after {prev_ms}")]
    OutOfOrderTrace { prev_ms: u64, got_ms: u64 },
    #[error("clock {got_ms} is before exporter boot {boot_ms}")]
    ClockBeforeBoot { boot_ms: u64, got_ms: u64 },
    #[error("observed packet at {time_ms} has zero length")]
    ZeroLengthPacket { time_ms: u64 },
    #[error("invalid exporter config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone)]
struct QueuedRecord {
    queued_ms: u64,
    entry: CacheEntry,
}

/// Simulated router flow cache with its export queue.
///
/// Drive it with [`observe_packet`](FlowCache::observe_packet) calls in trace
/// order, interleaved with [`tick`](FlowCache::tick) at whatever cadence the
/// replay wants packets emitted; finish with [`flush`](FlowCache::flush).
#[derive(Debug)]
pub struct FlowCache {
    config: ExporterConfig,
    entries: BTreeMap<FlowKey, CacheEntry>,
    queue: VecDeque<QueuedRecord>,
    next_sequence: u32,
    total_exported: u64,
    clock_ms: u64,
}

impl FlowCache {
    pub fn new(config: ExporterConfig) -> Result<FlowCache, ExporterError> {
        if config.max_records_per_packet == 0
            || config.max_records_per_packet > wire::MAX_RECORDS_PER_PACKET
        {
            return Err(ExporterError::InvalidConfig(format!(
                "max_records_per_packet {} outside 1..={}",
                config.max_records_per_packet,
                wire::MAX_RECORDS_PER_PACKET
            )));
        }
        if config.inactive_timeout_ms == 0 || config.active_timeout_ms == 0 {
            return Err(ExporterError::InvalidConfig(
                "timeouts must be positive".into(),
            ));
        }
        let boot = config.boot_time_ms;
        Ok(FlowCache {
            config,
            entries: BTreeMap::new(),
            queue: VecDeque::new(),
            next_sequence: 0,
            total_exported: 0,
            clock_ms: boot,
        })
    }

    pub fn config(&self) -> &ExporterConfig {
        &self.config
    }

    /// Total flow records emitted so far, across all packets.
    pub fn exported_records(&self) -> u64 {
        self.total_exported
    }

    /// Active flows currently in the cache.
    pub fn active_flows(&self) -> usize {
        self.entries.len()
    }

    /// Expired records waiting to be packed into a datagram.
    pub fn queued_records(&self) -> usize {
        self.queue.len()
    }

    fn advance_clock(&mut self, now_ms: u64) -> Result<(), ExporterError> {
        if now_ms < self.config.boot_time_ms {
            return Err(ExporterError::ClockBeforeBoot {
                boot_ms: self.config.boot_time_ms,
                got_ms: now_ms,
            });
        }
        if now_ms < self.clock_ms {
            return Err(ExporterError::OutOfOrderTrace {
                prev_ms: self.clock_ms,
                got_ms: now_ms,
            });
        }
        self.clock_ms = now_ms;
        Ok(())
    }

    fn expired(&self, entry: &CacheEntry, now_ms: u64) -> bool {
        // Strict comparisons: an entry exactly at the timeout boundary stays.
        now_ms - entry.last_ms > self.config.inactive_timeout_ms
            || now_ms - entry.first_ms > self.config.active_timeout_ms
    }

    /// Feeds one observed packet into the cache. Times must be non-decreasing
    /// across calls.
    pub fn observe_packet(&mut self, pkt: &ObservedPacket) -> Result<(), ExporterError> {
        if pkt.byte_len == 0 {
            return Err(ExporterError::ZeroLengthPacket { time_ms: pkt.time_ms });
        }
        self.advance_clock(pkt.time_ms)?;
        let now = pkt.time_ms;

        // Expiry for the touched key happens before the packet lands, so a
        // packet arriving after the timeout starts a fresh flow. Untouched
        // entries are swept at the next tick, contents frozen since their
        // last packet.
        if let Some(entry) = self.entries.get(&pkt.key).copied() {
            if self.expired(&entry, now) {
                self.entries.remove(&pkt.key);
                self.queue.push_back(QueuedRecord {
                    queued_ms: now,
                    entry,
                });
            }
        }

        let entry = self.entries.entry(pkt.key).or_insert(CacheEntry {
            key: pkt.key,
            first_ms: now,
            last_ms: now,
            packets: 0,
            bytes: 0,
            tcp_flags_or: 0,
            next_hop: pkt.next_hop,
            output_if: pkt.output_if,
        });
        entry.packets += 1;
        entry.bytes += pkt.byte_len;
        entry.last_ms = now;
        entry.tcp_flags_or |= pkt.tcp_flags;

        if self.config.expire_on_fin_rst
            && pkt.key.protocol == 6
            && pkt.tcp_flags & (TCP_FIN | TCP_RST) != 0
        {
            let entry = self.entries.remove(&pkt.key).expect("entry just updated");
            self.queue.push_back(QueuedRecord {
                queued_ms: now,
                entry,
            });
        }
        Ok(())
    }

    /// Sweeps the cache for expired flows and packs due records into
    /// datagrams. Returns the packets emitted at this instant.
    pub fn tick(&mut self, now_ms: u64) -> Result<Vec<wire::Packet>, ExporterError> {
        self.advance_clock(now_ms)?;
        self.sweep_expired(now_ms);
        Ok(self.drain_queue(now_ms, false))
    }

    /// Exports everything left, regardless of timeouts: remaining cache
    /// entries and all queued records. Sequence numbering continues.
    pub fn flush(&mut self, now_ms: u64) -> Vec<wire::Packet> {
        let now = now_ms.max(self.clock_ms).max(self.config.boot_time_ms);
        self.clock_ms = now;
        let entries = std::mem::take(&mut self.entries);
        for (_, entry) in entries {
            self.queue.push_back(QueuedRecord {
                queued_ms: now,
                entry,
            });
        }
        self.drain_queue(now, true)
    }

    fn sweep_expired(&mut self, now_ms: u64) {
        let expired_keys: Vec<FlowKey> = self
            .entries
            .values()
            .filter(|e| self.expired(e, now_ms))
            .map(|e| e.key)
            .collect();
        for key in expired_keys {
            let entry = self.entries.remove(&key).expect("key collected above");
            self.queue.push_back(QueuedRecord {
                queued_ms: now_ms,
                entry,
            });
        }
    }

    fn drain_queue(&mut self, now_ms: u64, force: bool) -> Vec<wire::Packet> {
        let mut packets = Vec::new();
        loop {
            let len = self.queue.len();
            if len == 0 {
                break;
            }
            let full = len >= self.config.max_records_per_packet;
            let overdue = now_ms - self.queue[0].queued_ms >= self.config.flush_interval_ms;
            if !(full || overdue || force) {
                break;
            }
            let n = len.min(self.config.max_records_per_packet);
            packets.push(self.build_packet(now_ms, n));
        }
        packets
    }

    fn build_packet(&mut self, now_ms: u64, n: usize) -> wire::Packet {
        let boot = self.config.boot_time_ms;
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let q = self.queue.pop_front().expect("caller checked length");
            let e = q.entry;
            // counters and uptimes wrap like the 32-bit wire fields they fill
            records.push(wire::FlowRecord {
                src_addr: e.key.src_addr,
                dst_addr: e.key.dst_addr,
                next_hop: e.next_hop,
                input_if: e.key.input_if,
                output_if: e.output_if,
                d_pkts: e.packets as u32,
                d_octets: e.bytes as u32,
                first_uptime_ms: (e.first_ms - boot) as u32,
                last_uptime_ms: (e.last_ms - boot) as u32,
                src_port: e.key.src_port,
                dst_port: e.key.dst_port,
                tcp_flags: e.tcp_flags_or,
                protocol: e.key.protocol,
                tos: e.key.tos,
                src_as: 0,
                dst_as: 0,
                src_mask: 0,
                dst_mask: 0,
            });
        }
        let header = wire::PacketHeader {
            version: wire::VERSION,
            count: n as u16,
            sys_uptime_ms: (now_ms - boot) as u32,
            unix_secs: (now_ms / 1000) as u32,
            unix_nsecs: ((now_ms % 1000) * 1_000_000) as u32,
            flow_sequence: self.next_sequence,
            engine_type: self.config.engine_type,
            engine_id: self.config.engine_id,
            sampling_interval: 0,
        };
        self.next_sequence = self.next_sequence.wrapping_add(n as u32);
        self.total_exported += n as u64;
        wire::Packet { header, records }
    }
}

/// One datagram emitted by a replay, stamped with its emission time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emission {
    pub emit_ms: u64,
    pub packet: wire::Packet,
}

/// Runs a full trace through a flow cache: packets are observed in order,
/// the cache ticks every `flush_interval_ms` of trace time, and a final
/// flush drains whatever is left at the last observation's timestamp.
pub fn replay_trace(
    packets: &[ObservedPacket],
    config: ExporterConfig,
) -> Result<Vec<Emission>, ExporterError> {
    let mut cache = FlowCache::new(config)?;
    let mut emissions = Vec::new();
    let Some(first) = packets.first() else {
        return Ok(emissions);
    };
    let interval = cache.config.flush_interval_ms;
    let mut next_tick = first.time_ms + interval;
    for pkt in packets {
        while pkt.time_ms >= next_tick {
            for packet in cache.tick(next_tick)? {
                emissions.push(Emission {
                    emit_ms: next_tick,
                    packet,
                });
            }
            next_tick += interval;
        }
        cache.observe_packet(pkt)?;
    }
    let end = packets.last().expect("non-empty").time_ms;
    for packet in cache.flush(end) {
        emissions.push(Emission {
            emit_ms: end,
            packet,
        });
    }
    Ok(emissions)
}
