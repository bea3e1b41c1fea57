//! NetFlow v5 collection.
//!
//! Datagrams from each exporter stream are reassembled into their emission
//! order using the header's `flow_sequence` field: duplicates are rejected,
//! out-of-order datagrams are held in a bounded reorder buffer, and gaps that
//! never fill are accounted as lost records. Accepted records are converted
//! to absolute time and surfaced as [`NormalizedFlow`] values.
//!
//! Sequence tracking starts at 0, matching an exporter numbering from boot.
//! A collector attached mid-stream will account everything emitted before it
//! attached as lost once its first window expires.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::wire::{self, FlowRecord, PacketHeader};

pub mod file;
pub mod udp;

pub const DEFAULT_REORDER_WINDOW_MS: u64 = 2_000;
/// At most this many out-of-order datagrams are held per stream; overflow
/// force-drains from the lowest sequence.
pub const DEFAULT_MAX_BUFFERED_PACKETS: usize = 64;
/// Recently accepted sequence ranges remembered per stream for duplicate
/// detection.
pub const DEFAULT_ACCEPTED_RANGES_CAP: usize = 1024;

/// Identity of one exporter stream as seen by the collector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId {
    pub exporter_addr: Ipv4Addr,
    pub engine_type: u8,
    pub engine_id: u8,
}

impl StreamId {
    /// Peeks the engine fields out of a raw datagram without a full decode,
    /// falling back to engine 0/0 when the bytes are not a v5 header.
    pub fn from_datagram(exporter_addr: Ipv4Addr, bytes: &[u8]) -> StreamId {
        let (engine_type, engine_id) =
            if bytes.len() >= wire::HEADER_LEN && u16::from_be_bytes([bytes[0], bytes[1]]) == wire::VERSION {
                (bytes[20], bytes[21])
            } else {
                (0, 0)
            };
        StreamId {
            exporter_addr,
            engine_type,
            engine_id,
        }
    }
}

impl std::fmt::Display for StreamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.exporter_addr, self.engine_type, self.engine_id
        )
    }
}

/// One flow record with absolute timestamps and exporter identity; the unit
/// of persistence and analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormalizedFlow {
    pub exporter_addr: Ipv4Addr,
    pub engine_type: u8,
    pub engine_id: u8,
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
    pub next_hop: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    pub tos: u8,
    pub tcp_flags: u8,
    pub input_if: u16,
    pub output_if: u16,
    pub src_as: u16,
    pub dst_as: u16,
    pub packets: u64,
    pub bytes: u64,
    /// Absolute Unix milliseconds, UTC.
    pub first_abs_ms: u64,
    pub last_abs_ms: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NormalizeError {
    #[error("computed absolute time {0} ms is negative")]
    NegativeTime(i64),
}

/// Converts a wire record to absolute time using the header clocks: the
/// export wall-clock fields anchor the exporter's uptime axis, and record
/// timestamps are offsets on that axis.
pub fn normalize_record(
    header: &PacketHeader,
    rec: &FlowRecord,
    source: StreamId,
) -> Result<NormalizedFlow, NormalizeError> {
    let boot_abs_ms = header.unix_secs as i64 * 1000 + (header.unix_nsecs / 1_000_000) as i64
        - header.sys_uptime_ms as i64;
    let first = boot_abs_ms + rec.first_uptime_ms as i64;
    let last = boot_abs_ms + rec.last_uptime_ms as i64;
    if first < 0 {
        return Err(NormalizeError::NegativeTime(first));
    }
    if last < 0 {
        return Err(NormalizeError::NegativeTime(last));
    }
    Ok(NormalizedFlow {
        exporter_addr: source.exporter_addr,
        engine_type: source.engine_type,
        engine_id: source.engine_id,
        src_addr: rec.src_addr,
        dst_addr: rec.dst_addr,
        next_hop: rec.next_hop,
        src_port: rec.src_port,
        dst_port: rec.dst_port,
        protocol: rec.protocol,
        tos: rec.tos,
        tcp_flags: rec.tcp_flags,
        input_if: rec.input_if,
        output_if: rec.output_if,
        src_as: rec.src_as,
        dst_as: rec.dst_as,
        packets: rec.d_pkts as u64,
        bytes: rec.d_octets as u64,
        first_abs_ms: first as u64,
        last_abs_ms: last as u64,
    })
}

/// Per-stream and aggregate anomaly counters. All monotonically
/// nondecreasing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub flows_accepted: u64,
    pub flows_lost: u64,
    pub duplicate_packets: u64,
    pub reordered_packets: u64,
    /// Datagrams whose sequence range partially overlapped already accepted
    /// data; dropped whole, also counted under `duplicate_packets`.
    pub overlap_packets: u64,
    pub decode_errors: u64,
}

impl Counters {
    fn merge(&mut self, other: &Counters) {
        self.flows_accepted += other.flows_accepted;
        self.flows_lost += other.flows_lost;
        self.duplicate_packets += other.duplicate_packets;
        self.reordered_packets += other.reordered_packets;
        self.overlap_packets += other.overlap_packets;
        self.decode_errors += other.decode_errors;
    }
}

#[derive(Debug, Clone)]
pub struct CollectorConfig {
    pub reorder_window_ms: u64,
    pub max_buffered_packets: usize,
    pub accepted_ranges_cap: usize,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        CollectorConfig {
            reorder_window_ms: DEFAULT_REORDER_WINDOW_MS,
            max_buffered_packets: DEFAULT_MAX_BUFFERED_PACKETS,
            accepted_ranges_cap: DEFAULT_ACCEPTED_RANGES_CAP,
        }
    }
}

// Serial number arithmetic modulo 2^32, window 2^31.
fn seq_ahead(frontier: u32, seq: u32) -> bool {
    let d = seq.wrapping_sub(frontier);
    d != 0 && d < 1 << 31
}

fn seq_distance(from: u32, to: u32) -> u32 {
    to.wrapping_sub(from)
}

// Circular interval intersection; lengths are far below 2^31.
fn ranges_intersect(a_start: u32, a_len: u32, b_start: u32, b_len: u32) -> bool {
    seq_distance(a_start, b_start) < a_len || seq_distance(b_start, a_start) < b_len
}

#[derive(Debug)]
struct BufferedPacket {
    arrival_ms: u64,
    packet: wire::Packet,
}

/// Sequence-tracking state for one exporter stream.
#[derive(Debug, Default)]
pub struct StreamState {
    /// Next expected flow_sequence. Never decreases in serial order.
    frontier: u32,
    /// Out-of-order packets pending, keyed by their flow_sequence.
    reorder_buffer: BTreeMap<u32, BufferedPacket>,
    /// Recent accepted [seq, seq+count) intervals, oldest first.
    accepted_ranges: VecDeque<(u32, u32)>,
    counters: Counters,
}

impl StreamState {
    pub fn frontier(&self) -> u32 {
        self.frontier
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn buffered_packets(&self) -> usize {
        self.reorder_buffer.len()
    }

    fn intersects_accepted(&self, start: u32, len: u32) -> bool {
        self.accepted_ranges
            .iter()
            .any(|&(s, l)| ranges_intersect(s, l, start, len))
    }

    fn record_accepted(&mut self, start: u32, len: u32, cap: usize) {
        self.accepted_ranges.push_back((start, len));
        while self.accepted_ranges.len() > cap {
            self.accepted_ranges.pop_front();
        }
    }

    /// Emits a packet whose sequence matches the frontier exactly.
    fn accept(
        &mut self,
        packet: wire::Packet,
        source: StreamId,
        cap: usize,
        out: &mut Vec<NormalizedFlow>,
    ) {
        let seq = packet.header.flow_sequence;
        let count = packet.header.count as u32;
        debug_assert_eq!(seq, self.frontier);
        self.frontier = seq.wrapping_add(count);
        self.record_accepted(seq, count, cap);
        for rec in &packet.records {
            // Shield downstream invariants from records a real exporter
            // would never emit; the collector itself must not stop.
            if rec.d_pkts == 0
                || rec.d_octets < rec.d_pkts
                || rec.first_uptime_ms > rec.last_uptime_ms
            {
                self.counters.decode_errors += 1;
                continue;
            }
            match normalize_record(&packet.header, rec, source) {
                Ok(flow) => {
                    self.counters.flows_accepted += 1;
                    out.push(flow);
                }
                Err(_) => self.counters.decode_errors += 1,
            }
        }
    }

    /// Accepts buffered packets that have become contiguous, then discards
    /// buffered packets made stale by the frontier moving past them.
    fn drain_buffer(&mut self, source: StreamId, cap: usize, out: &mut Vec<NormalizedFlow>) {
        loop {
            let frontier = self.frontier;
            match self.reorder_buffer.remove(&frontier) {
                Some(buffered) => self.accept(buffered.packet, source, cap, out),
                None => break,
            }
        }
        let stale: Vec<u32> = self
            .reorder_buffer
            .keys()
            .copied()
            .filter(|&s| !seq_ahead(self.frontier, s))
            .collect();
        for seq in stale {
            let buffered = self.reorder_buffer.remove(&seq).expect("key listed above");
            let count = buffered.packet.header.count as u32;
            self.counters.duplicate_packets += 1;
            if seq_ahead(self.frontier, seq.wrapping_add(count)) {
                self.counters.overlap_packets += 1;
            }
        }
    }

    /// Force-accepts the lowest-sequence buffered packet, accounting the
    /// skipped gap as lost records.
    fn force_accept_lowest(
        &mut self,
        source: StreamId,
        cap: usize,
        out: &mut Vec<NormalizedFlow>,
    ) {
        let Some(&seq) = self
            .reorder_buffer
            .keys()
            .min_by_key(|&&s| seq_distance(self.frontier, s))
        else {
            return;
        };
        let buffered = self.reorder_buffer.remove(&seq).expect("key found above");
        let gap = seq_distance(self.frontier, seq);
        self.counters.flows_lost += gap as u64;
        self.frontier = seq;
        self.accept(buffered.packet, source, cap, out);
        self.drain_buffer(source, cap, out);
    }

    /// Force-accepts buffered packets, lowest sequence first, until none is
    /// older than the reorder window.
    fn expire_buffer(
        &mut self,
        now_ms: u64,
        config: &CollectorConfig,
        source: StreamId,
        out: &mut Vec<NormalizedFlow>,
    ) {
        while self
            .reorder_buffer
            .values()
            .any(|b| now_ms.saturating_sub(b.arrival_ms) > config.reorder_window_ms)
        {
            self.force_accept_lowest(source, config.accepted_ranges_cap, out);
        }
    }

    fn classify_and_handle(
        &mut self,
        packet: wire::Packet,
        arrival_ms: u64,
        config: &CollectorConfig,
        source: StreamId,
        out: &mut Vec<NormalizedFlow>,
    ) {
        let seq = packet.header.flow_sequence;
        let count = packet.header.count as u32;
        if seq == self.frontier {
            self.accept(packet, source, config.accepted_ranges_cap, out);
            self.drain_buffer(source, config.accepted_ranges_cap, out);
            return;
        }
        if self.intersects_accepted(seq, count) || !seq_ahead(self.frontier, seq) {
            self.counters.duplicate_packets += 1;
            // a range reaching beyond the frontier carries data we have not
            // seen, but is dropped whole rather than double-counting bytes
            if !seq_ahead(self.frontier, seq) && seq_ahead(self.frontier, seq.wrapping_add(count)) {
                self.counters.overlap_packets += 1;
            }
            return;
        }
        // ahead of the frontier: hold for reordering
        if self.reorder_buffer.contains_key(&seq) {
            self.counters.duplicate_packets += 1;
            return;
        }
        self.counters.reordered_packets += 1;
        self.reorder_buffer.insert(
            seq,
            BufferedPacket {
                arrival_ms,
                packet,
            },
        );
        while self.reorder_buffer.len() > config.max_buffered_packets {
            self.force_accept_lowest(source, config.accepted_ranges_cap, out);
        }
    }

    /// Drains the whole reorder buffer, as on shutdown.
    fn flush(&mut self, source: StreamId, cap: usize, out: &mut Vec<NormalizedFlow>) {
        while !self.reorder_buffer.is_empty() {
            self.force_accept_lowest(source, cap, out);
        }
    }
}

/// Collection state across all exporter streams.
#[derive(Debug, Default)]
pub struct Collector {
    config: CollectorConfig,
    streams: HashMap<StreamId, StreamState>,
}

impl Collector {
    pub fn new(config: CollectorConfig) -> Collector {
        Collector {
            config,
            streams: HashMap::new(),
        }
    }

    /// Processes one datagram, returning the flows it released (which may
    /// include previously buffered ones). Never fails: every anomaly lands
    /// in a counter.
    pub fn ingest_datagram(
        &mut self,
        source: StreamId,
        bytes: &[u8],
        arrival_ms: u64,
    ) -> Vec<NormalizedFlow> {
        let mut out = Vec::new();
        let stream = self.streams.entry(source).or_default();
        stream.expire_buffer(arrival_ms, &self.config, source, &mut out);
        match wire::Packet::decode(bytes) {
            Ok(packet) => {
                stream.classify_and_handle(packet, arrival_ms, &self.config, source, &mut out)
            }
            Err(_) => stream.counters.decode_errors += 1,
        }
        out
    }

    /// Force-drains every stream's reorder buffer, as on shutdown.
    pub fn flush_streams(&mut self) -> Vec<NormalizedFlow> {
        let mut out = Vec::new();
        let mut ids: Vec<StreamId> = self.streams.keys().copied().collect();
        ids.sort();
        for id in ids {
            let stream = self.streams.get_mut(&id).expect("id listed above");
            stream.flush(id, self.config.accepted_ranges_cap, &mut out);
        }
        out
    }

    /// Counters aggregated over all streams.
    pub fn counters(&self) -> Counters {
        let mut total = Counters::default();
        for stream in self.streams.values() {
            total.merge(&stream.counters());
        }
        total
    }

    pub fn stream(&self, id: &StreamId) -> Option<&StreamState> {
        self.streams.get(id)
    }

    pub fn stream_count(&self) -> usize {
        self.streams.len()
    }
}
