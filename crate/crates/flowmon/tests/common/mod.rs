//! Deterministic workload generators shared by the integration tests.

use std::collections::HashMap;
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flowmon::collector::NormalizedFlow;
use flowmon::exporter::{FlowKey, ObservedPacket};

/// A generated packet trace with its per-key ground truth.
pub struct GeneratedTrace {
    pub packets: Vec<ObservedPacket>,
    /// FlowKey -> (packets, bytes) observed, the conservation oracle.
    pub totals: HashMap<FlowKey, (u64, u64)>,
}

/// Builds a time-sorted trace of roughly `flows * packets_per_flow` packets
/// across ~200 hosts. Fully deterministic for a given seed.
pub fn generate_trace(seed: u64, flows: usize, packets_per_flow: usize) -> GeneratedTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hosts: Vec<Ipv4Addr> = (0..200u32)
        .map(|i| Ipv4Addr::new(10, 0, (i / 200) as u8, (i % 200 + 1) as u8))
        .collect();
    let routers: Vec<Ipv4Addr> = (1..=4u8).map(|i| Ipv4Addr::new(10, 0, 255, i)).collect();
    let protocols = [6u8, 6, 6, 6, 17, 17, 1];
    let dst_ports = [80u16, 443, 25, 53, 32001, 12352, 8080];

    let mut packets = Vec::with_capacity(flows * packets_per_flow);
    let mut totals: HashMap<FlowKey, (u64, u64)> = HashMap::new();
    for _ in 0..flows {
        let src = hosts[rng.random_range(0..hosts.len())];
        let mut dst = hosts[rng.random_range(0..hosts.len())];
        while dst == src {
            dst = hosts[rng.random_range(0..hosts.len())];
        }
        let protocol = protocols[rng.random_range(0..protocols.len())];
        let key = FlowKey {
            src_addr: src,
            dst_addr: dst,
            src_port: if protocol == 1 { 0 } else { rng.random_range(1024..60000) },
            dst_port: if protocol == 1 {
                0
            } else {
                dst_ports[rng.random_range(0..dst_ports.len())]
            },
            protocol,
            tos: [0u8, 0, 0, 8][rng.random_range(0..4)],
            input_if: rng.random_range(1..4),
        };
        let next_hop = routers[rng.random_range(0..routers.len())];
        let output_if = rng.random_range(1..4);
        let start: u64 = rng.random_range(0..3_000_000);
        let count = rng.random_range(packets_per_flow / 2..=packets_per_flow * 3 / 2).max(1);
        // occasional long gaps exercise inactive expiry mid-flow
        let base_gap: u64 = if rng.random_range(0..10) == 0 {
            20_000
        } else {
            rng.random_range(5..2_000)
        };
        let mut t = start;
        for _ in 0..count {
            let byte_len: u64 = rng.random_range(40..1500);
            packets.push(ObservedPacket {
                time_ms: t,
                key,
                byte_len,
                tcp_flags: if protocol == 6 { 0x18 } else { 0 },
                next_hop,
                output_if,
            });
            let slot = totals.entry(key).or_default();
            slot.0 += 1;
            slot.1 += byte_len;
            t += base_gap + rng.random_range(0..50);
        }
    }
    packets.sort_by_key(|p| p.time_ms);
    GeneratedTrace { packets, totals }
}

/// One synthetic conversation with the multi-hop path its packets took.
pub struct PlannedConversation {
    pub src: Ipv4Addr,
    pub src_port: u16,
    pub dst: Ipv4Addr,
    pub dst_port: u16,
    pub bytes: u64,
    /// (exporter, next_hop) pairs, one observation per hop.
    pub path: Vec<(Ipv4Addr, Ipv4Addr)>,
}

/// A record set in which every conversation is observed once per hop of a
/// known path, the ground truth for cross-table accounting.
pub struct PlannedRecords {
    pub conversations: Vec<PlannedConversation>,
    pub records: Vec<NormalizedFlow>,
}

pub fn generate_multi_exporter_records(seed: u64, conversations: usize) -> PlannedRecords {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hosts: Vec<Ipv4Addr> = (1..=40u8).map(|i| Ipv4Addr::new(10, 1, 12, i)).collect();
    let routers: Vec<Ipv4Addr> = (1..=6u8).map(|i| Ipv4Addr::new(10, 1, 250, i)).collect();
    let mut planned = Vec::with_capacity(conversations);
    let mut records = Vec::new();
    for index in 0..conversations {
        let src = hosts[rng.random_range(0..hosts.len())];
        let mut dst = hosts[rng.random_range(0..hosts.len())];
        while dst == src {
            dst = hosts[rng.random_range(0..hosts.len())];
        }
        // unique source port keeps conversations distinct by construction
        let src_port = 1000 + index as u16;
        let dst_port = [80u16, 443, 32001][rng.random_range(0..3)];
        let protocol = [6u8, 6, 17, 47][rng.random_range(0..4)];
        let bytes: u64 = rng.random_range(1_000..200_000_000);
        let first_ms: u64 = rng.random_range(0..86_400_000);
        let last_ms = first_ms + rng.random_range(0..7_200_000);
        let hops = rng.random_range(1..=3usize);
        let mut path = Vec::with_capacity(hops);
        let mut used = Vec::new();
        for hop in 0..hops {
            let mut exporter = routers[rng.random_range(0..routers.len())];
            while used.contains(&exporter) {
                exporter = routers[rng.random_range(0..routers.len())];
            }
            used.push(exporter);
            let to = if hop + 1 < hops {
                let mut next = routers[rng.random_range(0..routers.len())];
                while next == exporter {
                    next = routers[rng.random_range(0..routers.len())];
                }
                next
            } else {
                dst
            };
            path.push((exporter, to));
        }
        for &(exporter, next_hop) in &path {
            records.push(NormalizedFlow {
                exporter_addr: exporter,
                engine_type: 0,
                engine_id: 0,
                src_addr: src,
                dst_addr: dst,
                next_hop,
                src_port,
                dst_port,
                protocol,
                tos: 0,
                tcp_flags: if protocol == 6 { 0x18 } else { 0 },
                input_if: 1,
                output_if: 2,
                src_as: 0,
                dst_as: 0,
                packets: bytes.div_ceil(1000).max(1),
                bytes,
                first_abs_ms: first_ms,
                last_abs_ms: last_ms,
            });
        }
        planned.push(PlannedConversation {
            src,
            src_port,
            dst,
            dst_port,
            bytes,
            path,
        });
    }
    PlannedRecords {
        conversations: planned,
        records,
    }
}
