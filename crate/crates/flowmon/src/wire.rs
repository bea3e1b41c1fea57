//! Bit-exact NetFlow v5 datagram codec.
//!
//! A datagram is a 24-byte header followed by 1..=30 fixed-size 48-byte flow
//! records. All multi-byte fields are big-endian. The two pad regions of a
//! record (offset 36 and offsets 46-47) are written as zero and ignored on
//! decode.

use std::net::Ipv4Addr;

use thiserror::Error;

/// Wire size of the packet header.
pub const HEADER_LEN: usize = 24;
/// Wire size of one flow record.
pub const RECORD_LEN: usize = 48;
/// A v5 datagram carries between 1 and 30 records.
pub const MAX_RECORDS_PER_PACKET: usize = 30;
/// The only version this codec speaks.
pub const VERSION: u16 = 5;

const NANOS_PER_SEC: u32 = 1_000_000_000;

/// NetFlow v5 packet header (24 bytes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketHeader {
    /// NetFlow version, always 5.
    pub version: u16,
    /// Number of flow records in this datagram (1..=30).
    pub count: u16,
    /// Milliseconds since the exporter booted.
    pub sys_uptime_ms: u32,
    /// Seconds since the Unix epoch at export time.
    pub unix_secs: u32,
    /// Nanoseconds remainder of the export timestamp (< 10^9).
    pub unix_nsecs: u32,
    /// Total flow records exported in all packets before this one.
    pub flow_sequence: u32,
    /// Flow switching engine type.
    pub engine_type: u8,
    /// Flow switching engine id.
    pub engine_id: u8,
    /// Sampling interval, carried opaquely; nothing downstream interprets it.
    pub sampling_interval: u16,
}

/// NetFlow v5 flow record (48 bytes on the wire).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowRecord {
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
    pub next_hop: Ipv4Addr,
    pub input_if: u16,
    pub output_if: u16,
    /// Packets in the flow.
    pub d_pkts: u32,
    /// Layer-3 bytes in the flow.
    pub d_octets: u32,
    /// Exporter uptime at the first packet of the flow.
    pub first_uptime_ms: u32,
    /// Exporter uptime at the last packet of the flow.
    pub last_uptime_ms: u32,
    pub src_port: u16,
    pub dst_port: u16,
    /// Cumulative OR of TCP flags.
    pub tcp_flags: u8,
    /// IP protocol number (TCP=6, UDP=17, ...).
    pub protocol: u8,
    /// Type of service byte.
    pub tos: u8,
    pub src_as: u16,
    pub dst_as: u16,
    pub src_mask: u8,
    pub dst_mask: u8,
}

/// A decoded NetFlow v5 datagram: header plus its flow records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub header: PacketHeader,
    pub records: Vec<FlowRecord>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("datagram truncated: {0} bytes, header needs {HEADER_LEN}")]
    Truncated(usize),
    #[error("unsupported NetFlow version {0}, expected {VERSION}")]
    BadVersion(u16),
    #[error("record count {0} outside 1..={MAX_RECORDS_PER_PACKET}")]
    BadCount(u16),
    #[error("datagram length {actual} does not match {expected} for {count} records")]
    LengthMismatch {
        count: u16,
        expected: usize,
        actual: usize,
    },
}

/// A packet that violates a structural invariant and cannot be encoded.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid packet: {0}")]
pub struct InvalidPacket(pub String);

fn be_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([bytes[at], bytes[at + 1]])
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn ipv4(bytes: &[u8], at: usize) -> Ipv4Addr {
    Ipv4Addr::new(bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3])
}

impl Packet {
    /// Decodes a datagram. Accepts any byte sequence; never reads past the
    /// buffer and never panics.
    pub fn decode(bytes: &[u8]) -> Result<Packet, DecodeError> {
        if bytes.len() < HEADER_LEN {
            return Err(DecodeError::Truncated(bytes.len()));
        }
        let version = be_u16(bytes, 0);
        if version != VERSION {
            return Err(DecodeError::BadVersion(version));
        }
        let count = be_u16(bytes, 2);
        if count == 0 || count as usize > MAX_RECORDS_PER_PACKET {
            return Err(DecodeError::BadCount(count));
        }
        let expected = HEADER_LEN + RECORD_LEN * count as usize;
        if bytes.len() != expected {
            return Err(DecodeError::LengthMismatch {
                count,
                expected,
                actual: bytes.len(),
            });
        }
        let header = PacketHeader {
            version,
            count,
            sys_uptime_ms: be_u32(bytes, 4),
            unix_secs: be_u32(bytes, 8),
            unix_nsecs: be_u32(bytes, 12),
            flow_sequence: be_u32(bytes, 16),
            engine_type: bytes[20],
            engine_id: bytes[21],
            sampling_interval: be_u16(bytes, 22),
        };
        let mut records = Vec::with_capacity(count as usize);
        for i in 0..count as usize {
            let r = &bytes[HEADER_LEN + i * RECORD_LEN..HEADER_LEN + (i + 1) * RECORD_LEN];
            records.push(FlowRecord {
                src_addr: ipv4(r, 0),
                dst_addr: ipv4(r, 4),
                next_hop: ipv4(r, 8),
                input_if: be_u16(r, 12),
                output_if: be_u16(r, 14),
                d_pkts: be_u32(r, 16),
                d_octets: be_u32(r, 20),
                first_uptime_ms: be_u32(r, 24),
                last_uptime_ms: be_u32(r, 28),
                src_port: be_u16(r, 32),
                dst_port: be_u16(r, 34),
                // r[36] is pad1
                tcp_flags: r[37],
                protocol: r[38],
                tos: r[39],
                src_as: be_u16(r, 40),
                dst_as: be_u16(r, 42),
                src_mask: r[44],
                dst_mask: r[45],
                // r[46..48] is pad2
            });
        }
        Ok(Packet { header, records })
    }

    /// Encodes the packet into exactly `24 + 48 * count` bytes, pads zeroed.
    /// Equal packets always produce identical bytes.
    pub fn encode(&self) -> Result<Vec<u8>, InvalidPacket> {
        self.validate()?;
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * self.records.len());
        out.extend_from_slice(&h.version.to_be_bytes());
        out.extend_from_slice(&h.count.to_be_bytes());
        out.extend_from_slice(&h.sys_uptime_ms.to_be_bytes());
        out.extend_from_slice(&h.unix_secs.to_be_bytes());
        out.extend_from_slice(&h.unix_nsecs.to_be_bytes());
        out.extend_from_slice(&h.flow_sequence.to_be_bytes());
        out.push(h.engine_type);
        out.push(h.engine_id);
        out.extend_from_slice(&h.sampling_interval.to_be_bytes());
        for rec in &self.records {
            out.extend_from_slice(&rec.src_addr.octets());
            out.extend_from_slice(&rec.dst_addr.octets());
            out.extend_from_slice(&rec.next_hop.octets());
            out.extend_from_slice(&rec.input_if.to_be_bytes());
            out.extend_from_slice(&rec.output_if.to_be_bytes());
            out.extend_from_slice(&rec.d_pkts.to_be_bytes());
            out.extend_from_slice(&rec.d_octets.to_be_bytes());
            out.extend_from_slice(&rec.first_uptime_ms.to_be_bytes());
            out.extend_from_slice(&rec.last_uptime_ms.to_be_bytes());
            out.extend_from_slice(&rec.src_port.to_be_bytes());
            out.extend_from_slice(&rec.dst_port.to_be_bytes());
            out.push(0); // pad1
            out.push(rec.tcp_flags);
            out.push(rec.protocol);
            out.push(rec.tos);
            out.extend_from_slice(&rec.src_as.to_be_bytes());
            out.extend_from_slice(&rec.dst_as.to_be_bytes());
            out.push(rec.src_mask);
            out.push(rec.dst_mask);
            out.extend_from_slice(&[0, 0]); // pad2
        }
        Ok(out)
    }

    /// Checks every structural invariant encode relies on.
    pub fn validate(&self) -> Result<(), InvalidPacket> {
        let h = &self.header;
        if h.version != VERSION {
            return Err(InvalidPacket(format!("version {} != {VERSION}", h.version)));
        }
        if self.records.is_empty() || self.records.len() > MAX_RECORDS_PER_PACKET {
            return Err(InvalidPacket(format!(
                "{} records outside 1..={MAX_RECORDS_PER_PACKET}",
                self.records.len()
            )));
        }
        if h.count as usize != self.records.len() {
            return Err(InvalidPacket(format!(
                "header count {} != {} records",
                h.count,
                self.records.len()
            )));
        }
        if h.unix_nsecs >= NANOS_PER_SEC {
            return Err(InvalidPacket(format!("unix_nsecs {} >= 10^9", h.unix_nsecs)));
        }
        for (i, rec) in self.records.iter().enumerate() {
            if rec.first_uptime_ms > rec.last_uptime_ms {
                return Err(InvalidPacket(format!(
                    "record {i}: first_uptime {} > last_uptime {}",
                    rec.first_uptime_ms, rec.last_uptime_ms
                )));
            }
            if rec.d_pkts == 0 {
                return Err(InvalidPacket(format!("record {i}: d_pkts == 0")));
            }
            if rec.d_octets < rec.d_pkts {
                return Err(InvalidPacket(format!(
                    "record {i}: d_octets {} < d_pkts {}",
                    rec.d_octets, rec.d_pkts
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn minimal_record() -> FlowRecord {
        FlowRecord {
            src_addr: Ipv4Addr::UNSPECIFIED,
            dst_addr: Ipv4Addr::UNSPECIFIED,
            next_hop: Ipv4Addr::UNSPECIFIED,
            input_if: 0,
            output_if: 0,
            d_pkts: 1,
            d_octets: 1,
            first_uptime_ms: 0,
            last_uptime_ms: 0,
            src_port: 0,
            dst_port: 0,
            tcp_flags: 0,
            protocol: 0,
            tos: 0,
            src_as: 0,
            dst_as: 0,
            src_mask: 0,
            dst_mask: 0,
        }
    }

    fn minimal_packet() -> Packet {
        Packet {
            header: PacketHeader {
                version: 5,
                count: 1,
                sys_uptime_ms: 0,
                unix_secs: 0,
                unix_nsecs: 0,
                flow_sequence: 0,
                engine_type: 0,
                engine_id: 0,
                sampling_interval: 0,
            },
            records: vec![minimal_record()],
        }
    }

    #[test]
    fn minimal_valid_packet_decodes() {
        let mut bytes = vec![0u8; HEADER_LEN + RECORD_LEN];
        bytes[1] = 5; // version
        bytes[3] = 1; // count
        bytes[HEADER_LEN + 19] = 1; // d_pkts
        bytes[HEADER_LEN + 23] = 1; // d_octets
        let packet = Packet::decode(&bytes).unwrap();
        assert_eq!(packet, minimal_packet());
    }

    #[test]
    fn zero_count_is_rejected() {
        let mut bytes = vec![0u8; HEADER_LEN];
        bytes[1] = 5;
        assert_eq!(Packet::decode(&bytes), Err(DecodeError::BadCount(0)));
    }

    #[test]
    fn count_above_thirty_is_rejected() {
        let mut bytes = vec![0u8; HEADER_LEN + 31 * RECORD_LEN];
        bytes[1] = 5;
        bytes[3] = 31;
        assert_eq!(Packet::decode(&bytes), Err(DecodeError::BadCount(31)));
    }

    #[test]
    fn short_buffer_is_truncated() {
        assert_eq!(Packet::decode(&[5u8; 10]), Err(DecodeError::Truncated(10)));
        assert_eq!(Packet::decode(&[]), Err(DecodeError::Truncated(0)));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut bytes = vec![0u8; HEADER_LEN + RECORD_LEN];
        bytes[1] = 9;
        bytes[3] = 1;
        assert_eq!(Packet::decode(&bytes), Err(DecodeError::BadVersion(9)));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut bytes = vec![0u8; HEADER_LEN + RECORD_LEN + 7];
        bytes[1] = 5;
        bytes[3] = 1;
        assert_eq!(
            Packet::decode(&bytes),
            Err(DecodeError::LengthMismatch {
                count: 1,
                expected: HEADER_LEN + RECORD_LEN,
                actual: HEADER_LEN + RECORD_LEN + 7,
            })
        );
    }

    #[test]
    fn minimal_packet_round_trips() {
        let packet = minimal_packet();
        let bytes = packet.encode().unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + RECORD_LEN);
        assert_eq!(Packet::decode(&bytes).unwrap(), packet);
    }

    #[test]
    fn nonzero_pads_are_ignored_on_decode() {
        let mut bytes = minimal_packet().encode().unwrap();
        bytes[HEADER_LEN + 36] = 0xaa;
        bytes[HEADER_LEN + 46] = 0xbb;
        bytes[HEADER_LEN + 47] = 0xcc;
        assert_eq!(Packet::decode(&bytes).unwrap(), minimal_packet());
    }

    #[test]
    fn encode_rejects_too_many_records() {
        let mut packet = minimal_packet();
        packet.records = vec![minimal_record(); 31];
        packet.header.count = 31;
        assert!(packet.encode().is_err());
    }

    #[test]
    fn encode_rejects_inverted_timestamps() {
        let mut packet = minimal_packet();
        packet.records[0].first_uptime_ms = 10;
        packet.records[0].last_uptime_ms = 5;
        assert!(packet.encode().is_err());
    }

    #[test]
    fn encode_rejects_count_mismatch() {
        let mut packet = minimal_packet();
        packet.header.count = 2;
        assert!(packet.encode().is_err());
    }

    #[test]
    fn encode_rejects_bad_nsecs() {
        let mut packet = minimal_packet();
        packet.header.unix_nsecs = NANOS_PER_SEC;
        assert!(packet.encode().is_err());
    }

    fn arb_record() -> impl Strategy<Value = FlowRecord> {
        (
            (any::<u32>(), any::<u32>(), any::<u32>()),
            (any::<u16>(), any::<u16>(), 1u32..=u32::MAX, any::<u32>()),
            (any::<u32>(), 0u32..=u32::MAX),
            (any::<u16>(), any::<u16>(), any::<u8>(), any::<u8>(), any::<u8>()),
            (any::<u16>(), any::<u16>(), any::<u8>(), any::<u8>()),
        )
            .prop_map(|(addrs, ifs, times, ports, asns)| {
                let (src, dst, hop) = addrs;
                let (input_if, output_if, d_pkts, extra_octets) = ifs;
                let (first, span) = times;
                let (src_port, dst_port, tcp_flags, protocol, tos) = ports;
                let (src_as, dst_as, src_mask, dst_mask) = asns;
                FlowRecord {
                    src_addr: Ipv4Addr::from(src),
                    dst_addr: Ipv4Addr::from(dst),
                    next_hop: Ipv4Addr::from(hop),
                    input_if,
                    output_if,
                    d_pkts,
                    d_octets: d_pkts.saturating_add(extra_octets % 1_000_000),
                    first_uptime_ms: first,
                    last_uptime_ms: first.saturating_add(span % 1_000_000),
                    src_port,
                    dst_port,
                    tcp_flags,
                    protocol,
                    tos,
                    src_as,
                    dst_as,
                    src_mask,
                    dst_mask,
                }
            })
    }

    fn arb_packet() -> impl Strategy<Value = Packet> {
        (
            prop::collection::vec(arb_record(), 1..=MAX_RECORDS_PER_PACKET),
            any::<u32>(),
            any::<u32>(),
            0u32..NANOS_PER_SEC,
            any::<u32>(),
            any::<u8>(),
            any::<u8>(),
            any::<u16>(),
        )
            .prop_map(|(records, uptime, secs, nsecs, seq, et, eid, sampling)| Packet {
                header: PacketHeader {
                    version: VERSION,
                    count: records.len() as u16,
                    sys_uptime_ms: uptime,
                    unix_secs: secs,
                    unix_nsecs: nsecs,
                    flow_sequence: seq,
                    engine_type: et,
                    engine_id: eid,
                    sampling_interval: sampling,
                },
                records,
            })
    }

    proptest! {
        #[test]
        fn round_trip_decode_of_encode(packet in arb_packet()) {
            let bytes = packet.encode().unwrap();
            prop_assert_eq!(bytes.len(), HEADER_LEN + RECORD_LEN * packet.records.len());
            prop_assert_eq!(Packet::decode(&bytes).unwrap(), packet);
        }

        #[test]
        fn round_trip_encode_of_decode(packet in arb_packet()) {
            // pads are zero here, so the byte image must survive a full cycle
            let bytes = packet.encode().unwrap();
            let again = Packet::decode(&bytes).unwrap().encode().unwrap();
            prop_assert_eq!(again, bytes);
        }

        #[test]
        fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..2048)) {
            let _ = Packet::decode(&bytes);
        }
    }
}
