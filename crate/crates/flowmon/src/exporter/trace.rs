//! Observed-packet trace files.
//!
//! A trace is a text file describing the packets a router saw, one per line,
//! time-sorted, with a mandatory header line:
//!
//! `time_ms,src_ip,src_port,dst_ip,dst_port,proto,tos,tcp_flags,bytes,input_if,output_if,next_hop`

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{FlowKey, ObservedPacket};

pub const TRACE_HEADER: &str =
    "time_ms,src_ip,src_port,dst_ip,dst_port,proto,tos,tcp_flags,bytes,input_if,output_if,next_hop";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: missing trace header line")]
    MissingHeader { path: PathBuf },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn parse_field<T: std::str::FromStr>(
    value: &str,
    name: &str,
    path: &Path,
    line: usize,
) -> Result<T, TraceError> {
    value.trim().parse().map_err(|_| TraceError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("bad {name}: {value:?}"),
    })
}

/// Loads a trace file, checking the header, field syntax, byte lengths and
/// time ordering. Line numbers in errors are 1-based.
pub fn read_trace(path: &Path) -> Result<Vec<ObservedPacket>, TraceError> {
    let file = File::open(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut packets = Vec::new();
    let mut lines = reader.lines().enumerate();

    match lines.next() {
        Some((_, Ok(first))) if first.trim_end() == TRACE_HEADER => {}
        Some((_, Ok(_))) | None => {
            return Err(TraceError::MissingHeader {
                path: path.to_path_buf(),
            })
        }
        Some((_, Err(source))) => {
            return Err(TraceError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    }

    let mut prev_time = 0u64;
    for (index, line) in lines {
        let line_no = index + 1;
        let line = line.map_err(|source| TraceError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(TraceError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 12 fields, found {}", fields.len()),
            });
        }
        let time_ms: u64 = parse_field(fields[0], "time_ms", path, line_no)?;
        let src_ip: Ipv4Addr = parse_field(fields[1], "src_ip", path, line_no)?;
        let src_port: u16 = parse_field(fields[2], "src_port", path, line_no)?;
        let dst_ip: Ipv4Addr = parse_field(fields[3], "dst_ip", path, line_no)?;
        let dst_port: u16 = parse_field(fields[4], "dst_port", path, line_no)?;
        let proto: u8 = parse_field(fields[5], "proto", path, line_no)?;
        let tos: u8 = parse_field(fields[6], "tos", path, line_no)?;
        let tcp_flags: u8 = parse_field(fields[7], "tcp_flags", path, line_no)?;
        let bytes: u64 = parse_field(fields[8], "bytes", path, line_no)?;
        let input_if: u16 = parse_field(fields[9], "input_if", path, line_no)?;
        let output_if: u16 = parse_field(fields[10], "output_if", path, line_no)?;
        let next_hop: Ipv4Addr = parse_field(fields[11], "next_hop", path, line_no)?;

        if bytes == 0 {
            return Err(TraceError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: "bytes must be at least 1".into(),
            });
        }
        if !packets.is_empty() && time_ms < prev_time {
            return Err(TraceError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("time_ms {time_ms} decreases (previous {prev_time})"),
            });
        }
        prev_time = time_ms;
        packets.push(ObservedPacket {
            time_ms,
            key: FlowKey {
                src_addr: src_ip,
                dst_addr: dst_ip,
                src_port,
                dst_port,
                protocol: proto,
                tos,
                input_if,
            },
            byte_len: bytes,
            tcp_flags,
            next_hop,
            output_if,
        });
    }
    Ok(packets)
}

/// Writes a trace file in the format `read_trace` accepts.
pub fn write_trace(path: &Path, packets: &[ObservedPacket]) -> Result<(), TraceError> {
    let io_err = |source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    writeln!(writer, "{TRACE_HEADER}").map_err(io_err)?;
    for p in packets {
        writeln!(
            writer,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            p.time_ms,
            p.key.src_addr,
            p.key.src_port,
            p.key.dst_addr,
            p.key.dst_port,
            p.key.protocol,
            p.key.tos,
            p.tcp_flags,
            p.byte_len,
            p.key.input_if,
            p.output_if,
            p.next_hop
        )
        .map_err(io_err)?;
    }
    writer.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> PathBuf {
        let path = std::env::temp_dir().join(format!(
            "flowmon-trace-test-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        std::fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn parses_a_valid_trace() {
        let path = write_temp(&format!(
            "{TRACE_HEADER}\n1000,10.0.0.1,1234,10.0.1.1,80,6,0,16,1500,1,2,10.0.2.1\n"
        ));
        let packets = read_trace(&path).unwrap();
        assert_eq!(packets.len(), 1);
        assert_eq!(packets[0].time_ms, 1000);
        assert_eq!(packets[0].key.src_port, 1234);
        assert_eq!(packets[0].byte_len, 1500);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn missing_header_is_rejected() {
        let path = write_temp("1000,10.0.0.1,1234,10.0.1.1,80,6,0,16,1500,1,2,10.0.2.1\n");
        assert!(matches!(
            read_trace(&path),
            Err(TraceError::MissingHeader { .. })
        ));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn parse_error_names_the_line() {
        let path = write_temp(&format!(
            "{TRACE_HEADER}\n1000,10.0.0.1,1234,10.0.1.1,80,6,0,16,1500,1,2,10.0.2.1\nnot,a,line\n"
        ));
        match read_trace(&path) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn unsorted_times_are_rejected() {
        let path = write_temp(&format!(
            "{TRACE_HEADER}\n\
             2000,10.0.0.1,1234,10.0.1.1,80,6,0,16,1500,1,2,10.0.2.1\n\
             1000,10.0.0.1,1234,10.0.1.1,80,6,0,16,1500,1,2,10.0.2.1\n"
        ));
        match read_trace(&path) {
            Err(TraceError::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("decreases"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn round_trips_through_write() {
        let packets = vec![ObservedPacket {
            time_ms: 42,
            key: FlowKey {
                src_addr: Ipv4Addr::new(10, 1, 1, 1),
                dst_addr: Ipv4Addr::new(10, 1, 1, 2),
                src_port: 1,
                dst_port: 2,
                protocol: 17,
                tos: 8,
                input_if: 3,
            },
            byte_len: 99,
            tcp_flags: 0,
            next_hop: Ipv4Addr::new(10, 1, 1, 3),
            output_if: 4,
        }];
        let path = std::env::temp_dir().join(format!(
            "flowmon-trace-rt-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        write_trace(&path, &packets).unwrap();
        assert_eq!(read_trace(&path).unwrap(), packets);
        std::fs::remove_file(&path).ok();
    }
}
