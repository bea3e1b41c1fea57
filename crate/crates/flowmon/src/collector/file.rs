//! Record file persistence.
//!
//! Collected flows are appended to a comma-separated text file whose first
//! line is exactly [`RECORD_FILE_HEADER`]. IPs are dotted-quad, integers are
//! base 10, timestamps are absolute Unix milliseconds UTC. AS numbers are
//! not part of the format and read back as zero.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::NormalizedFlow;

pub const RECORD_FILE_HEADER: &str = "exporter,engine_type,engine_id,src_ip,src_port,dst_ip,dst_port,proto,tos,tcp_flags,input_if,output_if,next_hop,packets,bytes,first_ms,last_ms";

#[derive(Debug, Error)]
pub enum RecordFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: missing record file header")]
    MissingHeader { path: PathBuf },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn format_record(flow: &NormalizedFlow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        flow.exporter_addr,
        flow.engine_type,
        flow.engine_id,
        flow.src_addr,
        flow.src_port,
        flow.dst_addr,
        flow.dst_port,
        flow.protocol,
        flow.tos,
        flow.tcp_flags,
        flow.input_if,
        flow.output_if,
        flow.next_hop,
        flow.packets,
        flow.bytes,
        flow.first_abs_ms,
        flow.last_abs_ms
    )
}

/// Appending writer over a record file. Creates the file with its header
/// line; flushes on [`finish`](RecordWriter::finish) or drop.
#[derive(Debug)]
pub struct RecordWriter {
    writer: BufWriter<File>,
    path: PathBuf,
    written: u64,
}

impl RecordWriter {
    pub fn create(path: &Path) -> Result<RecordWriter, RecordFileError> {
        let io_err = |source| RecordFileError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        let mut writer = BufWriter::new(file);
        writeln!(writer, "{RECORD_FILE_HEADER}").map_err(io_err)?;
        Ok(RecordWriter {
            writer,
            path: path.to_path_buf(),
            written: 0,
        })
    }

    pub fn append(&mut self, flow: &NormalizedFlow) -> Result<(), RecordFileError> {
        writeln!(self.writer, "{}", format_record(flow)).map_err(|source| RecordFileError::Io {
            path: self.path.clone(),
            source,
        })?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn flush(&mut self) -> Result<(), RecordFileError> {
        self.writer.flush().map_err(|source| RecordFileError::Io {
            path: self.path.clone(),
            source,
        })
    }

    pub fn finish(mut self) -> Result<u64, RecordFileError> {
        self.flush()?;
        Ok(self.written)
    }
}

/// Writes all flows to `path`, returning how many were appended.
pub fn write_records<'a>(
    path: &Path,
    flows: impl IntoIterator<Item = &'a NormalizedFlow>,
) -> Result<u64, RecordFileError> {
    let mut writer = RecordWriter::create(path)?;
    for flow in flows {
        writer.append(flow)?;
    }
    writer.finish()
}

/// Reads a whole record file, in file order.
pub fn read_records(path: &Path) -> Result<Vec<NormalizedFlow>, RecordFileError> {
    let file = File::open(path).map_err(|source| RecordFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut flows = Vec::new();
    let mut lines = reader.lines().enumerate();

    match lines.next() {
        Some((_, Ok(first))) if first.trim_end() == RECORD_FILE_HEADER => {}
        Some((_, Ok(_))) | None => {
            return Err(RecordFileError::MissingHeader {
                path: path.to_path_buf(),
            })
        }
        Some((_, Err(source))) => {
            return Err(RecordFileError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    }

    for (index, line) in lines {
        let line_no = index + 1;
        let line = line.map_err(|source| RecordFileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        flows.push(parse_record(line, path, line_no)?);
    }
    Ok(flows)
}

fn parse_record(line: &str, path: &Path, line_no: usize) -> Result<NormalizedFlow, RecordFileError> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 17 {
        return Err(RecordFileError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("expected 17 fields, found {}", fields.len()),
        });
    }
    fn field<T: std::str::FromStr>(
        value: &str,
        name: &str,
        path: &Path,
        line: usize,
    ) -> Result<T, RecordFileError> {
        value.parse().map_err(|_| RecordFileError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("bad {name}: {value:?}"),
        })
    }
    let exporter_addr: Ipv4Addr = field(fields[0], "exporter", path, line_no)?;
    let engine_type: u8 = field(fields[1], "engine_type", path, line_no)?;
    let engine_id: u8 = field(fields[2], "engine_id", path, line_no)?;
    let src_addr: Ipv4Addr = field(fields[3], "src_ip", path, line_no)?;
    let src_port: u16 = field(fields[4], "src_port", path, line_no)?;
    let dst_addr: Ipv4Addr = field(fields[5], "dst_ip", path, line_no)?;
    let dst_port: u16 = field(fields[6], "dst_port", path, line_no)?;
    let protocol: u8 = field(fields[7], "proto", path, line_no)?;
    let tos: u8 = field(fields[8], "tos", path, line_no)?;
    let tcp_flags: u8 = field(fields[9], "tcp_flags", path, line_no)?;
    let input_if: u16 = field(fields[10], "input_if", path, line_no)?;
    let output_if: u16 = field(fields[11], "output_if", path, line_no)?;
    let next_hop: Ipv4Addr = field(fields[12], "next_hop", path, line_no)?;
    let packets: u64 = field(fields[13], "packets", path, line_no)?;
    let bytes: u64 = field(fields[14], "bytes", path, line_no)?;
    let first_abs_ms: u64 = field(fields[15], "first_ms", path, line_no)?;
    let last_abs_ms: u64 = field(fields[16], "last_ms", path, line_no)?;
    if first_abs_ms > last_abs_ms {
        return Err(RecordFileError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("first_ms {first_abs_ms} > last_ms {last_abs_ms}"),
        });
    }
    if packets == 0 || bytes < packets {
        return Err(RecordFileError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("implausible counters: packets={packets} bytes={bytes}"),
        });
    }
    Ok(NormalizedFlow {
        exporter_addr,
        engine_type,
        engine_id,
        src_addr,
        dst_addr,
        next_hop,
        src_port,
        dst_port,
        protocol,
        tos,
        tcp_flags,
        input_if,
        output_if,
        src_as: 0,
        dst_as: 0,
        packets,
        bytes,
        first_abs_ms,
        last_abs_ms,
    })
}
