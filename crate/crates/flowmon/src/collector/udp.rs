//! Live UDP collection.
//!
//! Binds a socket, feeds every received datagram through the collector keyed
//! by (source address, engine fields), and appends released flows to a
//! record file. Runs until asked to stop, then force-drains reorder buffers
//! and flushes the sink.

use std::net::{Ipv4Addr, SocketAddr, UdpSocket};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use thiserror::Error;

use super::file::{RecordFileError, RecordWriter};
use super::{Collector, CollectorConfig, Counters, StreamId};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sink(#[from] RecordFileError),
    #[error("socket error: {0}")]
    Socket(#[from] std::io::Error),
}

struct Inner {
    collector: Collector,
    writer: RecordWriter,
}

struct Shared {
    inner: Mutex<Inner>,
    stop: AtomicBool,
}

/// Cloneable view of a running collector: live counters and a stop trigger.
#[derive(Clone)]
pub struct CollectorHandle {
    shared: Arc<Shared>,
}

impl CollectorHandle {
    pub fn counters(&self) -> Counters {
        self.shared.inner.lock().expect("collector poisoned").collector.counters()
    }

    pub fn records_written(&self) -> u64 {
        self.shared.inner.lock().expect("collector poisoned").writer.written()
    }

    pub fn request_stop(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
    }
}

/// A bound but not yet running UDP collector.
pub struct UdpCollector {
    socket: UdpSocket,
    shared: Arc<Shared>,
}

fn unix_now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl UdpCollector {
    pub fn bind(
        listen: &str,
        out: &Path,
        config: CollectorConfig,
    ) -> Result<UdpCollector, ServeError> {
        let socket = UdpSocket::bind(listen).map_err(|source| ServeError::BindFailure {
            addr: listen.to_string(),
            source,
        })?;
        socket.set_read_timeout(Some(Duration::from_millis(50)))?;
        let writer = RecordWriter::create(out)?;
        Ok(UdpCollector {
            socket,
            shared: Arc::new(Shared {
                inner: Mutex::new(Inner {
                    collector: Collector::new(config),
                    writer,
                }),
                stop: AtomicBool::new(false),
            }),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    pub fn handle(&self) -> CollectorHandle {
        CollectorHandle {
            shared: Arc::clone(&self.shared),
        }
    }

    /// Receive loop. Returns the final counters once a stop is requested,
    /// after draining reorder buffers into the sink and flushing it.
    pub fn run(self) -> Result<Counters, ServeError> {
        let mut buf = [0u8; 2048];
        while !self.shared.stop.load(Ordering::SeqCst) {
            match self.socket.recv_from(&mut buf) {
                Ok((len, peer)) => {
                    let exporter_addr = match peer {
                        SocketAddr::V4(a) => *a.ip(),
                        SocketAddr::V6(_) => Ipv4Addr::UNSPECIFIED,
                    };
                    let source = StreamId::from_datagram(exporter_addr, &buf[..len]);
                    let mut inner = self.shared.inner.lock().expect("collector poisoned");
                    let flows = inner
                        .collector
                        .ingest_datagram(source, &buf[..len], unix_now_ms());
                    for flow in &flows {
                        inner.writer.append(flow)?;
                    }
                    if !flows.is_empty() {
                        // keep the record file current for tailing readers
                        inner.writer.flush()?;
                    }
                }
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    continue;
                }
                Err(e) => return Err(ServeError::Socket(e)),
            }
        }
        let mut inner = self.shared.inner.lock().expect("collector poisoned");
        let flows = inner.collector.flush_streams();
        for flow in &flows {
            inner.writer.append(flow)?;
        }
        inner.writer.flush()?;
        Ok(inner.collector.counters())
    }

    /// Runs the receive loop on a background thread.
    pub fn spawn(self) -> RunningCollector {
        let handle = self.handle();
        let thread = std::thread::spawn(move || self.run());
        RunningCollector { handle, thread }
    }
}

/// A collector running on a background thread.
pub struct RunningCollector {
    handle: CollectorHandle,
    thread: JoinHandle<Result<Counters, ServeError>>,
}

impl RunningCollector {
    pub fn handle(&self) -> CollectorHandle {
        self.handle.clone()
    }

    /// Stops the loop and returns its final counters.
    pub fn stop(self) -> Result<Counters, ServeError> {
        self.handle.request_stop();
        self.thread.join().expect("collector thread panicked")
    }
}
