//! `flowmon` command line: run the exporter simulator, the collector, the
//! offline pipeline simulation, and the analysis reports.
//!
//! Exit codes: 0 ok, 1 alerts raised, 2 input parse error, 3 network or
//! output I/O error, 4 unknown host/link/conversation.

use std::net::{Ipv4Addr, UdpSocket};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::Ordering;

use clap::{Parser, Subcommand, ValueEnum};

use flowmon::analysis::alert::{evaluate_alerts, parse_alert_config, render_alert_event, AlertKind};
use flowmon::analysis::render;
use flowmon::analysis::{ConversationKey, LinkId, TrafficAnalysis};
use flowmon::collector::file::{read_records, RecordWriter};
use flowmon::collector::udp::UdpCollector;
use flowmon::collector::{Collector, CollectorConfig, Counters, StreamId};
use flowmon::exporter::fault::{inject_faults, FaultProfile};
use flowmon::exporter::trace::read_trace;
use flowmon::exporter::{replay_trace, ExporterConfig};

const EXIT_ALERTS: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_NETWORK: u8 = 3;
const EXIT_UNKNOWN: u8 = 4;

#[derive(Parser)]
#[command(name = "flowmon", version, about = "NetFlow v5 congestion monitoring toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ExporterArgs {
    /// Source address stamped on simulated flows (and stream identity in
    /// socketless runs).
    #[arg(long, default_value = "127.0.0.1")]
    exporter_addr: Ipv4Addr,
    #[arg(long, default_value_t = 0)]
    engine_type: u8,
    #[arg(long, default_value_t = 0)]
    engine_id: u8,
    /// Expire a flow after this long without packets.
    #[arg(long, default_value_t = 15_000)]
    inactive_timeout_ms: u64,
    /// Export a flow once it reaches this age, even while active.
    #[arg(long, default_value_t = 1_800_000)]
    active_timeout_ms: u64,
    /// Exporter boot time, absolute ms; defaults to the first trace
    /// timestamp.
    #[arg(long)]
    boot_time_ms: Option<u64>,
    #[arg(long, default_value_t = 30)]
    max_records_per_packet: usize,
    #[arg(long, default_value_t = 1_000)]
    flush_interval_ms: u64,
    /// Export TCP flows immediately on FIN or RST.
    #[arg(long, default_value_t = false)]
    expire_on_fin_rst: bool,
}

impl ExporterArgs {
    fn config(&self, trace_start_ms: Option<u64>) -> ExporterConfig {
        ExporterConfig {
            exporter_addr: self.exporter_addr,
            engine_type: self.engine_type,
            engine_id: self.engine_id,
            inactive_timeout_ms: self.inactive_timeout_ms,
            active_timeout_ms: self.active_timeout_ms,
            boot_time_ms: self.boot_time_ms.or(trace_start_ms).unwrap_or(0),
            max_records_per_packet: self.max_records_per_packet,
            flush_interval_ms: self.flush_interval_ms,
            expire_on_fin_rst: self.expire_on_fin_rst,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ReportKind {
    /// Per-host totals with day profile.
    Hosts,
    /// One link's load and its conversations (requires --link).
    Link,
    /// The least loaded links (honors --top).
    Unloaded,
    /// The links carrying one conversation (requires --conv).
    Conversation,
    /// Peers and protocol mix of a host (requires --host).
    Peers,
    /// Input/output/total of a host (requires --host).
    Inout,
    /// Active ports of a host (requires --host).
    Ports,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a trace through the flow-cache simulator and send the
    /// datagrams to a collector over UDP.
    Export {
        /// Trace file of observed packets.
        #[arg(long)]
        trace: PathBuf,
        /// Collector endpoint, ip:port.
        #[arg(long)]
        target: String,
        /// Realtime pacing factor for emission gaps; 0 sends as fast as
        /// possible.
        #[arg(long, default_value_t = 0.0)]
        time_scale: f64,
        #[command(flatten)]
        exporter: ExporterArgs,
    },
    /// Receive NetFlow v5 datagrams and append the collected flows to a
    /// record file until interrupted.
    Collect {
        #[arg(long, default_value = "0.0.0.0:2055")]
        listen: String,
        /// Record file to append to.
        #[arg(long)]
        out: PathBuf,
        /// How long an out-of-order datagram may wait for its gap to fill.
        #[arg(long, default_value_t = 2_000)]
        reorder_window_ms: u64,
    },
    /// Run exporter, fault injector and collector in one process, no
    /// sockets: deterministic for a given seed.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        /// Record file to write.
        #[arg(long)]
        out: PathBuf,
        /// Datagram loss probability.
        #[arg(long, default_value_t = 0.0)]
        loss: f64,
        /// Datagram duplication probability.
        #[arg(long, default_value_t = 0.0)]
        dup: f64,
        /// Datagram delay probability.
        #[arg(long, default_value_t = 0.0)]
        reorder: f64,
        /// Delay applied to reordered and duplicated datagrams.
        #[arg(long, default_value_t = 500)]
        reorder_delay_ms: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2_000)]
        reorder_window_ms: u64,
        #[command(flatten)]
        exporter: ExporterArgs,
    },
    /// Render an analysis table from a record file.
    Analyze {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        report: ReportKind,
        #[arg(long)]
        host: Option<Ipv4Addr>,
        /// Link as from_ip,to_ip.
        #[arg(long)]
        link: Option<String>,
        /// Conversation as src_ip:src_port,dst_ip:dst_port.
        #[arg(long)]
        conv: Option<String>,
        /// Row limit for --report unloaded.
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Evaluate threshold alerts over a record file. Exits 1 if any alert
    /// was raised.
    Alert {
        #[arg(long)]
        records: PathBuf,
        /// Alert rule file.
        #[arg(long)]
        config: PathBuf,
    },
    /// Trace the bottlenecks behind a service: its conversations, their
    /// links, and the heaviest links broken down.
    TraceBottleneck {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        host: Ipv4Addr,
        #[arg(long)]
        port: u16,
        /// How many candidate links to break down.
        #[arg(long, default_value_t = 3)]
        top: usize,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl std::fmt::Display) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Export {
            trace,
            target,
            time_scale,
            exporter,
        } => cmd_export(&trace, &target, time_scale, &exporter),
        Command::Collect {
            listen,
            out,
            reorder_window_ms,
        } => cmd_collect(&listen, &out, reorder_window_ms),
        Command::Simulate {
            trace,
            out,
            loss,
            dup,
            reorder,
            reorder_delay_ms,
            seed,
            reorder_window_ms,
            exporter,
        } => cmd_simulate(
            &trace,
            &out,
            FaultProfile {
                loss_probability: loss,
                duplicate_probability: dup,
                reorder_probability: reorder,
                reorder_delay_ms,
                seed,
            },
            reorder_window_ms,
            &exporter,
        ),
        Command::Analyze {
            records,
            report,
            host,
            link,
            conv,
            top,
        } => cmd_analyze(&records, report, host, link.as_deref(), conv.as_deref(), top),
        Command::Alert { records, config } => cmd_alert(&records, &config),
        Command::TraceBottleneck {
            records,
            host,
            port,
            top,
        } => cmd_trace_bottleneck(&records, host, port, top),
    }
}

fn cmd_export(
    trace_path: &std::path::Path,
    target: &str,
    time_scale: f64,
    exporter: &ExporterArgs,
) -> Result<u8, Failure> {
    let trace = read_trace(trace_path).map_err(|e| fail(EXIT_PARSE, e))?;
    let config = exporter.config(trace.first().map(|p| p.time_ms));
    let emissions = replay_trace(&trace, config).map_err(|e| fail(EXIT_PARSE, e))?;
    let socket = UdpSocket::bind("0.0.0.0:0").map_err(|e| fail(EXIT_NETWORK, e))?;
    let mut records = 0u64;
    let mut prev_emit = emissions.first().map(|e| e.emit_ms).unwrap_or(0);
    for emission in &emissions {
        if time_scale > 0.0 {
            let gap_ms = (emission.emit_ms - prev_emit) as f64 * time_scale;
            if gap_ms >= 1.0 {
                std::thread::sleep(std::time::Duration::from_millis(gap_ms as u64));
            }
        }
        prev_emit = emission.emit_ms;
        let bytes = emission
            .packet
            .encode()
            .expect("replay emits valid packets");
        socket
            .send_to(&bytes, target)
            .map_err(|e| fail(EXIT_NETWORK, format!("send to {target}: {e}")))?;
        records += emission.packet.header.count as u64;
    }
    println!("records exported: {records}");
    println!("packets sent: {}", emissions.len());
    Ok(0)
}

fn print_counters(counters: &Counters) {
    println!("accepted: {}", counters.flows_accepted);
    println!("lost: {}", counters.flows_lost);
    println!("duplicates: {}", counters.duplicate_packets);
    println!("reordered: {}", counters.reordered_packets);
    println!("decode_errors: {}", counters.decode_errors);
}

static STOP: std::sync::atomic::AtomicBool = std::sync::atomic::AtomicBool::new(false);

extern "C" fn on_signal(_: libc::c_int) {
    STOP.store(true, Ordering::SeqCst);
}

fn cmd_collect(listen: &str, out: &std::path::Path, reorder_window_ms: u64) -> Result<u8, Failure> {
    let config = CollectorConfig {
        reorder_window_ms,
        ..CollectorConfig::default()
    };
    let server = UdpCollector::bind(listen, out, config).map_err(|e| fail(EXIT_NETWORK, e))?;
    let addr = server.local_addr().map_err(|e| fail(EXIT_NETWORK, e))?;
    eprintln!("listening on {addr}, writing {}", out.display());
    let handle = server.handle();
    unsafe {
        libc::signal(libc::SIGINT, on_signal as *const () as usize);
        libc::signal(libc::SIGTERM, on_signal as *const () as usize);
    }
    let running = server.spawn();
    while !STOP.load(Ordering::SeqCst) {
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    drop(handle);
    let counters = running.stop().map_err(|e| fail(EXIT_NETWORK, e))?;
    print_counters(&counters);
    Ok(0)
}

fn cmd_simulate(
    trace_path: &std::path::Path,
    out: &std::path::Path,
    profile: FaultProfile,
    reorder_window_ms: u64,
    exporter: &ExporterArgs,
) -> Result<u8, Failure> {
    let trace = read_trace(trace_path).map_err(|e| fail(EXIT_PARSE, e))?;
    let config = exporter.config(trace.first().map(|p| p.time_ms));
    let source = StreamId {
        exporter_addr: config.exporter_addr,
        engine_type: config.engine_type,
        engine_id: config.engine_id,
    };
    let emissions = replay_trace(&trace, config).map_err(|e| fail(EXIT_PARSE, e))?;
    let emitted_records: u64 = emissions.iter().map(|e| e.packet.header.count as u64).sum();
    let (deliveries, stats) = inject_faults(&emissions, &profile).map_err(|e| fail(EXIT_PARSE, e))?;

    let mut collector = Collector::new(CollectorConfig {
        reorder_window_ms,
        ..CollectorConfig::default()
    });
    let mut writer = RecordWriter::create(out).map_err(|e| fail(EXIT_NETWORK, e))?;
    let write = |flows: &[flowmon::collector::NormalizedFlow],
                 writer: &mut RecordWriter|
     -> Result<(), Failure> {
        for flow in flows {
            writer.append(flow).map_err(|e| fail(EXIT_NETWORK, e))?;
        }
        Ok(())
    };
    for delivery in &deliveries {
        let flows = collector.ingest_datagram(source, &delivery.bytes, delivery.arrival_ms);
        write(&flows, &mut writer)?;
    }
    let flows = collector.flush_streams();
    write(&flows, &mut writer)?;
    let written = writer.finish().map_err(|e| fail(EXIT_NETWORK, e))?;

    let counters = collector.counters();
    println!(
        "emitted: {} records in {} packets",
        emitted_records,
        emissions.len()
    );
    println!(
        "injected: dropped {} packets ({} records), duplicated {}, delayed {}",
        stats.dropped_packets, stats.dropped_records, stats.duplicated_packets, stats.delayed_packets
    );
    print_counters(&counters);
    println!("records written: {written}");
    Ok(0)
}

fn parse_link(arg: &str) -> Result<LinkId, Failure> {
    let parts: Vec<&str> = arg.split(',').collect();
    if parts.len() != 2 {
        return Err(fail(EXIT_PARSE, format!("bad link {arg:?}, expected from_ip,to_ip")));
    }
    let from_addr = parts[0]
        .trim()
        .parse()
        .map_err(|_| fail(EXIT_PARSE, format!("bad link address {:?}", parts[0])))?;
    let to_addr = parts[1]
        .trim()
        .parse()
        .map_err(|_| fail(EXIT_PARSE, format!("bad link address {:?}", parts[1])))?;
    Ok(LinkId { from_addr, to_addr })
}

fn parse_conversation(arg: &str) -> Result<ConversationKey, Failure> {
    let bad = || fail(EXIT_PARSE, format!("bad conversation {arg:?}, expected src_ip:src_port,dst_ip:dst_port"));
    let (src, dst) = arg.split_once(',').ok_or_else(bad)?;
    let (src_ip, src_port) = src.trim().split_once(':').ok_or_else(bad)?;
    let (dst_ip, dst_port) = dst.trim().split_once(':').ok_or_else(bad)?;
    Ok(ConversationKey {
        src_addr: src_ip.parse().map_err(|_| bad())?,
        src_port: src_port.parse().map_err(|_| bad())?,
        dst_addr: dst_ip.parse().map_err(|_| bad())?,
        dst_port: dst_port.parse().map_err(|_| bad())?,
    })
}

fn require_host(host: Option<Ipv4Addr>) -> Result<Ipv4Addr, Failure> {
    host.ok_or_else(|| fail(EXIT_PARSE, "this report requires --host"))
}

fn cmd_analyze(
    records_path: &std::path::Path,
    report: ReportKind,
    host: Option<Ipv4Addr>,
    link: Option<&str>,
    conv: Option<&str>,
    top: usize,
) -> Result<u8, Failure> {
    let records = read_records(records_path).map_err(|e| fail(EXIT_PARSE, e))?;
    let analysis = TrafficAnalysis::new(records);
    let unknown = |e| fail(EXIT_UNKNOWN, e);
    let text = match report {
        ReportKind::Hosts => render::render_host_load(&analysis.host_load()),
        ReportKind::Link => {
            let link = parse_link(link.ok_or_else(|| fail(EXIT_PARSE, "--report link requires --link"))?)?;
            render::render_link_load(&analysis.link_load(link).map_err(unknown)?)
        }
        ReportKind::Unloaded => render::render_unloaded_links(&analysis.unloaded_links(top)),
        ReportKind::Conversation => {
            let conv = parse_conversation(
                conv.ok_or_else(|| fail(EXIT_PARSE, "--report conversation requires --conv"))?,
            )?;
            render::render_conversation_paths(&analysis.conversation_paths(conv).map_err(unknown)?)
        }
        ReportKind::Peers => {
            render::render_host_peers(&analysis.host_peers(require_host(host)?).map_err(unknown)?)
        }
        ReportKind::Inout => {
            render::render_host_inout(&analysis.host_inout(require_host(host)?).map_err(unknown)?)
        }
        ReportKind::Ports => {
            render::render_host_ports(&analysis.host_ports(require_host(host)?).map_err(unknown)?)
        }
    };
    print!("{text}");
    Ok(0)
}

fn cmd_alert(records_path: &std::path::Path, config_path: &std::path::Path) -> Result<u8, Failure> {
    let records = read_records(records_path).map_err(|e| fail(EXIT_PARSE, e))?;
    let config_text = std::fs::read_to_string(config_path)
        .map_err(|e| fail(EXIT_PARSE, format!("{}: {e}", config_path.display())))?;
    let config = parse_alert_config(&config_text)
        .map_err(|e| fail(EXIT_PARSE, format!("{}:{e}", config_path.display())))?;
    let analysis = TrafficAnalysis::new(records);
    let events = evaluate_alerts(&analysis, &config.rules, config.window_sec);
    let mut any_raised = false;
    for event in &events {
        println!("{}", render_alert_event(event));
        any_raised |= event.kind == AlertKind::Raised;
    }
    Ok(if any_raised { EXIT_ALERTS } else { 0 })
}

fn cmd_trace_bottleneck(
    records_path: &std::path::Path,
    host: Ipv4Addr,
    port: u16,
    top: usize,
) -> Result<u8, Failure> {
    let records = read_records(records_path).map_err(|e| fail(EXIT_PARSE, e))?;
    let analysis = TrafficAnalysis::new(records);
    let report = analysis
        .bottlenecks(host, port, top)
        .map_err(|e| fail(EXIT_UNKNOWN, e))?;
    print!("{}", render::render_bottlenecks(&report));
    Ok(0)
}
