//! Traffic analysis over collected flow records.
//!
//! Produces the statistical tables used to find overloaded and idle network
//! elements: per-host load with a six-period day profile, per-link load with
//! the conversations responsible, the least loaded links, the links carrying
//! a conversation, peers and protocol mix of a host, input/output split, and
//! active ports. All byte accounting is exact integer arithmetic; rendered
//! percentages use floor division and megabytes are 10^6 bytes.
//!
//! Endpoint-centric tables (host load, conversation totals, peers, in/out,
//! ports) first collapse multi-exporter observations of the same flow to one
//! representative; link-centric tables use raw records, since a flow loads
//! every link it crosses.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::collector::NormalizedFlow;

pub mod alert;
pub mod render;

/// Megabyte as rendered in reports.
pub const MB: u64 = 1_000_000;
/// The day is split into six 4-hour periods, UTC.
pub const PERIOD_COUNT: usize = 6;
pub const PERIOD_MS: u64 = 4 * 3600 * 1000;
pub const DAY_MS: u64 = 24 * 3600 * 1000;
/// Observations of one flow by different exporters merge when their start
/// times lie within this tolerance.
pub const DEFAULT_MERGE_TOLERANCE_MS: u64 = 1_000;

/// A conversation: the four-tuple of endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConversationKey {
    pub src_addr: Ipv4Addr,
    pub src_port: u16,
    pub dst_addr: Ipv4Addr,
    pub dst_port: u16,
}

impl ConversationKey {
    pub fn of(flow: &NormalizedFlow) -> ConversationKey {
        ConversationKey {
            src_addr: flow.src_addr,
            src_port: flow.src_port,
            dst_addr: flow.dst_addr,
            dst_port: flow.dst_port,
        }
    }
}

impl std::fmt::Display for ConversationKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}:{} -> {}:{}",
            self.src_addr, self.src_port, self.dst_addr, self.dst_port
        )
    }
}

/// A directed link, inferred from records: the exporter that saw the flow
/// and the next hop it forwarded to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId {
    pub from_addr: Ipv4Addr,
    pub to_addr: Ipv4Addr,
}

impl LinkId {
    /// The link a record loads, if any; records without a next hop are
    /// linkless.
    pub fn of(flow: &NormalizedFlow) -> Option<LinkId> {
        if flow.next_hop == Ipv4Addr::UNSPECIFIED || flow.next_hop == flow.exporter_addr {
            return None;
        }
        Some(LinkId {
            from_addr: flow.exporter_addr,
            to_addr: flow.next_hop,
        })
    }
}

impl std::fmt::Display for LinkId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} => {}", self.from_addr, self.to_addr)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("unknown host {0}")]
    UnknownHost(Ipv4Addr),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("unknown conversation {0}")]
    UnknownConversation(ConversationKey),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("part {part} exceeds total {total}")]
pub struct PartExceedsTotal {
    pub part: u64,
    pub total: u64,
}

/// Floor percentage. Rendered percentage lists may therefore sum below 100.
/// A zero total yields zero.
pub fn percent(part: u64, total: u64) -> Result<u32, PartExceedsTotal> {
    if part > total {
        return Err(PartExceedsTotal { part, total });
    }
    if total == 0 {
        return Ok(0);
    }
    Ok((part as u128 * 100 / total as u128) as u32)
}

fn percent_of(part: u64, total: u64) -> u32 {
    percent(part, total).expect("accounting keeps part <= total")
}

/// Renders bytes as megabytes (10^6 bytes) with one decimal, half-up.
pub fn format_mb(bytes: u64) -> String {
    let tenths = (bytes / 100_000) + u64::from(bytes % 100_000 >= 50_000);
    format!("{}.{} MB", tenths / 10, tenths % 10)
}

/// Splits an amount over weights exactly: floor shares first, then the
/// remainder goes to the largest fractional parts (ties to the lower index),
/// so the shares always sum to the amount.
fn apportion_by_weight(amount: u64, weights: &[u64]) -> Vec<u64> {
    let total: u128 = weights.iter().map(|&w| w as u128).sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    let mut shares = Vec::with_capacity(weights.len());
    let mut fractions: Vec<(u128, usize)> = Vec::with_capacity(weights.len());
    let mut assigned: u64 = 0;
    for (i, &w) in weights.iter().enumerate() {
        let product = amount as u128 * w as u128;
        let share = (product / total) as u64;
        shares.push(share);
        assigned += share;
        fractions.push((product % total, i));
    }
    let mut leftover = amount - assigned;
    fractions.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &fractions {
        if leftover == 0 {
            break;
        }
        shares[i] += 1;
        leftover -= 1;
    }
    shares
}

fn segment_overlap(a_start: u64, a_end: u64, b_start: u64, b_end: u64) -> u64 {
    a_end.min(b_end).saturating_sub(a_start.max(b_start))
}

/// Distributes a flow's bytes over the six day periods, proportionally to
/// the time its interval spends in each period of the day (spanning days
/// wraps by time-of-day). Zero-duration flows land wholly in the period of
/// their start. The resulting buckets sum exactly to `bytes`.
pub fn apportion_day_periods(bytes: u64, first_ms: u64, last_ms: u64) -> [u64; PERIOD_COUNT] {
    let mut out = [0u64; PERIOD_COUNT];
    let duration = last_ms.saturating_sub(first_ms);
    if duration == 0 {
        out[((first_ms % DAY_MS) / PERIOD_MS) as usize] = bytes;
        return out;
    }
    let mut overlap = [0u64; PERIOD_COUNT];
    let full_days = duration / DAY_MS;
    for slot in overlap.iter_mut() {
        *slot = full_days * PERIOD_MS;
    }
    let rem = duration % DAY_MS;
    let start = first_ms % DAY_MS;
    let wrap = (start + rem).saturating_sub(DAY_MS);
    for (bucket, slot) in overlap.iter_mut().enumerate() {
        let b_start = bucket as u64 * PERIOD_MS;
        let b_end = b_start + PERIOD_MS;
        *slot += segment_overlap(start, (start + rem).min(DAY_MS), b_start, b_end);
        *slot += segment_overlap(0, wrap, b_start, b_end);
    }
    debug_assert_eq!(overlap.iter().sum::<u64>(), duration);
    let shares = apportion_by_weight(bytes, &overlap);
    out.copy_from_slice(&shares);
    out
}

/// Distributes a flow's bytes over tumbling windows of `window_ms`,
/// proportionally to overlap, exactly. Returns `(window index, bytes)` for
/// every touched window with a nonzero share potential.
pub fn apportion_windows(
    bytes: u64,
    first_ms: u64,
    last_ms: u64,
    window_ms: u64,
) -> Vec<(u64, u64)> {
    let duration = last_ms.saturating_sub(first_ms);
    if duration == 0 {
        return vec![(first_ms / window_ms, bytes)];
    }
    let k0 = first_ms / window_ms;
    let k1 = (last_ms - 1) / window_ms;
    let weights: Vec<u64> = (k0..=k1)
        .map(|k| segment_overlap(first_ms, last_ms, k * window_ms, (k + 1) * window_ms))
        .collect();
    let shares = apportion_by_weight(bytes, &weights);
    (k0..=k1).zip(shares).collect()
}

/// Byte distribution over the six 4-hour periods of the day.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeriodHistogram {
    pub buckets: [u64; PERIOD_COUNT],
}

impl PeriodHistogram {
    pub fn add_flow(&mut self, flow: &NormalizedFlow) {
        self.add(flow.bytes, flow.first_abs_ms, flow.last_abs_ms);
    }

    pub fn add(&mut self, bytes: u64, first_ms: u64, last_ms: u64) {
        let shares = apportion_day_periods(bytes, first_ms, last_ms);
        for (slot, share) in self.buckets.iter_mut().zip(shares) {
            *slot += share;
        }
    }

    pub fn merge(&mut self, other: &PeriodHistogram) {
        for (slot, value) in self.buckets.iter_mut().zip(other.buckets) {
            *slot += value;
        }
    }

    pub fn total(&self) -> u64 {
        self.buckets.iter().sum()
    }

    /// Floor percentages of this histogram's own total.
    pub fn percentages(&self) -> [u32; PERIOD_COUNT] {
        let total = self.total();
        let mut out = [0u32; PERIOD_COUNT];
        for (slot, &bytes) in out.iter_mut().zip(&self.buckets) {
            *slot = percent_of(bytes, total);
        }
        out
    }
}

pub fn period_histogram<'a>(flows: impl IntoIterator<Item = &'a NormalizedFlow>) -> PeriodHistogram {
    let mut hist = PeriodHistogram::default();
    for flow in flows {
        hist.add_flow(flow);
    }
    hist
}

/// Collapses multi-exporter observations of one flow. Records agreeing on
/// (conversation, protocol, tos) whose start times fall within the tolerance
/// of the earliest in their cluster become a single representative carrying
/// the maximum byte/packet counts of the cluster (observations of the same
/// flow should agree), the earliest start and the latest end.
pub fn dedup_conversation_view(
    records: &[NormalizedFlow],
    merge_tolerance_ms: u64,
) -> Vec<NormalizedFlow> {
    let mut groups: BTreeMap<(ConversationKey, u8, u8), Vec<&NormalizedFlow>> = BTreeMap::new();
    for flow in records {
        groups
            .entry((ConversationKey::of(flow), flow.protocol, flow.tos))
            .or_default()
            .push(flow);
    }
    let mut out = Vec::new();
    for (_, mut members) in groups {
        members.sort_by_key(|f| {
            (
                f.first_abs_ms,
                f.last_abs_ms,
                f.bytes,
                f.packets,
                f.exporter_addr,
                f.engine_type,
                f.engine_id,
                f.next_hop,
            )
        });
        let mut cluster: Vec<&NormalizedFlow> = Vec::new();
        for flow in members {
            if let Some(anchor) = cluster.first() {
                if flow.first_abs_ms - anchor.first_abs_ms > merge_tolerance_ms {
                    out.push(merge_cluster(&cluster));
                    cluster.clear();
                }
            }
            cluster.push(flow);
        }
        if !cluster.is_empty() {
            out.push(merge_cluster(&cluster));
        }
    }
    out
}

fn merge_cluster(cluster: &[&NormalizedFlow]) -> NormalizedFlow {
    let mut rep = *cluster[0];
    rep.bytes = cluster.iter().map(|f| f.bytes).max().unwrap_or(0);
    rep.packets = cluster.iter().map(|f| f.packets).max().unwrap_or(0);
    rep.first_abs_ms = cluster.iter().map(|f| f.first_abs_ms).min().unwrap_or(0);
    rep.last_abs_ms = cluster.iter().map(|f| f.last_abs_ms).max().unwrap_or(0);
    rep
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostLoadRow {
    pub host: Ipv4Addr,
    pub total_bytes: u64,
    pub histogram: PeriodHistogram,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkConversationRow {
    pub conversation: ConversationKey,
    pub bytes: u64,
    pub percent: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkLoadTable {
    pub link: LinkId,
    pub total_bytes: u64,
    pub conversations: Vec<LinkConversationRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkTotalRow {
    pub link: LinkId,
    pub total_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConversationLinkRow {
    pub link: LinkId,
    pub conversation_bytes: u64,
    pub link_total_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationPathsTable {
    pub conversation: ConversationKey,
    /// Conversation total from the deduplicated view: observed once, not
    /// once per exporter.
    pub total_bytes: u64,
    pub links: Vec<ConversationLinkRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeerRow {
    pub peer: Ipv4Addr,
    pub bytes: u64,
    pub percent: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostPeersTable {
    pub host: Ipv4Addr,
    pub peers: Vec<PeerRow>,
    pub total_bytes: u64,
    pub tcp_percent: u32,
    pub udp_percent: u32,
    pub other_percent: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostInOutTable {
    pub host: Ipv4Addr,
    pub in_bytes: u64,
    pub in_histogram: PeriodHistogram,
    pub out_bytes: u64,
    pub out_histogram: PeriodHistogram,
    pub inout_bytes: u64,
    pub inout_histogram: PeriodHistogram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortRow {
    pub port: u16,
    pub bytes: u64,
    pub percent: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostPortsTable {
    pub host: Ipv4Addr,
    pub ports: Vec<PortRow>,
    pub total_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BottleneckReport {
    pub host: Ipv4Addr,
    pub port: u16,
    /// Conversations of the host on the port, heaviest first, with their
    /// deduplicated totals.
    pub conversations: Vec<(ConversationKey, u64)>,
    /// Every link carrying one of those conversations, ranked by the link's
    /// total load, heaviest first.
    pub ranked_links: Vec<LinkTotalRow>,
    /// Full load breakdown of the heaviest links.
    pub candidates: Vec<LinkLoadTable>,
}

/// An immutable record set with its deduplicated endpoint view, answering
/// all report queries. Results are deterministic: identical record files
/// yield identical tables.
#[derive(Debug, Clone)]
pub struct TrafficAnalysis {
    raw: Vec<NormalizedFlow>,
    dedup: Vec<NormalizedFlow>,
}

impl TrafficAnalysis {
    pub fn new(records: Vec<NormalizedFlow>) -> TrafficAnalysis {
        Self::with_tolerance(records, DEFAULT_MERGE_TOLERANCE_MS)
    }

    pub fn with_tolerance(records: Vec<NormalizedFlow>, merge_tolerance_ms: u64) -> TrafficAnalysis {
        let dedup = dedup_conversation_view(&records, merge_tolerance_ms);
        TrafficAnalysis {
            raw: records,
            dedup,
        }
    }

    pub fn raw(&self) -> &[NormalizedFlow] {
        &self.raw
    }

    pub fn deduped(&self) -> &[NormalizedFlow] {
        &self.dedup
    }

    fn host_known(&self, host: Ipv4Addr) -> bool {
        self.dedup
            .iter()
            .any(|f| f.src_addr == host || f.dst_addr == host)
    }

    /// Total bytes per link over raw records.
    pub fn link_totals(&self) -> BTreeMap<LinkId, u64> {
        let mut totals = BTreeMap::new();
        for flow in &self.raw {
            if let Some(link) = LinkId::of(flow) {
                *totals.entry(link).or_insert(0) += flow.bytes;
            }
        }
        totals
    }

    /// Per-host total traffic (in plus out) with its day profile, lightest
    /// host first.
    pub fn host_load(&self) -> Vec<HostLoadRow> {
        let mut hosts: BTreeMap<Ipv4Addr, (u64, PeriodHistogram)> = BTreeMap::new();
        for flow in &self.dedup {
            for host in [flow.src_addr, flow.dst_addr] {
                let slot = hosts.entry(host).or_default();
                slot.0 += flow.bytes;
                slot.1.add_flow(flow);
            }
        }
        let mut rows: Vec<HostLoadRow> = hosts
            .into_iter()
            .map(|(host, (total_bytes, histogram))| HostLoadRow {
                host,
                total_bytes,
                histogram,
            })
            .collect();
        rows.sort_by_key(|r| (r.total_bytes, r.host));
        rows
    }

    /// Load of one link and the conversations using it, heaviest first.
    pub fn link_load(&self, link: LinkId) -> Result<LinkLoadTable, AnalysisError> {
        let matching: Vec<&NormalizedFlow> = self
            .raw
            .iter()
            .filter(|f| LinkId::of(f) == Some(link))
            .collect();
        if matching.is_empty() {
            return Err(AnalysisError::UnknownLink(link));
        }
        let total_bytes: u64 = matching.iter().map(|f| f.bytes).sum();
        let mut by_conv: BTreeMap<ConversationKey, u64> = BTreeMap::new();
        for flow in &matching {
            *by_conv.entry(ConversationKey::of(flow)).or_insert(0) += flow.bytes;
        }
        let mut conversations: Vec<LinkConversationRow> = by_conv
            .into_iter()
            .map(|(conversation, bytes)| LinkConversationRow {
                conversation,
                bytes,
                percent: percent_of(bytes, total_bytes),
            })
            .collect();
        conversations.sort_by(|a, b| {
            b.bytes
                .cmp(&a.bytes)
                .then(a.conversation.cmp(&b.conversation))
        });
        Ok(LinkLoadTable {
            link,
            total_bytes,
            conversations,
        })
    }

    /// The `n` least loaded links, lightest first.
    pub fn unloaded_links(&self, n: usize) -> Vec<LinkTotalRow> {
        let mut rows: Vec<LinkTotalRow> = self
            .link_totals()
            .into_iter()
            .map(|(link, total_bytes)| LinkTotalRow { link, total_bytes })
            .collect();
        rows.sort_by_key(|r| (r.total_bytes, r.link));
        rows.truncate(n);
        rows
    }

    /// The links a conversation crosses, with the conversation's bytes on
    /// each and the link's total load.
    pub fn conversation_paths(
        &self,
        conversation: ConversationKey,
    ) -> Result<ConversationPathsTable, AnalysisError> {
        let matching: Vec<&NormalizedFlow> = self
            .raw
            .iter()
            .filter(|f| ConversationKey::of(f) == conversation)
            .collect();
        if matching.is_empty() {
            return Err(AnalysisError::UnknownConversation(conversation));
        }
        let link_totals = self.link_totals();
        let mut on_link: BTreeMap<LinkId, u64> = BTreeMap::new();
        for flow in &matching {
            if let Some(link) = LinkId::of(flow) {
                *on_link.entry(link).or_insert(0) += flow.bytes;
            }
        }
        let links = on_link
            .into_iter()
            .map(|(link, conversation_bytes)| ConversationLinkRow {
                link,
                conversation_bytes,
                link_total_bytes: link_totals.get(&link).copied().unwrap_or(0),
            })
            .collect();
        let total_bytes = self
            .dedup
            .iter()
            .filter(|f| ConversationKey::of(f) == conversation)
            .map(|f| f.bytes)
            .sum();
        Ok(ConversationPathsTable {
            conversation,
            total_bytes,
            links,
        })
    }

    /// Who a host talks to and how much, heaviest peer first, plus the
    /// host's protocol mix.
    pub fn host_peers(&self, host: Ipv4Addr) -> Result<HostPeersTable, AnalysisError> {
        let flows: Vec<&NormalizedFlow> = self
            .dedup
            .iter()
            .filter(|f| f.src_addr == host || f.dst_addr == host)
            .collect();
        if flows.is_empty() {
            return Err(AnalysisError::UnknownHost(host));
        }
        let total_bytes: u64 = flows.iter().map(|f| f.bytes).sum();
        let mut by_peer: BTreeMap<Ipv4Addr, u64> = BTreeMap::new();
        let (mut tcp, mut udp, mut other) = (0u64, 0u64, 0u64);
        for flow in &flows {
            let peer = if flow.src_addr == host {
                flow.dst_addr
            } else {
                flow.src_addr
            };
            *by_peer.entry(peer).or_insert(0) += flow.bytes;
            match flow.protocol {
                6 => tcp += flow.bytes,
                17 => udp += flow.bytes,
                _ => other += flow.bytes,
            }
        }
        let mut peers: Vec<PeerRow> = by_peer
            .into_iter()
            .map(|(peer, bytes)| PeerRow {
                peer,
                bytes,
                percent: percent_of(bytes, total_bytes),
            })
            .collect();
        peers.sort_by(|a, b| b.bytes.cmp(&a.bytes).then(a.peer.cmp(&b.peer)));
        Ok(HostPeersTable {
            host,
            peers,
            total_bytes,
            tcp_percent: percent_of(tcp, total_bytes),
            udp_percent: percent_of(udp, total_bytes),
            other_percent: percent_of(other, total_bytes),
        })
    }

    /// Input, output and combined traffic of a host with day profiles.
    pub fn host_inout(&self, host: Ipv4Addr) -> Result<HostInOutTable, AnalysisError> {
        if !self.host_known(host) {
            return Err(AnalysisError::UnknownHost(host));
        }
        let mut in_bytes = 0u64;
        let mut out_bytes = 0u64;
        let mut in_histogram = PeriodHistogram::default();
        let mut out_histogram = PeriodHistogram::default();
        for flow in &self.dedup {
            if flow.dst_addr == host {
                in_bytes += flow.bytes;
                in_histogram.add_flow(flow);
            }
            if flow.src_addr == host {
                out_bytes += flow.bytes;
                out_histogram.add_flow(flow);
            }
        }
        let mut inout_histogram = in_histogram;
        inout_histogram.merge(&out_histogram);
        Ok(HostInOutTable {
            host,
            in_bytes,
            in_histogram,
            out_bytes,
            out_histogram,
            inout_bytes: in_bytes + out_bytes,
            inout_histogram,
        })
    }

    /// Traffic per local port of a host, heaviest first.
    pub fn host_ports(&self, host: Ipv4Addr) -> Result<HostPortsTable, AnalysisError> {
        let flows: Vec<&NormalizedFlow> = self
            .dedup
            .iter()
            .filter(|f| f.src_addr == host || f.dst_addr == host)
            .collect();
        if flows.is_empty() {
            return Err(AnalysisError::UnknownHost(host));
        }
        let total_bytes: u64 = flows.iter().map(|f| f.bytes).sum();
        let mut by_port: BTreeMap<u16, u64> = BTreeMap::new();
        for flow in &flows {
            let port = if flow.src_addr == host {
                flow.src_port
            } else {
                flow.dst_port
            };
            *by_port.entry(port).or_insert(0) += flow.bytes;
        }
        let mut ports: Vec<PortRow> = by_port
            .into_iter()
            .map(|(port, bytes)| PortRow {
                port,
                bytes,
                percent: percent_of(bytes, total_bytes),
            })
            .collect();
        ports.sort_by(|a, b| b.bytes.cmp(&a.bytes).then(a.port.cmp(&b.port)));
        Ok(HostPortsTable {
            host,
            ports,
            total_bytes,
        })
    }

    /// The service bottleneck query: conversations of `host` on `port`, the
    /// links they cross, and the heaviest of those links broken down.
    pub fn bottlenecks(
        &self,
        host: Ipv4Addr,
        port: u16,
        top_k: usize,
    ) -> Result<BottleneckReport, AnalysisError> {
        if !self.host_known(host) {
            return Err(AnalysisError::UnknownHost(host));
        }
        let on_port = |f: &NormalizedFlow| {
            (f.src_addr == host && f.src_port == port) || (f.dst_addr == host && f.dst_port == port)
        };
        let mut conv_totals: BTreeMap<ConversationKey, u64> = BTreeMap::new();
        for flow in self.dedup.iter().filter(|f| on_port(f)) {
            *conv_totals.entry(ConversationKey::of(flow)).or_insert(0) += flow.bytes;
        }
        let mut conversations: Vec<(ConversationKey, u64)> = conv_totals.into_iter().collect();
        conversations.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

        let link_totals = self.link_totals();
        let mut links: BTreeMap<LinkId, u64> = BTreeMap::new();
        for flow in self.raw.iter().filter(|f| on_port(f)) {
            if let Some(link) = LinkId::of(flow) {
                links
                    .entry(link)
                    .or_insert_with(|| link_totals.get(&link).copied().unwrap_or(0));
            }
        }
        let mut ranked_links: Vec<LinkTotalRow> = links
            .into_iter()
            .map(|(link, total_bytes)| LinkTotalRow { link, total_bytes })
            .collect();
        ranked_links.sort_by(|a, b| b.total_bytes.cmp(&a.total_bytes).then(a.link.cmp(&b.link)));

        let candidates = ranked_links
            .iter()
            .take(top_k)
            .map(|row| {
                self.link_load(row.link)
                    .expect("ranked links come from records")
            })
            .collect();
        Ok(BottleneckReport {
            host,
            port,
            conversations,
            ranked_links,
            candidates,
        })
    }
}
