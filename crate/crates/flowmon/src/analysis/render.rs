//! Plain-text rendering of the analysis tables.
//!
//! Every function returns the full table as a newline-terminated string and
//! is deterministic: equal inputs render byte-identical output. Columns are
//! tab-separated; traffic is rendered via [`format_mb`], shares via floor
//! percentages, day profiles as `[p%-p%-p%-p%-p%-p%]`.

use super::{
    format_mb, BottleneckReport, ConversationPathsTable, HostInOutTable, HostLoadRow,
    HostPeersTable, HostPortsTable, LinkLoadTable, LinkTotalRow, PeriodHistogram,
};

pub fn render_histogram(hist: &PeriodHistogram) -> String {
    let p = hist.percentages();
    format!(
        "[{}%-{}%-{}%-{}%-{}%-{}%]",
        p[0], p[1], p[2], p[3], p[4], p[5]
    )
}

/// Host load table: one row per host, lightest first.
pub fn render_host_load(rows: &[HostLoadRow]) -> String {
    let mut out = String::from("IP\tTotal\n");
    for row in rows {
        out.push_str(&format!(
            "{}\t{} {}\n",
            row.host,
            format_mb(row.total_bytes),
            render_histogram(&row.histogram)
        ));
    }
    out
}

/// Link load table: the link's total and its conversations, heaviest first.
pub fn render_link_load(table: &LinkLoadTable) -> String {
    let mut out = format!("{}\tTotal: {}\n", table.link, format_mb(table.total_bytes));
    for row in &table.conversations {
        out.push_str(&format!(
            "{}\t{}% ({})\n",
            row.conversation,
            row.percent,
            format_mb(row.bytes)
        ));
    }
    out
}

/// Least loaded links, numbered from the lightest.
pub fn render_unloaded_links(rows: &[LinkTotalRow]) -> String {
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        out.push_str(&format!(
            "{}.\t{}\t{}\n",
            i + 1,
            row.link,
            format_mb(row.total_bytes)
        ));
    }
    out
}

/// Conversation path table: the conversation's total and each link it
/// crosses, with that link's overall load in parentheses.
pub fn render_conversation_paths(table: &ConversationPathsTable) -> String {
    let mut out = format!(
        "{}\tTotal: {}\n",
        table.conversation,
        format_mb(table.total_bytes)
    );
    for row in &table.links {
        out.push_str(&format!(
            "{}\t{}\t(of {})\n",
            row.link,
            format_mb(row.conversation_bytes),
            format_mb(row.link_total_bytes)
        ));
    }
    out
}

/// Peers of a host, heaviest first, with the host total and protocol mix.
pub fn render_host_peers(table: &HostPeersTable) -> String {
    let mut out = format!("{}\n", table.host);
    for row in &table.peers {
        out.push_str(&format!(
            "{}\t{}\t({}%)\n",
            row.peer,
            format_mb(row.bytes),
            row.percent
        ));
    }
    out.push_str(&format!(
        "Total traffic:\t{}\n",
        format_mb(table.total_bytes)
    ));
    out.push_str(&format!(
        "Protocols:\tTCP - {}%, UDP - {}%, Other - {}%\n",
        table.tcp_percent, table.udp_percent, table.other_percent
    ));
    out
}

/// Input/output/total traffic of a host with day profiles.
pub fn render_host_inout(table: &HostInOutTable) -> String {
    format!(
        "*** {} ***\nIN\t{}\t{}\nOUT\t{}\t{}\nIN&OUT\t{}\t{}\n",
        table.host,
        format_mb(table.in_bytes),
        render_histogram(&table.in_histogram),
        format_mb(table.out_bytes),
        render_histogram(&table.out_histogram),
        format_mb(table.inout_bytes),
        render_histogram(&table.inout_histogram)
    )
}

/// Active ports of a host, heaviest first, with the host total last.
pub fn render_host_ports(table: &HostPortsTable) -> String {
    let mut out = format!("{}\n", table.host);
    for row in &table.ports {
        out.push_str(&format!(
            ":{}\t{}\t({}%)\n",
            row.port,
            format_mb(row.bytes),
            row.percent
        ));
    }
    out.push_str(&format!("Total:\t{}\n", format_mb(table.total_bytes)));
    out
}

/// The bottleneck-trace report: conversations of the service, the links
/// carrying them ranked by load, and the heaviest links broken down.
pub fn render_bottlenecks(report: &BottleneckReport) -> String {
    let mut out = format!("Service {}:{}\n", report.host, report.port);
    if report.conversations.is_empty() {
        out.push_str(&format!("No conversations on port {}.\n", report.port));
        return out;
    }
    out.push_str(&format!("Conversations on port {}:\n", report.port));
    for (conversation, bytes) in &report.conversations {
        out.push_str(&format!("{}\t{}\n", conversation, format_mb(*bytes)));
    }
    out.push_str("Links carrying these conversations:\n");
    for (i, row) in report.ranked_links.iter().enumerate() {
        out.push_str(&format!(
            "{}.\t{}\t{}\n",
            i + 1,
            row.link,
            format_mb(row.total_bytes)
        ));
    }
    out.push_str("Bottleneck candidates:\n");
    for candidate in &report.candidates {
        out.push('\n');
        out.push_str(&render_link_load(candidate));
    }
    out
}
