//! Threshold alerting over tumbling windows.
//!
//! Each rule watches one resource, a host or a link. The record timeline is
//! cut into epoch-aligned tumbling windows; a flow's bytes are apportioned
//! to windows proportionally to overlap, exactly as the day-period
//! histograms do. A rule raises when its windowed rate exceeds the
//! threshold, and clears only once the rate falls below
//! `threshold * clear_ratio` (hysteresis), so oscillation around the
//! threshold does not flap.
//!
//! Host resources measure the deduplicated endpoint view; link resources
//! measure raw per-link records, consistent with the report tables.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use thiserror::Error;

use super::{apportion_windows, LinkId, TrafficAnalysis};

pub const DEFAULT_WINDOW_SEC: u64 = 60;
pub const DEFAULT_CLEAR_RATIO: f64 = 0.8;

/// The network element a rule watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Resource {
    Host(Ipv4Addr),
    Link(LinkId),
}

impl std::fmt::Display for Resource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Resource::Host(addr) => write!(f, "host {addr}"),
            Resource::Link(link) => write!(f, "link {}=>{}", link.from_addr, link.to_addr),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlertRule {
    pub resource: Resource,
    pub threshold_mbps: f64,
    pub clear_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlertKind {
    Raised,
    Cleared,
}

impl std::fmt::Display for AlertKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AlertKind::Raised => write!(f, "RAISED"),
            AlertKind::Cleared => write!(f, "CLEARED"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlertEvent {
    pub window_start_ms: u64,
    pub kind: AlertKind,
    pub resource: Resource,
    pub observed_mbps: f64,
    pub threshold_mbps: f64,
}

/// `<window start> <RAISED|CLEARED> <resource> <observed> > <threshold>`
pub fn render_alert_event(event: &AlertEvent) -> String {
    format!(
        "{} {} {} {:.3} > {:.3}",
        format_utc_ms(event.window_start_ms),
        event.kind,
        event.resource,
        event.observed_mbps,
        event.threshold_mbps
    )
}

/// Evaluates all rules over the record set. Windows are aligned to the Unix
/// epoch and every window between the earliest and latest record is
/// evaluated, including quiet ones, so rules can clear. Events are ordered
/// by window, then by rule order.
pub fn evaluate_alerts(
    analysis: &TrafficAnalysis,
    rules: &[AlertRule],
    window_sec: u64,
) -> Vec<AlertEvent> {
    assert!(window_sec > 0, "window_sec must be positive");
    let mut events = Vec::new();
    if rules.is_empty() || analysis.raw().is_empty() {
        return events;
    }
    let window_ms = window_sec * 1000;
    // every window any record can be attributed to; a flow ending exactly on
    // a boundary does not touch the next window
    let touched = |f: &crate::collector::NormalizedFlow| {
        let hi = if f.last_abs_ms > f.first_abs_ms {
            (f.last_abs_ms - 1) / window_ms
        } else {
            f.first_abs_ms / window_ms
        };
        (f.first_abs_ms / window_ms, hi)
    };
    let k_min = analysis.raw().iter().map(|f| touched(f).0).min().unwrap_or(0);
    let k_max = analysis.raw().iter().map(|f| touched(f).1).max().unwrap_or(0);
    let window_range = k_min..=k_max;

    // per rule: window index -> attributed bytes
    let mut series: Vec<BTreeMap<u64, u64>> = Vec::with_capacity(rules.len());
    for rule in rules {
        let mut windows: BTreeMap<u64, u64> = BTreeMap::new();
        match rule.resource {
            Resource::Host(host) => {
                for flow in analysis.deduped() {
                    if flow.src_addr == host || flow.dst_addr == host {
                        for (k, share) in
                            apportion_windows(flow.bytes, flow.first_abs_ms, flow.last_abs_ms, window_ms)
                        {
                            *windows.entry(k).or_insert(0) += share;
                        }
                    }
                }
            }
            Resource::Link(link) => {
                for flow in analysis.raw() {
                    if LinkId::of(flow) == Some(link) {
                        for (k, share) in
                            apportion_windows(flow.bytes, flow.first_abs_ms, flow.last_abs_ms, window_ms)
                        {
                            *windows.entry(k).or_insert(0) += share;
                        }
                    }
                }
            }
        }
        series.push(windows);
    }

    let mut raised = vec![false; rules.len()];
    for window in window_range {
        for (i, rule) in rules.iter().enumerate() {
            let bytes = series[i].get(&window).copied().unwrap_or(0);
            let observed_mbps = bytes as f64 * 8.0 / (window_sec as f64 * 1e6);
            if !raised[i] && observed_mbps > rule.threshold_mbps {
                raised[i] = true;
                events.push(AlertEvent {
                    window_start_ms: window * window_ms,
                    kind: AlertKind::Raised,
                    resource: rule.resource,
                    observed_mbps,
                    threshold_mbps: rule.threshold_mbps,
                });
            } else if raised[i] && observed_mbps < rule.threshold_mbps * rule.clear_ratio {
                raised[i] = false;
                events.push(AlertEvent {
                    window_start_ms: window * window_ms,
                    kind: AlertKind::Cleared,
                    resource: rule.resource,
                    observed_mbps,
                    threshold_mbps: rule.threshold_mbps,
                });
            }
        }
    }
    events
}

/// Alert configuration, one directive per line:
///
/// ```text
/// # comment
/// window_sec 60
/// clear_ratio 0.8
/// alert host 10.1.12.7 rate_mbps 50
/// alert link 10.1.12.8 10.1.12.6 rate_mbps 100
/// ```
///
/// `window_sec` is global (the last occurrence wins); `clear_ratio` applies
/// to the alert lines after it.
#[derive(Debug, Clone, PartialEq)]
pub struct AlertConfig {
    pub window_sec: u64,
    pub rules: Vec<AlertRule>,
}

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct AlertConfigError {
    pub line: usize,
    pub message: String,
}

pub fn parse_alert_config(text: &str) -> Result<AlertConfig, AlertConfigError> {
    let mut window_sec = DEFAULT_WINDOW_SEC;
    let mut clear_ratio = DEFAULT_CLEAR_RATIO;
    let mut rules = Vec::new();
    for (index, raw_line) in text.lines().enumerate() {
        let line_no = index + 1;
        let err = |message: String| AlertConfigError {
            line: line_no,
            message,
        };
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "window_sec" => {
                if tokens.len() != 2 {
                    return Err(err("window_sec takes one value".into()));
                }
                window_sec = tokens[1]
                    .parse()
                    .map_err(|_| err(format!("bad window_sec: {:?}", tokens[1])))?;
                if window_sec == 0 {
                    return Err(err("window_sec must be positive".into()));
                }
                if window_sec > 31_536_000 {
                    return Err(err(format!("window_sec {window_sec} exceeds one year")));
                }
            }
            "clear_ratio" => {
                if tokens.len() != 2 {
                    return Err(err("clear_ratio takes one value".into()));
                }
                clear_ratio = tokens[1]
                    .parse()
                    .map_err(|_| err(format!("bad clear_ratio: {:?}", tokens[1])))?;
                if !(clear_ratio > 0.0 && clear_ratio <= 1.0) {
                    return Err(err(format!("clear_ratio {clear_ratio} outside (0, 1]")));
                }
            }
            "alert" => {
                let resource = match tokens.get(1) {
                    Some(&"host") if tokens.len() == 5 => {
                        let addr: Ipv4Addr = tokens[2]
                            .parse()
                            .map_err(|_| err(format!("bad host address: {:?}", tokens[2])))?;
                        Resource::Host(addr)
                    }
                    Some(&"link") if tokens.len() == 6 => {
                        let from: Ipv4Addr = tokens[2]
                            .parse()
                            .map_err(|_| err(format!("bad link address: {:?}", tokens[2])))?;
                        let to: Ipv4Addr = tokens[3]
                            .parse()
                            .map_err(|_| err(format!("bad link address: {:?}", tokens[3])))?;
                        Resource::Link(LinkId {
                            from_addr: from,
                            to_addr: to,
                        })
                    }
                    _ => {
                        return Err(err(
                            "expected 'alert host <ip> rate_mbps <x>' or 'alert link <from> <to> rate_mbps <x>'"
                                .into(),
                        ))
                    }
                };
                let rate_pos = tokens.len() - 2;
                if tokens[rate_pos] != "rate_mbps" {
                    return Err(err(format!("expected rate_mbps, found {:?}", tokens[rate_pos])));
                }
                let threshold_mbps: f64 = tokens[rate_pos + 1]
                    .parse()
                    .map_err(|_| err(format!("bad rate: {:?}", tokens[rate_pos + 1])))?;
                if threshold_mbps <= 0.0 {
                    return Err(err("rate_mbps must be positive".into()));
                }
                rules.push(AlertRule {
                    resource,
                    threshold_mbps,
                    clear_ratio,
                });
            }
            other => return Err(err(format!("unknown directive {other:?}"))),
        }
    }
    Ok(AlertConfig { window_sec, rules })
}

/// Formats absolute Unix milliseconds as `YYYY-MM-DDTHH:MM:SSZ`.
pub fn format_utc_ms(ms: u64) -> String {
    let secs = ms / 1000;
    let days = (secs / 86_400) as i64;
    let rem = secs % 86_400;
    let (year, month, day) = civil_from_days(days);
    format!(
        "{:04}-{:02}-{:02}T{:02}:{:02}:{:02}Z",
        year,
        month,
        day,
        rem / 3600,
        rem % 3600 / 60,
        rem % 60
    )
}

// Days since 1970-01-01 to (year, month, day), proleptic Gregorian.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = (z - era * 146_097) as u64;
    let yoe = (doe - doe / 1_460 + doe / 36_524 - doe / 146_096) / 365;
    let year = yoe as i64 + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let month = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if month <= 2 { year + 1 } else { year }, month, day)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collector::NormalizedFlow;

    fn ip(last: u8) -> Ipv4Addr {
        Ipv4Addr::new(10, 1, 12, last)
    }

    fn link_flow(bytes: u64, first: u64, last: u64) -> NormalizedFlow {
        NormalizedFlow {
            exporter_addr: ip(8),
            engine_type: 0,
            engine_id: 0,
            src_addr: ip(1),
            dst_addr: ip(2),
            next_hop: ip(6),
            src_port: 1000,
            dst_port: 80,
            protocol: 6,
            tos: 0,
            tcp_flags: 0,
            input_if: 1,
            output_if: 2,
            src_as: 0,
            dst_as: 0,
            packets: bytes.div_ceil(1000).max(1),
            bytes,
            first_abs_ms: first,
            last_abs_ms: last,
        }
    }

    fn the_link() -> Resource {
        Resource::Link(LinkId {
            from_addr: ip(8),
            to_addr: ip(6),
        })
    }

    #[test]
    fn link_at_80_mbps_raises_a_50_mbps_rule() {
        // 600 MB within one 60 s window: 80 Mbit/s observed
        let analysis = TrafficAnalysis::new(vec![link_flow(600_000_000, 0, 60_000)]);
        let rules = [AlertRule {
            resource: the_link(),
            threshold_mbps: 50.0,
            clear_ratio: DEFAULT_CLEAR_RATIO,
        }];
        let events = evaluate_alerts(&analysis, &rules, 60);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, AlertKind::Raised);
        assert!((events[0].observed_mbps - 80.0).abs() < 1e-9);
        assert_eq!(events[0].window_start_ms, 0);
    }

    #[test]
    fn quiet_traffic_emits_nothing() {
        let analysis = TrafficAnalysis::new(vec![link_flow(1_000, 0, 60_000)]);
        let rules = [AlertRule {
            resource: the_link(),
            threshold_mbps: 50.0,
            clear_ratio: DEFAULT_CLEAR_RATIO,
        }];
        assert!(evaluate_alerts(&analysis, &rules, 60).is_empty());
    }

    #[test]
    fn square_wave_gives_one_pair_per_burst() {
        // bursts in windows 0, 2, 4; quiet in 1, 3, 5
        let mut records = Vec::new();
        for burst in 0..3u64 {
            let start = burst * 2 * 60_000;
            records.push(link_flow(600_000_000, start, start + 60_000));
            records.push(link_flow(1_000, start + 60_000, start + 120_000));
        }
        let analysis = TrafficAnalysis::new(records);
        let rules = [AlertRule {
            resource: the_link(),
            threshold_mbps: 50.0,
            clear_ratio: 0.8,
        }];
        let events = evaluate_alerts(&analysis, &rules, 60);
        assert_eq!(events.len(), 6);
        for pair in events.chunks(2) {
            assert_eq!(pair[0].kind, AlertKind::Raised);
            assert_eq!(pair[1].kind, AlertKind::Cleared);
        }
    }

    #[test]
    fn hysteresis_holds_between_clear_level_and_threshold() {
        // window 0: 80 Mbit/s raises; window 1: 45 Mbit/s stays raised
        // (above 0.8 * 50 = 40); window 2: 30 Mbit/s clears.
        let records = vec![
            link_flow(600_000_000, 0, 60_000),
            link_flow(337_500_000, 60_000, 120_000),
            link_flow(225_000_000, 120_000, 180_000),
        ];
        let analysis = TrafficAnalysis::new(records);
        let rules = [AlertRule {
            resource: the_link(),
            threshold_mbps: 50.0,
            clear_ratio: 0.8,
        }];
        let events = evaluate_alerts(&analysis, &rules, 60);
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].kind, AlertKind::Raised);
        assert_eq!(events[1].kind, AlertKind::Cleared);
        assert_eq!(events[1].window_start_ms, 120_000);
    }

    #[test]
    fn host_rules_use_the_deduplicated_view() {
        // the same conversation seen by two exporters must count once
        let mut a = link_flow(600_000_000, 0, 60_000);
        let mut b = a;
        b.exporter_addr = ip(9);
        a.next_hop = ip(6);
        b.next_hop = ip(7);
        let analysis = TrafficAnalysis::new(vec![a, b]);
        let rules = [AlertRule {
            resource: Resource::Host(ip(1)),
            threshold_mbps: 50.0,
            clear_ratio: 0.8,
        }];
        let events = evaluate_alerts(&analysis, &rules, 60);
        assert_eq!(events.len(), 1);
        assert!((events[0].observed_mbps - 80.0).abs() < 1e-9, "80, not 160");
    }

    #[test]
    fn events_alternate_per_rule() {
        let mut records = Vec::new();
        for burst in 0..4u64 {
            let start = burst * 2 * 60_000;
            records.push(link_flow(600_000_000, start, start + 60_000));
            records.push(link_flow(1_000, start + 60_000, start + 120_000));
        }
        let analysis = TrafficAnalysis::new(records);
        let rules = [AlertRule {
            resource: the_link(),
            threshold_mbps: 50.0,
            clear_ratio: 0.8,
        }];
        let events = evaluate_alerts(&analysis, &rules, 60);
        let mut expect_raise = true;
        for event in &events {
            assert_eq!(
                event.kind,
                if expect_raise {
                    AlertKind::Raised
                } else {
                    AlertKind::Cleared
                }
            );
            expect_raise = !expect_raise;
        }
    }

    #[test]
    fn config_parses_directives_and_comments() {
        let config = parse_alert_config(
            "# thresholds\n\
             window_sec 30\n\
             clear_ratio 0.5\n\
             alert host 10.1.12.7 rate_mbps 50\n\
             alert link 10.1.12.8 10.1.12.6 rate_mbps 100 # backbone\n",
        )
        .unwrap();
        assert_eq!(config.window_sec, 30);
        assert_eq!(config.rules.len(), 2);
        assert_eq!(config.rules[0].resource, Resource::Host(ip(7)));
        assert_eq!(config.rules[0].clear_ratio, 0.5);
        assert_eq!(config.rules[1].threshold_mbps, 100.0);
    }

    #[test]
    fn config_errors_carry_line_numbers() {
        let err = parse_alert_config("window_sec 60\nalert host nonsense rate_mbps 5\n")
            .unwrap_err();
        assert_eq!(err.line, 2);
        let err = parse_alert_config("nonsense 1\n").unwrap_err();
        assert_eq!(err.line, 1);
        let err = parse_alert_config("clear_ratio 1.5\n").unwrap_err();
        assert_eq!(err.line, 1);
        let err = parse_alert_config("window_sec 99999999999\n").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn utc_formatting_matches_known_instants() {
        assert_eq!(format_utc_ms(0), "1970-01-01T00:00:00Z");
        assert_eq!(format_utc_ms(1_700_000_000_000), "2023-11-14T22:13:20Z");
        assert_eq!(format_utc_ms(951_782_400_000), "2000-02-29T00:00:00Z");
        assert_eq!(format_utc_ms(86_399_999), "1970-01-01T23:59:59Z");
    }

    #[test]
    fn event_rendering_shape() {
        let event = AlertEvent {
            window_start_ms: 60_000,
            kind: AlertKind::Raised,
            resource: the_link(),
            observed_mbps: 80.0,
            threshold_mbps: 50.0,
        };
        assert_eq!(
            render_alert_event(&event),
            "1970-01-01T00:01:00Z RAISED link 10.1.12.8=>10.1.12.6 80.000 > 50.000"
        );
    }
}
