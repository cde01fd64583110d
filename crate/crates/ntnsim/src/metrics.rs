//! Event-sourced measurement: per-node counters, per-UE waiting times,
//! fixed-width time buckets, seed aggregation, and CSV/JSON exports.
//!
//! The ledger is owned by one single-threaded run. Aggregation across runs
//! is a read-only merge keyed by `(protocol, ue_count, seed)`, and every
//! export writes rows in that key order so identical invocations produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::des::{MessageClass, SimTime};
use crate::ids::UeId;

pub const CLASS_COUNT: usize = 9;

fn class_index(class: MessageClass) -> usize {
    match class {
        MessageClass::UeRequest => 0,
        MessageClass::UeRetransmission => 1,
        MessageClass::ShareBroadcast => 2,
        MessageClass::GaRequest => 3,
        MessageClass::InterSatellite => 4,
        MessageClass::CoreResponse => 5,
        MessageClass::AttachRequest => 6,
        MessageClass::ConfigDelivery => 7,
        MessageClass::NotificationBroadcast => 8,
    }
}

pub const CLASS_LABELS: [&str; CLASS_COUNT] = [
    "ue-request",
    "ue-retransmission",
    "share-broadcast",
    "ga-request",
    "inter-satellite",
    "core-response",
    "attach-request",
    "config-delivery",
    "notification-broadcast",
];

/// Received/dropped/serviced counters for one node.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct NodeCounters {
    pub received: u64,
    pub dropped: u64,
    pub serviced: u64,
    pub received_by_class: [u64; CLASS_COUNT],
    pub dropped_by_class: [u64; CLASS_COUNT],
}

/// One fixed-width time bucket of node activity.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct Bucket {
    pub received: u64,
    pub dropped: u64,
}

/// Raw event-log line kinds (optional export for replay-based recomputation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogOutcome {
    Received,
    Dropped,
    Serviced,
    Triggered,
    RequestSent,
    Configured,
    Failed,
}

impl LogOutcome {
    fn label(self) -> &'static str {
        match self {
            LogOutcome::Received => "received",
            LogOutcome::Dropped => "dropped",
            LogOutcome::Serviced => "serviced",
            LogOutcome::Triggered => "triggered",
            LogOutcome::RequestSent => "request-sent",
            LogOutcome::Configured => "configured",
            LogOutcome::Failed => "failed",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "received" => LogOutcome::Received,
            "dropped" => LogOutcome::Dropped,
            "serviced" => LogOutcome::Serviced,
            "triggered" => LogOutcome::Triggered,
            "request-sent" => LogOutcome::RequestSent,
            "configured" => LogOutcome::Configured,
            "failed" => LogOutcome::Failed,
            _ => return None,
        })
    }
}

/// Counters, waiting-time records, and time buckets for one run.
#[derive(Debug, Clone)]
pub struct MetricsLedger {
    pub protocol: String,
    pub ue_count: u32,
    pub seed: u64,
    /// Satellites first, core last.
    pub nodes: Vec<NodeCounters>,
    pub satellite_count: usize,
    pub bucket_ms: u64,
    /// `buckets[sat][i]` covers `[i*bucket_ms, (i+1)*bucket_ms)`.
    pub buckets: Vec<Vec<Bucket>>,
    pub triggered: u64,
    pub configured: u64,
    pub failed: u64,
    wt_success_sum_ms: f64,
    wt_success_count: u64,
    wt_failed_sum_ms: f64,
    wt_failed_count: u64,
    pub verification_failures: u64,
    pub late_configs: u64,
    event_log: Option<String>,
}

impl MetricsLedger {
    pub fn new(
        protocol: &str,
        ue_count: u32,
        seed: u64,
        satellite_count: usize,
        bucket_ms: u64,
        t_end: SimTime,
        with_event_log: bool,
    ) -> Self {
        let bucket_count = (t_end.as_ms_floor() / bucket_ms + 1) as usize;
        Self {
            protocol: protocol.to_string(),
            ue_count,
            seed,
            nodes: vec![NodeCounters::default(); satellite_count + 1],
            satellite_count,
            bucket_ms,
            buckets: vec![vec![Bucket::default(); bucket_count]; satellite_count],
            triggered: 0,
            configured: 0,
            failed: 0,
            wt_success_sum_ms: 0.0,
            wt_success_count: 0,
            wt_failed_sum_ms: 0.0,
            wt_failed_count: 0,
            verification_failures: 0,
            late_configs: 0,
            event_log: with_event_log.then(String::new),
        }
    }

    fn log(&mut self, t: SimTime, node: &str, kind: &str, class: &str, outcome: LogOutcome) {
        if let Some(log) = &mut self.event_log {
            let _ = writeln!(log, "{:.3},{},{},{},{}", t.as_ms_f64(), node, kind, class, outcome.label());
        }
    }

    fn bucket_mut(&mut self, sat: usize, t: SimTime) -> Option<&mut Bucket> {
        let idx = (t.as_ms_floor() / self.bucket_ms) as usize;
        self.buckets.get_mut(sat).and_then(|b| b.get_mut(idx))
    }

    pub fn on_received(&mut self, node: usize, sat: Option<usize>, class: MessageClass, t: SimTime) {
        self.nodes[node].received += 1;
        self.nodes[node].received_by_class[class_index(class)] += 1;
        if let Some(s) = sat {
            if let Some(b) = self.bucket_mut(s, t) {
                b.received += 1;
            }
        }
        if self.event_log.is_some() {
            let node_label = node_label(node, self.satellite_count);
            self.log(t, &node_label, "message-arrival", class.label(), LogOutcome::Received);
        }
    }

    pub fn on_dropped(&mut self, node: usize, sat: Option<usize>, class: MessageClass, t: SimTime) {
        self.nodes[node].dropped += 1;
        self.nodes[node].dropped_by_class[class_index(class)] += 1;
        if let Some(s) = sat {
            if let Some(b) = self.bucket_mut(s, t) {
                b.dropped += 1;
            }
        }
        if self.event_log.is_some() {
            let node_label = node_label(node, self.satellite_count);
            self.log(t, &node_label, "message-arrival", class.label(), LogOutcome::Dropped);
        }
    }

    pub fn on_serviced(&mut self, node: usize, class: MessageClass, t: SimTime) {
        self.nodes[node].serviced += 1;
        if self.event_log.is_some() {
            let node_label = node_label(node, self.satellite_count);
            self.log(t, &node_label, "processor-free", class.label(), LogOutcome::Serviced);
        }
    }

    pub fn ue_triggered(&mut self, ue: UeId, t: SimTime) {
        self.triggered += 1;
        if self.event_log.is_some() {
            self.log(t, &ue.to_string(), "trigger-check", "-", LogOutcome::Triggered);
        }
    }

    pub fn ue_request_sent(&mut self, ue: UeId, t: SimTime) {
        if self.event_log.is_some() {
            self.log(t, &ue.to_string(), "trigger-check", "-", LogOutcome::RequestSent);
        }
    }

    /// A UE received its configuration. The waiting-time sample is recorded
    /// only when the UE had sent a request (group members can be configured
    /// before their own trigger fires).
    pub fn ue_configured(&mut self, ue: UeId, t: SimTime, request_sent: Option<SimTime>) {
        self.configured += 1;
        if let Some(sent) = request_sent {
            self.wt_success_sum_ms += (t - sent).as_ms_f64();
            self.wt_success_count += 1;
        }
        if self.event_log.is_some() {
            self.log(t, &ue.to_string(), "message-arrival", "config-delivery", LogOutcome::Configured);
        }
    }

    pub fn ue_failed(&mut self, ue: UeId, t: SimTime, request_sent: Option<SimTime>) {
        self.failed += 1;
        if let Some(sent) = request_sent {
            self.wt_failed_sum_ms += (t - sent).as_ms_f64();
            self.wt_failed_count += 1;
        }
        if self.event_log.is_some() {
            self.log(t, &ue.to_string(), "timer-expiry", "-", LogOutcome::Failed);
        }
    }

    pub fn event_log(&self) -> Option<&str> {
        self.event_log.as_deref()
    }

    /// Fraction of triggered UEs that received their configuration, in
    /// percent. With no demand the rate is vacuously 100 and flagged.
    pub fn success_rate(&self) -> f64 {
        if self.triggered == 0 {
            100.0
        } else {
            100.0 * self.configured as f64 / self.triggered as f64
        }
    }

    pub fn drop_rate(&self, node: usize) -> f64 {
        let c = &self.nodes[node];
        if c.received == 0 {
            0.0
        } else {
            100.0 * c.dropped as f64 / c.received as f64
        }
    }

    pub fn wt_success_mean_ms(&self) -> Option<f64> {
        (self.wt_success_count > 0).then(|| self.wt_success_sum_ms / self.wt_success_count as f64)
    }

    pub fn wt_failed_mean_ms(&self) -> Option<f64> {
        (self.wt_failed_count > 0).then(|| self.wt_failed_sum_ms / self.wt_failed_count as f64)
    }

    /// Handover and retransmission demand received at the given satellite:
    /// ue-request, ue-retransmission, and ga-request arrivals.
    pub fn ue_messages(&self, node: usize) -> u64 {
        let c = &self.nodes[node];
        c.received_by_class[class_index(MessageClass::UeRequest)]
            + c.received_by_class[class_index(MessageClass::UeRetransmission)]
            + c.received_by_class[class_index(MessageClass::GaRequest)]
    }

    /// Fixed-width time series for one satellite.
    pub fn time_series(&self, sat: usize) -> Vec<(u64, u64, u64)> {
        self.buckets[sat]
            .iter()
            .enumerate()
            .map(|(i, b)| (i as u64 * self.bucket_ms, b.received, b.dropped))
            .collect()
    }

    /// Table-row report, measured at the reporting satellite (index 0).
    pub fn report(&self) -> RunReport {
        let sat = 0usize;
        RunReport {
            protocol: self.protocol.clone(),
            ue_count: self.ue_count,
            seed: self.seed,
            triggered: self.triggered,
            configured: self.configured,
            failed: self.failed,
            no_demand: self.triggered == 0,
            success_rate_pct: self.success_rate(),
            total_messages: self.nodes[sat].received,
            ue_messages: self.ue_messages(sat),
            drop_rate_pct: self.drop_rate(sat),
            wt_success_mean_ms: self.wt_success_mean_ms(),
            wt_failed_mean_ms: self.wt_failed_mean_ms(),
            verification_failures: self.verification_failures,
            late_configs: self.late_configs,
            nodes: self.nodes.clone(),
        }
    }
}

fn node_label(node: usize, satellite_count: usize) -> String {
    if node < satellite_count {
        format!("sat{}", node + 1)
    } else {
        "core".to_string()
    }
}

/// Rebuild a ledger from a persisted event log. Metric aggregation is a
/// pure fold over events, so this must agree with live collection.
pub fn replay_event_log(
    log: &str,
    protocol: &str,
    ue_count: u32,
    seed: u64,
    satellite_count: usize,
    bucket_ms: u64,
    t_end: SimTime,
) -> Result<MetricsLedger, MetricsError> {
    let mut ledger =
        MetricsLedger::new(protocol, ue_count, seed, satellite_count, bucket_ms, t_end, false);
    let mut request_times: BTreeMap<String, SimTime> = BTreeMap::new();
    for (lineno, line) in log.lines().enumerate() {
        let mut parts = line.split(',');
        let (Some(t), Some(node), Some(_kind), Some(class), Some(outcome)) =
            (parts.next(), parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(MetricsError::BadLogLine(lineno + 1));
        };
        let t_ms: f64 = t.parse().map_err(|_| MetricsError::BadLogLine(lineno + 1))?;
        let t = SimTime::from_ms_f64(t_ms);
        let outcome = LogOutcome::parse(outcome).ok_or(MetricsError::BadLogLine(lineno + 1))?;
        let node_idx = if node == "core" {
            Some(satellite_count)
        } else {
            node.strip_prefix("sat").and_then(|s| s.parse::<usize>().ok()).map(|i| i - 1)
        };
        let class_enum = CLASS_LABELS
            .iter()
            .position(|&l| l == class)
            .map(|i| match i {
                0 => MessageClass::UeRequest,
                1 => MessageClass::UeRetransmission,
                2 => MessageClass::ShareBroadcast,
                3 => MessageClass::GaRequest,
                4 => MessageClass::InterSatellite,
                5 => MessageClass::CoreResponse,
                6 => MessageClass::AttachRequest,
                7 => MessageClass::ConfigDelivery,
                _ => MessageClass::NotificationBroadcast,
            });
        match outcome {
            LogOutcome::Received => {
                let n = node_idx.ok_or(MetricsError::BadLogLine(lineno + 1))?;
                let sat = (n < satellite_count).then_some(n);
                ledger.on_received(n, sat, class_enum.ok_or(MetricsError::BadLogLine(lineno + 1))?, t);
            }
            LogOutcome::Dropped => {
                let n = node_idx.ok_or(MetricsError::BadLogLine(lineno + 1))?;
                let sat = (n < satellite_count).then_some(n);
                ledger.on_dropped(n, sat, class_enum.ok_or(MetricsError::BadLogLine(lineno + 1))?, t);
            }
            LogOutcome::Serviced => {
                let n = node_idx.ok_or(MetricsError::BadLogLine(lineno + 1))?;
                ledger.on_serviced(n, class_enum.ok_or(MetricsError::BadLogLine(lineno + 1))?, t);
            }
            LogOutcome::Triggered => ledger.triggered += 1,
            LogOutcome::RequestSent => {
                request_times.insert(node.to_string(), t);
            }
            LogOutcome::Configured => {
                ledger.configured += 1;
                // Waiting time exists only for UEs that demanded first.
                if let Some(sent) = request_times.get(node).copied() {
                    ledger.wt_success_sum_ms += (t - sent).as_ms_f64();
                    ledger.wt_success_count += 1;
                }
            }
            LogOutcome::Failed => {
                ledger.failed += 1;
                if let Some(sent) = request_times.get(node).copied() {
                    ledger.wt_failed_sum_ms += (t - sent).as_ms_f64();
                    ledger.wt_failed_count += 1;
                }
            }
        }
    }
    Ok(ledger)
}

/// One run's table-style summary plus per-node breakdown.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunReport {
    pub protocol: String,
    pub ue_count: u32,
    pub seed: u64,
    pub triggered: u64,
    pub configured: u64,
    pub failed: u64,
    pub no_demand: bool,
    pub success_rate_pct: f64,
    pub total_messages: u64,
    pub ue_messages: u64,
    pub drop_rate_pct: f64,
    pub wt_success_mean_ms: Option<f64>,
    pub wt_failed_mean_ms: Option<f64>,
    pub verification_failures: u64,
    pub late_configs: u64,
    pub nodes: Vec<NodeCounters>,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed event log at line {0}")]
    BadLogLine(usize),
    #[error("statistics need at least one sample")]
    NoSamples,
}

/// Sample mean and 95% Student-t confidence half-width over per-seed means.
/// The half-width is `None` with fewer than two samples and 0 for identical
/// samples.
pub fn mean_ci(samples: &[f64]) -> Result<(f64, Option<f64>), MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return Ok((mean, None));
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok((mean, Some(0.0)));
    }
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid dof").inverse_cdf(0.975);
    Ok((mean, Some(t * sd / n.sqrt())))
}

/// Cross-seed aggregate of one (protocol, ue_count) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateCell {
    pub protocol: String,
    pub ue_count: u32,
    pub seeds: Vec<u64>,
    pub success_rate_pct: f64,
    pub total_messages_mean: f64,
    pub ue_messages_mean: f64,
    pub drop_rate_pct: f64,
    pub wt_success_mean_ms: Option<f64>,
    pub wt_success_ci_ms: Option<f64>,
    pub wt_failed_mean_ms: Option<f64>,
    pub wt_failed_ci_ms: Option<f64>,
}

/// Fold per-run reports into per-(protocol, ue_count) aggregates.
pub fn aggregate(reports: &[RunReport]) -> Vec<AggregateCell> {
    let mut cells: BTreeMap<(String, u32), Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        cells.entry((r.protocol.clone(), r.ue_count)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((protocol, ue_count), mut runs)| {
            runs.sort_by_key(|r| r.seed);
            let rate: Vec<f64> = runs.iter().map(|r| r.success_rate_pct).collect();
            let total: Vec<f64> = runs.iter().map(|r| r.total_messages as f64).collect();
            let uem: Vec<f64> = runs.iter().map(|r| r.ue_messages as f64).collect();
            let drop: Vec<f64> = runs.iter().map(|r| r.drop_rate_pct).collect();
            let wts: Vec<f64> = runs.iter().filter_map(|r| r.wt_success_mean_ms).collect();
            let wtf: Vec<f64> = runs.iter().filter_map(|r| r.wt_failed_mean_ms).collect();
            let (wt_success_mean_ms, wt_success_ci_ms) = match mean_ci(&wts) {
                Ok((m, ci)) => (Some(m), ci),
                Err(_) => (None, None),
            };
            let (wt_failed_mean_ms, wt_failed_ci_ms) = match mean_ci(&wtf) {
                Ok((m, ci)) => (Some(m), ci),
                Err(_) => (None, None),
            };
            AggregateCell {
                protocol,
                ue_count,
                seeds: runs.iter().map(|r| r.seed).collect(),
                success_rate_pct: mean_ci(&rate).map(|(m, _)| m).unwrap_or(100.0),
                total_messages_mean: mean_ci(&total).map(|(m, _)| m).unwrap_or(0.0),
                ue_messages_mean: mean_ci(&uem).map(|(m, _)| m).unwrap_or(0.0),
                drop_rate_pct: mean_ci(&drop).map(|(m, _)| m).unwrap_or(0.0),
                wt_success_mean_ms,
                wt_success_ci_ms,
                wt_failed_mean_ms,
                wt_failed_ci_ms,
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "---".to_string(),
    }
}

pub const SUMMARY_HEADER: [&str; 11] = [
    "protocol",
    "ue_count",
    "seed",
    "success_rate",
    "total_messages",
    "ue_messages",
    "drop_rate",
    "wt_success_mean_ms",
    "wt_success_ci_ms",
    "wt_failed_mean_ms",
    "wt_failed_ci_ms",
];

/// Write per-run summary rows in (protocol, ue_count, seed) order.
pub fn write_summary_csv(reports: &[RunReport], path: &Path) -> Result<(), MetricsError> {
    let mut sorted: Vec<&RunReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.protocol, a.ue_count, a.seed).cmp(&(&b.protocol, b.ue_count, b.seed))
    });
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in sorted {
        w.write_record([
            r.protocol.clone(),
            r.ue_count.to_string(),
            r.seed.to_string(),
            format!("{:.2}", r.success_rate_pct),
            r.total_messages.to_string(),
            r.ue_messages.to_string(),
            format!("{:.2}", r.drop_rate_pct),
            fmt_opt(r.wt_success_mean_ms),
            String::new(),
            fmt_opt(r.wt_failed_mean_ms),
            String::new(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write the two-protocol comparison table, one row per UE count.
pub fn write_aggregate_csv(cells: &[AggregateCell], path: &Path) -> Result<(), MetricsError> {
    let mut by_count: BTreeMap<u32, BTreeMap<&str, &AggregateCell>> = BTreeMap::new();
    for c in cells {
        by_count.entry(c.ue_count).or_default().insert(&c.protocol, c);
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "ue_count",
        "success_rate_ho",
        "success_rate_gho",
        "total_messages_ho",
        "total_messages_gho",
        "ue_messages_ho",
        "ue_messages_gho",
        "drop_rate_ho",
        "drop_rate_gho",
        "wt_success_ho_ms",
        "wt_success_ho_ci_ms",
        "wt_success_gho_ms",
        "wt_success_gho_ci_ms",
        "wt_failed_ho_ms",
        "wt_failed_ho_ci_ms",
        "wt_failed_gho_ms",
        "wt_failed_gho_ci_ms",
    ])?;
    let pick = |m: &BTreeMap<&str, &AggregateCell>, p: &str, f: &dyn Fn(&AggregateCell) -> String| {
        m.get(p).map(|c| f(c)).unwrap_or_default()
    };
    for (ue_count, m) in &by_count {
        w.write_record([
            ue_count.to_string(),
            pick(m, "ho", &|c| format!("{:.2}", c.success_rate_pct)),
            pick(m, "gho", &|c| format!("{:.2}", c.success_rate_pct)),
            pick(m, "ho", &|c| format!("{:.2}", c.total_messages_mean)),
            pick(m, "gho", &|c| format!("{:.2}", c.total_messages_mean)),
            pick(m, "ho", &|c| format!("{:.2}", c.ue_messages_mean)),
            pick(m, "gho", &|c| format!("{:.2}", c.ue_messages_mean)),
            pick(m, "ho", &|c| format!("{:.2}", c.drop_rate_pct)),
            pick(m, "gho", &|c| format!("{:.2}", c.drop_rate_pct)),
            pick(m, "ho", &|c| fmt_opt(c.wt_success_mean_ms)),
            pick(m, "ho", &|c| fmt_opt(c.wt_success_ci_ms)),
            pick(m, "gho", &|c| fmt_opt(c.wt_success_mean_ms)),
            pick(m, "gho", &|c| fmt_opt(c.wt_success_ci_ms)),
            pick(m, "ho", &|c| fmt_opt(c.wt_failed_mean_ms)),
            pick(m, "ho", &|c| fmt_opt(c.wt_failed_ci_ms)),
            pick(m, "gho", &|c| fmt_opt(c.wt_failed_mean_ms)),
            pick(m, "gho", &|c| fmt_opt(c.wt_failed_ci_ms)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write one satellite time series: `t_ms,received,dropped` per bucket.
pub fn write_time_series_csv(
    ledger: &MetricsLedger,
    sat: usize,
    path: &Path,
) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t_ms", "received", "dropped"])?;
    for (t, received, dropped) in ledger.time_series(sat) {
        w.write_record([t.to_string(), received.to_string(), dropped.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reports_json(reports: &[RunReport], path: &Path) -> Result<(), MetricsError> {
    let mut sorted: Vec<&RunReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.protocol, a.ue_count, a.seed).cmp(&(&b.protocol, b.ue_count, b.seed))
    });
    fs::write(path, serde_json::to_string_pretty(&sorted)?)?;
    Ok(())
}
