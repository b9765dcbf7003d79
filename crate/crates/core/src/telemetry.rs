//! Telemetry store and analysis: invocation records, the annotated call
//! graph reconstructed from them, and window metrics.
//!
//! The log is append-only while a simulation runs; analysis happens after a
//! window closes, so readers never observe partial traces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::CallMode;
use crate::platform::BillingLine;
use crate::runtime::{CompiledApp, RecordDraft};

/// Caller name used for external client requests.
pub const EXTERNAL: &str = "EXTERNAL";

/// One task execution's telemetry, with task ids resolved to names.
#[derive(Debug, Clone, Serialize)]
pub struct InvocationRecord {
    pub trace_id: u64,
    /// Calling task, or `EXTERNAL` for client requests.
    pub caller: String,
    pub callee: String,
    pub mode: CallMode,
    pub local: bool,
    pub group: String,
    pub memory_mb: u32,
    pub cold: bool,
    pub start_ms: f64,
    pub end_ms: f64,
    pub wall_ms: f64,
    pub billing_ref: u64,
}

/// Outcome of one external request.
#[derive(Debug, Clone, Serialize)]
pub struct RequestOutcome {
    pub trace_id: u64,
    pub root: String,
    pub arrival_ms: f64,
    pub rr_ms: f64,
    pub finish_ms: f64,
    pub completed: bool,
}

/// Append-only store filled by the simulation engine.
#[derive(Debug, Default)]
pub struct TelemetryLog {
    records: Vec<InvocationRecord>,
    billing: Vec<BillingLine>,
    requests: Vec<RequestOutcome>,
}

impl TelemetryLog {
    pub fn begin_request(&mut self, trace_id: u64, root: &str, arrival: f64) {
        self.requests.push(RequestOutcome {
            trace_id,
            root: root.to_string(),
            arrival_ms: arrival,
            rr_ms: 0.0,
            finish_ms: 0.0,
            completed: false,
        });
    }

    pub fn finish_request(&mut self, trace_id: u64, rr_ms: f64, finish: f64) {
        if let Some(req) = self.requests.iter_mut().rev().find(|r| r.trace_id == trace_id) {
            req.rr_ms = rr_ms;
            req.finish_ms = finish;
            req.completed = true;
        }
    }

    pub fn push_record(&mut self, draft: RecordDraft, app: &CompiledApp) {
        self.records.push(InvocationRecord {
            trace_id: draft.trace_id,
            caller: draft
                .caller
                .map_or_else(|| EXTERNAL.to_string(), |c| app.name(c).to_string()),
            callee: app.name(draft.callee).to_string(),
            mode: draft.mode,
            local: draft.local,
            group: draft.group,
            memory_mb: draft.memory_mb,
            cold: draft.cold,
            start_ms: draft.start_ms,
            end_ms: draft.end_ms,
            wall_ms: draft.wall_ms,
            billing_ref: draft.billing_ref,
        });
    }

    pub fn push_billing(&mut self, line: BillingLine) {
        self.billing.push(line);
    }

    pub fn records(&self) -> &[InvocationRecord] {
        &self.records
    }

    pub fn billing(&self) -> &[BillingLine] {
        &self.billing
    }

    pub fn requests(&self) -> &[RequestOutcome] {
        &self.requests
    }

    /// Marks the current end of the log; a later [`Window`] starts here.
    pub fn mark(&self) -> LogMark {
        LogMark {
            records: self.records.len(),
            billing: self.billing.len(),
            requests: self.requests.len(),
        }
    }

    /// Everything appended since `mark`.
    pub fn window_since(&self, mark: &LogMark) -> Window<'_> {
        Window {
            records: &self.records[mark.records..],
            billing: &self.billing[mark.billing..],
            requests: &self.requests[mark.requests..],
        }
    }

    pub fn full_window(&self) -> Window<'_> {
        Window {
            records: &self.records,
            billing: &self.billing,
            requests: &self.requests,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogMark {
    records: usize,
    billing: usize,
    requests: usize,
}

/// A closed observation window over the log.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub records: &'a [InvocationRecord],
    pub billing: &'a [BillingLine],
    pub requests: &'a [RequestOutcome],
}

/// Observed mode of an edge across a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    Sync,
    Async,
    Mixed,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeStats {
    pub mode: EdgeMode,
    pub count: u64,
    pub latency_ms: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct NodeStats {
    pub executions: u64,
    pub wall_ms: Vec<f64>,
    pub cold_count: u64,
    pub memory_sizes_seen: Vec<u32>,
}

/// Directed task graph reconstructed from invocation records. Contains only
/// tasks and edges actually observed; nothing is inferred.
#[derive(Debug, Clone, Default)]
pub struct AnnotatedCallGraph {
    pub nodes: BTreeMap<String, NodeStats>,
    pub edges: BTreeMap<(String, String), EdgeStats>,
}

/// Flat, serializable view of the call graph for reports.
#[derive(Debug, Clone, Serialize)]
pub struct CallGraphExport {
    pub nodes: Vec<NodeExport>,
    pub edges: Vec<EdgeExport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeExport {
    pub task: String,
    pub executions: u64,
    pub wall_med_ms: f64,
    pub cold_count: u64,
    pub memory_sizes_seen: Vec<u32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeExport {
    pub caller: String,
    pub callee: String,
    pub mode: EdgeMode,
    pub count: u64,
    pub latency_med_ms: f64,
}

impl AnnotatedCallGraph {
    pub fn export(&self) -> CallGraphExport {
        let med = |samples: &[f64]| {
            let mut s = samples.to_vec();
            s.sort_by(f64::total_cmp);
            if s.is_empty() {
                0.0
            } else {
                median(&s)
            }
        };
        CallGraphExport {
            nodes: self
                .nodes
                .iter()
                .map(|(task, n)| NodeExport {
                    task: task.clone(),
                    executions: n.executions,
                    wall_med_ms: med(&n.wall_ms),
                    cold_count: n.cold_count,
                    memory_sizes_seen: n.memory_sizes_seen.clone(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|((caller, callee), e)| EdgeExport {
                    caller: caller.clone(),
                    callee: callee.clone(),
                    mode: e.mode,
                    count: e.count,
                    latency_med_ms: med(&e.latency_ms),
                })
                .collect(),
        }
    }
}

impl AnnotatedCallGraph {
    /// Tasks whose only observed incoming edges are synchronous
    /// (`EXTERNAL` callers do not count).
    pub fn only_sync_called(&self, task: &str) -> bool {
        let mut any = false;
        for ((caller, callee), stats) in &self.edges {
            if callee == task && caller != EXTERNAL {
                any = true;
                if stats.mode != EdgeMode::Sync {
                    return false;
                }
            }
        }
        any
    }

    /// Observed internal callers of a task.
    pub fn callers_of<'a>(&'a self, task: &'a str) -> impl Iterator<Item = (&'a str, EdgeMode)> {
        self.edges.iter().filter_map(move |((caller, callee), stats)| {
            (callee == task && caller != EXTERNAL).then_some((caller.as_str(), stats.mode))
        })
    }

    pub fn observed_tasks(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn externally_called(&self, task: &str) -> bool {
        self.edges.contains_key(&(EXTERNAL.to_string(), task.to_string()))
    }
}

/// Builds the annotated call graph from a window's records. An empty window
/// yields an empty graph.
pub fn build_call_graph(records: &[InvocationRecord]) -> AnnotatedCallGraph {
    let mut graph = AnnotatedCallGraph::default();
    for rec in records {
        let node = graph.nodes.entry(rec.callee.clone()).or_default();
        node.executions += 1;
        node.wall_ms.push(rec.wall_ms);
        if rec.cold {
            node.cold_count += 1;
        }
        if !node.memory_sizes_seen.contains(&rec.memory_mb) {
            node.memory_sizes_seen.push(rec.memory_mb);
            node.memory_sizes_seen.sort_unstable();
        }
        let key = (rec.caller.clone(), rec.callee.clone());
        let observed = match rec.mode {
            CallMode::Sync => EdgeMode::Sync,
            CallMode::Async => EdgeMode::Async,
        };
        graph
            .edges
            .entry(key)
            .and_modify(|e| {
                e.count += 1;
                e.latency_ms.push(rec.wall_ms);
                if e.mode != observed {
                    e.mode = EdgeMode::Mixed;
                }
            })
            .or_insert_with(|| EdgeStats {
                mode: observed,
                count: 1,
                latency_ms: vec![rec.wall_ms],
            });
    }
    graph
}

/// Aggregated statistics for one observation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub setup_id: String,
    pub requests: u64,
    pub rr_med_ms: f64,
    pub rr_p95_ms: f64,
    /// USD per million invocations.
    pub mean_cost_pmi: f64,
    /// Fraction of function executions that cold-started.
    pub cold_rate: f64,
    /// Mean per-request cost contribution of each group, by canonical label.
    pub group_cost: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum SnapshotError {
    #[error("window contains no completed external requests")]
    NoData,
}

pub fn median(sorted: &[f64]) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len() as f64;
    let rank = (p * n).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Computes the window's snapshot. Latency statistics are over completed
/// external requests; cost sums every billing line of the window's traces,
/// including asynchronous work that finished after the responses.
pub fn snapshot(window: &Window<'_>, setup_id: &str) -> Result<MetricsSnapshot, SnapshotError> {
    let completed: Vec<&RequestOutcome> =
        window.requests.iter().filter(|r| r.completed).collect();
    if completed.is_empty() {
        return Err(SnapshotError::NoData);
    }
    let mut rrs: Vec<f64> = completed.iter().map(|r| r.rr_ms).collect();
    rrs.sort_by(f64::total_cmp);

    let requests = completed.len() as u64;
    let total_cost: f64 = window.billing.iter().map(|l| l.cost_usd).sum();
    let mut group_cost: BTreeMap<String, f64> = BTreeMap::new();
    for line in window.billing {
        *group_cost.entry(line.group.clone()).or_insert(0.0) += line.cost_usd;
    }
    for v in group_cost.values_mut() {
        *v /= requests as f64;
    }
    let cold = window.billing.iter().filter(|l| l.cold).count();
    let cold_rate = if window.billing.is_empty() {
        0.0
    } else {
        cold as f64 / window.billing.len() as f64
    };

    Ok(MetricsSnapshot {
        setup_id: setup_id.to_string(),
        requests,
        rr_med_ms: median(&rrs),
        rr_p95_ms: percentile(&rrs, 0.95),
        mean_cost_pmi: total_cost / requests as f64 * 1e6,
        cold_rate,
        group_cost,
    })
}

/// Per-group cost attribution for the infrastructure sweep: the median over
/// traces of the group's summed billing within each trace. The median keeps
/// the attribution stable against the cold ramp at window starts.
pub fn group_cost_median(window: &Window<'_>) -> BTreeMap<String, f64> {
    let mut per_trace: BTreeMap<String, BTreeMap<u64, f64>> = BTreeMap::new();
    for line in window.billing {
        *per_trace
            .entry(line.group.clone())
            .or_default()
            .entry(line.trace_id)
            .or_insert(0.0) += line.cost_usd;
    }
    per_trace
        .into_iter()
        .map(|(group, by_trace)| {
            let mut costs: Vec<f64> = by_trace.into_values().collect();
            costs.sort_by(f64::total_cmp);
            (group, median(&costs))
        })
        .collect()
}

/// Median wall time of each group's function executions in a window. Used as
/// the latency tie-break during infrastructure selection.
pub fn group_wall_median(window: &Window<'_>) -> BTreeMap<String, f64> {
    let mut walls: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for line in window.billing {
        walls.entry(line.group.clone()).or_default().push(line.billed_ms);
    }
    walls
        .into_iter()
        .map(|(group, mut w)| {
            w.sort_by(f64::total_cmp);
            let m = median(&w);
            (group, m)
        })
        .collect()
}

/// Relative change between two optimizer observations:
/// the larger of the relative cost change and the relative median-latency
/// change. Zero denominators yield 0 when both sides are zero, infinity
/// otherwise.
pub fn compare(prev: &MetricsSnapshot, cur: &MetricsSnapshot) -> f64 {
    fn rel(prev: f64, cur: f64) -> f64 {
        if prev == 0.0 {
            if cur == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (cur - prev).abs() / prev
        }
    }
    rel(prev.mean_cost_pmi, cur.mean_cost_pmi).max(rel(prev.rr_med_ms, cur.rr_med_ms))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(caller: &str, callee: &str, mode: CallMode, wall: f64) -> InvocationRecord {
        InvocationRecord {
            trace_id: 0,
            caller: caller.to_string(),
            callee: callee.to_string(),
            mode,
            local: false,
            group: format!("({callee})"),
            memory_mb: 128,
            cold: false,
            start_ms: 0.0,
            end_ms: wall,
            wall_ms: wall,
            billing_ref: 0,
        }
    }

    fn req(trace: u64, rr: f64) -> RequestOutcome {
        RequestOutcome {
            trace_id: trace,
            root: "A".into(),
            arrival_ms: 0.0,
            rr_ms: rr,
            finish_ms: rr,
            completed: true,
        }
    }

    fn line(trace: u64, group: &str, cost: f64) -> BillingLine {
        BillingLine {
            trace_id: trace,
            execution_id: trace,
            group: group.into(),
            memory_mb: 128,
            memory_gb: 0.125,
            billed_ms: 1.0,
            cost_usd: cost,
            cold: false,
        }
    }

    #[test]
    fn repeated_edge_aggregates_counts() {
        let records: Vec<_> = (0..1000)
            .map(|_| record("A", "B", CallMode::Sync, 5.0))
            .collect();
        let graph = build_call_graph(&records);
        let edge = &graph.edges[&("A".to_string(), "B".to_string())];
        assert_eq!(edge.count, 1000);
        assert_eq!(edge.mode, EdgeMode::Sync);
        assert_eq!(graph.nodes["B"].executions, 1000);
    }

    #[test]
    fn external_edges_are_included() {
        let records = vec![record(EXTERNAL, "A", CallMode::Sync, 1.0)];
        let graph = build_call_graph(&records);
        assert!(graph.externally_called("A"));
        assert!(!graph.only_sync_called("A"));
    }

    #[test]
    fn mixed_modes_collapse_to_mixed() {
        let records = vec![
            record("A", "B", CallMode::Sync, 1.0),
            record("A", "B", CallMode::Async, 1.0),
        ];
        let graph = build_call_graph(&records);
        assert_eq!(
            graph.edges[&("A".to_string(), "B".to_string())].mode,
            EdgeMode::Mixed
        );
    }

    #[test]
    fn empty_records_give_empty_graph() {
        let graph = build_call_graph(&[]);
        assert!(graph.nodes.is_empty());
        assert!(graph.edges.is_empty());
    }

    #[test]
    fn median_of_three() {
        let requests = vec![req(0, 100.0), req(1, 200.0), req(2, 300.0)];
        let window = Window {
            records: &[],
            billing: &[],
            requests: &requests,
        };
        let snap = snapshot(&window, "s").unwrap();
        assert_eq!(snap.rr_med_ms, 200.0);
    }

    #[test]
    fn cost_unit_is_usd_per_million_invocations() {
        let requests = vec![req(0, 1.0)];
        let billing = vec![line(0, "(A)", 5.7e-5)];
        let window = Window {
            records: &[],
            billing: &billing,
            requests: &requests,
        };
        let snap = snapshot(&window, "s").unwrap();
        assert!((snap.mean_cost_pmi - 57.0).abs() < 1e-9);
    }

    #[test]
    fn identical_windows_give_identical_snapshots() {
        let requests = vec![req(0, 10.0), req(1, 20.0)];
        let billing = vec![line(0, "(A)", 1e-6), line(1, "(A)", 2e-6)];
        let window = Window {
            records: &[],
            billing: &billing,
            requests: &requests,
        };
        assert_eq!(snapshot(&window, "s").unwrap(), snapshot(&window, "s").unwrap());
    }

    #[test]
    fn empty_window_is_no_data() {
        let window = Window {
            records: &[],
            billing: &[],
            requests: &[],
        };
        assert_eq!(snapshot(&window, "s").unwrap_err(), SnapshotError::NoData);
    }

    #[test]
    fn group_costs_sum_to_mean_cost() {
        let requests = vec![req(0, 1.0), req(1, 1.0)];
        let billing = vec![
            line(0, "(A)", 3e-6),
            line(0, "(B)", 1e-6),
            line(1, "(A)", 5e-6),
        ];
        let window = Window {
            records: &[],
            billing: &billing,
            requests: &requests,
        };
        let snap = snapshot(&window, "s").unwrap();
        let breakdown: f64 = snap.group_cost.values().sum();
        assert!((breakdown - snap.mean_cost_pmi / 1e6).abs() < 1e-15);
    }

    fn snap_with(cost: f64, rr: f64) -> MetricsSnapshot {
        MetricsSnapshot {
            setup_id: "s".into(),
            requests: 1,
            rr_med_ms: rr,
            rr_p95_ms: rr,
            mean_cost_pmi: cost,
            cold_rate: 0.0,
            group_cost: BTreeMap::new(),
        }
    }

    #[test]
    fn compare_identical_is_zero() {
        let a = snap_with(100.0, 10.0);
        assert_eq!(compare(&a, &a), 0.0);
    }

    #[test]
    fn compare_cost_drop() {
        let a = snap_with(100.0, 10.0);
        let b = snap_with(80.0, 10.0);
        assert!((compare(&a, &b) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn compare_rr_rise() {
        let a = snap_with(100.0, 100.0);
        let b = snap_with(100.0, 150.0);
        assert!((compare(&a, &b) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn compare_zero_denominator() {
        let a = snap_with(0.0, 0.0);
        let b = snap_with(0.0, 0.0);
        assert_eq!(compare(&a, &b), 0.0);
        let c = snap_with(0.0, 5.0);
        assert_eq!(compare(&a, &c), f64::INFINITY);
    }
}
