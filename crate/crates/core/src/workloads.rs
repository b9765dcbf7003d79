//! Built-in applications and load protocols.
//!
//! Three applications ship with the simulator:
//!
//! * `tree` — a synthetic fan-out of seven tasks. The root's synchronous
//!   subtree is lightweight; the asynchronous subtree is compute-heavy and
//!   two-way parallel.
//! * `iot` — a sensor-ingest pipeline of ten tasks with database writes,
//!   reconstructed to exercise synchronous chains hanging off asynchronous
//!   fan-out.
//! * `web` — a seventeen-task web shop with four externally callable roots
//!   and a product-listing task shared synchronously by all of them.
//!
//! The `iot` and `web` call graphs are fixture data: they are built to be
//! consistent with their group structure and I/O behavior, not extracted
//! from any real deployment.
//!
//! Work magnitudes are calibration constants, chosen so the baseline
//! deployments land in a realistic latency range at the default 128MB;
//! all of them can be overridden.

use serde::{Deserialize, Serialize};

use crate::domain::{AppSpec, IoCall, TaskSpec};

/// An application plus the operations a load generator invokes on it. The
/// operations are a subset of the externally callable roots.
#[derive(Debug, Clone)]
pub struct Workload {
    pub app: AppSpec,
    pub ops: Vec<String>,
}

/// Calibration knobs shared by the builtin app generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppTuning {
    /// Compute of lightweight tasks, ms at 1 vCPU.
    pub light_cpu_ms: f64,
    /// Compute of heavy tasks, ms at 1 vCPU.
    pub heavy_cpu_ms: f64,
    /// Thread lanes heavy tasks can use.
    pub heavy_parallelism: u32,
    /// Latency of one database operation.
    pub db_op_ms: f64,
}

impl Default for AppTuning {
    fn default() -> Self {
        Self::tree_default()
    }
}

impl AppTuning {
    pub fn tree_default() -> Self {
        Self {
            light_cpu_ms: 50.0,
            heavy_cpu_ms: 300.0,
            heavy_parallelism: 2,
            db_op_ms: 15.0,
        }
    }

    pub fn iot_default() -> Self {
        Self {
            light_cpu_ms: 20.0,
            heavy_cpu_ms: 60.0,
            heavy_parallelism: 2,
            db_op_ms: 15.0,
        }
    }
}

/// Seven tasks A..G. A synchronously calls B, which synchronously calls D
/// and E (all lightweight). A asynchronously calls C, which asynchronously
/// calls F and G (all heavy, two compute lanes each).
pub fn make_tree_app(tuning: AppTuning) -> Workload {
    let light = |id: &str| TaskSpec::new(id, tuning.light_cpu_ms, 1);
    let heavy = |id: &str| TaskSpec::new(id, tuning.heavy_cpu_ms, tuning.heavy_parallelism);
    let app = AppSpec::new(
        "tree",
        vec![
            light("A").calls_sync("B").calls_async("C"),
            light("B").calls_sync("D").calls_sync("E"),
            heavy("C").calls_async("F").calls_async("G"),
            light("D"),
            light("E"),
            heavy("F"),
            heavy("G"),
        ],
        &["A"],
    );
    Workload {
        app,
        ops: vec!["A".to_string()],
    }
}

/// Ten tasks rooted at the ingest task `I`. Synchronous chains stay inside
/// the groups `(CA,DJ)`, `(CS,CSA,CSL)` and `(CW,I,SE)`; every cross-group
/// call is asynchronous. `AS`, `CSA`, `DJ` and `SE` write to the database
/// once; `CSL` reads twice and then writes.
pub fn make_iot_app(tuning: AppTuning) -> Workload {
    let light = |id: &str| TaskSpec::new(id, tuning.light_cpu_ms, 1);
    let heavy = |id: &str| TaskSpec::new(id, tuning.heavy_cpu_ms, tuning.heavy_parallelism);
    let db = tuning.db_op_ms;
    let app = AppSpec::new(
        "iot",
        vec![
            heavy("AS").with_io(IoCall::new("db-write", db, 1)),
            heavy("CA").calls_sync("DJ"),
            heavy("CS").calls_sync("CSA").calls_sync("CSL"),
            light("CSA").with_io(IoCall::new("db-write", db, 1)),
            light("CSL")
                .with_io(IoCall::new("db-read", db, 2))
                .with_io(IoCall::new("db-write", db, 1)),
            heavy("CT"),
            light("CW").calls_async("AS"),
            light("DJ").with_io(IoCall::new("db-write", db, 1)),
            light("I")
                .calls_sync("CW")
                .calls_sync("SE")
                .calls_async("CA")
                .calls_async("CS")
                .calls_async("CT"),
            light("SE").with_io(IoCall::new("db-write", db, 1)),
        ],
        &["I"],
    );
    Workload {
        app,
        ops: vec!["I".to_string()],
    }
}

/// Seventeen web-shop tasks with four externally callable roots. The load
/// generator drives three user operations (front page, add to cart,
/// checkout); the fourth root, `recommendations`, is reached asynchronously
/// from the front page. `listProducts` is called synchronously by all four
/// roots, `currency` and `getCart` by two each.
pub fn make_web_app() -> Workload {
    let t = |id: &str, cpu: f64| TaskSpec::new(id, cpu, 1);
    let db = 10.0;
    let app = AppSpec::new(
        "web",
        vec![
            t("frontend", 8.0)
                .calls_sync("listProducts")
                .calls_sync("getCart")
                .calls_sync("currency")
                .calls_sync("ads")
                .calls_async("recommendations")
                .calls_async("trackView"),
            t("recommendations", 25.0)
                .with_io(IoCall::new("db-read", db, 1))
                .calls_sync("listProducts"),
            t("addToCart", 5.0)
                .calls_sync("getProduct")
                .calls_sync("listProducts")
                .calls_sync("cartStore")
                .calls_async("trackCart"),
            t("checkout", 8.0)
                .calls_sync("listProducts")
                .calls_sync("getCart")
                .calls_sync("currency")
                .calls_sync("shipping")
                .calls_sync("payment")
                .calls_async("email")
                .calls_async("storeOrder")
                .calls_async("clearCart"),
            t("listProducts", 5.0).with_io(IoCall::new("db-read", db, 1)),
            t("getCart", 3.0).with_io(IoCall::new("db-read", db, 1)),
            t("currency", 2.0),
            t("ads", 4.0).with_io(IoCall::new("db-read", 5.0, 1)),
            t("getProduct", 3.0).with_io(IoCall::new("db-read", db, 1)),
            t("cartStore", 3.0).with_io(IoCall::new("db-write", db, 1)),
            t("shipping", 4.0),
            t("payment", 5.0).with_io(IoCall::new("card-gateway", 15.0, 1)),
            t("email", 3.0).with_io(IoCall::new("smtp", 15.0, 1)),
            t("storeOrder", 3.0).with_io(IoCall::new("db-write", db, 1)),
            t("clearCart", 2.0).with_io(IoCall::new("db-write", db, 1)),
            t("trackView", 2.0).with_io(IoCall::new("db-write", db, 1)),
            t("trackCart", 2.0).with_io(IoCall::new("db-write", db, 1)),
        ],
        &["frontend", "addToCart", "checkout", "recommendations"],
    );
    Workload {
        app,
        ops: vec![
            "frontend".to_string(),
            "addToCart".to_string(),
            "checkout".to_string(),
        ],
    }
}

/// Builds a builtin workload by name.
pub fn builtin(name: &str) -> Option<Workload> {
    match name {
        "tree" => Some(make_tree_app(AppTuning::tree_default())),
        "iot" => Some(make_iot_app(AppTuning::iot_default())),
        "web" => Some(make_web_app()),
        _ => None,
    }
}

/// Load protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Steady 10 requests per second; the optimizer runs between windows.
    Opt,
    /// Batches with a platform-wide instance flush before each batch, so
    /// every invocation cold-starts.
    Cold,
    /// Open-loop ramp from 5 to 40 requests per second in +5 steps every 2s.
    Scale,
}

impl std::str::FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "opt" => Ok(Protocol::Opt),
            "cold" => Ok(Protocol::Cold),
            "scale" => Ok(Protocol::Scale),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

/// Request spacing of the steady OPT load (10 rps).
pub const OPT_SPACING_MS: f64 = 100.0;
/// Idle gap between OPT windows, long enough for every trace to drain.
pub const WINDOW_DRAIN_GAP_MS: f64 = 10_000.0;
/// Default number of COLD batches.
pub const COLD_BATCHES: usize = 25;
/// Spacing between COLD batches.
pub const COLD_BATCH_SPACING_MS: f64 = 120_000.0;

/// One protocol's arrival schedule: request arrivals plus platform flush
/// times (COLD only). Arrivals are nondecreasing in time; operations are
/// drawn round-robin.
#[derive(Debug, Clone, Serialize)]
pub struct WorkloadSchedule {
    pub protocol: Protocol,
    pub seed: u64,
    pub arrivals: Vec<(f64, String)>,
    pub flushes: Vec<f64>,
}

/// Deterministic schedule generator. The seed fixes the starting offset of
/// the operation rotation; arrivals themselves are evenly spaced.
pub struct ScheduleGen {
    ops: Vec<String>,
    seed: u64,
    issued: u64,
}

impl ScheduleGen {
    pub fn new(ops: &[String], seed: u64) -> Self {
        assert!(!ops.is_empty(), "schedule needs at least one operation");
        Self {
            ops: ops.to_vec(),
            seed,
            issued: 0,
        }
    }

    fn next_op(&mut self) -> String {
        let idx = (self.seed + self.issued) as usize % self.ops.len();
        self.issued += 1;
        self.ops[idx].clone()
    }

    /// One OPT window of `requests` arrivals starting at `start_ms`.
    pub fn opt_window(&mut self, start_ms: f64, requests: u64) -> Vec<(f64, String)> {
        (0..requests)
            .map(|i| (start_ms + i as f64 * OPT_SPACING_MS, self.next_op()))
            .collect()
    }

    /// The COLD protocol: `batches` batches, one request per operation per
    /// batch, a platform flush immediately before each batch.
    pub fn cold_schedule(&mut self, batches: usize) -> (Vec<(f64, String)>, Vec<f64>) {
        let mut arrivals = Vec::new();
        let mut flushes = Vec::new();
        for b in 0..batches {
            let t = b as f64 * COLD_BATCH_SPACING_MS;
            flushes.push(t);
            for _ in 0..self.ops.len() {
                arrivals.push((t, self.next_op()));
            }
        }
        (arrivals, flushes)
    }

    /// The SCALE protocol: 5 rps rising by 5 rps every two seconds up to
    /// 40 rps, then 40 rps for six more seconds (20 s total).
    pub fn scale_schedule(&mut self) -> Vec<(f64, String)> {
        let mut arrivals = Vec::new();
        let mut segments: Vec<(f64, f64)> = (1..=7)
            .map(|step| (f64::from(step) * 5.0, 2000.0))
            .collect();
        segments.push((40.0, 6000.0));
        let mut t = 0.0;
        for (rate, duration) in segments {
            let spacing = 1000.0 / rate;
            let count = (duration / spacing).round() as usize;
            for i in 0..count {
                arrivals.push((t + i as f64 * spacing, self.next_op()));
            }
            t += duration;
        }
        arrivals
    }
}

/// Materializes one full schedule for a protocol with default sizing: one
/// 1000-request window for OPT, 25 flush-batches for COLD, the 20-second
/// ramp for SCALE.
pub fn make_schedule(protocol: Protocol, workload: &Workload, seed: u64) -> WorkloadSchedule {
    let mut gen = ScheduleGen::new(&workload.ops, seed);
    let (arrivals, flushes) = match protocol {
        Protocol::Opt => (gen.opt_window(0.0, 1000), Vec::new()),
        Protocol::Cold => gen.cold_schedule(COLD_BATCHES),
        Protocol::Scale => (gen.scale_schedule(), Vec::new()),
    };
    WorkloadSchedule {
        protocol,
        seed,
        arrivals,
        flushes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::CallMode;

    #[test]
    fn tree_has_seven_tasks_with_expected_edge_modes() {
        let w = make_tree_app(AppTuning::tree_default());
        assert_eq!(w.app.tasks.len(), 7);
        w.app.validate().unwrap();
        let modes: Vec<(String, String, CallMode)> = w
            .app
            .tasks
            .iter()
            .flat_map(|t| {
                t.calls
                    .iter()
                    .map(move |e| (t.id.clone(), e.callee.clone(), e.mode))
            })
            .collect();
        let sync: Vec<_> = modes
            .iter()
            .filter(|(_, _, m)| *m == CallMode::Sync)
            .map(|(a, b, _)| format!("{a}->{b}"))
            .collect();
        let asynchronous: Vec<_> = modes
            .iter()
            .filter(|(_, _, m)| *m == CallMode::Async)
            .map(|(a, b, _)| format!("{a}->{b}"))
            .collect();
        assert_eq!(sync, vec!["A->B", "B->D", "B->E"]);
        assert_eq!(asynchronous, vec!["A->C", "C->F", "C->G"]);
    }

    #[test]
    fn iot_csl_performs_three_database_operations() {
        let w = make_iot_app(AppTuning::iot_default());
        assert_eq!(w.app.tasks.len(), 10);
        w.app.validate().unwrap();
        let csl = w.app.task("CSL").unwrap();
        let ops: u32 = csl.io_calls.iter().map(|io| io.count).sum();
        assert_eq!(ops, 3);
        for writer in ["AS", "CSA", "DJ", "SE"] {
            let t = w.app.task(writer).unwrap();
            assert_eq!(t.io_calls.iter().map(|io| io.count).sum::<u32>(), 1);
        }
    }

    #[test]
    fn web_has_seventeen_tasks_and_four_roots() {
        let w = make_web_app();
        assert_eq!(w.app.tasks.len(), 17);
        assert_eq!(w.app.roots.len(), 4);
        w.app.validate().unwrap();
        // listProducts is synchronously called by all four roots
        let callers: Vec<&str> = w
            .app
            .tasks
            .iter()
            .filter(|t| {
                t.calls
                    .iter()
                    .any(|e| e.callee == "listProducts" && e.mode == CallMode::Sync)
            })
            .map(|t| t.id.as_str())
            .collect();
        assert_eq!(callers.len(), 4);
        for root in &w.app.roots {
            assert!(callers.contains(&root.as_str()));
        }
        // three scheduled operations
        assert_eq!(w.ops.len(), 3);
    }

    #[test]
    fn opt_window_has_thousand_requests_at_fixed_spacing() {
        let w = make_tree_app(AppTuning::tree_default());
        let schedule = make_schedule(Protocol::Opt, &w, 1);
        assert_eq!(schedule.arrivals.len(), 1000);
        assert!((schedule.arrivals[1].0 - schedule.arrivals[0].0 - 100.0).abs() < 1e-9);
        assert!(schedule.flushes.is_empty());
    }

    #[test]
    fn cold_schedule_flushes_before_every_batch() {
        let w = make_iot_app(AppTuning::iot_default());
        let schedule = make_schedule(Protocol::Cold, &w, 1);
        assert_eq!(schedule.flushes.len(), COLD_BATCHES);
        assert_eq!(schedule.arrivals.len(), COLD_BATCHES);
        for (flush, arrival) in schedule.flushes.iter().zip(&schedule.arrivals) {
            assert_eq!(*flush, arrival.0);
        }
    }

    #[test]
    fn scale_schedule_ramps_to_forty_rps() {
        let w = make_tree_app(AppTuning::tree_default());
        let schedule = make_schedule(Protocol::Scale, &w, 1);
        let last = schedule.arrivals.last().unwrap().0;
        assert!(last >= 18_000.0);
        // the final two seconds run at 40 rps: 25ms spacing
        let tail: Vec<f64> = schedule
            .arrivals
            .iter()
            .map(|(t, _)| *t)
            .filter(|t| *t >= 16_000.0)
            .collect();
        let spacing = tail[1] - tail[0];
        assert!((spacing - 25.0).abs() < 1e-9);
        // total requests: 2s at each of 5..35 rps, 6s at 40 rps
        assert_eq!(schedule.arrivals.len(), 2 * (5 + 10 + 15 + 20 + 25 + 30 + 35) + 6 * 40);
    }

    #[test]
    fn schedules_are_deterministic_per_seed() {
        let w = make_web_app();
        let a = make_schedule(Protocol::Opt, &w, 42);
        let b = make_schedule(Protocol::Opt, &w, 42);
        assert_eq!(a.arrivals, b.arrivals);
        let c = make_schedule(Protocol::Opt, &w, 43);
        assert_ne!(a.arrivals, c.arrivals);
    }

    #[test]
    fn web_mix_is_equal_thirds() {
        let w = make_web_app();
        let schedule = make_schedule(Protocol::Opt, &w, 0);
        let mut counts = std::collections::BTreeMap::new();
        for (_, op) in &schedule.arrivals {
            *counts.entry(op.clone()).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 3);
        let min = counts.values().min().unwrap();
        let max = counts.values().max().unwrap();
        assert!(max - min <= 1);
    }
}
