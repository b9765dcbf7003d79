//! Deterministic discrete-event simulator of a FaaS platform paired with a
//! feedback-driven function-fusion optimizer.
//!
//! Applications are sets of tasks calling each other synchronously or
//! asynchronously. A fusion setup partitions (and may replicate) tasks into
//! co-deployed groups with per-group memory sizes. The simulator models
//! instance lifecycles with cold starts, memory-proportional CPU, and
//! duration-based billing; the optimizer rewrites the setup from observed
//! telemetry in two phases — path optimization, then per-group memory
//! selection — to cut request-response latency and cost.

pub mod config;
pub mod domain;
pub mod engine;
pub mod experiment;
pub mod notation;
pub mod optimizer;
pub mod platform;
pub mod runtime;
pub mod telemetry;
pub mod workloads;

pub use domain::{
    validate_memories, validate_setup, AppSpec, CallEdge, CallMode, FusionGroup, FusionSetup,
    IoCall, PlatformConfig, SetupViolation, TaskSpec, DEFAULT_MEMORY_MB,
};
pub use engine::SimWorld;
pub use experiment::{
    compare_setups, comparison_setups, run_opt_campaign, Campaign, CampaignEntry, ExperimentError,
};
pub use notation::{
    format_setup, format_setup_with_memory, parse_setup_notation, NotationError,
};
pub use optimizer::{
    accept_or_revert, brute_force_optimal, infra_select, infra_sweep_plan, path_fixpoint,
    path_step, Cadence, Csp1Params, Csp1State, Objective, ObjectiveMode,
};
pub use telemetry::{
    build_call_graph, compare, snapshot, AnnotatedCallGraph, InvocationRecord, MetricsSnapshot,
};
pub use workloads::{
    builtin, make_iot_app, make_schedule, make_tree_app, make_web_app, AppTuning, Protocol,
    Workload, WorkloadSchedule,
};
