//! Shared domain types: tasks, applications, fusion groups and setups, and
//! the platform configuration.
//!
//! All types here are immutable values. They can be shared freely across
//! concurrently running simulation worlds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Memory size every function starts with unless configured otherwise.
pub const DEFAULT_MEMORY_MB: u32 = 128;

/// How a task invokes another task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallMode {
    /// Caller blocks until the callee's result is available.
    Sync,
    /// Fire-and-forget; the caller continues immediately.
    Async,
}

impl fmt::Display for CallMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CallMode::Sync => write!(f, "sync"),
            CallMode::Async => write!(f, "async"),
        }
    }
}

/// An outgoing call declared by a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallEdge {
    pub callee: String,
    pub mode: CallMode,
}

/// A fixed-latency interaction with an external service (database, queue, ...).
///
/// I/O latency does not scale with the memory size of the function executing
/// the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoCall {
    pub service: String,
    pub latency_ms: f64,
    pub count: u32,
}

impl IoCall {
    pub fn new(service: &str, latency_ms: f64, count: u32) -> Self {
        Self {
            service: service.to_string(),
            latency_ms,
            count,
        }
    }

    pub fn total_ms(&self) -> f64 {
        self.latency_ms * f64::from(self.count)
    }
}

/// A developer-written task: the smallest fusable unit of application logic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Unique name within the application.
    pub id: String,
    /// Milliseconds of compute at exactly 1 vCPU.
    #[serde(default)]
    pub cpu_work: f64,
    /// Maximum number of concurrent compute lanes the task can exploit.
    #[serde(default = "default_parallelism")]
    pub parallelism: u32,
    /// Fixed-latency external service interactions.
    #[serde(default)]
    pub io_calls: Vec<IoCall>,
    /// Outgoing calls, processed in declaration order.
    #[serde(default)]
    pub calls: Vec<CallEdge>,
}

fn default_parallelism() -> u32 {
    1
}

impl TaskSpec {
    pub fn new(id: &str, cpu_work: f64, parallelism: u32) -> Self {
        Self {
            id: id.to_string(),
            cpu_work,
            parallelism,
            io_calls: Vec::new(),
            calls: Vec::new(),
        }
    }

    pub fn with_io(mut self, io: IoCall) -> Self {
        self.io_calls.push(io);
        self
    }

    pub fn calls_sync(mut self, callee: &str) -> Self {
        self.calls.push(CallEdge {
            callee: callee.to_string(),
            mode: CallMode::Sync,
        });
        self
    }

    pub fn calls_async(mut self, callee: &str) -> Self {
        self.calls.push(CallEdge {
            callee: callee.to_string(),
            mode: CallMode::Async,
        });
        self
    }

    /// Total fixed I/O latency of one execution of this task.
    pub fn io_total_ms(&self) -> f64 {
        self.io_calls.iter().map(IoCall::total_ms).sum()
    }
}

/// An application: a set of tasks plus the task names external clients may invoke.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppSpec {
    pub name: String,
    pub tasks: Vec<TaskSpec>,
    pub roots: BTreeSet<String>,
}

impl AppSpec {
    pub fn new(name: &str, tasks: Vec<TaskSpec>, roots: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            tasks,
            roots: roots.iter().map(|r| r.to_string()).collect(),
        }
    }

    pub fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn task_names(&self) -> impl Iterator<Item = &str> {
        self.tasks.iter().map(|t| t.id.as_str())
    }

    /// Checks structural invariants: unique ids, known callees, no self-calls,
    /// known roots, non-negative work and latencies.
    pub fn validate(&self) -> Result<(), DomainError> {
        let mut seen = BTreeSet::new();
        for task in &self.tasks {
            if !seen.insert(task.id.as_str()) {
                return Err(DomainError::DuplicateTask(task.id.clone()));
            }
            if task.cpu_work < 0.0 {
                return Err(DomainError::NegativeWork(task.id.clone()));
            }
            if task.parallelism < 1 {
                return Err(DomainError::InvalidParallelism(task.id.clone()));
            }
            if task.io_calls.iter().any(|io| io.latency_ms < 0.0) {
                return Err(DomainError::NegativeWork(task.id.clone()));
            }
        }
        for task in &self.tasks {
            for edge in &task.calls {
                if edge.callee == task.id {
                    return Err(DomainError::SelfCall(task.id.clone()));
                }
                if !seen.contains(edge.callee.as_str()) {
                    return Err(DomainError::UnknownCallee {
                        caller: task.id.clone(),
                        callee: edge.callee.clone(),
                    });
                }
            }
        }
        if self.roots.is_empty() {
            return Err(DomainError::NoRoots);
        }
        for root in &self.roots {
            if !seen.contains(root.as_str()) {
                return Err(DomainError::UnknownRoot(root.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("duplicate task id `{0}`")]
    DuplicateTask(String),
    #[error("task `{0}` has negative work or latency")]
    NegativeWork(String),
    #[error("task `{0}` has parallelism < 1")]
    InvalidParallelism(String),
    #[error("task `{0}` calls itself")]
    SelfCall(String),
    #[error("task `{caller}` calls unknown task `{callee}`")]
    UnknownCallee { caller: String, callee: String },
    #[error("application declares no externally invocable roots")]
    NoRoots,
    #[error("root `{0}` is not a task of the application")]
    UnknownRoot(String),
    #[error("invalid platform configuration: {0}")]
    InvalidPlatform(String),
}

/// A set of tasks co-deployed as one function, with its memory size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionGroup {
    pub id: String,
    pub members: BTreeSet<String>,
    pub memory_mb: u32,
}

impl FusionGroup {
    pub fn new(id: &str, members: &[&str], memory_mb: u32) -> Self {
        Self {
            id: id.to_string(),
            members: members.iter().map(|m| m.to_string()).collect(),
            memory_mb,
        }
    }

    /// Canonical label of the group, e.g. `(A,B)`. Independent of memory.
    pub fn label(&self) -> String {
        let mut s = String::from("(");
        for (i, m) in self.members.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(m);
        }
        s.push(')');
        s
    }
}

/// The complete deployment description: groups, per-group memory, and the
/// home table routing remote calls for each task.
///
/// Tasks may be members of several groups (replication). The group notation
/// cannot express which copy receives remote calls; that information lives in
/// `home`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSetup {
    pub groups: Vec<FusionGroup>,
    /// task name -> group id of the deployment receiving remote calls for it.
    pub home: BTreeMap<String, String>,
}

impl FusionSetup {
    pub fn group(&self, id: &str) -> Option<&FusionGroup> {
        self.groups.iter().find(|g| g.id == id)
    }

    pub fn home_group(&self, task: &str) -> Option<&FusionGroup> {
        self.home.get(task).and_then(|gid| self.group(gid))
    }

    /// All groups containing `task`.
    pub fn groups_of<'a>(&'a self, task: &'a str) -> impl Iterator<Item = &'a FusionGroup> + 'a {
        self.groups.iter().filter(move |g| g.members.contains(task))
    }

    /// Every task appearing in at least one group singleton-deployed in its
    /// own group, at the given memory. The usual starting point.
    pub fn all_singletons(app: &AppSpec, memory_mb: u32) -> Self {
        let mut groups = Vec::new();
        let mut home = BTreeMap::new();
        let mut names: Vec<&str> = app.task_names().collect();
        names.sort_unstable();
        for (i, name) in names.iter().enumerate() {
            let id = format!("g{i}");
            groups.push(FusionGroup::new(&id, &[name], memory_mb));
            home.insert((*name).to_string(), id);
        }
        Self { groups, home }
    }

    /// All tasks fused into one group.
    pub fn all_fused(app: &AppSpec, memory_mb: u32) -> Self {
        let members: Vec<&str> = app.task_names().collect();
        let group = FusionGroup::new("g0", &members, memory_mb);
        let home = members
            .iter()
            .map(|m| ((*m).to_string(), "g0".to_string()))
            .collect();
        Self {
            groups: vec![group],
            home,
        }
    }

    /// Rebuilds the setup in canonical form: groups ordered by their smallest
    /// member, ids reassigned `g0..gn`, duplicate member sets merged. Homes
    /// are remapped by member set; tasks whose home group vanished fall back
    /// to the first containing group in canonical order.
    pub fn canonicalize(&self) -> FusionSetup {
        let mut sets: Vec<(BTreeSet<String>, u32)> = Vec::new();
        let mut old_home_members: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for g in &self.groups {
            if !sets.iter().any(|(m, _)| *m == g.members) {
                sets.push((g.members.clone(), g.memory_mb));
            }
        }
        for (task, gid) in &self.home {
            if let Some(g) = self.group(gid) {
                old_home_members.insert(task.clone(), g.members.clone());
            }
        }
        sets.sort_by(|a, b| a.0.iter().next().cmp(&b.0.iter().next()));
        let groups: Vec<FusionGroup> = sets
            .into_iter()
            .enumerate()
            .map(|(i, (members, memory_mb))| FusionGroup {
                id: format!("g{i}"),
                members,
                memory_mb,
            })
            .collect();
        let mut home = BTreeMap::new();
        let tasks: BTreeSet<String> = groups
            .iter()
            .flat_map(|g| g.members.iter().cloned())
            .collect();
        for task in tasks {
            let preferred = old_home_members.get(&task);
            let chosen = groups
                .iter()
                .find(|g| Some(&g.members) == preferred && g.members.contains(&task))
                .or_else(|| groups.iter().find(|g| g.members.contains(&task)));
            if let Some(g) = chosen {
                home.insert(task, g.id.clone());
            }
        }
        FusionSetup { groups, home }
    }

    /// Returns a copy with one group's memory replaced.
    pub fn with_group_memory(&self, group_id: &str, memory_mb: u32) -> FusionSetup {
        let mut setup = self.clone();
        for g in &mut setup.groups {
            if g.id == group_id {
                g.memory_mb = memory_mb;
            }
        }
        setup
    }

    /// Returns a copy with every group's memory replaced.
    pub fn with_uniform_memory(&self, memory_mb: u32) -> FusionSetup {
        let mut setup = self.clone();
        for g in &mut setup.groups {
            g.memory_mb = memory_mb;
        }
        setup
    }
}

/// One broken setup invariant. Violations are data, not errors: validation
/// reports all of them at once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SetupViolation {
    /// A task of the application appears in no group.
    MissingTask(String),
    /// A task has no home entry.
    MissingHome(String),
    /// home(task) names a group that does not exist.
    UnknownHomeGroup { task: String, group: String },
    /// home(task) does not contain the task.
    HomeNotMember { task: String, group: String },
    /// A group has no members.
    EmptyGroup(String),
    /// A group references a task unknown to the application.
    UnknownTask { group: String, task: String },
    /// Two groups share an id.
    DuplicateGroupId(String),
}

impl fmt::Display for SetupViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetupViolation::MissingTask(t) => write!(f, "task `{t}` is in no fusion group"),
            SetupViolation::MissingHome(t) => write!(f, "task `{t}` has no home group"),
            SetupViolation::UnknownHomeGroup { task, group } => {
                write!(f, "home of `{task}` names unknown group `{group}`")
            }
            SetupViolation::HomeNotMember { task, group } => {
                write!(f, "home group `{group}` of `{task}` does not contain it")
            }
            SetupViolation::EmptyGroup(g) => write!(f, "group `{g}` has no members"),
            SetupViolation::UnknownTask { group, task } => {
                write!(f, "group `{group}` references unknown task `{task}`")
            }
            SetupViolation::DuplicateGroupId(g) => write!(f, "duplicate group id `{g}`"),
        }
    }
}

/// Checks a setup against an application. Empty result means the setup is
/// deployable.
pub fn validate_setup(setup: &FusionSetup, app: &AppSpec) -> Vec<SetupViolation> {
    let mut violations = Vec::new();
    let app_tasks: BTreeSet<&str> = app.task_names().collect();

    let mut ids = BTreeSet::new();
    for g in &setup.groups {
        if !ids.insert(g.id.as_str()) {
            violations.push(SetupViolation::DuplicateGroupId(g.id.clone()));
        }
        if g.members.is_empty() {
            violations.push(SetupViolation::EmptyGroup(g.id.clone()));
        }
        for m in &g.members {
            if !app_tasks.contains(m.as_str()) {
                violations.push(SetupViolation::UnknownTask {
                    group: g.id.clone(),
                    task: m.clone(),
                });
            }
        }
    }

    for task in &app_tasks {
        let mut containing = setup.groups_of(task);
        if containing.next().is_none() {
            violations.push(SetupViolation::MissingTask((*task).to_string()));
            continue;
        }
        match setup.home.get(*task) {
            None => violations.push(SetupViolation::MissingHome((*task).to_string())),
            Some(gid) => match setup.group(gid) {
                None => violations.push(SetupViolation::UnknownHomeGroup {
                    task: (*task).to_string(),
                    group: gid.clone(),
                }),
                Some(g) if !g.members.contains(*task) => {
                    violations.push(SetupViolation::HomeNotMember {
                        task: (*task).to_string(),
                        group: gid.clone(),
                    })
                }
                Some(_) => {}
            },
        }
    }
    violations
}

/// Memory sizes not offered by the platform, reported separately from the
/// structural checks because they depend on the platform configuration.
pub fn validate_memories(setup: &FusionSetup, cfg: &PlatformConfig) -> Vec<String> {
    let mut out = Vec::new();
    for g in &setup.groups {
        if g.memory_mb != cfg.default_memory_mb && !cfg.memory_sizes_mb.contains(&g.memory_mb) {
            out.push(format!(
                "group `{}` uses memory {}MB not offered by the platform",
                g.id, g.memory_mb
            ));
        }
    }
    out
}

/// Simulated platform parameters: CPU scaling, overhead constants, pricing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlatformConfig {
    /// Memory sizes the optimizer may try, strictly increasing.
    pub memory_sizes_mb: Vec<u32>,
    /// Memory every group starts with.
    pub default_memory_mb: u32,
    /// Memory at which a function has access to exactly 1 vCPU.
    pub vcpu_reference_mb: u32,
    /// Round-trip overhead of a synchronous remote call, caller side.
    pub remote_sync_overhead_ms: f64,
    /// Caller-side cost of initiating an asynchronous remote handoff.
    pub remote_async_dispatch_ms: f64,
    /// Handler overhead added to each warm function execution.
    pub handler_warm_overhead_ms: f64,
    /// Handler overhead added to each cold function execution.
    pub handler_cold_overhead_ms: f64,
    /// Sandbox creation time for a new instance, before the handler runs.
    pub platform_cold_init_ms: f64,
    /// Idle instances older than this are not reused.
    pub instance_idle_timeout_s: f64,
    /// USD per GB-second of billed duration.
    pub price_per_gb_s: f64,
    /// USD per invocation.
    pub price_per_request: f64,
    /// Billed duration is rounded up to a multiple of this.
    pub billing_granularity_ms: f64,
    /// Whether sandbox creation time is part of the billed duration.
    pub bill_cold_init: bool,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            memory_sizes_mb: vec![768, 1024, 1536, 1650, 2048, 3000, 4096, 6144],
            default_memory_mb: DEFAULT_MEMORY_MB,
            vcpu_reference_mb: 1650,
            remote_sync_overhead_ms: 50.0,
            remote_async_dispatch_ms: 10.0,
            handler_warm_overhead_ms: 1.3,
            handler_cold_overhead_ms: 36.6,
            platform_cold_init_ms: 250.0,
            instance_idle_timeout_s: 600.0,
            price_per_gb_s: 1.6667e-5,
            price_per_request: 2e-7,
            billing_granularity_ms: 1.0,
            bill_cold_init: false,
        }
    }
}

impl PlatformConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        let nonneg = [
            self.remote_sync_overhead_ms,
            self.remote_async_dispatch_ms,
            self.handler_warm_overhead_ms,
            self.handler_cold_overhead_ms,
            self.platform_cold_init_ms,
            self.instance_idle_timeout_s,
            self.price_per_gb_s,
            self.price_per_request,
        ];
        if nonneg.iter().any(|v| *v < 0.0) || self.billing_granularity_ms <= 0.0 {
            return Err(DomainError::InvalidPlatform(
                "latencies and prices must be >= 0, granularity > 0".into(),
            ));
        }
        if !self.memory_sizes_mb.windows(2).all(|w| w[0] < w[1]) {
            return Err(DomainError::InvalidPlatform(
                "memory_sizes_mb must be strictly increasing".into(),
            ));
        }
        if self.default_memory_mb != DEFAULT_MEMORY_MB
            && !self.memory_sizes_mb.contains(&self.default_memory_mb)
        {
            return Err(DomainError::InvalidPlatform(format!(
                "default memory {}MB must be {}MB or one of the configured sizes",
                self.default_memory_mb, DEFAULT_MEMORY_MB
            )));
        }
        if self.vcpu_reference_mb == 0 {
            return Err(DomainError::InvalidPlatform(
                "vcpu_reference_mb must be positive".into(),
            ));
        }
        Ok(())
    }
}
