//! The two-phase fusion-setup optimizer.
//!
//! Phase one (path optimization) walks the setup toward the shape where every
//! edge observed only-synchronous is intra-group and every edge observed
//! only-asynchronous crosses groups, changing one task per step. Phase two
//! (infrastructure optimization) sweeps memory sizes per group, trying one
//! untried size per group in parallel each window, then fixes every group at
//! its cheapest size.
//!
//! Also here: the acceptance rule for measured candidates, the adapted CSP-1
//! run scheduler, and an exhaustive enumeration oracle for small apps.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{AppSpec, FusionGroup, FusionSetup, PlatformConfig};
use crate::engine::SimWorld;
use crate::telemetry::{snapshot, AnnotatedCallGraph, EdgeMode, MetricsSnapshot};

/// What "better" means when comparing measured setups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub mode: ObjectiveMode,
    /// Relative tolerance below which two values count as equal.
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Minimize cost; within tolerance, lower median latency wins.
    MinCostTiebreakRr,
    /// Minimize `alpha * cost + (1 - alpha) * latency`, both normalized by
    /// the incumbent (or baseline) snapshot.
    Weighted { alpha: f64 },
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            mode: ObjectiveMode::MinCostTiebreakRr,
            epsilon: 0.01,
        }
    }
}

impl Objective {
    pub fn validate(&self) -> Result<(), String> {
        if self.epsilon < 0.0 {
            return Err("objective epsilon must be >= 0".into());
        }
        if let ObjectiveMode::Weighted { alpha } = self.mode {
            if !(0.0..=1.0).contains(&alpha) {
                return Err("objective alpha must be in [0, 1]".into());
            }
        }
        Ok(())
    }

    /// Whether the candidate measurably improves on the incumbent.
    pub fn improves(&self, candidate: &MetricsSnapshot, incumbent: &MetricsSnapshot) -> bool {
        match self.mode {
            ObjectiveMode::MinCostTiebreakRr => {
                let strictly_cheaper =
                    candidate.mean_cost_pmi < incumbent.mean_cost_pmi * (1.0 - self.epsilon);
                let cost_tied =
                    candidate.mean_cost_pmi <= incumbent.mean_cost_pmi * (1.0 + self.epsilon);
                let faster = candidate.rr_med_ms < incumbent.rr_med_ms * (1.0 - self.epsilon);
                strictly_cheaper || (cost_tied && faster)
            }
            ObjectiveMode::Weighted { alpha } => {
                let cost_norm = if incumbent.mean_cost_pmi == 0.0 {
                    1.0
                } else {
                    candidate.mean_cost_pmi / incumbent.mean_cost_pmi
                };
                let rr_norm = if incumbent.rr_med_ms == 0.0 {
                    1.0
                } else {
                    candidate.rr_med_ms / incumbent.rr_med_ms
                };
                alpha * cost_norm + (1.0 - alpha) * rr_norm < 1.0 - self.epsilon
            }
        }
    }

    /// Picks the best of several measured candidates: cheapest cost, with
    /// candidates within tolerance of the minimum tie-broken by median
    /// latency, then by index. For the weighted mode, candidate 0 acts as the
    /// normalization baseline.
    pub fn select_best(&self, candidates: &[(f64, f64)]) -> usize {
        debug_assert!(!candidates.is_empty());
        match self.mode {
            ObjectiveMode::MinCostTiebreakRr => {
                let min_cost = candidates
                    .iter()
                    .map(|(c, _)| *c)
                    .fold(f64::INFINITY, f64::min);
                let bound = min_cost * (1.0 + self.epsilon);
                let mut best = None;
                for (i, (cost, rr)) in candidates.iter().enumerate() {
                    if *cost <= bound {
                        match best {
                            None => best = Some((i, *rr)),
                            Some((_, best_rr)) if *rr < best_rr => best = Some((i, *rr)),
                            _ => {}
                        }
                    }
                }
                best.expect("nonempty candidate list").0
            }
            ObjectiveMode::Weighted { alpha } => {
                let (base_cost, base_rr) = candidates[0];
                let score = |c: f64, r: f64| {
                    let cn = if base_cost == 0.0 { 1.0 } else { c / base_cost };
                    let rn = if base_rr == 0.0 { 1.0 } else { r / base_rr };
                    alpha * cn + (1.0 - alpha) * rn
                };
                let mut best = 0;
                let mut best_score = score(base_cost, base_rr);
                for (i, (c, r)) in candidates.iter().enumerate().skip(1) {
                    let s = score(*c, *r);
                    if s < best_score - 1e-12 {
                        best = i;
                        best_score = s;
                    }
                }
                best
            }
        }
    }
}

/// Acceptance decision for a measured candidate setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accepted,
    Rejected,
}

/// Keeps the candidate iff it improves on the incumbent under the objective;
/// otherwise the incumbent stands.
pub fn accept_or_revert(
    candidate: &MetricsSnapshot,
    incumbent: &MetricsSnapshot,
    objective: &Objective,
) -> Decision {
    if objective.improves(candidate, incumbent) {
        Decision::Accepted
    } else {
        Decision::Rejected
    }
}

// ---------------------------------------------------------------------------
// Path optimization
// ---------------------------------------------------------------------------

/// How each observed task relates to the observed call modes.
#[derive(Debug, Clone)]
struct TaskFacts {
    sync_callers: Vec<String>,
    async_callers: Vec<String>,
    external: bool,
}

fn collect_facts(graph: &AnnotatedCallGraph) -> BTreeMap<String, TaskFacts> {
    let mut facts: BTreeMap<String, TaskFacts> = BTreeMap::new();
    for task in graph.observed_tasks() {
        let mut sync_callers = Vec::new();
        let mut async_callers = Vec::new();
        for (caller, mode) in graph.callers_of(task) {
            match mode {
                EdgeMode::Sync => sync_callers.push(caller.to_string()),
                EdgeMode::Async => async_callers.push(caller.to_string()),
                EdgeMode::Mixed => {
                    sync_callers.push(caller.to_string());
                    async_callers.push(caller.to_string());
                }
            }
        }
        facts.insert(
            task.to_string(),
            TaskFacts {
                sync_callers,
                async_callers,
                external: graph.externally_called(task),
            },
        );
    }
    facts
}

/// A task anchors a fusion group when remote calls can reach it: it is
/// externally invoked, called asynchronously by someone, or has no observed
/// internal caller at all.
fn is_anchor(task: &str, facts: &BTreeMap<String, TaskFacts>) -> bool {
    match facts.get(task) {
        None => true,
        Some(f) => f.external || !f.async_callers.is_empty() || f.sync_callers.is_empty(),
    }
}

/// The anchors whose groups a purely synchronously called task must join:
/// the tops of every observed only-sync chain leading to it.
fn anchors_of(
    task: &str,
    facts: &BTreeMap<String, TaskFacts>,
    visiting: &mut BTreeSet<String>,
) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    if is_anchor(task, facts) {
        out.insert(task.to_string());
        return out;
    }
    if !visiting.insert(task.to_string()) {
        // cycle of sync calls: treat the task as its own anchor to terminate
        out.insert(task.to_string());
        return out;
    }
    let callers = facts[task].sync_callers.clone();
    for caller in callers {
        out.extend(anchors_of(&caller, facts, visiting));
    }
    visiting.remove(task);
    out
}

/// Longest observed only-sync chain from any anchor down to the task.
fn sync_depth(
    task: &str,
    facts: &BTreeMap<String, TaskFacts>,
    visiting: &mut BTreeSet<String>,
) -> usize {
    if is_anchor(task, facts) || !visiting.insert(task.to_string()) {
        return 0;
    }
    let callers = facts[task].sync_callers.clone();
    let depth = callers
        .iter()
        .map(|c| sync_depth(c, facts, visiting) + 1)
        .max()
        .unwrap_or(0);
    visiting.remove(task);
    depth
}

/// Member sets a task should belong to, derived from the current setup.
fn desired_memberships(
    task: &str,
    facts: &BTreeMap<String, TaskFacts>,
    current: &FusionSetup,
) -> Vec<BTreeSet<String>> {
    let mut desired: Vec<BTreeSet<String>> = Vec::new();
    let task_facts = &facts[task];

    if is_anchor(task, facts) {
        // the anchor keeps (or gets) an entry group free of its async callers
        let own = current.home_group(task).filter(|g| {
            valid_own_group(task, &g.members, facts)
        });
        let own_members = match own {
            Some(g) => g.members.clone(),
            None => {
                let mut only = BTreeSet::new();
                only.insert(task.to_string());
                only
            }
        };
        desired.push(own_members);
    }

    // one membership per sync-chain anchor, so every observed sync call
    // into this task runs locally
    let mut anchors = BTreeSet::new();
    if !task_facts.sync_callers.is_empty() {
        for caller in &task_facts.sync_callers {
            anchors.extend(anchors_of(caller, facts, &mut BTreeSet::new()));
        }
    }
    anchors.remove(task);
    for anchor in anchors {
        if let Some(g) = current.home_group(&anchor) {
            let members = g.members.clone();
            if !desired.contains(&members) {
                desired.push(members);
            }
        }
    }
    desired
}

/// A group can serve as an anchor's entry point iff every other member is
/// there for a synchronous chain anchored at this task (its sync callers
/// resolve to the anchor) and none of them calls the anchor asynchronously.
fn valid_own_group(
    task: &str,
    members: &BTreeSet<String>,
    facts: &BTreeMap<String, TaskFacts>,
) -> bool {
    for m in members {
        if m == task {
            continue;
        }
        let Some(m_facts) = facts.get(m) else {
            // never observed: no evidence to justify a move
            continue;
        };
        if facts
            .get(task)
            .is_some_and(|f| f.async_callers.iter().any(|c| c == m))
        {
            return false;
        }
        let mut m_sync_anchors = BTreeSet::new();
        for caller in &m_facts.sync_callers {
            m_sync_anchors.extend(anchors_of(caller, facts, &mut BTreeSet::new()));
        }
        if !m_sync_anchors.contains(task) {
            return false;
        }
    }
    true
}

/// One path-phase move: the task whose memberships were rewritten.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathMove {
    pub task: String,
    /// True when the move serves a synchronous chain, false for an eviction
    /// of asynchronously called work.
    pub sync_fix: bool,
}

/// Computes the next path-optimization move, or `None` once every observed
/// only-sync edge is intra-group and every observed only-async edge crosses
/// groups.
///
/// Moves are ordered deterministically: fixes for synchronously called tasks
/// first, deepest violation on the longest observed sync chain first, ties
/// by descending task name. One move rewrites exactly one task's group
/// memberships (and home).
pub fn path_step(
    graph: &AnnotatedCallGraph,
    current: &FusionSetup,
    app: &AppSpec,
) -> Option<(FusionSetup, PathMove)> {
    let facts = collect_facts(graph);
    let mut violations: Vec<(bool, usize, String)> = Vec::new();

    for task in graph.observed_tasks() {
        if app.task(task).is_none() {
            continue;
        }
        let desired = desired_memberships(task, &facts, current);
        if desired.is_empty() {
            continue;
        }
        let current_memberships: Vec<BTreeSet<String>> = current
            .groups_of(task)
            .map(|g| g.members.clone())
            .collect();
        let desired_with_task: Vec<BTreeSet<String>> = desired
            .iter()
            .map(|members| {
                let mut m = members.clone();
                m.insert(task.to_string());
                m
            })
            .collect();
        let matches = current_memberships.len() == desired_with_task.len()
            && desired_with_task
                .iter()
                .all(|d| current_memberships.contains(d));
        let home_ok = if is_anchor(task, &facts) {
            // the entry group is pinned: remote calls must land there
            current
                .home_group(task)
                .is_some_and(|g| Some(&g.members) == desired_with_task.first())
        } else {
            // any desired group works as home; it only changes when invalid
            current
                .home_group(task)
                .is_some_and(|g| desired_with_task.contains(&g.members))
        };
        if !matches || !home_ok {
            let sync_fix = !is_anchor(task, &facts);
            let depth = sync_depth(task, &facts, &mut BTreeSet::new());
            violations.push((sync_fix, depth, task.to_string()));
        }
    }

    if violations.is_empty() {
        return None;
    }
    // sync fixes first, deepest first, then descending name
    violations.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(b.1.cmp(&a.1))
            .then(b.2.cmp(&a.2))
    });
    let (sync_fix, _, task) = violations.remove(0);
    let next = apply_move(&task, &facts, current);
    Some((next, PathMove { task, sync_fix }))
}

fn expected_home(
    task: &str,
    desired_with_task: &[BTreeSet<String>],
    facts: &BTreeMap<String, TaskFacts>,
) -> Option<BTreeSet<String>> {
    if desired_with_task.is_empty() {
        return None;
    }
    if is_anchor(task, facts) {
        // the anchor's entry group is the first desired membership
        return Some(desired_with_task[0].clone());
    }
    // first containing group in canonical order
    desired_with_task
        .iter()
        .min_by(|a, b| a.iter().next().cmp(&b.iter().next()))
        .cloned()
}

/// Rewrites one task's memberships to the desired set, preserving every
/// other task's placement, then canonicalizes.
fn apply_move(
    task: &str,
    facts: &BTreeMap<String, TaskFacts>,
    current: &FusionSetup,
) -> FusionSetup {
    let desired = desired_memberships(task, facts, current);
    let desired_with_task: Vec<BTreeSet<String>> = desired
        .iter()
        .map(|members| {
            let mut m = members.clone();
            m.insert(task.to_string());
            m
        })
        .collect();

    let mut groups: Vec<FusionGroup> = Vec::new();
    for g in &current.groups {
        let mut members = g.members.clone();
        let without: BTreeSet<String> = {
            let mut w = members.clone();
            w.remove(task);
            w
        };
        let is_target = desired
            .iter()
            .any(|d| *d == without || *d == members);
        if members.contains(task) && !is_target {
            members.remove(task);
        } else if is_target {
            members.insert(task.to_string());
        }
        if !members.is_empty() {
            groups.push(FusionGroup {
                id: g.id.clone(),
                members,
                memory_mb: g.memory_mb,
            });
        }
    }
    // targets that matched no existing group become new groups (the eviction
    // case creates a fresh singleton)
    let default_mem = current
        .home_group(task)
        .map_or(crate::domain::DEFAULT_MEMORY_MB, |g| g.memory_mb);
    for d in &desired_with_task {
        if !groups.iter().any(|g| g.members == *d) {
            let mut members = BTreeSet::new();
            members.insert(task.to_string());
            groups.push(FusionGroup {
                id: format!("new_{task}"),
                members,
                memory_mb: default_mem,
            });
        }
    }

    let mut home = current.home.clone();
    // the home group as it looks after this move
    let home_after_move = current
        .home
        .get(task)
        .and_then(|gid| groups.iter().find(|g| g.id == *gid))
        .map(|g| g.members.clone());
    let keep = match (&home_after_move, is_anchor(task, facts)) {
        // non-anchors keep a still-valid home
        (Some(members), false) => desired_with_task.contains(members),
        _ => false,
    };
    if !keep {
        if let Some(want) = expected_home(task, &desired_with_task, facts) {
            if let Some(g) = groups.iter().find(|g| g.members == want) {
                home.insert(task.to_string(), g.id.clone());
            } else if let Some(g) = groups.iter().find(|g| g.members.contains(task)) {
                home.insert(task.to_string(), g.id.clone());
            }
        }
    }
    // tasks whose home group vanished fall back during canonicalization
    FusionSetup { groups, home }.canonicalize()
}

/// Runs `path_step` to its fixpoint without measurements. Useful for oracle
/// comparisons and for computing the all-sync-local target directly.
pub fn path_fixpoint(graph: &AnnotatedCallGraph, start: &FusionSetup, app: &AppSpec) -> FusionSetup {
    let mut setup = start.canonicalize();
    let bound = 4 * app.tasks.len().max(1);
    for _ in 0..bound {
        match path_step(graph, &setup, app) {
            Some((next, _)) => setup = next,
            None => break,
        }
    }
    setup
}

// ---------------------------------------------------------------------------
// Infrastructure optimization
// ---------------------------------------------------------------------------

/// Planned memory trials: one untried size per group per window, groups swept
/// in parallel. Groups with fewer remaining sizes sit at their path-phase
/// size while the others finish.
#[derive(Debug, Clone, PartialEq)]
pub struct InfraPlan {
    /// Group id -> ordered sizes still to try.
    pub remaining: BTreeMap<String, Vec<u32>>,
    pub windows: usize,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum InfraError {
    #[error("platform offers no memory sizes to sweep")]
    EmptySizeList,
    #[error("group `{0}` has no measurement for size {1}")]
    MissingTrial(String, u32),
}

/// Plans the sweep over every configured size except each group's
/// already-measured current one.
pub fn infra_sweep_plan(path_setup: &FusionSetup, cfg: &PlatformConfig) -> Result<InfraPlan, InfraError> {
    if cfg.memory_sizes_mb.is_empty() {
        return Err(InfraError::EmptySizeList);
    }
    let mut remaining = BTreeMap::new();
    let mut windows = 0;
    for g in &path_setup.groups {
        let sizes: Vec<u32> = cfg
            .memory_sizes_mb
            .iter()
            .copied()
            .filter(|s| *s != g.memory_mb)
            .collect();
        windows = windows.max(sizes.len());
        remaining.insert(g.id.clone(), sizes);
    }
    Ok(InfraPlan { remaining, windows })
}

impl InfraPlan {
    /// The setup to deploy for trial window `i`: every group at its i-th
    /// untried size, exhausted groups back at the path setup's size.
    pub fn window_setup(&self, path_setup: &FusionSetup, window: usize) -> FusionSetup {
        let mut setup = path_setup.clone();
        for g in &mut setup.groups {
            if let Some(sizes) = self.remaining.get(&g.id) {
                if let Some(mem) = sizes.get(window) {
                    g.memory_mb = *mem;
                }
            }
        }
        setup
    }

    /// Total number of (group, size) trials.
    pub fn trial_count(&self) -> usize {
        self.remaining.values().map(Vec::len).sum()
    }
}

/// One group's measured behavior at one memory size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeSample {
    pub memory_mb: u32,
    /// Median per-trace cost attributed to the group.
    pub cost_usd: f64,
    /// Median wall time of the group's executions.
    pub wall_ms: f64,
}

/// Picks each group's memory independently: the size with the lowest
/// attributed cost; sizes within the objective's tolerance of the minimum
/// are tie-broken by lower wall time, then by smaller memory.
pub fn infra_select(
    path_setup: &FusionSetup,
    samples: &BTreeMap<String, Vec<SizeSample>>,
    plan: &InfraPlan,
    objective: &Objective,
) -> Result<FusionSetup, InfraError> {
    let mut setup = path_setup.clone();
    for g in &mut setup.groups {
        let group_samples = samples
            .get(&g.id)
            .ok_or_else(|| InfraError::MissingTrial(g.id.clone(), g.memory_mb))?;
        if let Some(planned) = plan.remaining.get(&g.id) {
            for size in planned {
                if !group_samples.iter().any(|s| s.memory_mb == *size) {
                    return Err(InfraError::MissingTrial(g.id.clone(), *size));
                }
            }
        }
        let min_cost = group_samples
            .iter()
            .map(|s| s.cost_usd)
            .fold(f64::INFINITY, f64::min);
        let bound = min_cost * (1.0 + objective.epsilon);
        let best = group_samples
            .iter()
            .filter(|s| s.cost_usd <= bound)
            .min_by(|a, b| {
                a.wall_ms
                    .total_cmp(&b.wall_ms)
                    .then(a.memory_mb.cmp(&b.memory_mb))
            })
            .expect("at least the current size is sampled");
        g.memory_mb = best.memory_mb;
    }
    Ok(setup)
}

// ---------------------------------------------------------------------------
// CSP-1 run scheduling
// ---------------------------------------------------------------------------

/// Parameters of the adapted continuous sampling plan deciding when the
/// optimizer looks at the application again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Csp1Params {
    pub base_interval: u64,
    pub delta_floor: f64,
    pub min_interval: u64,
    pub max_interval: u64,
    /// Consecutive small-change runs before sampling mode engages.
    pub clearance: u32,
    /// Probability of running in each max_interval window while sampling.
    pub sampling_fraction: f64,
    pub threshold: f64,
}

impl Default for Csp1Params {
    fn default() -> Self {
        Self {
            base_interval: 1000,
            delta_floor: 0.01,
            min_interval: 500,
            max_interval: 50_000,
            clearance: 5,
            sampling_fraction: 0.1,
            threshold: 0.05,
        }
    }
}

/// Scheduler state. Large inter-run changes shorten the next interval; after
/// `clearance` consecutive quiet runs it switches to sparse sampling until a
/// change at or above the threshold resets it.
#[derive(Debug, Clone)]
pub struct Csp1State {
    pub params: Csp1Params,
    pub consecutive_small: u32,
    pub sampling: bool,
    rng: ChaCha8Rng,
}

impl Csp1State {
    pub fn new(params: Csp1Params, seed: u64) -> Self {
        Self {
            params,
            consecutive_small: 0,
            sampling: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Requests to collect before the optimizer runs next, given the
    /// relative change `delta` observed between the last two runs.
    pub fn next_interval(&mut self, delta: f64) -> u64 {
        debug_assert!(delta >= 0.0);
        if delta >= self.params.threshold {
            self.consecutive_small = 0;
            self.sampling = false;
        } else {
            self.consecutive_small += 1;
            if self.consecutive_small >= self.params.clearance {
                self.sampling = true;
            }
        }
        if self.sampling {
            // geometric draw: skip whole max_interval windows while the
            // sampling coin comes up tails
            let mut windows = 1;
            while self.rng.gen::<f64>() >= self.params.sampling_fraction {
                windows += 1;
            }
            return windows * self.params.max_interval;
        }
        let raw = self.params.base_interval as f64 / delta.max(self.params.delta_floor);
        (raw.round() as u64).clamp(self.params.min_interval, self.params.max_interval)
    }
}

/// When the optimizer runs: a fixed cadence (the reproduction default) or
/// the adapted CSP-1 plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    Fixed { requests: u64 },
    Csp1(Csp1Params),
}

impl Default for Cadence {
    fn default() -> Self {
        Cadence::Fixed { requests: 1000 }
    }
}

// ---------------------------------------------------------------------------
// Exhaustive oracle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, thiserror::Error)]
pub enum OracleError {
    #[error("exhaustive search supports at most {limit} tasks, app has {actual}")]
    TooManyTasks { limit: usize, actual: usize },
    #[error("exhaustive search supports at most {limit} memory sizes, platform offers {actual}")]
    TooManySizes { limit: usize, actual: usize },
    #[error("simulation failed: {0}")]
    Sim(String),
}

pub const ORACLE_MAX_TASKS: usize = 6;
pub const ORACLE_MAX_SIZES: usize = 3;

/// Every partition of `n` elements, as restricted-growth strings.
pub fn partitions(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut current = vec![0usize; n];
    loop {
        out.push(current.clone());
        // next restricted growth string
        let mut i = n;
        loop {
            if i == 1 {
                return out;
            }
            i -= 1;
            let max_prefix = current[..i].iter().copied().max().unwrap_or(0);
            if current[i] <= max_prefix {
                current[i] += 1;
                for v in current.iter_mut().skip(i + 1) {
                    *v = 0;
                }
                break;
            }
        }
    }
}

/// Simulates every partition of the app's tasks into groups, times every
/// per-group memory assignment, under the identical workload, and returns the
/// objective-minimal setup with its snapshot.
pub fn brute_force_optimal(
    app: &AppSpec,
    arrivals: &[(f64, String)],
    cfg: &PlatformConfig,
    objective: &Objective,
) -> Result<(FusionSetup, MetricsSnapshot), OracleError> {
    let n = app.tasks.len();
    if n > ORACLE_MAX_TASKS {
        return Err(OracleError::TooManyTasks {
            limit: ORACLE_MAX_TASKS,
            actual: n,
        });
    }
    let mut sizes: Vec<u32> = vec![cfg.default_memory_mb];
    for s in &cfg.memory_sizes_mb {
        if !sizes.contains(s) {
            sizes.push(*s);
        }
    }
    if sizes.len() > ORACLE_MAX_SIZES {
        return Err(OracleError::TooManySizes {
            limit: ORACLE_MAX_SIZES,
            actual: sizes.len(),
        });
    }

    let mut names: Vec<String> = app.task_names().map(str::to_string).collect();
    names.sort_unstable();

    let mut candidates: Vec<(FusionSetup, MetricsSnapshot)> = Vec::new();
    for partition in partitions(n) {
        let group_count = partition.iter().copied().max().unwrap_or(0) + 1;
        let mut assignment = vec![0usize; group_count];
        loop {
            let mut groups: Vec<FusionGroup> = (0..group_count)
                .map(|gi| FusionGroup {
                    id: format!("g{gi}"),
                    members: BTreeSet::new(),
                    memory_mb: sizes[assignment[gi]],
                })
                .collect();
            for (task_idx, group_idx) in partition.iter().enumerate() {
                groups[*group_idx].members.insert(names[task_idx].clone());
            }
            let home = names
                .iter()
                .enumerate()
                .map(|(ti, name)| (name.clone(), format!("g{}", partition[ti])))
                .collect();
            let setup = FusionSetup { groups, home }.canonicalize();
            let snap = evaluate_setup(app, &setup, cfg, arrivals)
                .map_err(OracleError::Sim)?;
            candidates.push((setup, snap));

            // next memory assignment
            let mut i = 0;
            loop {
                if i == group_count {
                    break;
                }
                assignment[i] += 1;
                if assignment[i] < sizes.len() {
                    break;
                }
                assignment[i] = 0;
                i += 1;
            }
            if i == group_count {
                break;
            }
        }
    }

    let values: Vec<(f64, f64)> = candidates
        .iter()
        .map(|(_, s)| (s.mean_cost_pmi, s.rr_med_ms))
        .collect();
    let best = objective.select_best(&values);
    Ok(candidates.swap_remove(best))
}

/// Runs one fresh world over the workload and snapshots everything.
pub fn evaluate_setup(
    app: &AppSpec,
    setup: &FusionSetup,
    cfg: &PlatformConfig,
    arrivals: &[(f64, String)],
) -> Result<MetricsSnapshot, String> {
    let mut world = SimWorld::new(app, setup, cfg.clone()).map_err(|e| e.to_string())?;
    for (at, root) in arrivals {
        world.submit_external(root, *at).map_err(|e| e.to_string())?;
    }
    world.run_until_quiescent();
    snapshot(&world.telemetry.full_window(), "oracle").map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TaskSpec;
    use crate::notation::{format_setup, parse_setup_notation};
    use crate::telemetry::build_call_graph;
    use crate::telemetry::InvocationRecord;
    use crate::domain::CallMode;

    fn snap(cost: f64, rr: f64) -> MetricsSnapshot {
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
    fn accept_on_cost_drop() {
        let obj = Objective::default();
        assert_eq!(
            accept_or_revert(&snap(48.26, 100.0), &snap(57.04, 100.0), &obj),
            Decision::Accepted
        );
    }

    #[test]
    fn revert_on_identical() {
        let obj = Objective::default();
        assert_eq!(
            accept_or_revert(&snap(57.0, 100.0), &snap(57.0, 100.0), &obj),
            Decision::Rejected
        );
    }

    #[test]
    fn accept_on_rr_tiebreak() {
        let obj = Objective::default();
        assert_eq!(
            accept_or_revert(&snap(100.0, 171.0), &snap(100.0, 237.0), &obj),
            Decision::Accepted
        );
    }

    fn rec(caller: &str, callee: &str, mode: CallMode) -> InvocationRecord {
        InvocationRecord {
            trace_id: 0,
            caller: caller.into(),
            callee: callee.into(),
            mode,
            local: false,
            group: "(x)".into(),
            memory_mb: 128,
            cold: false,
            start_ms: 0.0,
            end_ms: 1.0,
            wall_ms: 1.0,
            billing_ref: 0,
        }
    }

    fn tree_records() -> Vec<InvocationRecord> {
        vec![
            rec("EXTERNAL", "A", CallMode::Sync),
            rec("A", "B", CallMode::Sync),
            rec("B", "D", CallMode::Sync),
            rec("B", "E", CallMode::Sync),
            rec("A", "C", CallMode::Async),
            rec("C", "F", CallMode::Async),
            rec("C", "G", CallMode::Async),
        ]
    }

    fn tree_app() -> AppSpec {
        AppSpec::new(
            "tree",
            vec![
                TaskSpec::new("A", 1.0, 1).calls_sync("B").calls_async("C"),
                TaskSpec::new("B", 1.0, 1).calls_sync("D").calls_sync("E"),
                TaskSpec::new("C", 1.0, 1).calls_async("F").calls_async("G"),
                TaskSpec::new("D", 1.0, 1),
                TaskSpec::new("E", 1.0, 1),
                TaskSpec::new("F", 1.0, 1),
                TaskSpec::new("G", 1.0, 1),
            ],
            &["A"],
        )
    }

    #[test]
    fn path_walk_reproduces_pinned_tree_sequence() {
        let app = tree_app();
        let graph = build_call_graph(&tree_records());
        let mut setup =
            parse_setup_notation("(A)-(B)-(C)-(D)-(E)-(F)-(G)", &app).unwrap();
        let mut seen = Vec::new();
        while let Some((next, mv)) = path_step(&graph, &setup, &app) {
            seen.push((mv.task.clone(), format_setup(&next)));
            setup = next;
            assert!(seen.len() < 10, "path walk does not terminate");
        }
        assert_eq!(
            seen,
            vec![
                ("E".to_string(), "(A,E)-(B)-(C)-(D)-(F)-(G)".to_string()),
                ("D".to_string(), "(A,D,E)-(B)-(C)-(F)-(G)".to_string()),
                ("B".to_string(), "(A,B,D,E)-(C)-(F)-(G)".to_string()),
            ]
        );
    }

    #[test]
    fn single_task_is_immediately_done() {
        let app = AppSpec::new("one", vec![TaskSpec::new("A", 1.0, 1)], &["A"]);
        let graph = build_call_graph(&[rec("EXTERNAL", "A", CallMode::Sync)]);
        let setup = parse_setup_notation("(A)", &app).unwrap();
        assert!(path_step(&graph, &setup, &app).is_none());
    }

    #[test]
    fn async_callee_is_evicted_from_callers_group() {
        let app = AppSpec::new(
            "two",
            vec![
                TaskSpec::new("A", 1.0, 1).calls_async("B"),
                TaskSpec::new("B", 1.0, 1),
            ],
            &["A"],
        );
        let graph = build_call_graph(&[
            rec("EXTERNAL", "A", CallMode::Sync),
            rec("A", "B", CallMode::Async),
        ]);
        let setup = parse_setup_notation("(A,B)", &app).unwrap();
        let (next, mv) = path_step(&graph, &setup, &app).unwrap();
        assert!(!mv.sync_fix);
        assert_eq!(format_setup(&next), "(A)-(B)");
        assert!(path_step(&graph, &next, &app).is_none());
    }

    #[test]
    fn mixed_callers_replicate_membership_and_keep_own_home() {
        // S calls M synchronously, X calls M asynchronously
        let app = AppSpec::new(
            "mixed",
            vec![
                TaskSpec::new("S", 1.0, 1).calls_sync("M"),
                TaskSpec::new("X", 1.0, 1).calls_async("M"),
                TaskSpec::new("M", 1.0, 1),
            ],
            &["S", "X"],
        );
        let graph = build_call_graph(&[
            rec("EXTERNAL", "S", CallMode::Sync),
            rec("EXTERNAL", "X", CallMode::Sync),
            rec("S", "M", CallMode::Sync),
            rec("X", "M", CallMode::Async),
        ]);
        let setup = parse_setup_notation("(M)-(S)-(X)", &app).unwrap();
        let fixed = path_fixpoint(&graph, &setup, &app);
        assert_eq!(format_setup(&fixed), "(M)-(M,S)-(X)");
        // remote/async entry still routes to M's own group
        assert_eq!(fixed.home_group("M").unwrap().label(), "(M)");
    }

    #[test]
    fn infra_plan_counts_windows_and_trials() {
        let app = tree_app();
        let cfg = PlatformConfig::default();
        let path = parse_setup_notation("(A,B,D,E)-(C)-(F)-(G)", &app).unwrap();
        let plan = infra_sweep_plan(&path, &cfg).unwrap();
        assert_eq!(plan.windows, 8);
        assert_eq!(plan.trial_count(), 32);
        // every window assigns one untried size to every group
        let w0 = plan.window_setup(&path, 0);
        assert!(w0.groups.iter().all(|g| g.memory_mb == 768));
        let w7 = plan.window_setup(&path, 7);
        assert!(w7.groups.iter().all(|g| g.memory_mb == 6144));
    }

    #[test]
    fn infra_plan_empty_when_only_default_size() {
        let app = AppSpec::new("one", vec![TaskSpec::new("A", 1.0, 1)], &["A"]);
        let cfg = PlatformConfig {
            memory_sizes_mb: vec![128],
            ..PlatformConfig::default()
        };
        let path = parse_setup_notation("(A)", &app).unwrap();
        let plan = infra_sweep_plan(&path, &cfg).unwrap();
        assert_eq!(plan.windows, 0);
        assert_eq!(plan.trial_count(), 0);
    }

    #[test]
    fn infra_plan_rejects_empty_size_list() {
        let app = AppSpec::new("one", vec![TaskSpec::new("A", 1.0, 1)], &["A"]);
        let cfg = PlatformConfig {
            memory_sizes_mb: vec![],
            ..PlatformConfig::default()
        };
        let path = parse_setup_notation("(A)", &app).unwrap();
        assert_eq!(
            infra_sweep_plan(&path, &cfg).unwrap_err(),
            InfraError::EmptySizeList
        );
    }

    #[test]
    fn infra_select_prefers_cheapest_then_faster_within_tolerance() {
        let app = tree_app();
        let path = parse_setup_notation("(A,B,D,E)-(C)-(F)-(G)", &app).unwrap();
        let cfg = PlatformConfig {
            memory_sizes_mb: vec![1024],
            ..PlatformConfig::default()
        };
        let plan = infra_sweep_plan(&path, &cfg).unwrap();
        let mut samples = BTreeMap::new();
        for g in &path.groups {
            let (a, b) = match g.label().as_str() {
                // cheap and slow at 128 vs tied-cost fast at 1024
                "(F)" => (
                    SizeSample { memory_mb: 128, cost_usd: 1.00e-5, wall_ms: 5000.0 },
                    SizeSample { memory_mb: 1024, cost_usd: 1.005e-5, wall_ms: 700.0 },
                ),
                // clearly cheaper at 128
                _ => (
                    SizeSample { memory_mb: 128, cost_usd: 1.0e-6, wall_ms: 100.0 },
                    SizeSample { memory_mb: 1024, cost_usd: 2.0e-6, wall_ms: 50.0 },
                ),
            };
            samples.insert(g.id.clone(), vec![a, b]);
        }
        let chosen = infra_select(&path, &samples, &plan, &Objective::default()).unwrap();
        for g in &chosen.groups {
            if g.label() == "(F)" {
                assert_eq!(g.memory_mb, 1024);
            } else {
                assert_eq!(g.memory_mb, 128);
            }
        }
    }

    #[test]
    fn csp1_interval_formula() {
        let mut state = Csp1State::new(Csp1Params::default(), 7);
        assert_eq!(state.next_interval(1.0), 1000);
        let mut state = Csp1State::new(Csp1Params::default(), 7);
        // tiny change clamps at the maximum interval
        assert_eq!(state.next_interval(0.0), 50_000);
        let mut state = Csp1State::new(Csp1Params::default(), 7);
        assert_eq!(state.next_interval(2.0), 500);
    }

    #[test]
    fn csp1_sampling_engages_after_clearance_and_resets() {
        let mut state = Csp1State::new(Csp1Params::default(), 7);
        for _ in 0..4 {
            state.next_interval(0.0);
            assert!(!state.sampling);
        }
        let interval = state.next_interval(0.0);
        assert!(state.sampling);
        assert_eq!(interval % state.params.max_interval, 0);
        // a large change resets continuous mode
        assert_eq!(state.next_interval(1.0), 1000);
        assert!(!state.sampling);
        assert_eq!(state.consecutive_small, 0);
    }

    #[test]
    fn partition_counts_match_bell_numbers() {
        assert_eq!(partitions(1).len(), 1);
        assert_eq!(partitions(2).len(), 2);
        assert_eq!(partitions(3).len(), 5);
        assert_eq!(partitions(4).len(), 15);
        assert_eq!(partitions(5).len(), 52);
        assert_eq!(partitions(6).len(), 203);
    }

    #[test]
    fn oracle_rejects_oversized_apps() {
        let tasks: Vec<TaskSpec> = (0..7)
            .map(|i| TaskSpec::new(&format!("T{i}"), 1.0, 1))
            .collect();
        let app = AppSpec::new("big", tasks, &["T0"]);
        let err = brute_force_optimal(&app, &[], &PlatformConfig::default(), &Objective::default());
        assert!(matches!(err, Err(OracleError::TooManyTasks { .. })));
    }

    #[test]
    fn oracle_fuses_sync_chain_under_overhead() {
        // two-task sync chain with 50ms remote overhead: fusing wins
        let app = AppSpec::new(
            "chain",
            vec![
                TaskSpec::new("A", 100.0, 1).calls_sync("B"),
                TaskSpec::new("B", 100.0, 1),
            ],
            &["A"],
        );
        let cfg = PlatformConfig {
            memory_sizes_mb: vec![],
            ..PlatformConfig::default()
        };
        let arrivals: Vec<(f64, String)> = (0..20)
            .map(|i| (f64::from(i) * 5000.0, "A".to_string()))
            .collect();
        let (best, _) = brute_force_optimal(&app, &arrivals, &cfg, &Objective::default()).unwrap();
        assert_eq!(format_setup(&best), "(A,B)");
    }

    #[test]
    fn oracle_splits_heavy_async_task() {
        // the heavy asynchronous callee leaves the critical path: costs tie
        // within tolerance, latency breaks the tie toward the split setup
        let app = AppSpec::new(
            "split",
            vec![
                TaskSpec::new("A", 50.0, 1).calls_sync("B").calls_async("C"),
                TaskSpec::new("B", 50.0, 1),
                TaskSpec::new("C", 900.0, 1),
            ],
            &["A"],
        );
        let cfg = PlatformConfig {
            memory_sizes_mb: vec![],
            ..PlatformConfig::default()
        };
        let arrivals: Vec<(f64, String)> = (0..20)
            .map(|i| (f64::from(i) * 30_000.0, "A".to_string()))
            .collect();
        let (best, _) = brute_force_optimal(&app, &arrivals, &cfg, &Objective::default()).unwrap();
        assert_eq!(format_setup(&best), "(A,B)-(C)");
    }
}
