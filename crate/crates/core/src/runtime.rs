//! Fusion-handler semantics inside simulated deployments.
//!
//! A function execution runs an entry task and everything the handler pulls
//! into the same function: synchronous local calls are inlined, asynchronous
//! local calls are queued and drained before the function returns, remote
//! calls are handed off to the callee's home deployment. The execution is a
//! resumable state machine so it can suspend while waiting for a synchronous
//! remote call.

use std::collections::{BTreeMap, VecDeque};

use crate::domain::{AppSpec, CallMode, FusionSetup, PlatformConfig};
use crate::platform::task_compute_duration;

pub type TaskId = usize;
pub type DepIdx = usize;

/// Application compiled to dense indices for the simulator.
#[derive(Debug, Clone)]
pub struct CompiledApp {
    pub names: Vec<String>,
    pub by_name: BTreeMap<String, TaskId>,
    pub calls: Vec<Vec<(TaskId, CallMode)>>,
    pub roots: Vec<TaskId>,
    /// Per-task compute duration is resolved lazily against memory; keep the
    /// original specs around for that.
    pub specs: Vec<crate::domain::TaskSpec>,
}

impl CompiledApp {
    pub fn compile(app: &AppSpec) -> Self {
        let mut names: Vec<String> = app.tasks.iter().map(|t| t.id.clone()).collect();
        names.sort_unstable();
        let by_name: BTreeMap<String, TaskId> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let mut specs = vec![None; names.len()];
        for t in &app.tasks {
            specs[by_name[&t.id]] = Some(t.clone());
        }
        let specs: Vec<_> = specs.into_iter().map(Option::unwrap).collect();
        let calls = specs
            .iter()
            .map(|t| {
                t.calls
                    .iter()
                    .map(|e| (by_name[&e.callee], e.mode))
                    .collect()
            })
            .collect();
        let roots = app.roots.iter().map(|r| by_name[r]).collect();
        Self {
            names,
            by_name,
            calls,
            roots,
            specs,
        }
    }

    pub fn name(&self, id: TaskId) -> &str {
        &self.names[id]
    }
}

/// Identity of a deployment: which tasks it serves and at what memory size.
/// Pools survive setup changes only while this key stays the same.
pub type DeploymentKey = (Vec<TaskId>, u32);

#[derive(Debug, Clone)]
pub struct CompiledDeployment {
    pub key: DeploymentKey,
    /// Sorted member task ids; membership test is a binary search.
    pub members: Vec<TaskId>,
    pub memory_mb: u32,
    /// Canonical group label, e.g. `(A,B)`.
    pub label: String,
}

impl CompiledDeployment {
    pub fn contains(&self, task: TaskId) -> bool {
        self.members.binary_search(&task).is_ok()
    }
}

/// Setup compiled against a [`CompiledApp`].
#[derive(Debug, Clone)]
pub struct CompiledSetup {
    pub deployments: Vec<CompiledDeployment>,
    /// Home deployment per task.
    pub home: Vec<DepIdx>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum SetupFault {
    #[error("task `{0}` has no home deployment")]
    NoHome(String),
    #[error("setup invalid: {0}")]
    Invalid(String),
}

impl CompiledSetup {
    pub fn compile(setup: &FusionSetup, app: &CompiledApp) -> Result<Self, SetupFault> {
        let canon = setup.canonicalize();
        let mut deployments = Vec::new();
        let mut group_index: BTreeMap<String, DepIdx> = BTreeMap::new();
        for g in &canon.groups {
            let mut members: Vec<TaskId> = g
                .members
                .iter()
                .map(|m| {
                    app.by_name
                        .get(m)
                        .copied()
                        .ok_or_else(|| SetupFault::Invalid(format!("unknown task `{m}`")))
                })
                .collect::<Result<_, _>>()?;
            members.sort_unstable();
            group_index.insert(g.id.clone(), deployments.len());
            deployments.push(CompiledDeployment {
                key: (members.clone(), g.memory_mb),
                members,
                memory_mb: g.memory_mb,
                label: g.label(),
            });
        }
        let mut home = Vec::with_capacity(app.names.len());
        for name in &app.names {
            let gid = canon
                .home
                .get(name)
                .ok_or_else(|| SetupFault::NoHome(name.clone()))?;
            let dep = group_index
                .get(gid)
                .ok_or_else(|| SetupFault::Invalid(format!("home of `{name}` unknown")))?;
            if !deployments[*dep].contains(app.by_name[name]) {
                return Err(SetupFault::Invalid(format!(
                    "home group of `{name}` does not contain it"
                )));
            }
            home.push(*dep);
        }
        Ok(Self { deployments, home })
    }
}

/// Where a call goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dispatch {
    Local,
    Remote(DepIdx),
}

/// Routing rule: a call is local iff the callee is a member of the calling
/// deployment's group; otherwise it is handed off to the callee's home.
/// Membership wins even when the callee's home is elsewhere.
pub fn dispatch_call(current_dep: DepIdx, callee: TaskId, setup: &CompiledSetup) -> Dispatch {
    if setup.deployments[current_dep].contains(callee) {
        Dispatch::Local
    } else {
        Dispatch::Remote(setup.home[callee])
    }
}

/// A request for one function execution.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub trace_id: u64,
    /// Calling task; `None` for external client requests.
    pub caller: Option<TaskId>,
    pub task: TaskId,
    pub mode: CallMode,
    pub dep: DepIdx,
    /// Execution waiting for this invocation's response, if synchronous.
    pub reply_to: Option<u64>,
    pub external: bool,
}

/// One task execution, before task ids are resolved to names.
#[derive(Debug, Clone)]
pub struct RecordDraft {
    pub trace_id: u64,
    pub caller: Option<TaskId>,
    pub callee: TaskId,
    pub mode: CallMode,
    pub local: bool,
    pub group: String,
    pub memory_mb: u32,
    pub cold: bool,
    pub start_ms: f64,
    pub end_ms: f64,
    pub wall_ms: f64,
    /// Billing line of the function execution this task ran in.
    pub billing_ref: u64,
}

#[derive(Debug, Clone)]
struct Frame {
    task: TaskId,
    caller: Option<TaskId>,
    mode: CallMode,
    local: bool,
    started: f64,
    next_call: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ExecState {
    Running,
    AwaitingChild,
    Done,
}

/// One function execution in flight.
#[derive(Debug, Clone)]
pub struct Execution {
    pub id: u64,
    pub trace_id: u64,
    pub dep: DepIdx,
    pub instance_id: u64,
    pub cold: bool,
    pub arrival: f64,
    pub ready_at: f64,
    pub reply_to: Option<u64>,
    pub external: bool,
    pub entry_task: TaskId,
    cursor: f64,
    stack: Vec<Frame>,
    /// Asynchronous local callees, drained before the function returns.
    drain: VecDeque<(TaskId, TaskId)>,
    state: ExecState,
    pub records: Vec<RecordDraft>,
    pub finish: f64,
}

/// What the engine must do after advancing an execution.
#[derive(Debug)]
pub enum StepOutcome {
    /// Blocked on a synchronous remote call; deliver it, resume on completion.
    AwaitChild { invocation: Invocation, arrival: f64 },
    /// The function returned; wall time ends at `finish`.
    Finished { finish: f64 },
}

/// Fire-and-forget handoffs produced while advancing.
#[derive(Debug)]
pub struct AsyncSpawn {
    pub invocation: Invocation,
    pub arrival: f64,
}

impl Execution {
    pub fn start(id: u64, inv: &Invocation, acq_cold: bool, arrival: f64, ready_at: f64) -> Self {
        Self {
            id,
            trace_id: inv.trace_id,
            dep: inv.dep,
            instance_id: 0,
            cold: acq_cold,
            arrival,
            ready_at,
            reply_to: inv.reply_to,
            external: inv.external,
            entry_task: inv.task,
            cursor: ready_at,
            stack: Vec::new(),
            drain: VecDeque::new(),
            state: ExecState::Running,
            records: Vec::new(),
            finish: 0.0,
        }
    }

    /// Sets up the entry: handler overhead, then the entry task's frame.
    fn begin(&mut self, inv_caller: Option<TaskId>, inv_mode: CallMode, env: &Env) {
        let overhead = if self.cold {
            env.cfg.handler_cold_overhead_ms
        } else {
            env.cfg.handler_warm_overhead_ms
        };
        self.cursor += overhead;
        self.push_frame(self.entry_task, inv_caller, inv_mode, false, env);
    }

    fn push_frame(
        &mut self,
        task: TaskId,
        caller: Option<TaskId>,
        mode: CallMode,
        local: bool,
        env: &Env,
    ) {
        let started = self.cursor;
        let memory = env.setup.deployments[self.dep].memory_mb;
        self.cursor += task_compute_duration(&env.app.specs[task], memory, env.cfg);
        self.stack.push(Frame {
            task,
            caller,
            mode,
            local,
            started,
            next_call: 0,
        });
    }

    fn pop_frame(&mut self, env: &Env) {
        let frame = self.stack.pop().expect("pop on empty stack");
        let dep = &env.setup.deployments[self.dep];
        self.records.push(RecordDraft {
            trace_id: self.trace_id,
            caller: frame.caller,
            callee: frame.task,
            mode: frame.mode,
            local: frame.local,
            group: dep.label.clone(),
            memory_mb: dep.memory_mb,
            cold: self.cold,
            start_ms: frame.started,
            end_ms: self.cursor,
            wall_ms: self.cursor - frame.started,
            billing_ref: self.id,
        });
    }

    /// Resumes after the synchronous remote callee responded at `at`.
    pub fn resume(&mut self, at: f64) {
        debug_assert_eq!(self.state, ExecState::AwaitingChild);
        debug_assert!(at >= self.cursor);
        self.cursor = at;
        self.state = ExecState::Running;
    }

    pub fn is_awaiting(&self) -> bool {
        self.state == ExecState::AwaitingChild
    }

    /// Billed wall time: everything from handler start to function return.
    pub fn wall_ms(&self) -> f64 {
        self.finish - self.ready_at
    }
}

/// Read-only context advance() works against.
pub struct Env<'a> {
    pub app: &'a CompiledApp,
    pub setup: &'a CompiledSetup,
    pub cfg: &'a PlatformConfig,
}

/// Drives an execution until it suspends on a synchronous remote call or
/// finishes. Asynchronous remote handoffs are accumulated in `spawned`.
pub fn advance(exec: &mut Execution, env: &Env, spawned: &mut Vec<AsyncSpawn>) -> StepOutcome {
    loop {
        let Some(frame_idx) = exec.stack.len().checked_sub(1) else {
            // sync tree fully processed: drain queued async-local work
            if let Some((caller, task)) = exec.drain.pop_front() {
                exec.push_frame(task, Some(caller), CallMode::Async, true, env);
                continue;
            }
            exec.state = ExecState::Done;
            exec.finish = exec.cursor;
            return StepOutcome::Finished {
                finish: exec.cursor,
            };
        };

        let (task, next_call) = {
            let f = &exec.stack[frame_idx];
            (f.task, f.next_call)
        };
        let calls = &env.app.calls[task];
        if next_call >= calls.len() {
            exec.pop_frame(env);
            continue;
        }
        exec.stack[frame_idx].next_call += 1;
        let (callee, mode) = calls[next_call];

        match (dispatch_call(exec.dep, callee, env.setup), mode) {
            (Dispatch::Local, CallMode::Sync) => {
                exec.push_frame(callee, Some(task), CallMode::Sync, true, env);
            }
            (Dispatch::Local, CallMode::Async) => {
                // runs inside this function after the entry task's code,
                // before the response is emitted
                exec.drain.push_back((task, callee));
            }
            (Dispatch::Remote(dep), CallMode::Sync) => {
                let arrival = exec.cursor + env.cfg.remote_sync_overhead_ms;
                exec.state = ExecState::AwaitingChild;
                return StepOutcome::AwaitChild {
                    invocation: Invocation {
                        trace_id: exec.trace_id,
                        caller: Some(task),
                        task: callee,
                        mode: CallMode::Sync,
                        dep,
                        reply_to: Some(exec.id),
                        external: false,
                    },
                    arrival,
                };
            }
            (Dispatch::Remote(dep), CallMode::Async) => {
                let arrival = exec.cursor + env.cfg.remote_sync_overhead_ms;
                spawned.push(AsyncSpawn {
                    invocation: Invocation {
                        trace_id: exec.trace_id,
                        caller: Some(task),
                        task: callee,
                        mode: CallMode::Async,
                        dep,
                        reply_to: None,
                        external: false,
                    },
                    arrival,
                });
                exec.cursor += env.cfg.remote_async_dispatch_ms;
            }
        }
    }
}

/// Starts an execution: handler overhead plus the entry task frame, then
/// advances it.
pub fn launch(
    exec: &mut Execution,
    inv: &Invocation,
    env: &Env,
    spawned: &mut Vec<AsyncSpawn>,
) -> StepOutcome {
    exec.begin(inv.caller, inv.mode, env);
    advance(exec, env, spawned)
}
