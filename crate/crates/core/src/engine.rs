//! Discrete-event simulation core: one logical timeline, an event queue
//! ordered by (time, insertion sequence), deployment instance pools, and the
//! bookkeeping that turns function executions into telemetry.

use std::collections::{BTreeMap, BinaryHeap};

use crate::domain::{AppSpec, FusionSetup, PlatformConfig};
use crate::platform::{bill, BillingLine, InstancePool};
use crate::runtime::{
    advance, launch, AsyncSpawn, CompiledApp, CompiledSetup, DeploymentKey, Env, Execution,
    Invocation, SetupFault, StepOutcome,
};
use crate::telemetry::TelemetryLog;

#[derive(Debug, Clone)]
enum Event {
    Arrival(Invocation),
    Completion { exec: u64 },
    Flush,
}

#[derive(Debug, Clone)]
struct QueuedEvent {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for QueuedEvent {}
impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // BinaryHeap is a max-heap; invert for earliest-first, ties by
        // insertion sequence so the trace is deterministic
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// One isolated simulation world: an application deployed under a fusion
/// setup on the simulated platform. Worlds share nothing; any number can run
/// in parallel.
pub struct SimWorld {
    pub cfg: PlatformConfig,
    pub app: CompiledApp,
    setup: CompiledSetup,
    pools: BTreeMap<DeploymentKey, InstancePool>,
    queue: BinaryHeap<QueuedEvent>,
    now: f64,
    seq: u64,
    next_trace: u64,
    next_exec: u64,
    next_instance: u64,
    executions: BTreeMap<u64, Execution>,
    pub telemetry: TelemetryLog,
}

impl SimWorld {
    pub fn new(app: &AppSpec, setup: &FusionSetup, cfg: PlatformConfig) -> Result<Self, SetupFault> {
        app.validate()
            .map_err(|e| SetupFault::Invalid(e.to_string()))?;
        let violations = crate::domain::validate_setup(setup, app);
        if !violations.is_empty() {
            let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(SetupFault::Invalid(msgs.join("; ")));
        }
        let compiled_app = CompiledApp::compile(app);
        let compiled_setup = CompiledSetup::compile(setup, &compiled_app)?;
        let mut pools = BTreeMap::new();
        for dep in &compiled_setup.deployments {
            pools.insert(dep.key.clone(), InstancePool::new());
        }
        Ok(Self {
            cfg,
            app: compiled_app,
            setup: compiled_setup,
            pools,
            queue: BinaryHeap::new(),
            now: 0.0,
            seq: 0,
            next_trace: 0,
            next_exec: 0,
            next_instance: 0,
            executions: BTreeMap::new(),
            telemetry: TelemetryLog::default(),
        })
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Swaps the active fusion setup at an optimizer boundary. Deployments
    /// whose member set and memory size are unchanged keep their warm
    /// instances; everything else starts cold.
    pub fn set_setup(&mut self, setup: &FusionSetup) -> Result<(), SetupFault> {
        let compiled = CompiledSetup::compile(setup, &self.app)?;
        let mut pools = BTreeMap::new();
        for dep in &compiled.deployments {
            let pool = self.pools.remove(&dep.key).unwrap_or_default();
            pools.insert(dep.key.clone(), pool);
        }
        self.pools = pools;
        self.setup = compiled;
        Ok(())
    }

    /// Shuts down every running instance; the next invocation of every
    /// deployment is a cold start.
    pub fn flush_all_instances(&mut self) {
        for pool in self.pools.values_mut() {
            pool.clear();
        }
    }

    /// Schedules a platform-wide instance flush.
    pub fn schedule_flush(&mut self, at: f64) {
        self.push_event(at, Event::Flush);
    }

    /// Schedules an external client request for a root task. Returns the
    /// trace id, or an error for unknown roots (the request is rejected and
    /// nothing is billed).
    pub fn submit_external(&mut self, root: &str, at: f64) -> Result<u64, SetupFault> {
        let task = *self
            .app
            .by_name
            .get(root)
            .ok_or_else(|| SetupFault::Invalid(format!("unknown root `{root}`")))?;
        if !self.app.roots.contains(&task) {
            return Err(SetupFault::Invalid(format!(
                "task `{root}` is not externally invocable"
            )));
        }
        let trace_id = self.next_trace;
        self.next_trace += 1;
        let dep = self.setup.home[task];
        self.telemetry.begin_request(trace_id, root, at);
        self.push_event(
            at,
            Event::Arrival(Invocation {
                trace_id,
                caller: None,
                task,
                mode: crate::domain::CallMode::Sync,
                dep,
                reply_to: None,
                external: true,
            }),
        );
        Ok(trace_id)
    }

    fn push_event(&mut self, time: f64, event: Event) {
        debug_assert!(time >= self.now, "event scheduled in the past");
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(QueuedEvent { time, seq, event });
    }

    /// Runs until no events remain. All submitted requests, including
    /// asynchronous work completing after their responses, are finished when
    /// this returns.
    pub fn run_until_quiescent(&mut self) {
        while let Some(next) = self.queue.pop() {
            debug_assert!(next.time >= self.now, "time went backwards");
            self.now = next.time;
            match next.event {
                Event::Flush => self.flush_all_instances(),
                Event::Arrival(inv) => self.handle_arrival(inv),
                Event::Completion { exec } => self.handle_completion(exec),
            }
        }
    }

    fn handle_arrival(&mut self, inv: Invocation) {
        let dep = &self.setup.deployments[inv.dep];
        let pool = self
            .pools
            .get_mut(&dep.key)
            .expect("pool exists for every active deployment");
        let acq = pool.acquire(self.now, &self.cfg, &mut self.next_instance);
        pool.mark_running(acq.instance_id);

        let exec_id = self.next_exec;
        self.next_exec += 1;
        let mut exec = Execution::start(exec_id, &inv, acq.cold, self.now, acq.ready_at);
        exec.instance_id = acq.instance_id;

        let mut spawned = Vec::new();
        let outcome = {
            let env = Env {
                app: &self.app,
                setup: &self.setup,
                cfg: &self.cfg,
            };
            launch(&mut exec, &inv, &env, &mut spawned)
        };
        self.executions.insert(exec_id, exec);
        self.apply_outcome(exec_id, outcome, spawned);
    }

    fn handle_completion(&mut self, exec_id: u64) {
        let exec = self.executions.remove(&exec_id).expect("completion for live execution");
        debug_assert!((exec.finish - self.now).abs() < 1e-6);

        let dep = &self.setup.deployments[exec.dep];
        if let Some(pool) = self.pools.get_mut(&dep.key) {
            pool.release(exec.instance_id, self.now);
        }

        let (billed_ms, cost_usd) = bill(exec.wall_ms(), exec.cold, dep.memory_mb, &self.cfg);
        let line = BillingLine {
            trace_id: exec.trace_id,
            execution_id: exec.id,
            group: dep.label.clone(),
            memory_mb: dep.memory_mb,
            memory_gb: f64::from(dep.memory_mb) / 1024.0,
            billed_ms,
            cost_usd,
            cold: exec.cold,
        };
        self.telemetry.push_billing(line);
        for record in &exec.records {
            self.telemetry.push_record(record.clone(), &self.app);
        }
        if exec.external {
            self.telemetry
                .finish_request(exec.trace_id, exec.finish - exec.arrival, exec.finish);
        }
        if let Some(parent_id) = exec.reply_to {
            let finish = exec.finish;
            self.resume_parent(parent_id, finish);
        }
    }

    fn resume_parent(&mut self, parent_id: u64, at: f64) {
        let mut parent = self
            .executions
            .remove(&parent_id)
            .expect("parent execution is parked");
        debug_assert!(parent.is_awaiting());
        parent.resume(at);
        let mut spawned = Vec::new();
        let outcome = {
            let env = Env {
                app: &self.app,
                setup: &self.setup,
                cfg: &self.cfg,
            };
            advance(&mut parent, &env, &mut spawned)
        };
        self.executions.insert(parent_id, parent);
        self.apply_outcome(parent_id, outcome, spawned);
    }

    fn apply_outcome(&mut self, exec_id: u64, outcome: StepOutcome, spawned: Vec<AsyncSpawn>) {
        for spawn in spawned {
            self.push_event(spawn.arrival, Event::Arrival(spawn.invocation));
        }
        match outcome {
            StepOutcome::Finished { finish } => {
                self.push_event(finish, Event::Completion { exec: exec_id });
            }
            StepOutcome::AwaitChild { invocation, arrival } => {
                self.push_event(arrival, Event::Arrival(invocation));
            }
        }
    }

    /// Number of instances (any state) currently known to a deployment pool,
    /// keyed by canonical group label. Test hook.
    pub fn pool_sizes(&self) -> BTreeMap<String, usize> {
        self.setup
            .deployments
            .iter()
            .map(|d| (d.label.clone(), self.pools.get(&d.key).map_or(0, InstancePool::len)))
            .collect()
    }
}
