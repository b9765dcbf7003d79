//! Platform cost and lifecycle model: memory-proportional CPU, per-invocation
//! billing, and function instance pools with cold starts.

use serde::Serialize;

use crate::domain::{PlatformConfig, TaskSpec};

/// Fraction of a vCPU available at the given memory size.
///
/// CPU scales linearly with memory; at `vcpu_reference_mb` the function has
/// access to exactly one vCPU.
pub fn vcpus_for_memory(memory_mb: u32, cfg: &PlatformConfig) -> f64 {
    debug_assert!(memory_mb > 0);
    f64::from(memory_mb) / f64::from(cfg.vcpu_reference_mb)
}

/// Duration of one execution of the task's own work at the given memory.
///
/// Compute time shrinks with memory until the available vCPUs reach the
/// task's parallelism; fixed I/O latency is unaffected by memory.
pub fn task_compute_duration(task: &TaskSpec, memory_mb: u32, cfg: &PlatformConfig) -> f64 {
    let vcpus = vcpus_for_memory(memory_mb, cfg);
    let effective = vcpus.min(f64::from(task.parallelism));
    let compute = if task.cpu_work == 0.0 {
        0.0
    } else {
        task.cpu_work / effective
    };
    compute + task.io_total_ms()
}

/// One function execution's bill.
#[derive(Debug, Clone, Serialize)]
pub struct BillingLine {
    pub trace_id: u64,
    /// Execution the line belongs to; invocation records reference this.
    pub execution_id: u64,
    /// Canonical label of the fusion group the deployment serves.
    pub group: String,
    pub memory_mb: u32,
    pub memory_gb: f64,
    pub billed_ms: f64,
    pub cost_usd: f64,
    pub cold: bool,
}

/// Computes the billed duration and cost for one execution.
///
/// Billed duration is the wall time (plus sandbox init when configured),
/// rounded up to the billing granularity. Cost is duration times memory at
/// the GB-second rate, plus the per-request fee.
pub fn bill(wall_ms: f64, cold: bool, memory_mb: u32, cfg: &PlatformConfig) -> (f64, f64) {
    debug_assert!(wall_ms >= 0.0);
    let mut duration = wall_ms;
    if cold && cfg.bill_cold_init {
        duration += cfg.platform_cold_init_ms;
    }
    let g = cfg.billing_granularity_ms;
    let units = (duration / g - 1e-9).ceil().max(0.0);
    let billed_ms = units * g;
    let memory_gb = f64::from(memory_mb) / 1024.0;
    let cost = billed_ms / 1000.0 * memory_gb * cfg.price_per_gb_s + cfg.price_per_request;
    (billed_ms, cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceState {
    ColdStarting,
    Busy,
    Idle,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub id: u64,
    pub state: InstanceState,
    /// Simulation time the instance last became idle.
    pub idle_since: f64,
}

/// Result of claiming an instance for an invocation.
#[derive(Debug, Clone, Copy)]
pub struct Acquisition {
    pub instance_id: u64,
    pub cold: bool,
    /// Time the function code can start running.
    pub ready_at: f64,
}

/// Pool of instances for one deployment. Scaling is unbounded: a request that
/// finds no reusable idle instance always gets a fresh one.
#[derive(Debug, Clone, Default)]
pub struct InstancePool {
    instances: Vec<Instance>,
}

impl InstancePool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Claims an instance at `now`. Reuses the most recently idle instance
    /// that has not outlived the idle timeout; otherwise creates a cold one
    /// that becomes ready after the platform init delay. Expired idle
    /// instances are dropped.
    pub fn acquire(&mut self, now: f64, cfg: &PlatformConfig, next_id: &mut u64) -> Acquisition {
        let timeout_ms = cfg.instance_idle_timeout_s * 1000.0;
        self.instances
            .retain(|i| i.state != InstanceState::Idle || i.idle_since >= now - timeout_ms);

        let candidate = self
            .instances
            .iter_mut()
            .filter(|i| i.state == InstanceState::Idle)
            .max_by(|a, b| {
                a.idle_since
                    .total_cmp(&b.idle_since)
                    .then(b.id.cmp(&a.id))
            });
        if let Some(instance) = candidate {
            instance.state = InstanceState::Busy;
            return Acquisition {
                instance_id: instance.id,
                cold: false,
                ready_at: now,
            };
        }

        let id = *next_id;
        *next_id += 1;
        self.instances.push(Instance {
            id,
            state: InstanceState::ColdStarting,
            idle_since: now,
        });
        Acquisition {
            instance_id: id,
            cold: true,
            ready_at: now + cfg.platform_cold_init_ms,
        }
    }

    /// Marks a cold-starting instance as busy once its init completed.
    pub fn mark_running(&mut self, instance_id: u64) {
        if let Some(i) = self.instances.iter_mut().find(|i| i.id == instance_id) {
            i.state = InstanceState::Busy;
        }
    }

    /// Returns an instance to the pool at `now`.
    pub fn release(&mut self, instance_id: u64, now: f64) {
        if let Some(i) = self.instances.iter_mut().find(|i| i.id == instance_id) {
            debug_assert!(i.state != InstanceState::Idle, "double release");
            i.state = InstanceState::Idle;
            i.idle_since = now;
        }
    }

    pub fn clear(&mut self) {
        self.instances.clear();
    }

    pub fn idle_count(&self) -> usize {
        self.instances
            .iter()
            .filter(|i| i.state == InstanceState::Idle)
            .count()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}
