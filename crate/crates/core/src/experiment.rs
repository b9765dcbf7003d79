//! Experiment driver: optimization campaigns, multi-setup comparison runs,
//! and plot-ready report rendering.
//!
//! A campaign runs the application under steady load, one measurement window
//! per deployed setup, to quiescence between windows: the optimizer never
//! mutates a setup mid-window and every trace is complete when analyzed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{FusionSetup, PlatformConfig};
use crate::engine::SimWorld;
use crate::notation::{format_setup, format_setup_with_memory};
use crate::optimizer::{
    accept_or_revert, infra_select, infra_sweep_plan, path_step, Cadence, Csp1State, Decision,
    Objective, SizeSample,
};
use crate::telemetry::{
    build_call_graph, compare, group_cost_median, group_wall_median, snapshot, AnnotatedCallGraph,
    MetricsSnapshot, Window,
};
use crate::workloads::{Protocol, ScheduleGen, Workload, OPT_SPACING_MS, WINDOW_DRAIN_GAP_MS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    Base,
    Path,
    InfraTrial,
    Final,
}

/// One deployed setup and what was measured on it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignEntry {
    pub setup_id: String,
    pub kind: WindowKind,
    pub notation: String,
    pub notation_mem: String,
    /// Full setup, including homes the notation cannot express.
    pub setup: FusionSetup,
    pub snapshot: MetricsSnapshot,
    /// baseline | accepted | rejected | trial | selected
    pub decision: String,
    pub moved_task: Option<String>,
}

/// The ordered record of one optimization campaign.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Campaign {
    pub app: String,
    pub seed: u64,
    pub objective: Objective,
    pub entries: Vec<CampaignEntry>,
    pub base_index: usize,
    pub path_index: usize,
    pub final_index: usize,
}

impl Campaign {
    pub fn base(&self) -> &CampaignEntry {
        &self.entries[self.base_index]
    }

    pub fn path_entry(&self) -> &CampaignEntry {
        &self.entries[self.path_index]
    }

    pub fn final_entry(&self) -> &CampaignEntry {
        &self.entries[self.final_index]
    }

    /// Setup ids in deployment order.
    pub fn setup_sequence(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.setup_id.as_str()).collect()
    }

    /// Notation strings of the path-phase walk, baseline included.
    pub fn path_notations(&self) -> Vec<&str> {
        self.entries[..=self.path_index]
            .iter()
            .map(|e| e.notation.as_str())
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("simulation setup failed: {0}")]
    Setup(String),
    #[error("window produced no data: {0}")]
    NoData(String),
    #[error("infrastructure sweep failed: {0}")]
    Infra(String),
    #[error("{0}")]
    Config(String),
    #[error(
        "protocol `{0}` compares setups found by a prior optimization campaign; \
         run the opt protocol first and pass its campaign artifact"
    )]
    MissingPriorCampaign(String),
}

/// Summary rows paired with the requests behind them.
pub type ComparisonResult = (Vec<(String, MetricsSnapshot)>, Vec<RequestRow>);

/// Per-request row of the report CSV.
#[derive(Debug, Clone, Serialize)]
pub struct RequestRow {
    pub trace_id: u64,
    pub setup_id: String,
    pub root: String,
    pub arrival_ms: f64,
    pub rr_ms: f64,
    pub cost_usd: f64,
}

struct WindowOutcome {
    snapshot: MetricsSnapshot,
    graph: AnnotatedCallGraph,
    cost_median: BTreeMap<String, f64>,
    wall_median: BTreeMap<String, f64>,
    requests: Vec<RequestRow>,
}

/// Runs one measurement window: schedules `requests` arrivals from the
/// generator, drains the world, and aggregates the window.
fn run_window(
    world: &mut SimWorld,
    gen: &mut ScheduleGen,
    cursor: &mut f64,
    requests: u64,
    setup_id: &str,
) -> Result<WindowOutcome, ExperimentError> {
    let mark = world.telemetry.mark();
    let arrivals = gen.opt_window(*cursor, requests);
    for (at, root) in &arrivals {
        world
            .submit_external(root, *at)
            .map_err(|e| ExperimentError::Setup(e.to_string()))?;
    }
    world.run_until_quiescent();
    let span = requests as f64 * OPT_SPACING_MS;
    *cursor = (*cursor + span + WINDOW_DRAIN_GAP_MS).max(world.now() + WINDOW_DRAIN_GAP_MS);

    let window = world.telemetry.window_since(&mark);
    let snap = snapshot(&window, setup_id)
        .map_err(|e| ExperimentError::NoData(format!("{setup_id}: {e}")))?;
    Ok(WindowOutcome {
        snapshot: snap,
        graph: build_call_graph(window.records),
        cost_median: group_cost_median(&window),
        wall_median: group_wall_median(&window),
        requests: per_request_rows(&window, setup_id),
    })
}

fn per_request_rows(window: &Window<'_>, setup_id: &str) -> Vec<RequestRow> {
    let mut trace_cost: BTreeMap<u64, f64> = BTreeMap::new();
    for line in window.billing {
        *trace_cost.entry(line.trace_id).or_insert(0.0) += line.cost_usd;
    }
    window
        .requests
        .iter()
        .filter(|r| r.completed)
        .map(|r| RequestRow {
            trace_id: r.trace_id,
            setup_id: setup_id.to_string(),
            root: r.root.clone(),
            arrival_ms: r.arrival_ms,
            rr_ms: r.rr_ms,
            cost_usd: trace_cost.get(&r.trace_id).copied().unwrap_or(0.0),
        })
        .collect()
}

fn make_entry(
    index: usize,
    setup: &FusionSetup,
    kind: WindowKind,
    snapshot: MetricsSnapshot,
    decision: &str,
    moved_task: Option<String>,
) -> CampaignEntry {
    CampaignEntry {
        setup_id: if index == 0 {
            "S-base".to_string()
        } else {
            format!("S-{index}")
        },
        kind,
        notation: format_setup(setup),
        notation_mem: format_setup_with_memory(setup),
        setup: setup.clone(),
        snapshot,
        decision: decision.to_string(),
        moved_task,
    }
}

/// Runs the full two-phase optimization campaign under the OPT protocol.
///
/// The path phase deploys one task move per window, walking from the
/// all-remote baseline to the sync-local fixpoint; acceptance against the
/// measured incumbent is recorded per window. The infrastructure phase
/// deploys one untried memory size per group per window, in parallel across
/// groups, then composes the per-group cheapest sizes into the selected
/// setup and runs it for one confirmation window.
pub fn run_opt_campaign(
    workload: &Workload,
    cfg: &PlatformConfig,
    objective: &Objective,
    cadence: &Cadence,
    seed: u64,
) -> Result<(Campaign, Vec<RequestRow>, SimWorld), ExperimentError> {
    cfg.validate()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    objective.validate().map_err(ExperimentError::Config)?;
    let app = &workload.app;
    let base_setup = FusionSetup::all_singletons(app, cfg.default_memory_mb);
    let mut world = SimWorld::new(app, &base_setup, cfg.clone())
        .map_err(|e| ExperimentError::Setup(e.to_string()))?;
    let mut gen = ScheduleGen::new(&workload.ops, seed);
    let mut cursor = 0.0;
    let mut requests_out = Vec::new();
    let mut entries: Vec<CampaignEntry> = Vec::new();

    let mut csp1 = match cadence {
        Cadence::Fixed { .. } => None,
        Cadence::Csp1(params) => Some(Csp1State::new(params.clone(), seed)),
    };
    let fixed_requests = match cadence {
        Cadence::Fixed { requests } => *requests,
        Cadence::Csp1(params) => params.base_interval,
    };
    let window_size = |csp1: &mut Option<Csp1State>, delta: f64| -> u64 {
        match csp1 {
            Some(state) => state.next_interval(delta),
            None => fixed_requests,
        }
    };

    // baseline window
    let out = run_window(&mut world, &mut gen, &mut cursor, fixed_requests, "S-base")?;
    requests_out.extend(out.requests);
    entries.push(make_entry(
        0,
        &base_setup,
        WindowKind::Base,
        out.snapshot.clone(),
        "baseline",
        None,
    ));
    let mut incumbent = out.snapshot.clone();
    let mut prev_snapshot = out.snapshot;
    // relative change between the last two optimizer observations
    let mut last_delta = 1.0;
    let mut graph = out.graph;
    let mut last_cost_median = out.cost_median;
    let mut last_wall_median = out.wall_median;
    let mut current = base_setup;

    // path phase: one task move per window
    let move_bound = 4 * app.tasks.len().max(1);
    let mut moves = 0;
    while let Some((candidate, mv)) = path_step(&graph, &current, app) {
        moves += 1;
        if moves > move_bound {
            return Err(ExperimentError::Setup(
                "path optimization did not reach a fixpoint".into(),
            ));
        }
        world
            .set_setup(&candidate)
            .map_err(|e| ExperimentError::Setup(e.to_string()))?;
        let id = format!("S-{}", entries.len());
        let n = window_size(&mut csp1, last_delta);
        let out = run_window(&mut world, &mut gen, &mut cursor, n, &id)?;
        requests_out.extend(out.requests);
        last_delta = compare(&prev_snapshot, &out.snapshot);
        let decision = accept_or_revert(&out.snapshot, &incumbent, objective);
        if decision == Decision::Accepted {
            incumbent = out.snapshot.clone();
        }
        entries.push(make_entry(
            entries.len(),
            &candidate,
            WindowKind::Path,
            out.snapshot.clone(),
            match decision {
                Decision::Accepted => "accepted",
                Decision::Rejected => "rejected",
            },
            Some(mv.task),
        ));
        prev_snapshot = out.snapshot;
        graph = out.graph;
        last_cost_median = out.cost_median;
        last_wall_median = out.wall_median;
        current = candidate;
    }
    let path_index = entries.len() - 1;
    let path_setup = current.clone();

    // infrastructure phase: the fixpoint window supplies the default-size
    // measurements, then one trial window per remaining size
    let plan = infra_sweep_plan(&path_setup, cfg)
        .map_err(|e| ExperimentError::Infra(e.to_string()))?;
    let mut samples: BTreeMap<String, Vec<SizeSample>> = BTreeMap::new();
    for g in &path_setup.groups {
        let label = g.label();
        let (Some(cost), Some(wall)) = (
            last_cost_median.get(&label),
            last_wall_median.get(&label),
        ) else {
            return Err(ExperimentError::Infra(format!(
                "group {label} was never observed in the fixpoint window"
            )));
        };
        samples.insert(
            g.id.clone(),
            vec![SizeSample {
                memory_mb: g.memory_mb,
                cost_usd: *cost,
                wall_ms: *wall,
            }],
        );
    }
    for trial in 0..plan.windows {
        let trial_setup = plan.window_setup(&path_setup, trial);
        world
            .set_setup(&trial_setup)
            .map_err(|e| ExperimentError::Setup(e.to_string()))?;
        let id = format!("S-{}", entries.len());
        let n = window_size(&mut csp1, last_delta);
        let out = run_window(&mut world, &mut gen, &mut cursor, n, &id)?;
        requests_out.extend(out.requests);
        last_delta = compare(&prev_snapshot, &out.snapshot);
        for g in &trial_setup.groups {
            let label = g.label();
            let path_mem = path_setup
                .groups
                .iter()
                .find(|pg| pg.id == g.id)
                .map_or(g.memory_mb, |pg| pg.memory_mb);
            if g.memory_mb == path_mem {
                continue; // this group had fewer sizes left; nothing new measured
            }
            if let (Some(cost), Some(wall)) =
                (out.cost_median.get(&label), out.wall_median.get(&label))
            {
                samples.entry(g.id.clone()).or_default().push(SizeSample {
                    memory_mb: g.memory_mb,
                    cost_usd: *cost,
                    wall_ms: *wall,
                });
            }
        }
        entries.push(make_entry(
            entries.len(),
            &trial_setup,
            WindowKind::InfraTrial,
            out.snapshot.clone(),
            "trial",
            None,
        ));
        prev_snapshot = out.snapshot;
    }

    let final_setup = infra_select(&path_setup, &samples, &plan, objective)
        .map_err(|e| ExperimentError::Infra(e.to_string()))?;
    world
        .set_setup(&final_setup)
        .map_err(|e| ExperimentError::Setup(e.to_string()))?;
    let id = format!("S-{}", entries.len());
    let n = window_size(&mut csp1, last_delta);
    let out = run_window(&mut world, &mut gen, &mut cursor, n, &id)?;
    requests_out.extend(out.requests);
    entries.push(make_entry(
        entries.len(),
        &final_setup,
        WindowKind::Final,
        out.snapshot.clone(),
        "selected",
        None,
    ));
    let final_index = entries.len() - 1;

    let campaign = Campaign {
        app: workload.app.name.clone(),
        seed,
        objective: objective.clone(),
        entries,
        base_index: 0,
        path_index,
        final_index,
    };
    Ok((campaign, requests_out, world))
}

/// Replays the identical COLD or SCALE schedule against each setup in an
/// isolated world and returns one summary row per setup.
pub fn compare_setups(
    workload: &Workload,
    setups: &[(String, FusionSetup)],
    protocol: Protocol,
    cfg: &PlatformConfig,
    seed: u64,
) -> Result<ComparisonResult, ExperimentError> {
    cfg.validate()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let mut rows = Vec::new();
    let mut requests_out = Vec::new();
    for (label, setup) in setups {
        let mut world = SimWorld::new(&workload.app, setup, cfg.clone())
            .map_err(|e| ExperimentError::Setup(format!("{label}: {e}")))?;
        let mut gen = ScheduleGen::new(&workload.ops, seed);
        let (arrivals, flushes) = match protocol {
            Protocol::Opt => (gen.opt_window(0.0, 1000), Vec::new()),
            Protocol::Cold => gen.cold_schedule(crate::workloads::COLD_BATCHES),
            Protocol::Scale => (gen.scale_schedule(), Vec::new()),
        };
        for at in &flushes {
            world.schedule_flush(*at);
        }
        for (at, root) in &arrivals {
            world
                .submit_external(root, *at)
                .map_err(|e| ExperimentError::Setup(e.to_string()))?;
        }
        world.run_until_quiescent();
        let window = world.telemetry.full_window();
        let snap = snapshot(&window, label)
            .map_err(|e| ExperimentError::NoData(format!("{label}: {e}")))?;
        requests_out.extend(per_request_rows(&window, label));
        rows.push((label.clone(), snap));
    }
    Ok((rows, requests_out))
}

/// The four comparison setups derived from a prior OPT campaign: the
/// all-remote baseline, the all-local single function, the path-optimized
/// setup, and the fully optimized setup.
pub fn comparison_setups(
    workload: &Workload,
    cfg: &PlatformConfig,
    campaign: &Campaign,
) -> Vec<(String, FusionSetup)> {
    vec![
        (
            "S-remote".to_string(),
            FusionSetup::all_singletons(&workload.app, cfg.default_memory_mb),
        ),
        (
            "S-local".to_string(),
            FusionSetup::all_fused(&workload.app, cfg.default_memory_mb),
        ),
        ("S-path".to_string(), campaign.path_entry().setup.clone()),
        ("S-opt".to_string(), campaign.final_entry().setup.clone()),
    ]
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

fn fmt_ms(v: f64) -> String {
    format!("{v:.3}")
}

fn fmt_cost(v: f64) -> String {
    format!("{v:.9}")
}

/// Per-request CSV; deterministic for identical runs.
pub fn render_requests_csv(rows: &[RequestRow]) -> String {
    let mut out = String::from("trace_id,setup_id,root,arrival_ms,rr_ms,cost_usd\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.trace_id,
            r.setup_id,
            r.root,
            fmt_ms(r.arrival_ms),
            fmt_ms(r.rr_ms),
            fmt_cost(r.cost_usd)
        ));
    }
    out
}

/// Summary table: one row per setup. Notation fields are quoted because
/// group members are comma-separated.
pub fn render_summary_csv(rows: &[(String, String, String, MetricsSnapshot)]) -> String {
    let mut out = String::from(
        "setup_id,notation,notation_mem,requests,rr_med_ms,rr_p95_ms,mean_cost_pmi,cold_rate\n",
    );
    for (id, notation, notation_mem, snap) in rows {
        out.push_str(&format!(
            "{},\"{}\",\"{}\",{},{},{},{:.4},{:.4}\n",
            id,
            notation,
            notation_mem,
            snap.requests,
            fmt_ms(snap.rr_med_ms),
            fmt_ms(snap.rr_p95_ms),
            snap.mean_cost_pmi,
            snap.cold_rate,
        ));
    }
    out
}

pub fn campaign_summary_rows(campaign: &Campaign) -> Vec<(String, String, String, MetricsSnapshot)> {
    campaign
        .entries
        .iter()
        .map(|e| {
            (
                e.setup_id.clone(),
                e.notation.clone(),
                e.notation_mem.clone(),
                e.snapshot.clone(),
            )
        })
        .collect()
}

/// Newline-delimited JSON export of every invocation record.
pub fn render_records_jsonl(world: &SimWorld) -> String {
    let mut out = String::new();
    for rec in world.telemetry.records() {
        out.push_str(&serde_json::to_string(rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Call graph of everything the world observed, as JSON.
pub fn render_call_graph_json(world: &SimWorld) -> String {
    let graph = build_call_graph(world.telemetry.records());
    serde_json::to_string_pretty(&graph.export()).expect("graph serializes")
}

/// Billing lines as CSV.
pub fn render_billing_csv(world: &SimWorld) -> String {
    let mut out =
        String::from("trace_id,execution_id,group,memory_mb,memory_gb,billed_ms,cost_usd,cold\n");
    for l in world.telemetry.billing() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            l.trace_id,
            l.execution_id,
            l.group,
            l.memory_mb,
            l.memory_gb,
            fmt_ms(l.billed_ms),
            fmt_cost(l.cost_usd),
            l.cold
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::{builtin, AppTuning};

    #[test]
    fn tiny_campaign_runs_to_completion() {
        let workload = crate::workloads::make_tree_app(AppTuning::tree_default());
        let cfg = PlatformConfig {
            memory_sizes_mb: vec![1024],
            ..PlatformConfig::default()
        };
        let (campaign, rows, _world) = run_opt_campaign(
            &workload,
            &cfg,
            &Objective::default(),
            &Cadence::Fixed { requests: 50 },
            1,
        )
        .unwrap();
        // base + 3 path moves + 1 trial + final
        assert_eq!(campaign.entries.len(), 6);
        assert_eq!(campaign.path_entry().notation, "(A,B,D,E)-(C)-(F)-(G)");
        assert_eq!(rows.len(), 50 * 6);
    }

    #[test]
    fn compare_runs_one_row_per_setup() {
        let workload = builtin("tree").unwrap();
        let cfg = PlatformConfig::default();
        let setups = vec![
            (
                "S-remote".to_string(),
                FusionSetup::all_singletons(&workload.app, 128),
            ),
            (
                "S-local".to_string(),
                FusionSetup::all_fused(&workload.app, 128),
            ),
        ];
        let (rows, _) = compare_setups(&workload, &setups, Protocol::Cold, &cfg, 3).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].0, "S-remote");
        assert!(rows.iter().all(|(_, s)| s.cold_rate == 1.0));
    }

    #[test]
    fn single_setup_compare_equals_direct_run() {
        let workload = builtin("tree").unwrap();
        let cfg = PlatformConfig::default();
        let setups = vec![(
            "only".to_string(),
            FusionSetup::all_fused(&workload.app, 128),
        )];
        let (a, _) = compare_setups(&workload, &setups, Protocol::Scale, &cfg, 9).unwrap();
        let (b, _) = compare_setups(&workload, &setups, Protocol::Scale, &cfg, 9).unwrap();
        assert_eq!(a[0].1, b[0].1);
    }
}
