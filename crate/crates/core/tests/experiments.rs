//! Integration tests for full experiment runs: window structure, call-graph
//! shapes, campaign artifacts, and the comparison protocols.

use fusesim::domain::{FusionSetup, PlatformConfig};
use fusesim::experiment::{compare_setups, comparison_setups, run_opt_campaign};
use fusesim::optimizer::{Cadence, Objective};
use fusesim::telemetry::{build_call_graph, EdgeMode, EXTERNAL};
use fusesim::workloads::{builtin, Protocol};
use fusesim::SimWorld;

fn small_campaign(name: &str) -> fusesim::Campaign {
    let workload = builtin(name).unwrap();
    let (campaign, _, _) = run_opt_campaign(
        &workload,
        &PlatformConfig::default(),
        &Objective::default(),
        &Cadence::Fixed { requests: 120 },
        5,
    )
    .unwrap();
    campaign
}

#[test]
fn tree_call_graph_has_expected_shape() {
    let workload = builtin("tree").unwrap();
    let setup = FusionSetup::all_singletons(&workload.app, 128);
    let mut world = SimWorld::new(&workload.app, &setup, PlatformConfig::default()).unwrap();
    for i in 0..100u64 {
        world.submit_external("A", i as f64 * 100.0).unwrap();
    }
    world.run_until_quiescent();
    let graph = build_call_graph(world.telemetry.records());
    assert_eq!(graph.nodes.len(), 7);
    let mode = |a: &str, b: &str| graph.edges[&(a.to_string(), b.to_string())].mode;
    for (a, b) in [("A", "B"), ("B", "D"), ("B", "E")] {
        assert_eq!(mode(a, b), EdgeMode::Sync, "{a}->{b}");
    }
    for (a, b) in [("A", "C"), ("C", "F"), ("C", "G")] {
        assert_eq!(mode(a, b), EdgeMode::Async, "{a}->{b}");
    }
    assert_eq!(mode(EXTERNAL, "A"), EdgeMode::Sync);
    assert_eq!(
        graph.edges[&("A".to_string(), "B".to_string())].count,
        100
    );
}

#[test]
fn web_graph_contains_three_external_roots() {
    let workload = builtin("web").unwrap();
    let setup = FusionSetup::all_singletons(&workload.app, 128);
    let mut world = SimWorld::new(&workload.app, &setup, PlatformConfig::default()).unwrap();
    let mut gen = fusesim::workloads::ScheduleGen::new(&workload.ops, 0);
    for (at, root) in gen.opt_window(0.0, 99) {
        world.submit_external(&root, at).unwrap();
    }
    world.run_until_quiescent();
    let graph = build_call_graph(world.telemetry.records());
    let external_roots: Vec<&str> = graph
        .edges
        .keys()
        .filter(|(caller, _)| caller == EXTERNAL)
        .map(|(_, callee)| callee.as_str())
        .collect();
    assert_eq!(external_roots.len(), 3);
    // the fourth root is still observed, through the asynchronous edge
    assert!(graph.nodes.contains_key("recommendations"));
}

#[test]
fn iot_campaign_matches_expected_window_structure() {
    let campaign = small_campaign("iot");
    // base, five path moves, eight parallel trials, one selected setup
    assert_eq!(campaign.entries.len(), 15);
    assert_eq!(campaign.path_index, 5);
    assert_eq!(campaign.final_entry().setup_id, "S-14");
    assert_eq!(
        campaign.path_entry().notation,
        "(AS)-(CA,DJ)-(CS,CSA,CSL)-(CT)-(CW,I,SE)"
    );
}

#[test]
fn web_campaign_replicates_shared_tasks() {
    let campaign = small_campaign("web");
    let fin = &campaign.final_entry().setup;
    assert_eq!(fin.groups_of("listProducts").count(), 4);
    assert_eq!(fin.groups_of("currency").count(), 2);
    assert_eq!(fin.groups_of("getCart").count(), 2);
    // asynchronous side tasks keep their own groups
    for t in ["trackView", "trackCart", "email", "storeOrder", "clearCart"] {
        assert_eq!(fin.groups_of(t).count(), 1, "{t}");
        assert_eq!(fin.home_group(t).unwrap().label(), format!("({t})"));
    }
    // path fixpoint: every observed only-sync edge is intra-group
    let workload = builtin("web").unwrap();
    for task in workload.app.tasks.iter() {
        for edge in &task.calls {
            if edge.mode == fusesim::CallMode::Sync {
                let caller_groups: Vec<_> = fin.groups_of(&task.id).map(|g| g.id.clone()).collect();
                let ok = caller_groups
                    .iter()
                    .all(|gid| fin.group(gid).unwrap().members.contains(&edge.callee));
                assert!(ok, "sync edge {}->{} is not local everywhere", task.id, edge.callee);
            }
        }
    }
}

#[test]
fn scale_protocol_produces_cold_ramp() {
    let workload = builtin("tree").unwrap();
    let cfg = PlatformConfig::default();
    let setups = vec![(
        "S-local".to_string(),
        FusionSetup::all_fused(&workload.app, 128),
    )];
    let (rows, requests) = compare_setups(&workload, &setups, Protocol::Scale, &cfg, 4).unwrap();
    let snap = &rows[0].1;
    assert_eq!(snap.requests, 520);
    // ramping load keeps creating instances: cold starts well above zero
    assert!(snap.cold_rate > 0.05, "cold rate {}", snap.cold_rate);
    assert!(requests.iter().all(|r| r.cost_usd > 0.0));
}

#[test]
fn cold_protocol_reports_full_cold_rate() {
    let workload = builtin("iot").unwrap();
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
    let (rows, _) = compare_setups(&workload, &setups, Protocol::Cold, &cfg, 4).unwrap();
    for (label, snap) in &rows {
        assert_eq!(snap.cold_rate, 1.0, "{label}");
    }
}

#[test]
fn campaign_artifact_round_trips_through_json() {
    let campaign = small_campaign("tree");
    let json = serde_json::to_string(&campaign).unwrap();
    let parsed: fusesim::Campaign = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed.entries.len(), campaign.entries.len());
    assert_eq!(
        parsed.final_entry().notation_mem,
        campaign.final_entry().notation_mem
    );
    // the reloaded setups drive the comparison protocols directly
    let workload = builtin("tree").unwrap();
    let cfg = PlatformConfig::default();
    let setups = comparison_setups(&workload, &cfg, &parsed);
    assert_eq!(setups.len(), 4);
    let (rows, _) = compare_setups(&workload, &setups, Protocol::Cold, &cfg, 8).unwrap();
    assert_eq!(rows.len(), 4);
}

#[test]
fn csp1_cadence_varies_window_sizes() {
    let workload = builtin("tree").unwrap();
    let cfg = PlatformConfig::default();
    let params = fusesim::Csp1Params {
        base_interval: 60,
        min_interval: 30,
        max_interval: 240,
        ..fusesim::Csp1Params::default()
    };
    let (campaign, _, _) = run_opt_campaign(
        &workload,
        &cfg,
        &Objective::default(),
        &Cadence::Csp1(params),
        6,
    )
    .unwrap();
    let sizes: Vec<u64> = campaign.entries.iter().map(|e| e.snapshot.requests).collect();
    assert_eq!(sizes[0], 60);
    // quiet windows stretch the interval toward the maximum
    assert!(sizes.iter().any(|s| *s > 60), "sizes: {sizes:?}");
    assert_eq!(
        campaign.final_entry().notation,
        "(A,B,D,E)-(C)-(F)-(G)"
    );
}
