use std::collections::BTreeSet;
use std::time::Duration;

use memwall_core::codec::CodecModel;
use memwall_core::device::DeviceProfile;
use memwall_core::fixtures::{mobilenet_training, residual8, standard_training_graph, TrainingGraphSpec};
use memwall_core::orchestrator::cache::PlanCache;
use memwall_core::orchestrator::cluster::{cluster_clients, kmeans_pp_init, normalize, ClusterPoint, MAX_ITERATIONS};
use memwall_core::orchestrator::fleet::{generate_fleet, tier_counts, FleetParams};
use memwall_core::orchestrator::learning::{LearningParams, LossProxy, ModelUpdate};
use memwall_core::orchestrator::{run_simulation, Ablation, Clustering, SimConfig};
use memwall_core::planner::{replay_with_budget, Strategy};
use memwall_core::predictor::{generate_trace, session_lengths, TraceSpec};
use memwall_core::selector::{ClientId, SelectionConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GB: u64 = 1 << 30;

fn random_points(n: usize, seed: u64) -> Vec<ClusterPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| ClusterPoint { client: ClientId(i as u32), mem_budget: rng.random_range(GB..12 * GB), comp_stat: rng.random_range(0.001..0.01) })
        .collect()
}

/// Plain Lloyd's iterations written out longhand: assign every point to the
/// closest centre (first index on ties), move centres to member means, stop
/// when nothing moves.
fn oracle_lloyd(points: &[[f64; 2]], init: &[[f64; 2]]) -> Vec<usize> {
    let mut centres = init.to_vec();
    let assign = |centres: &[[f64; 2]]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let mut best = 0;
                for j in 1..centres.len() {
                    let d = |c: [f64; 2]| (p[0] - c[0]) * (p[0] - c[0]) + (p[1] - c[1]) * (p[1] - c[1]);
                    if d(centres[j]) < d(centres[best]) {
                        best = j;
                    }
                }
                best
            })
            .collect()
    };
    let mut labels = assign(&centres);
    for _ in 0..MAX_ITERATIONS {
        for (j, c) in centres.iter_mut().enumerate() {
            let members: Vec<&[f64; 2]> = points.iter().zip(&labels).filter(|(_, &l)| l == j).map(|(p, _)| p).collect();
            if !members.is_empty() {
                let n = members.len() as f64;
                *c = [members.iter().map(|p| p[0]).sum::<f64>() / n, members.iter().map(|p| p[1]).sum::<f64>() / n];
            }
        }
        let next = assign(&centres);
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

fn partition(groups: impl IntoIterator<Item = Vec<ClientId>>) -> BTreeSet<Vec<ClientId>> {
    groups.into_iter().filter(|g| !g.is_empty()).collect()
}

#[test]
fn clustering_matches_lloyd_oracle() {
    for seed in 0..10 {
        let points = random_points(100, seed);
        let features = normalize(&points);
        let init = kmeans_pp_init(&features, 5, seed);
        let labels = oracle_lloyd(&features, &init);
        let want = partition((0..5).map(|j| points.iter().zip(&labels).filter(|(_, &l)| l == j).map(|(p, _)| p.client).collect()));
        let got = cluster_clients(&points, 5, seed).unwrap();
        assert_eq!(partition(got.clusters.iter().map(|c| c.members.clone())), want, "seed {seed}");
    }
}

#[test]
fn cache_hits_match_regeneration() {
    let g = standard_training_graph();
    let (device, codec) = (DeviceProfile::reference(), CodecModel::default());
    let mut cache = PlanCache::default();
    let (pinned, peak) = (g.pinned_minimum(), g.untreated_peak());
    for i in 0..6 {
        let budget = pinned + (peak - pinned) * i / 5;
        for strategy in [Strategy::Hybrid, Strategy::EvictOnly] {
            let (first, _) = cache.get_or_plan(&g, &device, &codec, budget, 8, strategy).unwrap();
            let calls = cache.stats().planner_calls;
            let (again, hit) = cache.get_or_plan(&g, &device, &codec, budget, 8, strategy).unwrap();
            assert!(hit);
            assert_eq!(cache.stats().planner_calls, calls);
            let key = cache.key(&g, budget, 8, strategy);
            let fresh = PlanCache::generate(&key, &g, &device, &codec).unwrap();
            assert_eq!(again.to_json(), fresh.to_json());
            assert_eq!(first.to_json(), fresh.to_json());
            assert!(fresh.budget <= budget);
        }
    }
}

#[test]
fn representative_plan_fits_larger_member() {
    let g = mobilenet_training(&TrainingGraphSpec { batch: 128, ..TrainingGraphSpec::default() });
    assert!(g.untreated_peak() > 8 * GB && g.pinned_minimum() < 6 * GB);
    let device = DeviceProfile::reference();
    let points = [
        ClusterPoint { client: ClientId(0), mem_budget: 8 * GB, comp_stat: 0.004 },
        ClusterPoint { client: ClientId(1), mem_budget: 6 * GB, comp_stat: 0.004 },
    ];
    let cluster = &cluster_clients(&points, 1, 0).unwrap().clusters[0];
    assert_eq!(cluster.representative, ClientId(1));
    let mut cache = PlanCache::default();
    let (plan, _) = cache.get_or_plan(&g, &device, &CodecModel::default(), 6 * GB, 6, Strategy::Hybrid).unwrap();
    for budget in [6 * GB, 8 * GB] {
        let report = replay_with_budget(&plan, &g, &device, budget).unwrap();
        assert!(report.is_clean() && report.peak_memory <= budget, "{:?}", report.violations.first());
    }
}

fn small_fleet_config(clients: usize, k: usize, rounds: u32) -> SimConfig {
    SimConfig {
        rounds,
        fleet: FleetParams { clients, ..FleetParams::default() },
        selection: SelectionConfig { k, epsilon: 0.9 },
        ..SimConfig::default()
    }
}

#[test]
fn single_round_small_fleet() {
    let config = small_fleet_config(4, 2, 1);
    let fleet = generate_fleet(&config.fleet, 0).unwrap();
    let g = residual8();
    let result = run_simulation(&config, &fleet, &g, &mut PlanCache::default()).unwrap();
    assert_eq!(result.records.len(), 1);
    let r = &result.records[0];
    assert_eq!(r.selected.len(), 2);
    assert_eq!(r.participants, 2);
}

#[test]
fn same_seed_same_output() {
    let g = standard_training_graph();
    let run = |seed| {
        let config = SimConfig { seed, rounds: 30, ..SimConfig::default() };
        let fleet = generate_fleet(&config.fleet, seed).unwrap();
        serde_json::to_string(&run_simulation(&config, &fleet, &g, &mut PlanCache::default()).unwrap()).unwrap()
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7), run(8));
}

#[test]
fn round_invariants_on_standard_fixture() {
    let g = standard_training_graph();
    let device = DeviceProfile::reference();
    let mut cache = PlanCache::default();
    let mut overheads = Vec::new();
    for seed in 0..5 {
        let config = SimConfig { seed, ..SimConfig::default() };
        let fleet = generate_fleet(&config.fleet, seed).unwrap();
        let result = run_simulation(&config, &fleet, &g, &mut cache).unwrap();
        for r in &result.records {
            let slowest = r.clients.iter().map(|c| c.latency).max().unwrap_or(Duration::ZERO);
            assert_eq!(r.round_time, slowest + config.aggregation_time);
            assert!(r.planner_calls <= 5);
            for c in &r.clients {
                assert!(c.footprint <= c.budget, "round {} {}: footprint {} over budget {}", r.round, c.client, c.footprint, c.budget);
            }
        }
        // Every cached plan replays cleanly within the budget it was built for.
        for (key, plan) in cache.entries() {
            let report = replay_with_budget(plan, &g, &device, PlanCache::plan_budget(key, &g)).unwrap();
            assert!(report.is_clean());
        }
        overheads.push(result.summary.overhead_fraction);
    }
    assert!(overheads.iter().all(|&o| o < 0.06), "{overheads:?}");
}

#[test]
fn regeneration_requests_respect_cap() {
    let g = standard_training_graph();
    for cap in [0, 1, 2] {
        let mut config = SimConfig { seed: 3, rounds: 60, regen_cap: cap, ..SimConfig::default() };
        config.regen.tp1 = 0.5;
        config.selection.k = 20;
        let fleet = generate_fleet(&config.fleet, 3).unwrap();
        let result = run_simulation(&config, &fleet, &g, &mut PlanCache::default()).unwrap();
        let requests: Vec<(u32, ClientId)> =
            result.records.iter().flat_map(|r| r.clients.iter().filter(|c| c.regen_requested).map(move |c| (r.round, c.client))).collect();
        if cap == 2 {
            assert!(!requests.is_empty(), "no regeneration was triggered");
        }
        for &(round, client) in &requests {
            let in_window = requests.iter().filter(|&&(r, c)| c == client && r >= round && r < round + 10).count();
            assert!(in_window as u32 <= cap, "{client} has {in_window} requests from round {round}");
        }
    }
}

#[test]
fn ablation_variants_are_labelled() {
    let names: Vec<&str> = Ablation::VARIANTS.iter().map(|(n, a)| {
        assert_eq!(a.name(), *n);
        *n
    }).collect();
    assert_eq!(names, ["full", "no-selector", "no-planner", "no-codec", "no-predictor"]);
}

#[test]
fn per_client_planning_calls_planner_per_dispatch() {
    let g = residual8();
    let mut config = small_fleet_config(30, 10, 3);
    config.clustering = Clustering::PerClient;
    let fleet = generate_fleet(&config.fleet, 1).unwrap();
    let result = run_simulation(&config, &fleet, &g, &mut PlanCache::default()).unwrap();
    for r in &result.records {
        assert_eq!(r.planner_calls as usize, r.clients.len() + r.unservable.len());
    }
}

#[test]
fn fleet_tiers_follow_shares() {
    let params = FleetParams::default();
    let expected: Vec<f64> = params.tiers.iter().map(|t| t.share * params.clients as f64).collect();
    assert_eq!(tier_counts(&params.tiers, 100), vec![15, 25, 30, 25, 5]);
    for seed in 0..20 {
        let fleet = generate_fleet(&params, seed).unwrap();
        for (t, want) in params.tiers.iter().zip(&expected) {
            let got = fleet.clients.iter().filter(|c| c.tier_gb == t.gb).count() as f64;
            assert!((got - want).abs() <= 2.0, "seed {seed}: {} GB tier has {got}, expected {want}", t.gb);
        }
        for c in &fleet.clients {
            let total: f64 = c.shard.label_proportions.iter().sum();
            assert!((total - 1.0).abs() < 1e-9 && c.compute_scale > 0.0);
        }
    }
}

#[test]
fn session_lengths_match_target() {
    let spec = TraceSpec { duration: Duration::from_secs(3600), ..TraceSpec::default() };
    let target = spec.mean_session.as_secs_f64();
    let mut all = Vec::new();
    for seed in 0..20 {
        all.extend(session_lengths(&generate_trace(&spec, seed)));
    }
    let mean = all.iter().map(Duration::as_secs_f64).sum::<f64>() / all.len() as f64;
    assert!(all.len() > 200);
    assert!((mean - target).abs() <= 0.2 * target, "mean session {mean:.1} s over {} sessions", all.len());
}

fn one_hot(classes: usize, c: usize) -> Vec<f64> {
    (0..classes).map(|i| if i == c { 1.0 } else { 0.0 }).collect()
}

proptest! {
    #[test]
    fn every_client_in_one_cluster(n in 5usize..60, k in 1usize..6, seed in any::<u64>()) {
        let points = random_points(n, seed);
        let a = cluster_clients(&points, k, seed).unwrap();
        let mut seen: Vec<ClientId> = a.clusters.iter().flat_map(|c| c.members.clone()).collect();
        seen.sort();
        prop_assert_eq!(seen, points.iter().map(|p| p.client).collect::<Vec<_>>());
        for c in &a.clusters {
            let rep = points[c.representative.0 as usize];
            prop_assert!(c.members.iter().all(|m| points[m.0 as usize].mem_budget >= rep.mem_budget));
        }
    }

    #[test]
    fn wider_coverage_never_raises_loss(classes in 2usize..12, picks in prop::collection::vec(0usize..12, 1..8), extra in 0usize..12, samples in 100u64..3000) {
        let params = LearningParams::default();
        let updates: Vec<ModelUpdate> = picks.iter().map(|&c| ModelUpdate { delta: one_hot(classes, c % classes), samples }).collect();
        let mut base = LossProxy::new(classes, params);
        base.apply(&updates).unwrap();
        let mut wider = LossProxy::new(classes, params);
        let mut more = updates.clone();
        more.push(ModelUpdate { delta: one_hot(classes, extra % classes), samples });
        wider.apply(&more).unwrap();
        prop_assert!(wider.global_loss() <= base.global_loss() + 1e-12);
    }
}
