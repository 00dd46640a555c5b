use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use memwall_core::graph::OpKind;
use memwall_core::selector::{
    client_utility, mem_stat, select_clients, ClientId, ClientProfile, GlobalModelReq, SelectionConfig, SelectorError,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GB: u64 = 1 << 30;
const KINDS: [OpKind; 4] = [OpKind::Conv, OpKind::ReLU, OpKind::Pool, OpKind::MatMul];

fn model() -> GlobalModelReq {
    GlobalModelReq { memory_bytes: 6 * GB, op_kinds: KINDS.into_iter().collect() }
}

fn random_pool(n: usize, explored_fraction: f64, seed: u64) -> Vec<ClientProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let explored = rng.random::<f64>() < explored_fraction;
            ClientProfile {
                client_id: ClientId(i as u32),
                mem_budget: rng.random_range(GB..12 * GB),
                op_times: KINDS.iter().map(|&k| (k, Duration::from_micros(rng.random_range(50..5_000)))).collect(),
                batch_losses: if explored { (0..rng.random_range(1..16)).map(|_| rng.random_range(0.0..4.0)).collect() } else { vec![] },
                explored,
                last_report_round: 0,
            }
        })
        .collect()
}

/// Second implementation path: utilities summed in log space.
fn oracle_utility(p: &ClientProfile, m: &GlobalModelReq) -> f64 {
    let rms = (p.batch_losses.iter().map(|l| l * l).sum::<f64>() / p.batch_losses.len() as f64).sqrt();
    let mem = (p.mem_budget.min(m.memory_bytes) as f64).ln() - (m.memory_bytes as f64).ln();
    let total_us: u128 = m.op_kinds.iter().map(|k| p.op_times[k].as_micros()).sum();
    let comp = -((total_us as f64) / 1e3).ln();
    if rms == 0.0 {
        0.0
    } else {
        (rms.ln() + mem + comp).exp()
    }
}

#[test]
fn utility_ranking_matches_oracle() {
    let m = model();
    let pool = random_pool(100, 1.0, 5);
    let mut lib: Vec<(ClientId, f64)> = pool.iter().map(|p| (p.client_id, client_utility(p, &m).unwrap())).collect();
    let mut oracle: Vec<(ClientId, f64)> = pool.iter().map(|p| (p.client_id, oracle_utility(p, &m))).collect();
    for ((_, a), (_, b)) in lib.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12), "{a} vs {b}");
    }
    lib.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let ids = |v: &[(ClientId, f64)]| v.iter().map(|x| x.0).collect::<Vec<_>>();
    assert_eq!(ids(&lib), ids(&oracle));
    let sel = select_clients(&pool, &m, &SelectionConfig { k: 20, epsilon: 1.0 }, 0).unwrap();
    assert_eq!(sel.exploit, ids(&oracle)[..20]);
}

#[test]
fn exploit_explore_split_is_exact() {
    let m = model();
    let pool = random_pool(600, 0.6, 9);
    for k in [10, 20, 200] {
        let sel = select_clients(&pool, &m, &SelectionConfig { k, epsilon: 0.9 }, 1).unwrap();
        assert_eq!((sel.exploit.len(), sel.explore.len()), (k * 9 / 10, k / 10), "k={k}");
        let distinct: BTreeSet<ClientId> = sel.ids().into_iter().collect();
        assert_eq!(distinct.len(), k);
        let explored: BTreeSet<ClientId> = pool.iter().filter(|p| p.explored).map(|p| p.client_id).collect();
        assert!(sel.exploit.iter().all(|c| explored.contains(c)));
        assert!(sel.explore.iter().all(|c| !explored.contains(c)));
    }
}

#[test]
fn cold_start_ranks_by_resources() {
    let m = model();
    let pool = random_pool(50, 0.0, 3);
    let sel = select_clients(&pool, &m, &SelectionConfig { k: 10, epsilon: 0.9 }, 4).unwrap();
    assert!(sel.exploit.is_empty());
    let score = |p: &ClientProfile| {
        let total: f64 = KINDS.iter().map(|k| p.op_times[k].as_secs_f64() * 1e3).sum();
        mem_stat(p.mem_budget, m.memory_bytes) / total
    };
    let mut expect: Vec<&ClientProfile> = pool.iter().collect();
    expect.sort_by(|a, b| score(b).total_cmp(&score(a)));
    assert_eq!(sel.explore, expect[..10].iter().map(|p| p.client_id).collect::<Vec<_>>());
}

#[test]
fn short_pools_backfill() {
    let m = model();
    // Three explored clients cannot fill nine exploit slots.
    let mut pool = random_pool(30, 0.0, 8);
    for p in pool.iter_mut().take(3) {
        p.explored = true;
        p.batch_losses = vec![1.0];
    }
    let sel = select_clients(&pool, &m, &SelectionConfig { k: 10, epsilon: 0.9 }, 2).unwrap();
    assert_eq!((sel.exploit.len(), sel.explore.len()), (3, 7));
    // A single unexplored client caps exploration at one pick.
    let mut pool = random_pool(30, 1.0, 8);
    pool[0].explored = false;
    pool[0].batch_losses.clear();
    let sel = select_clients(&pool, &m, &SelectionConfig { k: 30, epsilon: 0.5 }, 2).unwrap();
    assert_eq!((sel.exploit.len(), sel.explore.len()), (29, 1));
    assert_eq!(
        select_clients(&pool, &m, &SelectionConfig { k: 31, epsilon: 0.9 }, 2),
        Err(SelectorError::PoolTooSmall { k: 31, pool: 30 })
    );
}

fn scaled(pool: &[ClientProfile], c: f64) -> Vec<ClientProfile> {
    pool.iter()
        .map(|p| ClientProfile {
            op_times: p.op_times.iter().map(|(k, t)| (*k, Duration::from_secs_f64(t.as_secs_f64() * c))).collect::<BTreeMap<_, _>>(),
            ..p.clone()
        })
        .collect()
}

proptest! {
    #[test]
    fn mem_stat_bounded(m_i in 1u64..u64::MAX / 2, m_g in 1u64..u64::MAX / 2) {
        let s = mem_stat(m_i, m_g);
        prop_assert!(s > 0.0 && s <= 1.0);
    }

    #[test]
    fn utility_monotone_in_memory(seed in any::<u64>(), a in 1u64..20 * GB, b in 1u64..20 * GB) {
        let m = model();
        let p = random_pool(1, 1.0, seed).remove(0);
        let (lo, hi) = (a.min(b), a.max(b));
        let u = |mem| client_utility(&ClientProfile { mem_budget: mem, ..p.clone() }, &m).unwrap();
        prop_assert!(u(lo) <= u(hi));
        prop_assert_eq!(u(m.memory_bytes), u(m.memory_bytes.max(hi)));
    }

    #[test]
    fn uniform_time_scaling_keeps_selection(seed in any::<u64>(), c in prop::sample::select(vec![0.25, 0.5, 2.0, 4.0, 8.0])) {
        let m = model();
        let pool = random_pool(80, 0.7, seed);
        let config = SelectionConfig { k: 20, epsilon: 0.9 };
        let base = select_clients(&pool, &m, &config, seed).unwrap();
        prop_assert_eq!(select_clients(&scaled(&pool, c), &m, &config, seed).unwrap(), base);
    }

    #[test]
    fn pool_order_is_irrelevant(seed in any::<u64>()) {
        let m = model();
        let pool = random_pool(60, 0.5, seed);
        let config = SelectionConfig { k: 12, epsilon: 0.9 };
        let base = select_clients(&pool, &m, &config, 7).unwrap();
        let mut shuffled = pool.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        prop_assert_eq!(select_clients(&shuffled, &m, &config, 7).unwrap(), base);
    }
}
