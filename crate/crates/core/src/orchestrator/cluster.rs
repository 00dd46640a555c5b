//! k-means grouping of clients by memory budget and compute speed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::selector::ClientId;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterPoint {
    pub client: ClientId,
    pub mem_budget: u64,
    /// Inverse summed op time, 1/ms.
    pub comp_stat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Members in ascending id order.
    pub members: Vec<ClientId>,
    /// Least capable member: lowest budget, then slowest.
    pub representative: ClientId,
    pub centroid: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub clusters: Vec<Cluster>,
    pub iterations: usize,
}

impl ClusterAssignment {
    pub fn cluster_of(&self, client: ClientId) -> Option<usize> {
        self.clusters.iter().position(|c| c.members.binary_search(&client).is_ok())
    }
}

/// Min-max scaling of both features to [0, 1]; a constant feature maps to 0.
pub fn normalize(points: &[ClusterPoint]) -> Vec<[f64; 2]> {
    let feature = |f: &dyn Fn(&ClusterPoint) -> f64| {
        let (lo, hi) = points.iter().map(f).fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        points.iter().map(|p| if span > 0.0 { (f(p) - lo) / span } else { 0.0 }).collect::<Vec<_>>()
    };
    let mem = feature(&|p| p.mem_budget as f64);
    let comp = feature(&|p| p.comp_stat);
    mem.into_iter().zip(comp).map(|(m, c)| [m, c]).collect()
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// k-means++ seeding: the first centre uniformly, later ones with
/// probability proportional to squared distance from the nearest centre.
pub fn kmeans_pp_init(points: &[[f64; 2]], k: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centres = vec![points[rng.random_range(0..points.len())]];
    while centres.len() < k {
        let d: Vec<f64> = points.iter().map(|&p| centres.iter().map(|&c| dist2(p, c)).fold(f64::MAX, f64::min)).collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = d.iter().rposition(|&x| x > 0.0).expect("positive total");
        for (i, &x) in d.iter().enumerate() {
            if x > 0.0 && target < x {
                pick = i;
                break;
            }
            target -= x;
        }
        centres.push(points[pick]);
    }
    centres
}

/// Lloyd iterations from `centres` until assignments stop changing or the
/// iteration cap. Ties go to the lower centre index; an emptied centre keeps
/// its position. Returns labels, final centres and iterations run.
pub fn lloyd(points: &[[f64; 2]], mut centres: Vec<[f64; 2]>, max_iterations: usize) -> (Vec<usize>, Vec<[f64; 2]>, usize) {
    let nearest = |p: [f64; 2], centres: &[[f64; 2]]| {
        centres
            .iter()
            .enumerate()
            .fold((0, f64::MAX), |best, (i, &c)| if dist2(p, c) < best.1 { (i, dist2(p, c)) } else { best })
            .0
    };
    let mut labels: Vec<usize> = points.iter().map(|&p| nearest(p, &centres)).collect();
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        let mut sums = vec![([0.0, 0.0], 0usize); centres.len()];
        for (&p, &l) in points.iter().zip(&labels) {
            sums[l].0[0] += p[0];
            sums[l].0[1] += p[1];
            sums[l].1 += 1;
        }
        for (c, (s, n)) in centres.iter_mut().zip(sums) {
            if n > 0 {
                *c = [s[0] / n as f64, s[1] / n as f64];
            }
        }
        let next: Vec<usize> = points.iter().map(|&p| nearest(p, &centres)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    (labels, centres, iterations)
}

/// Groups clients into at most `k` clusters. Input order does not matter.
pub fn cluster_clients(points: &[ClusterPoint], k: usize, seed: u64) -> Result<ClusterAssignment, OrchestratorError> {
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| p.client);
    let mut distinct: Vec<(u64, u64)> = sorted.iter().map(|p| (p.mem_budget, p.comp_stat.to_bits())).collect();
    distinct.sort();
    distinct.dedup();
    if k == 0 || k > distinct.len() {
        return Err(OrchestratorError::TooManyClusters { k, distinct: distinct.len() });
    }
    let features = normalize(&sorted);
    let init = kmeans_pp_init(&features, k, seed);
    let (labels, centres, iterations) = lloyd(&features, init, MAX_ITERATIONS);
    let clusters = centres
        .iter()
        .enumerate()
        .filter_map(|(ci, &centroid)| {
            let members: Vec<&ClusterPoint> = sorted.iter().zip(&labels).filter(|(_, &l)| l == ci).map(|(p, _)| p).collect();
            let rep = members
                .iter()
                .min_by(|a, b| a.mem_budget.cmp(&b.mem_budget).then(a.comp_stat.total_cmp(&b.comp_stat)).then(a.client.cmp(&b.client)))?;
            Some(Cluster { members: members.iter().map(|p| p.client).collect(), representative: rep.client, centroid })
        })
        .collect();
    Ok(ClusterAssignment { clusters, iterations })
}
