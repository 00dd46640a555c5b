//! Memory-reduced-per-second scoring.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::codec::CodecModel;
use crate::device::DeviceProfile;
use crate::graph::{annotate_layout_chain, compute_lifetimes, ComputationGraph, GraphError, OpKind, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpsScore {
    pub saved_memory: u64,
    pub freed_lifetime: Duration,
    pub purge_cost: Duration,
    pub regain_cost: Duration,
}

impl MpsScore {
    /// Saved bytes times idle seconds.
    pub fn reward(&self) -> f64 {
        self.saved_memory as f64 * self.freed_lifetime.as_secs_f64()
    }

    pub fn cost(&self) -> Duration {
        self.purge_cost + self.regain_cost
    }

    /// Reward per second of purge plus regain time, in bytes.
    pub fn mps(&self) -> f64 {
        let cost = self.cost().as_secs_f64();
        if cost > 0.0 {
            self.reward() / cost
        } else {
            f64::INFINITY
        }
    }
}

/// Op kind that determines a tensor's value distribution for the codec:
/// the origin op for layout-transformed tensors, else the producer.
pub fn value_kind(graph: &ComputationGraph, tensor: TensorId) -> OpKind {
    let Some(t) = graph.tensor(tensor) else { return OpKind::Other };
    t.origin_op.or(t.producer).and_then(|op| graph.op(op)).map(|op| op.kind).unwrap_or(OpKind::Other)
}

/// Producer time plus the layout chain's time, doubled when any chain op
/// crosses a processor boundary. Sources cost nothing to "recompute".
pub fn recompute_cost(graph: &ComputationGraph, tensor: TensorId, device: &DeviceProfile) -> Result<Duration, GraphError> {
    let spec = graph.tensor(tensor).ok_or(GraphError::UnknownTensor(tensor))?;
    let Some(producer) = spec.producer else { return Ok(Duration::ZERO) };
    let producer_time = device.op_time(graph.op(producer).expect("validated"))?;
    let chain = annotate_layout_chain(graph, tensor);
    let mut chain_time = Duration::ZERO;
    let mut psi = 1;
    for id in chain {
        let op = graph.op(id).expect("validated");
        chain_time += device.op_time(op)?;
        if op.crosses_processor {
            psi = 2;
        }
    }
    Ok(producer_time + chain_time * psi)
}

/// Static scores over the whole schedule: the idle interval is the tensor's
/// freed lifetime, and recomputation assumes the producer's inputs are
/// resident.
pub fn score_tensor(
    graph: &ComputationGraph,
    tensor: TensorId,
    device: &DeviceProfile,
    codec: &CodecModel,
) -> Result<(MpsScore, MpsScore), GraphError> {
    let spec = graph.tensor(tensor).ok_or(GraphError::UnknownTensor(tensor))?;
    let lifetimes = compute_lifetimes(graph, device)?;
    let flt = lifetimes[&tensor].freed_lifetime;
    let kind = value_kind(graph, tensor);
    let compute = MpsScore {
        saved_memory: spec.bytes,
        freed_lifetime: flt,
        purge_cost: Duration::ZERO,
        regain_cost: recompute_cost(graph, tensor, device)?,
    };
    let compress = MpsScore {
        saved_memory: spec.bytes - codec.compressed_bytes(kind, spec.bytes),
        freed_lifetime: flt,
        purge_cost: codec.compress_time(kind, spec.bytes, device),
        regain_cost: codec.decompress_time(kind, spec.bytes, device),
    };
    Ok((compute, compress))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MB: u64 = 1_000_000;

    #[test]
    fn arithmetic() {
        let s = MpsScore {
            saved_memory: 100 * MB,
            freed_lifetime: Duration::from_secs(2),
            purge_cost: Duration::ZERO,
            regain_cost: Duration::from_millis(500),
        };
        assert_eq!(s.reward(), 200.0 * MB as f64);
        assert_eq!(s.mps(), 400.0 * MB as f64);
        let c = MpsScore { saved_memory: 75 * MB, purge_cost: Duration::from_millis(40), regain_cost: Duration::from_millis(60), ..s };
        assert!((c.mps() - 1500.0 * MB as f64).abs() < 1.0);
        assert!(c.mps() > s.mps());
    }
}
