//! Graph fixtures and generators: small hand-built graphs, randomized DAGs
//! and a MobileNet-style training graph.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{ComputationGraph, GraphDocument, Layout, OpEntry, OpKind, TensorEntry, DEFAULT_ELEMENT_WIDTH};

/// Incremental [`GraphDocument`] construction with sequential ids.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    doc: GraphDocument,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            doc: GraphDocument { name: Some(name.into()), element_width: DEFAULT_ELEMENT_WIDTH, ops: Vec::new(), tensors: Vec::new() },
        }
    }

    pub fn tensor(&mut self, shape: &[i64]) -> u32 {
        self.tensor_with_layout(shape, Layout::RowMajorNCHW)
    }

    pub fn tensor_with_layout(&mut self, shape: &[i64], layout: Layout) -> u32 {
        let id = self.doc.tensors.len() as u32;
        self.doc.tensors.push(TensorEntry { id, shape: shape.to_vec(), layout });
        id
    }

    pub fn op_with(&mut self, kind: OpKind, inputs: &[u32], outputs: &[u32], base_time_us: f64, crosses_processor: bool) -> u32 {
        let id = self.doc.ops.len() as u32;
        self.doc.ops.push(OpEntry {
            id,
            kind,
            inputs: inputs.to_vec(),
            outputs: outputs.to_vec(),
            base_time_us,
            layout_transform: None,
            crosses_processor: crosses_processor.then_some(true),
        });
        id
    }

    /// Adds an op with one fresh output tensor and returns that tensor's id.
    pub fn op(&mut self, kind: OpKind, inputs: &[u32], out_shape: &[i64], base_time_us: f64) -> u32 {
        let out = self.tensor(out_shape);
        self.op_with(kind, inputs, &[out], base_time_us, false);
        out
    }

    pub fn document(&self) -> &GraphDocument {
        &self.doc
    }

    pub fn into_document(self) -> GraphDocument {
        self.doc
    }

    pub fn build(self) -> ComputationGraph {
        ComputationGraph::from_document(self.doc).expect("builder output is valid")
    }
}

/// Conv → ReLU → Pool.
pub fn chain3() -> ComputationGraph {
    let mut b = GraphBuilder::new("chain3");
    let x = b.tensor(&[1, 3, 8, 8]);
    let a = b.op(OpKind::Conv, &[x], &[1, 8, 8, 8], 10.0);
    let r = b.op(OpKind::ReLU, &[a], &[1, 8, 8, 8], 2.0);
    b.op(OpKind::Pool, &[r], &[1, 8, 4, 4], 3.0);
    b.build()
}

/// Explicit Reshape + Transpose between Conv and MatMul, then implicit
/// Gather + Reshape between MatMul and Pool. Returns the graph and the ids of
/// the Conv and MatMul outputs.
pub fn layout_chain(crosses_processor: bool) -> (ComputationGraph, u32, u32) {
    let mut b = GraphBuilder::new("layout-chain");
    let x = b.tensor(&[1, 16, 8, 8]);
    let conv = b.op(OpKind::Conv, &[x], &[1, 16, 8, 8], 10.0);
    let reshaped = b.tensor_with_layout(&[1, 16, 64], Layout::Flat);
    b.op_with(OpKind::Reshape, &[conv], &[reshaped], 4.0, crosses_processor);
    let transposed = b.tensor_with_layout(&[1, 64, 16], Layout::Flat);
    b.op_with(OpKind::Transpose, &[reshaped], &[transposed], 2.0, false);
    let w = b.tensor(&[16, 16]);
    let mm = b.op(OpKind::MatMul, &[transposed, w], &[1, 64, 16], 20.0);
    let gathered = b.tensor_with_layout(&[1, 64, 16], Layout::Packed4);
    b.op_with(OpKind::Gather, &[mm], &[gathered], 3.0, false);
    let back = b.tensor(&[1, 16, 8, 8]);
    b.op_with(OpKind::Reshape, &[gathered], &[back], 1.0, false);
    b.op(OpKind::Pool, &[back], &[1, 16, 4, 4], 5.0);
    (b.build(), conv, mm)
}

/// Stem conv followed by an inverted-residual block: expand, depthwise,
/// project, residual add. Twelve tensors in total; the stem output idles
/// across the whole block.
pub fn inverted_residual_block() -> ComputationGraph {
    let mut b = GraphBuilder::new("inverted-residual");
    let image = b.tensor(&[8, 3, 56, 56]);
    let w_expand = b.tensor(&[144, 24, 1, 1]);
    let w_project = b.tensor(&[24, 144, 1, 1]);
    let x = b.op(OpKind::Conv, &[image], &[8, 24, 28, 28], 600.0);
    let e = b.op(OpKind::Conv, &[x, w_expand], &[8, 144, 28, 28], 900.0);
    let e = b.op(OpKind::Norm, &[e], &[8, 144, 28, 28], 250.0);
    let e = b.op(OpKind::ReLU, &[e], &[8, 144, 28, 28], 120.0);
    let d = b.op(OpKind::Conv, &[e], &[8, 144, 28, 28], 500.0);
    let d = b.op(OpKind::Norm, &[d], &[8, 144, 28, 28], 250.0);
    let d = b.op(OpKind::ReLU, &[d], &[8, 144, 28, 28], 120.0);
    let p = b.op(OpKind::Conv, &[d, w_project], &[8, 24, 28, 28], 900.0);
    b.op(OpKind::Add, &[x, p], &[8, 24, 28, 28], 40.0);
    b.build()
}

/// Eight-tensor residual graph with two long-lived activations.
pub fn residual8() -> ComputationGraph {
    let mut b = GraphBuilder::new("residual8");
    let shape = [4, 32, 32, 32];
    let x = b.tensor(&[4, 3, 32, 32]);
    let t1 = b.op(OpKind::Conv, &[x], &shape, 1_500.0);
    let t2 = b.op(OpKind::ReLU, &[t1], &shape, 150.0);
    let t3 = b.op(OpKind::Conv, &[t2], &shape, 1_500.0);
    let t4 = b.op(OpKind::ReLU, &[t3], &shape, 150.0);
    let t5 = b.op(OpKind::Conv, &[t4], &shape, 1_500.0);
    let t6 = b.op(OpKind::Add, &[t5, t2], &shape, 100.0);
    b.op(OpKind::Add, &[t6, t1], &shape, 100.0);
    b.build()
}

/// Four ops where a cheap ReLU output idles across two Convs, ending in a
/// small pooled sum. Every activation is 1 MiB.
pub fn relu_idle4() -> ComputationGraph {
    let mut b = GraphBuilder::new("relu-idle4");
    let shape = [1, 64, 64, 64];
    let x = b.tensor(&shape);
    let a = b.op(OpKind::ReLU, &[x], &shape, 250.0);
    let c1 = b.op(OpKind::Conv, &[x], &shape, 4_000.0);
    let c2 = b.op(OpKind::Conv, &[c1], &shape, 4_000.0);
    b.op(OpKind::Pool, &[a, c2], &[1, 64, 1, 1], 200.0);
    b.build()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomDagSpec {
    pub ops: usize,
    /// Graph inputs besides the ones created on demand.
    pub sources: usize,
    /// Probability that an op reads a second, older tensor.
    pub skip_probability: f64,
    /// Probability that an op is a layout transform.
    pub layout_probability: f64,
}

impl Default for RandomDagSpec {
    fn default() -> Self {
        Self { ops: 30, sources: 2, skip_probability: 0.5, layout_probability: 0.1 }
    }
}

fn kind_time_us(kind: OpKind, bytes: u64) -> f64 {
    let bytes_per_us = match kind {
        OpKind::Conv | OpKind::MatMul => 250.0,
        OpKind::Norm | OpKind::Pool => 2_000.0,
        OpKind::ReLU => 4_000.0,
        OpKind::Add => 3_000.0,
        OpKind::Reshape | OpKind::Transpose | OpKind::Gather => 5_000.0,
        OpKind::Other => 1_000.0,
    };
    (bytes as f64 / bytes_per_us).max(1.0)
}

/// Random single-output DAG. Every non-source tensor except the last is read
/// by at least one later op.
pub fn random_dag(spec: &RandomDagSpec, seed: u64) -> ComputationGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new(format!("random-dag-{seed}"));
    let shape_for = |rng: &mut ChaCha8Rng| -> Vec<i64> {
        let c = [8, 16, 32, 64][rng.random_range(0..4)];
        let hw = [8, 16, 32][rng.random_range(0..3)];
        vec![1, c, hw, hw]
    };
    let mut tensors: Vec<u32> = (0..spec.sources.max(1)).map(|_| b.tensor(&shape_for(&mut rng))).collect();
    let mut unread: Vec<u32> = Vec::new();
    const KINDS: [OpKind; 6] = [OpKind::Conv, OpKind::ReLU, OpKind::Norm, OpKind::Pool, OpKind::Add, OpKind::MatMul];
    for i in 0..spec.ops {
        // Prefer the oldest unread tensor so every output has a consumer.
        let primary = if !unread.is_empty() && rng.random::<f64>() < 0.8 {
            unread.remove(0)
        } else {
            tensors[tensors.len() - 1 - rng.random_range(0..tensors.len().min(3))]
        };
        let mut inputs = vec![primary];
        let layout = rng.random::<f64>() < spec.layout_probability;
        if !layout && rng.random::<f64>() < spec.skip_probability {
            let other = tensors[rng.random_range(0..tensors.len())];
            if other != primary {
                inputs.push(other);
            }
        }
        unread.retain(|t| !inputs.contains(t));
        let kind = if layout {
            [OpKind::Reshape, OpKind::Transpose, OpKind::Gather][rng.random_range(0..3)]
        } else {
            KINDS[rng.random_range(0..KINDS.len())]
        };
        let shape = shape_for(&mut rng);
        let bytes = shape.iter().product::<i64>() as u64 * DEFAULT_ELEMENT_WIDTH;
        let out = b.tensor(&shape);
        let jitter = 0.5 + rng.random::<f64>();
        let crosses = layout && rng.random::<f64>() < 0.3;
        b.op_with(kind, &inputs, &[out], kind_time_us(kind, bytes) * jitter, crosses);
        if i + 1 < spec.ops {
            unread.push(out);
        }
        tensors.push(out);
    }
    // Leftover unread tensors feed a final reduction so none are orphaned.
    if !unread.is_empty() {
        let last = *tensors.last().unwrap();
        let mut inputs = unread.clone();
        inputs.push(last);
        b.op(OpKind::Add, &inputs, &[1, 8, 8, 8], 10.0);
    }
    b.build()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingGraphSpec {
    pub batch: i64,
    pub resolution: i64,
    /// Multiplier on every layer's channel count.
    pub width: f64,
}

impl Default for TrainingGraphSpec {
    fn default() -> Self {
        Self { batch: 40, resolution: 224, width: 1.0 }
    }
}

/// MobileNetV2-style forward pass followed by an explicit backward pass that
/// reads the saved forward activations in reverse order. With the default
/// spec the untreated peak is about 3 GB.
pub fn mobilenet_training(spec: &TrainingGraphSpec) -> ComputationGraph {
    let mut b = GraphBuilder::new("mobilenet-training");
    let ch = |c: i64| ((c as f64 * spec.width).round() as i64).max(1);
    let bytes = |shape: &[i64]| shape.iter().product::<i64>() as u64 * DEFAULT_ELEMENT_WIDTH;
    let n = spec.batch;
    let mut res = spec.resolution;

    struct Saved {
        kind: OpKind,
        input: u32,
        output: u32,
        weight: Option<u32>,
        shape_in: Vec<i64>,
    }
    let mut saved: Vec<Saved> = Vec::new();
    let mut forward = |b: &mut GraphBuilder, kind: OpKind, input: u32, shape_in: &[i64], shape_out: &[i64], weight: Option<u32>| {
        let mut inputs = vec![input];
        inputs.extend(weight);
        let out = b.op(kind, &inputs, shape_out, kind_time_us(kind, bytes(shape_out)));
        saved.push(Saved { kind, input, output: out, weight, shape_in: shape_in.to_vec() });
        out
    };

    let image = b.tensor(&[n, 3, res, res]);
    let mut c = ch(32);
    res /= 2;
    let w = b.tensor(&[c, 3, 3, 3]);
    let mut shape = vec![n, 3, spec.resolution, spec.resolution];
    let stem_shape = vec![n, c, res, res];
    let mut x = forward(&mut b, OpKind::Conv, image, &shape, &stem_shape, Some(w));
    shape = stem_shape;
    x = forward(&mut b, OpKind::Norm, x, &shape.clone(), &shape.clone(), None);
    x = forward(&mut b, OpKind::ReLU, x, &shape.clone(), &shape.clone(), None);

    // (expansion, output channels, repeats, first stride)
    const STAGES: [(i64, i64, usize, i64); 7] =
        [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)];
    for (t, out_c, repeats, stride) in STAGES {
        for r in 0..repeats {
            let s = if r == 0 { stride } else { 1 };
            let hidden = c * t;
            let out_res = res / s;
            let mut h = x;
            let mut h_shape = shape.clone();
            if t != 1 {
                let w = b.tensor(&[hidden, c, 1, 1]);
                let e_shape = vec![n, hidden, res, res];
                h = forward(&mut b, OpKind::Conv, h, &h_shape, &e_shape, Some(w));
                h = forward(&mut b, OpKind::Norm, h, &e_shape, &e_shape, None);
                h = forward(&mut b, OpKind::ReLU, h, &e_shape, &e_shape, None);
                h_shape = e_shape;
            }
            let w = b.tensor(&[hidden, 1, 3, 3]);
            let d_shape = vec![n, hidden, out_res, out_res];
            h = forward(&mut b, OpKind::Conv, h, &h_shape, &d_shape, Some(w));
            h = forward(&mut b, OpKind::Norm, h, &d_shape, &d_shape, None);
            h = forward(&mut b, OpKind::ReLU, h, &d_shape, &d_shape, None);
            let oc = ch(out_c);
            let w = b.tensor(&[oc, hidden, 1, 1]);
            let p_shape = vec![n, oc, out_res, out_res];
            h = forward(&mut b, OpKind::Conv, h, &d_shape, &p_shape, Some(w));
            h = forward(&mut b, OpKind::Norm, h, &p_shape, &p_shape, None);
            if s == 1 && oc == c {
                let sum = b.op(OpKind::Add, &[x, h], &p_shape, kind_time_us(OpKind::Add, bytes(&p_shape)));
                h = sum;
            }
            x = h;
            shape = p_shape;
            c = oc;
            res = out_res;
        }
    }
    let w = b.tensor(&[ch(1280), c, 1, 1]);
    let head_shape = vec![n, ch(1280), res, res];
    x = forward(&mut b, OpKind::Conv, x, &shape, &head_shape, Some(w));
    x = forward(&mut b, OpKind::ReLU, x, &head_shape, &head_shape, None);
    let pooled_shape = vec![n, ch(1280), 1, 1];
    x = forward(&mut b, OpKind::Pool, x, &head_shape, &pooled_shape, None);
    let reshaped = b.tensor_with_layout(&[n, ch(1280)], Layout::Flat);
    b.op_with(OpKind::Reshape, &[x], &[reshaped], 5.0, false);
    let w_fc = b.tensor(&[ch(1280), 1000]);
    let logits = b.op(OpKind::MatMul, &[reshaped, w_fc], &[n, 1000], kind_time_us(OpKind::MatMul, bytes(&[n, 1000])) * 50.0);
    let labels = b.tensor(&[n]);
    let mut grad = b.op(OpKind::Other, &[logits, labels], &[n, 1000], 50.0);
    grad = b.op(OpKind::MatMul, &[grad, w_fc, reshaped], &[n, ch(1280)], kind_time_us(OpKind::MatMul, bytes(&[n, 1000])) * 100.0);
    let g = b.tensor(&[n, ch(1280), 1, 1]);
    b.op_with(OpKind::Reshape, &[grad], &[g], 5.0, false);
    grad = g;

    // Weight gradients accumulate in place; each backward op writes the
    // input gradient only.
    let mut grad_of: BTreeMap<u32, u32> = BTreeMap::new();
    for s in saved.iter().rev() {
        let g_out = grad_of.remove(&s.output).unwrap_or(grad);
        let mut inputs = vec![g_out, s.input];
        if s.kind == OpKind::ReLU || s.kind == OpKind::Pool {
            inputs.push(s.output);
        }
        inputs.extend(s.weight);
        let time = 2.0 * kind_time_us(s.kind, bytes(&s.shape_in));
        let g_in = b.op(s.kind, &inputs, &s.shape_in, time);
        // Residual inputs receive gradient from two paths; the later path
        // simply overwrites, which keeps the op count linear.
        grad_of.insert(s.input, g_in);
        grad = g_in;
    }
    b.build()
}

/// Training graph used by the standard simulation fixture: batch 64, which
/// needs about 5 GB untreated.
pub fn standard_training_graph() -> ComputationGraph {
    mobilenet_training(&TrainingGraphSpec { batch: 64, ..TrainingGraphSpec::default() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TensorId;

    #[test]
    fn random_dags_are_valid_and_deterministic() {
        for seed in 0..20 {
            let spec = RandomDagSpec { ops: 10 + seed as usize, ..RandomDagSpec::default() };
            let g = random_dag(&spec, seed);
            assert_eq!(g.to_json(), random_dag(&spec, seed).to_json());
            let last = g.ops().last().unwrap();
            for t in g.tensors() {
                if !t.is_source() && !last.outputs.contains(&t.id) {
                    assert!(!t.consumers.is_empty(), "seed {seed}: {} unread", t.id);
                }
            }
        }
    }

    #[test]
    fn twelve_tensor_block() {
        let g = inverted_residual_block();
        assert_eq!(g.tensors().len(), 12);
        assert_eq!(g.num_steps(), 9);
        assert!(g.tensor(TensorId(0)).unwrap().is_source());
    }

    #[test]
    fn training_graph_peak_near_three_gigabytes() {
        let g = mobilenet_training(&TrainingGraphSpec::default());
        let peak = g.untreated_peak() as f64 / 1e9;
        assert!((2.0..4.5).contains(&peak), "peak {peak:.2} GB");
    }
}
