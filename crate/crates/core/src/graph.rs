//! Tensor computation graphs: operators, tensors, schedules and lifetimes.
//!
//! A [`ComputationGraph`] is built once from a [`GraphDocument`] and is
//! immutable afterwards. Operators are stored in a topological order which
//! doubles as the sequential execution schedule.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{DeviceError, DeviceProfile};

/// Bytes per element used when the document does not say otherwise.
pub const DEFAULT_ELEMENT_WIDTH: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OpId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TensorId(pub u32);

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "op#{}", self.0)
    }
}

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tensor#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Conv,
    MatMul,
    ReLU,
    Pool,
    Reshape,
    Transpose,
    Gather,
    Norm,
    Add,
    Other,
}

impl OpKind {
    pub const ALL: [OpKind; 10] = [
        OpKind::Conv,
        OpKind::MatMul,
        OpKind::ReLU,
        OpKind::Pool,
        OpKind::Reshape,
        OpKind::Transpose,
        OpKind::Gather,
        OpKind::Norm,
        OpKind::Add,
        OpKind::Other,
    ];

    /// Kinds that only move data between memory layouts.
    pub fn is_layout_kind(self) -> bool {
        matches!(self, OpKind::Reshape | OpKind::Transpose | OpKind::Gather)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Layout {
    #[default]
    RowMajorNCHW,
    /// NC4HW4-style channel packing.
    Packed4,
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpSpec {
    pub id: OpId,
    pub kind: OpKind,
    pub inputs: Vec<TensorId>,
    pub outputs: Vec<TensorId>,
    /// Execution time on the reference device, in microseconds.
    pub base_time_us: f64,
    pub is_layout_transform: bool,
    pub crosses_processor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub id: TensorId,
    pub shape: Vec<u64>,
    pub bytes: u64,
    /// `None` for graph inputs (data batch, parameters).
    pub producer: Option<OpId>,
    /// Consumers in schedule order.
    pub consumers: Vec<OpId>,
    pub layout: Layout,
    /// Non-layout operator this tensor's value originates from. For outputs
    /// of layout transforms this traces back through the transform chain.
    pub origin_op: Option<OpId>,
}

impl TensorSpec {
    pub fn is_source(&self) -> bool {
        self.producer.is_none()
    }
}

/// Serialized graph form. Field names are part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_element_width")]
    pub element_width: u64,
    pub ops: Vec<OpEntry>,
    pub tensors: Vec<TensorEntry>,
}

fn default_element_width() -> u64 {
    DEFAULT_ELEMENT_WIDTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpEntry {
    pub id: u32,
    pub kind: OpKind,
    pub inputs: Vec<u32>,
    pub outputs: Vec<u32>,
    pub base_time_us: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout_transform: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crosses_processor: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub id: u32,
    pub shape: Vec<i64>,
    #[serde(default)]
    pub layout: Layout,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GraphError {
    #[error("malformed graph document: {0}")]
    Parse(String),
    #[error("duplicate op id {0}")]
    DuplicateOp(u32),
    #[error("duplicate tensor id {0}")]
    DuplicateTensor(u32),
    #[error("op {op} references undeclared tensor {tensor}")]
    DanglingTensor { op: u32, tensor: u32 },
    #[error("tensor {tensor} is produced by both op {first} and op {second}")]
    MultipleProducers { tensor: u32, first: u32, second: u32 },
    #[error("tensor {0} has a non-positive dimension")]
    NonPositiveShape(u32),
    #[error("op {0} has a non-positive base time")]
    NonPositiveTime(u32),
    #[error("element width must be positive")]
    NonPositiveElementWidth,
    #[error("cycle detected through op {0}")]
    Cycle(u32),
    #[error("graph has no ops")]
    Empty,
    #[error("unknown tensor {0}")]
    UnknownTensor(TensorId),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Validated, topologically ordered computation graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputationGraph {
    name: Option<String>,
    element_width: u64,
    ops: Vec<OpSpec>,
    tensors: Vec<TensorSpec>,
    tensor_index: BTreeMap<TensorId, usize>,
    op_step: BTreeMap<OpId, usize>,
}

impl ComputationGraph {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let doc: GraphDocument =
            serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("graph document serializes")
    }

    pub fn from_document(doc: GraphDocument) -> Result<Self, GraphError> {
        if doc.element_width == 0 {
            return Err(GraphError::NonPositiveElementWidth);
        }
        if doc.ops.is_empty() {
            return Err(GraphError::Empty);
        }

        let mut tensor_entries: BTreeMap<u32, &TensorEntry> = BTreeMap::new();
        for t in &doc.tensors {
            if tensor_entries.insert(t.id, t).is_some() {
                return Err(GraphError::DuplicateTensor(t.id));
            }
            if t.shape.is_empty() || t.shape.iter().any(|&d| d <= 0) {
                return Err(GraphError::NonPositiveShape(t.id));
            }
        }

        let mut seen_ops = BTreeSet::new();
        let mut producer_of: BTreeMap<u32, u32> = BTreeMap::new();
        for op in &doc.ops {
            if !seen_ops.insert(op.id) {
                return Err(GraphError::DuplicateOp(op.id));
            }
            if !(op.base_time_us > 0.0) || !op.base_time_us.is_finite() {
                return Err(GraphError::NonPositiveTime(op.id));
            }
            for &t in op.inputs.iter().chain(&op.outputs) {
                if !tensor_entries.contains_key(&t) {
                    return Err(GraphError::DanglingTensor { op: op.id, tensor: t });
                }
            }
            for &t in &op.outputs {
                if let Some(&first) = producer_of.get(&t) {
                    return Err(GraphError::MultipleProducers { tensor: t, first, second: op.id });
                }
                producer_of.insert(t, op.id);
            }
        }

        let order = topological_order(&doc.ops, &producer_of)?;

        let ops: Vec<OpSpec> = order
            .iter()
            .map(|&i| {
                let e = &doc.ops[i];
                OpSpec {
                    id: OpId(e.id),
                    kind: e.kind,
                    inputs: e.inputs.iter().copied().map(TensorId).collect(),
                    outputs: e.outputs.iter().copied().map(TensorId).collect(),
                    base_time_us: e.base_time_us,
                    is_layout_transform: e.layout_transform.unwrap_or(e.kind.is_layout_kind()),
                    crosses_processor: e.crosses_processor.unwrap_or(false),
                }
            })
            .collect();
        let op_step: BTreeMap<OpId, usize> =
            ops.iter().enumerate().map(|(s, op)| (op.id, s)).collect();

        let mut consumers: BTreeMap<u32, Vec<OpId>> = BTreeMap::new();
        for op in &ops {
            for t in &op.inputs {
                let list = consumers.entry(t.0).or_default();
                if list.last() != Some(&op.id) {
                    list.push(op.id);
                }
            }
        }

        let mut tensors: Vec<TensorSpec> = tensor_entries
            .values()
            .map(|e| {
                let shape: Vec<u64> = e.shape.iter().map(|&d| d as u64).collect();
                let elements: u64 = shape.iter().product();
                TensorSpec {
                    id: TensorId(e.id),
                    bytes: elements * doc.element_width,
                    shape,
                    producer: producer_of.get(&e.id).map(|&p| OpId(p)),
                    consumers: consumers.remove(&e.id).unwrap_or_default(),
                    layout: e.layout,
                    origin_op: None,
                }
            })
            .collect();
        let tensor_index: BTreeMap<TensorId, usize> =
            tensors.iter().enumerate().map(|(i, t)| (t.id, i)).collect();

        // Origins resolve in schedule order so a transform's input is settled first.
        for op in &ops {
            let origin = if op.is_layout_transform {
                op.inputs
                    .iter()
                    .find_map(|t| tensors[tensor_index[t]].origin_op)
                    .unwrap_or(op.id)
            } else {
                op.id
            };
            for t in &op.outputs {
                tensors[tensor_index[t]].origin_op = Some(origin);
            }
        }

        Ok(Self { name: doc.name, element_width: doc.element_width, ops, tensors, tensor_index, op_step })
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            name: self.name.clone(),
            element_width: self.element_width,
            ops: self
                .ops
                .iter()
                .map(|op| OpEntry {
                    id: op.id.0,
                    kind: op.kind,
                    inputs: op.inputs.iter().map(|t| t.0).collect(),
                    outputs: op.outputs.iter().map(|t| t.0).collect(),
                    base_time_us: op.base_time_us,
                    layout_transform: (op.is_layout_transform != op.kind.is_layout_kind())
                        .then_some(op.is_layout_transform),
                    crosses_processor: op.crosses_processor.then_some(true),
                })
                .collect(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorEntry {
                    id: t.id.0,
                    shape: t.shape.iter().map(|&d| d as i64).collect(),
                    layout: t.layout,
                })
                .collect(),
        }
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn element_width(&self) -> u64 {
        self.element_width
    }

    /// Operators in schedule order; the index is the execution step.
    pub fn ops(&self) -> &[OpSpec] {
        &self.ops
    }

    /// Tensors sorted by id.
    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn tensor(&self, id: TensorId) -> Option<&TensorSpec> {
        self.tensor_index.get(&id).map(|&i| &self.tensors[i])
    }

    pub fn tensor_index(&self, id: TensorId) -> Option<usize> {
        self.tensor_index.get(&id).copied()
    }

    pub fn op(&self, id: OpId) -> Option<&OpSpec> {
        self.op_step.get(&id).map(|&s| &self.ops[s])
    }

    /// Execution step of an operator.
    pub fn step_of(&self, id: OpId) -> Option<usize> {
        self.op_step.get(&id).copied()
    }

    /// Execution step assigned to each op, in schedule order.
    pub fn schedule(&self) -> Vec<usize> {
        (0..self.ops.len()).collect()
    }

    pub fn num_steps(&self) -> usize {
        self.ops.len()
    }

    /// Distinct op kinds used by the graph, sorted.
    pub fn op_kinds(&self) -> Vec<OpKind> {
        self.ops.iter().map(|o| o.kind).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Steps at which a tensor is touched: its producer step (or 0 for
    /// sources) followed by every consumer step.
    pub fn use_steps(&self, id: TensorId) -> Vec<usize> {
        let t = &self.tensors[self.tensor_index[&id]];
        let mut steps = Vec::with_capacity(t.consumers.len() + 1);
        steps.push(t.producer.map(|p| self.op_step[&p]).unwrap_or(0));
        steps.extend(t.consumers.iter().map(|c| self.op_step[c]));
        steps.dedup();
        steps
    }

    /// Last step at which the tensor must be resident. Sources stay resident
    /// for the whole schedule.
    pub fn last_use(&self, id: TensorId) -> usize {
        let t = &self.tensors[self.tensor_index[&id]];
        if t.is_source() {
            return self.ops.len() - 1;
        }
        *self.use_steps(id).last().expect("non-empty")
    }

    /// Bytes of tensors resident at each step under plain execution without
    /// reclamation. Sources are resident throughout; other tensors from their
    /// producer step to their last consumer step.
    pub fn live_bytes_per_step(&self) -> Vec<u64> {
        let mut delta = vec![0i128; self.ops.len() + 1];
        for t in &self.tensors {
            let first = if t.is_source() { 0 } else { self.use_steps(t.id)[0] };
            let last = self.last_use(t.id);
            delta[first] += t.bytes as i128;
            delta[last + 1] -= t.bytes as i128;
        }
        let mut acc = 0i128;
        delta[..self.ops.len()]
            .iter()
            .map(|d| {
                acc += d;
                acc as u64
            })
            .collect()
    }

    /// Peak memory of plain execution without any reclamation.
    pub fn untreated_peak(&self) -> u64 {
        self.live_bytes_per_step().into_iter().max().unwrap_or(0)
    }

    pub fn source_bytes(&self) -> u64 {
        self.tensors.iter().filter(|t| t.is_source()).map(|t| t.bytes).sum()
    }

    /// Smallest pool that can hold every source plus the inputs and outputs
    /// of any single op.
    pub fn pinned_minimum(&self) -> u64 {
        let sources = self.source_bytes();
        let worst_op = self
            .ops
            .iter()
            .map(|op| {
                let ids: BTreeSet<TensorId> = op.inputs.iter().chain(&op.outputs).copied().collect();
                ids.into_iter()
                    .map(|id| self.tensor(id).expect("validated"))
                    .filter(|t| !t.is_source())
                    .map(|t| t.bytes)
                    .sum::<u64>()
            })
            .max()
            .unwrap_or(0);
        sources + worst_op
    }

    /// Depth of the longest producer chain, counted in ops.
    pub fn depth(&self) -> usize {
        let mut depth: BTreeMap<OpId, usize> = BTreeMap::new();
        let mut best = 0;
        for op in &self.ops {
            let d = op
                .inputs
                .iter()
                .filter_map(|t| self.tensor(*t).and_then(|t| t.producer))
                .map(|p| depth[&p])
                .max()
                .unwrap_or(0)
                + 1;
            depth.insert(op.id, d);
            best = best.max(d);
        }
        best
    }
}

/// Kahn's algorithm, preferring the document order among ready ops.
fn topological_order(ops: &[OpEntry], producer_of: &BTreeMap<u32, u32>) -> Result<Vec<usize>, GraphError> {
    let index_of: BTreeMap<u32, usize> = ops.iter().enumerate().map(|(i, o)| (o.id, i)).collect();
    let mut indegree = vec![0usize; ops.len()];
    let mut successors: Vec<Vec<usize>> = vec![Vec::new(); ops.len()];
    for (i, op) in ops.iter().enumerate() {
        let preds: BTreeSet<usize> = op
            .inputs
            .iter()
            .filter_map(|t| producer_of.get(t))
            .map(|p| index_of[p])
            .collect();
        for p in preds {
            if p == i {
                return Err(GraphError::Cycle(op.id));
            }
            successors[p].push(i);
            indegree[i] += 1;
        }
    }

    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..ops.len()).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(ops.len());
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &s in &successors[i] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.push(Reverse(s));
            }
        }
    }
    if order.len() != ops.len() {
        let stuck = (0..ops.len()).find(|&i| indegree[i] > 0).expect("cycle member");
        return Err(GraphError::Cycle(ops[stuck].id));
    }
    Ok(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorLifetime {
    pub first_use: usize,
    pub last_use: usize,
    /// Longest idle interval between two consecutive uses under sequential
    /// execution: from the end of one use to the start of the next.
    pub freed_lifetime: Duration,
}

/// Start and end time of every step under sequential execution.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub starts: Vec<Duration>,
    pub ends: Vec<Duration>,
}

impl Timeline {
    pub fn new(graph: &ComputationGraph, device: &DeviceProfile) -> Result<Self, GraphError> {
        let mut starts = Vec::with_capacity(graph.num_steps());
        let mut ends = Vec::with_capacity(graph.num_steps());
        let mut now = Duration::ZERO;
        for op in graph.ops() {
            starts.push(now);
            now += device.op_time(op)?;
            ends.push(now);
        }
        Ok(Self { starts, ends })
    }

    pub fn total(&self) -> Duration {
        self.ends.last().copied().unwrap_or_default()
    }

    /// Idle time between the end of step `from` and the start of step `to`.
    pub fn gap(&self, from: usize, to: usize) -> Duration {
        self.starts[to].saturating_sub(self.ends[from])
    }
}

pub fn compute_lifetimes(
    graph: &ComputationGraph,
    device: &DeviceProfile,
) -> Result<BTreeMap<TensorId, TensorLifetime>, GraphError> {
    let timeline = Timeline::new(graph, device)?;
    Ok(graph
        .tensors()
        .iter()
        .map(|t| {
            let uses = graph.use_steps(t.id);
            let freed = uses
                .windows(2)
                .map(|w| timeline.gap(w[0], w[1]))
                .max()
                .unwrap_or(Duration::ZERO);
            let lifetime = TensorLifetime {
                first_use: if t.is_source() { 0 } else { uses[0] },
                last_use: graph.last_use(t.id),
                freed_lifetime: freed,
            };
            (t.id, lifetime)
        })
        .collect())
}

/// Layout-transform operators between a tensor's producer and the
/// non-transform operator that finally consumes it, in depth-first order.
pub fn annotate_layout_chain(graph: &ComputationGraph, tensor: TensorId) -> Vec<OpId> {
    let mut chain = Vec::new();
    let mut seen = BTreeSet::new();
    dfs_chain(graph, tensor, &mut seen, &mut chain);
    chain
}

fn dfs_chain(graph: &ComputationGraph, tensor: TensorId, seen: &mut BTreeSet<OpId>, out: &mut Vec<OpId>) {
    let Some(spec) = graph.tensor(tensor) else { return };
    for consumer in &spec.consumers {
        let op = graph.op(*consumer).expect("validated");
        if op.is_layout_transform && seen.insert(op.id) {
            out.push(op.id);
            for t in &op.outputs {
                dfs_chain(graph, *t, seen, out);
            }
        }
    }
}
