//! The seven candidate operations, mixed edges, and cell DAGs.
//!
//! A cell has two input nodes (ids 0 and 1) followed by `p` intermediate nodes
//! (ids `2..p + 2`). Every intermediate node receives one edge from each
//! earlier node; edges are numbered node by node, source by source. The cell
//! output concatenates the intermediate nodes along channels.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Bindings, ParamGroup, ParamStore, PoolKind, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Candidate operations, in the fixed order used by architecture weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    SepConv3,
    SepConv5,
    DilConv3,
    DilConv5,
    AvgPool3,
    MaxPool3,
    SkipConnect,
}

/// Number of candidate operations per edge.
pub const NUM_OPS: usize = 7;

/// Number of input nodes per cell.
pub const CELL_INPUTS: usize = 2;

impl OpKind {
    pub const ALL: [OpKind; NUM_OPS] = [
        OpKind::SepConv3,
        OpKind::SepConv5,
        OpKind::DilConv3,
        OpKind::DilConv5,
        OpKind::AvgPool3,
        OpKind::MaxPool3,
        OpKind::SkipConnect,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::SepConv3 => "sep_conv_3x3",
            OpKind::SepConv5 => "sep_conv_5x5",
            OpKind::DilConv3 => "dil_conv_3x3",
            OpKind::DilConv5 => "dil_conv_5x5",
            OpKind::AvgPool3 => "avg_pool_3x3",
            OpKind::MaxPool3 => "max_pool_3x3",
            OpKind::SkipConnect => "skip_connect",
        }
    }

    /// `(kernel, dilation)` for the convolutional kinds.
    fn conv_shape(self) -> Option<(usize, usize)> {
        match self {
            OpKind::SepConv3 => Some((3, 1)),
            OpKind::SepConv5 => Some((5, 1)),
            OpKind::DilConv3 => Some((3, 2)),
            OpKind::DilConv5 => Some((5, 2)),
            _ => None,
        }
    }

    pub fn has_params(self) -> bool {
        self.conv_shape().is_some()
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown operation `{0}`")]
pub struct UnknownOp(pub String);

impl FromStr for OpKind {
    type Err = UnknownOp;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| UnknownOp(s.to_string()))
    }
}

impl Serialize for OpKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for OpKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Normal,
    Reduction,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::Normal => "normal",
            CellKind::Reduction => "reduction",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub index: usize,
    pub from: usize,
    pub to: usize,
    pub stride: usize,
}

/// Shape of a cell: kind, intermediate node count `p`, and channels `C`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub kind: CellKind,
    pub nodes: usize,
    pub channels: usize,
}

impl CellSpec {
    pub fn new(kind: CellKind, nodes: usize, channels: usize) -> Self {
        Self { kind, nodes, channels }
    }

    /// `2 + 3 + ... + (p + 1)` edges.
    pub fn num_edges(&self) -> usize {
        (0..self.nodes).map(|j| CELL_INPUTS + j).sum()
    }

    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::with_capacity(self.num_edges());
        for j in 0..self.nodes {
            let to = CELL_INPUTS + j;
            for from in 0..to {
                out.push(Edge { index: out.len(), from, to, stride: self.stride(from) });
            }
        }
        out
    }

    pub fn edge_index(&self, from: usize, to: usize) -> Option<usize> {
        if to < CELL_INPUTS || to >= CELL_INPUTS + self.nodes || from >= to {
            return None;
        }
        let before: usize = (0..to - CELL_INPUTS).map(|j| CELL_INPUTS + j).sum();
        Some(before + from)
    }

    /// Reduction cells downsample only on edges leaving the input nodes.
    pub fn stride(&self, from: usize) -> usize {
        if self.kind == CellKind::Reduction && from < CELL_INPUTS {
            2
        } else {
            1
        }
    }

    pub fn output_channels(&self) -> usize {
        self.nodes * self.channels
    }
}

/// One candidate operation; its weights live in a [`ParamStore`] under `prefix`.
#[derive(Clone, Debug, PartialEq)]
pub struct Operation {
    pub kind: OpKind,
    pub stride: usize,
    pub channels: usize,
    prefix: String,
}

/// Uniform `[-s, s]` with `s = 1 / sqrt(fan_in)`.
pub fn uniform_init<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let s = 1.0 / (fan_in as f64).sqrt();
    let data = (0..shape.iter().product::<usize>()).map(|_| T::lit(rng.random_range(-s..=s))).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("init shape")
}

impl Operation {
    /// Creates the operation and registers freshly initialised weights.
    pub fn build<T: Scalar, R: Rng>(
        kind: OpKind,
        channels: usize,
        stride: usize,
        prefix: impl Into<String>,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        if channels == 0 {
            return Err(AutodiffError::Contract("operation needs at least one channel".into()));
        }
        let op = Self { kind, stride, channels, prefix: prefix.into() };
        if let Some((k, _)) = kind.conv_shape() {
            store.insert(op.depthwise_name(), ParamGroup::Head, uniform_init(&[channels, 1, k, k], k * k, rng))?;
            store.insert(op.pointwise_name(), ParamGroup::Head, uniform_init(&[channels, channels, 1, 1], channels, rng))?;
        }
        Ok(op)
    }

    pub fn depthwise_name(&self) -> String {
        format!("{}.dw", self.prefix)
    }

    pub fn pointwise_name(&self) -> String {
        format!("{}.pw", self.prefix)
    }

    pub fn param_names(&self) -> Vec<String> {
        if self.kind.has_params() {
            vec![self.depthwise_name(), self.pointwise_name()]
        } else {
            Vec::new()
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Bindings, x: Var) -> Result<Var, AutodiffError> {
        match self.kind {
            OpKind::AvgPool3 => tape.pool2d(x, PoolKind::Avg, 3, self.stride),
            OpKind::MaxPool3 => tape.pool2d(x, PoolKind::Max, 3, self.stride),
            OpKind::SkipConnect if self.stride == 1 => Ok(x),
            OpKind::SkipConnect => tape.subsample2(x),
            kind => {
                let (_, dilation) = kind.conv_shape().expect("conv kind");
                let a = tape.relu(x);
                let dw = params.get(&self.depthwise_name())?;
                let pw = params.get(&self.pointwise_name())?;
                let d = tape.conv2d(a, dw, self.stride, dilation, self.channels)?;
                tape.conv2d(d, pw, 1, 1, 1)
            }
        }
    }
}

/// Convex combination of the seven operation outputs.
pub fn mixed_op_forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Bindings,
    edge_ops: &[Operation],
    alpha_edge: Var,
    x: Var,
) -> Result<Var, AutodiffError> {
    if edge_ops.len() != NUM_OPS || tape.value(alpha_edge).numel() != NUM_OPS {
        return Err(AutodiffError::Contract(format!(
            "mixed edge needs {NUM_OPS} operations and weights, got {} and {}",
            edge_ops.len(),
            tape.value(alpha_edge).numel()
        )));
    }
    let outs = edge_ops.iter().map(|op| op.forward(tape, params, x)).collect::<Result<Vec<_>, _>>()?;
    tape.weighted_sum(&outs, alpha_edge)
}

/// Parameter prefix of the operation `kind` on edge `index`.
pub fn op_prefix(cell_prefix: &str, index: usize, kind: OpKind) -> String {
    format!("{cell_prefix}.e{index:02}.{}", kind.name())
}

/// A cell in which every edge mixes all seven operations.
#[derive(Clone, Debug)]
pub struct SearchCell {
    pub spec: CellSpec,
    edges: Vec<Edge>,
    ops: Vec<Vec<Operation>>,
}

impl SearchCell {
    pub fn build<T: Scalar, R: Rng>(
        spec: CellSpec,
        prefix: &str,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let edges = spec.edges();
        let mut ops = Vec::with_capacity(edges.len());
        for e in &edges {
            let row = OpKind::ALL
                .iter()
                .map(|&k| Operation::build(k, spec.channels, e.stride, op_prefix(prefix, e.index, k), store, rng))
                .collect::<Result<Vec<_>, _>>()?;
            ops.push(row);
        }
        Ok(Self { spec, edges, ops })
    }

    pub fn edge_ops(&self, index: usize) -> &[Operation] {
        &self.ops[index]
    }

    /// Forward pass; `alphas[e]` is the weight vector of edge `e`.
    ///
    /// Parameter-free operations depend only on the source node and stride,
    /// so they are evaluated once and shared between edges.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Bindings,
        inputs: [Var; 2],
        alphas: &[Var],
    ) -> Result<Var, AutodiffError> {
        if alphas.len() != self.edges.len() {
            return Err(AutodiffError::Contract(format!(
                "{} edges but {} weight vectors",
                self.edges.len(),
                alphas.len()
            )));
        }
        check_cell_inputs(tape, &self.spec, inputs)?;
        let mut states: Vec<Var> = inputs.to_vec();
        let mut shared: HashMap<(usize, OpKind), Var> = HashMap::new();
        let mut incoming: Vec<Var> = Vec::new();
        for e in &self.edges {
            if e.to != states.len() {
                let node = tape.sum(&incoming)?;
                states.push(node);
                incoming.clear();
            }
            let x = states[e.from];
            let mut outs = Vec::with_capacity(NUM_OPS);
            for op in &self.ops[e.index] {
                let out = if op.kind.has_params() {
                    op.forward(tape, params, x)?
                } else if let Some(&v) = shared.get(&(e.from, op.kind)) {
                    v
                } else {
                    let v = op.forward(tape, params, x)?;
                    shared.insert((e.from, op.kind), v);
                    v
                };
                outs.push(out);
            }
            incoming.push(tape.weighted_sum(&outs, alphas[e.index])?);
        }
        states.push(tape.sum(&incoming)?);
        tape.concat_channels(&states[CELL_INPUTS..])
    }
}

fn check_cell_inputs<T: Scalar>(tape: &Tape<T>, spec: &CellSpec, inputs: [Var; 2]) -> Result<(), AutodiffError> {
    let (a, b) = (tape.shape(inputs[0]), tape.shape(inputs[1]));
    if a.len() != 4 || a != b || a[1] != spec.channels {
        return Err(AutodiffError::Contract(format!(
            "cell inputs must both be [N, {}, H, W], got {a:?} and {b:?}",
            spec.channels
        )));
    }
    Ok(())
}

/// A cell holding only the retained operations of a genotype.
#[derive(Clone, Debug)]
pub struct DiscreteCell {
    pub spec: CellSpec,
    /// Per intermediate node: `(source node, operation)`.
    nodes: Vec<Vec<(usize, Operation)>>,
}

impl DiscreteCell {
    /// `choices[j]` lists the `(source, kind)` edges of intermediate node `j`.
    pub fn build<T: Scalar, R: Rng>(
        spec: CellSpec,
        prefix: &str,
        choices: &[Vec<(usize, OpKind)>],
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        if choices.len() != spec.nodes {
            return Err(AutodiffError::Contract(format!(
                "{} node choices for a cell with {} nodes",
                choices.len(),
                spec.nodes
            )));
        }
        let mut nodes = Vec::with_capacity(spec.nodes);
        for (j, edges) in choices.iter().enumerate() {
            let to = CELL_INPUTS + j;
            if edges.is_empty() {
                return Err(AutodiffError::Contract(format!("node {to} has no incoming edge")));
            }
            let mut ops = Vec::with_capacity(edges.len());
            for &(from, kind) in edges {
                let index = spec
                    .edge_index(from, to)
                    .ok_or_else(|| AutodiffError::Contract(format!("edge {from} -> {to} does not exist")))?;
                let op = Operation::build(kind, spec.channels, spec.stride(from), op_prefix(prefix, index, kind), store, rng)?;
                ops.push((from, op));
            }
            nodes.push(ops);
        }
        Ok(Self { spec, nodes })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Bindings,
        inputs: [Var; 2],
    ) -> Result<Var, AutodiffError> {
        check_cell_inputs(tape, &self.spec, inputs)?;
        let mut states: Vec<Var> = inputs.to_vec();
        for ops in &self.nodes {
            let outs = ops
                .iter()
                .map(|(from, op)| op.forward(tape, params, states[*from]))
                .collect::<Result<Vec<_>, _>>()?;
            let node = tape.sum(&outs)?;
            states.push(node);
        }
        tape.concat_channels(&states[CELL_INPUTS..])
    }
}
