//! Discrete architectures and their JSON encoding.
//!
//! ```json
//! {
//!   "version": 1,
//!   "cells": {
//!     "normal":    [{"node": 2, "edges": [{"from": 0, "op": "sep_conv_3x3"}, {"from": 1, "op": "skip_connect"}]}, ...],
//!     "reduction": [...]
//!   }
//! }
//! ```
//!
//! Intermediate nodes are numbered from 2 (0 and 1 are the cell inputs) and
//! listed in order; every node keeps exactly two edges from distinct earlier
//! nodes, sorted by source.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::softmax_row;
use crate::scalar::Scalar;
use crate::search_space::{CellKind, CellSpec, OpKind, CELL_INPUTS, NUM_OPS};
use crate::tensor::Tensor;

pub const GENOTYPE_VERSION: u32 = 1;

/// Edges retained per intermediate node.
pub const EDGES_PER_NODE: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum GenotypeError {
    #[error("genotype parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid genotype: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenotypeEdge {
    pub from: usize,
    pub op: OpKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawNode")]
pub struct GenotypeNode {
    pub node: usize,
    pub edges: Vec<GenotypeEdge>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    node: usize,
    edges: Vec<GenotypeEdge>,
}

impl TryFrom<RawNode> for GenotypeNode {
    type Error = String;

    fn try_from(raw: RawNode) -> Result<Self, String> {
        let node = GenotypeNode { node: raw.node, edges: raw.edges };
        node.check()?;
        Ok(node)
    }
}

impl GenotypeNode {
    /// Checks everything that does not depend on the cell size.
    fn check(&self) -> Result<(), String> {
        if self.node < CELL_INPUTS {
            return Err(format!("node index {} is an input node; intermediate nodes start at {CELL_INPUTS}", self.node));
        }
        if self.edges.len() != EDGES_PER_NODE {
            return Err(format!("node {} has {} edges, expected {EDGES_PER_NODE}", self.node, self.edges.len()));
        }
        for e in &self.edges {
            if e.from >= self.node {
                return Err(format!("edge source {} out of range for node {}", e.from, self.node));
            }
        }
        if !self.edges.windows(2).all(|w| w[0].from < w[1].from) {
            return Err(format!("edges of node {} must have distinct sources in ascending order", self.node));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cells {
    pub normal: Vec<GenotypeNode>,
    pub reduction: Vec<GenotypeNode>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawGenotype")]
pub struct Genotype {
    pub version: u32,
    pub cells: Cells,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenotype {
    version: u32,
    cells: Cells,
}

impl TryFrom<RawGenotype> for Genotype {
    type Error = String;

    fn try_from(raw: RawGenotype) -> Result<Self, String> {
        let g = Genotype { version: raw.version, cells: raw.cells };
        g.check()?;
        Ok(g)
    }
}

impl Genotype {
    pub fn new(normal: Vec<GenotypeNode>, reduction: Vec<GenotypeNode>) -> Result<Self, GenotypeError> {
        let g = Self { version: GENOTYPE_VERSION, cells: Cells { normal, reduction } };
        g.check().map_err(GenotypeError::Invalid)?;
        Ok(g)
    }

    fn check(&self) -> Result<(), String> {
        if self.version != GENOTYPE_VERSION {
            return Err(format!("unsupported version {}", self.version));
        }
        let p = self.cells.normal.len();
        if p == 0 || self.cells.reduction.len() != p {
            return Err(format!(
                "cells must list the same non-zero number of nodes, got normal {} and reduction {}",
                p,
                self.cells.reduction.len()
            ));
        }
        for nodes in [&self.cells.normal, &self.cells.reduction] {
            for (j, n) in nodes.iter().enumerate() {
                n.check()?;
                if n.node != CELL_INPUTS + j {
                    return Err(format!("node index {} out of order; expected {}", n.node, CELL_INPUTS + j));
                }
            }
        }
        Ok(())
    }

    /// Intermediate nodes per cell.
    pub fn nodes(&self) -> usize {
        self.cells.normal.len()
    }

    pub fn cell(&self, kind: CellKind) -> &[GenotypeNode] {
        match kind {
            CellKind::Normal => &self.cells.normal,
            CellKind::Reduction => &self.cells.reduction,
        }
    }

    /// `(source, op)` lists per intermediate node.
    pub fn choices(&self, kind: CellKind) -> Vec<Vec<(usize, OpKind)>> {
        self.cell(kind).iter().map(|n| n.edges.iter().map(|e| (e.from, e.op)).collect()).collect()
    }

    /// One-hot weights per edge of a full cell; dropped edges get all zeros.
    pub fn one_hot<T: Scalar>(&self, kind: CellKind) -> Tensor<T> {
        let spec = CellSpec::new(kind, self.nodes(), 1);
        let mut t = Tensor::zeros([spec.num_edges(), NUM_OPS]);
        for n in self.cell(kind) {
            for e in &n.edges {
                let idx = spec.edge_index(e.from, n.node).expect("validated edge");
                t.data_mut()[idx * NUM_OPS + e.op.index()] = T::one();
            }
        }
        t
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("genotype serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, GenotypeError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Retained edge count per operation in one cell.
    pub fn op_counts(&self, kind: CellKind) -> [usize; NUM_OPS] {
        let mut counts = [0; NUM_OPS];
        for n in self.cell(kind) {
            for e in &n.edges {
                counts[e.op.index()] += 1;
            }
        }
        counts
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for kind in [CellKind::Normal, CellKind::Reduction] {
            write!(f, "{}:", kind.name())?;
            for n in self.cell(kind) {
                let edges: Vec<String> = n.edges.iter().map(|e| format!("{}<-{}", e.op, e.from)).collect();
                write!(f, " n{}[{}]", n.node, edges.join(","))?;
            }
            if kind == CellKind::Normal {
                write!(f, "; ")?;
            }
        }
        Ok(())
    }
}

/// Per-edge choice: `(argmax op, its weight)`, lowest index winning ties.
pub fn edge_choice<T: Scalar>(row: &[T]) -> (OpKind, T) {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    (OpKind::from_index(best).expect("seven weights"), row[best])
}

/// Discretizes one cell's alpha table `[edges, 7]`.
pub fn discretize_cell<T: Scalar>(alpha: &Tensor<T>, kind: CellKind, nodes: usize) -> Result<Vec<GenotypeNode>, GenotypeError> {
    let spec = CellSpec::new(kind, nodes, 1);
    if alpha.shape() != [spec.num_edges(), NUM_OPS] {
        return Err(GenotypeError::Invalid(format!(
            "alpha table {:?} does not match a {nodes}-node cell",
            alpha.shape()
        )));
    }
    if !alpha.all_finite() {
        return Err(GenotypeError::Invalid("non-finite architecture weights".into()));
    }
    let mut out = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let to = CELL_INPUTS + j;
        let mut cands: Vec<(usize, OpKind, T)> = (0..to)
            .map(|from| {
                let e = spec.edge_index(from, to).expect("edge");
                let (op, w) = edge_choice(&alpha.data()[e * NUM_OPS..(e + 1) * NUM_OPS]);
                (from, op, w)
            })
            .collect();
        cands.sort_by(|a, b| {
            b.2.partial_cmp(&a.2).expect("finite").then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0))
        });
        let mut kept: Vec<GenotypeEdge> =
            cands.iter().take(EDGES_PER_NODE).map(|&(from, op, _)| GenotypeEdge { from, op }).collect();
        kept.sort_by_key(|e| e.from);
        out.push(GenotypeNode { node: to, edges: kept });
    }
    Ok(out)
}

/// Softmax of each row of a `[edges, 7]` logit table.
pub fn softmax_rows<T: Scalar>(delta: &Tensor<T>) -> Tensor<T> {
    let mut out = Vec::with_capacity(delta.numel());
    for row in delta.data().chunks(NUM_OPS) {
        out.extend(softmax_row(row));
    }
    Tensor::from_vec(delta.shape().to_vec(), out).expect("same shape")
}
