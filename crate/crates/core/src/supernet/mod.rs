//! Model assembly: backbone, stem, one normal and one reduction cell, heads.
//!
//! ```text
//! x -> standardize -> conv3x3+relu -> conv3x3+relu -> stem 1x1 = s
//! normal cell (s, s)                                   -> n   [p*C, H, W]
//! reduction cell (s, 1x1(relu(n)))                     -> r   [p*C, H/2, W/2]
//! features = mean_hw(r);  y1 = linear(features);  y2 = linear(flatten(r))
//! ```

mod genotype;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use genotype::{
    discretize_cell, edge_choice, softmax_rows, Cells, Genotype, GenotypeEdge, GenotypeError, GenotypeNode,
    EDGES_PER_NODE, GENOTYPE_VERSION,
};

use crate::autodiff::{AutodiffError, Bindings, ParamGroup, ParamStore, Tape, Var};
use crate::scalar::Scalar;
use crate::search_space::{uniform_init, CellKind, CellSpec, DiscreteCell, SearchCell, NUM_OPS};
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Genotype(#[from] GenotypeError),
}

/// Input to the regression head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionInput {
    /// Flattened reduction-cell output, which keeps spatial layout.
    Spatial,
    /// The pooled feature vector shared with the classifier.
    Pooled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub channels: usize,
    pub nodes: usize,
    pub in_channels: usize,
    pub image_size: usize,
    pub regression: RegressionInput,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { channels: 8, nodes: 4, in_channels: 3, image_size: 8, regression: RegressionInput::Spatial }
    }
}

impl NetConfig {
    pub fn feature_dim(&self) -> usize {
        self.nodes * self.channels
    }

    fn reduced_size(&self) -> usize {
        self.image_size.div_ceil(2)
    }

    fn regression_dim(&self) -> usize {
        match self.regression {
            RegressionInput::Spatial => self.feature_dim() * self.reduced_size() * self.reduced_size(),
            RegressionInput::Pooled => self.feature_dim(),
        }
    }

    fn validate(&self) -> Result<(), AutodiffError> {
        if self.channels == 0 || self.nodes == 0 || self.in_channels == 0 || self.image_size == 0 {
            return Err(AutodiffError::Contract(format!("network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

pub const ARCH_NORMAL: &str = "arch.normal";
pub const ARCH_REDUCTION: &str = "arch.reduction";
const NORMAL_PREFIX: &str = "head.normal";
const REDUCTION_PREFIX: &str = "head.reduction";

/// Architecture logits δ for both cells, `[edges, 7]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchParams<T> {
    pub normal: Tensor<T>,
    pub reduction: Tensor<T>,
}

/// Architecture weights α (or any per-edge weight table) for both cells.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchWeights<T> {
    pub normal: Tensor<T>,
    pub reduction: Tensor<T>,
}

impl<T: Scalar> ArchParams<T> {
    /// Gaussian logits with standard deviation `1e-3`.
    pub fn random(nodes: usize, rng: &mut ChaCha8Rng) -> Self {
        let edges = CellSpec::new(CellKind::Normal, nodes, 1).num_edges();
        let dist = Normal::new(0.0, 1e-3).expect("valid sigma");
        let mut draw = || {
            let data = (0..edges * NUM_OPS).map(|_| T::lit(dist.sample(rng))).collect();
            Tensor::from_vec([edges, NUM_OPS], data).expect("arch shape")
        };
        let normal = draw();
        let reduction = draw();
        Self { normal, reduction }
    }

    pub fn nodes(&self) -> usize {
        let edges = self.normal.shape()[0];
        (1..).find(|&p| CellSpec::new(CellKind::Normal, p, 1).num_edges() >= edges).expect("edge count")
    }

    pub fn alpha(&self) -> ArchWeights<T> {
        ArchWeights { normal: softmax_rows(&self.normal), reduction: softmax_rows(&self.reduction) }
    }

    /// Per-edge argmax, then the two strongest incoming edges per node.
    pub fn discretize(&self) -> Result<Genotype, GenotypeError> {
        self.alpha().discretize(self.nodes())
    }
}

impl<T: Scalar> ArchWeights<T> {
    pub fn discretize(&self, nodes: usize) -> Result<Genotype, GenotypeError> {
        let normal = discretize_cell(&self.normal, CellKind::Normal, nodes)?;
        let reduction = discretize_cell(&self.reduction, CellKind::Reduction, nodes)?;
        Genotype::new(normal, reduction)
    }

    pub fn from_genotype(g: &Genotype) -> Self {
        Self { normal: g.one_hot(CellKind::Normal), reduction: g.one_hot(CellKind::Reduction) }
    }
}

#[derive(Clone, Debug)]
enum CellPair {
    Search { normal: SearchCell, reduction: SearchCell },
    Discrete { normal: DiscreteCell, reduction: DiscreteCell, genotype: Genotype },
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Prediction {
    /// `[N]` logits.
    pub y_hat1: Var,
    /// `[N, 2]` positions.
    pub y_hat2: Var,
    /// `[N, p*C]` pooled features.
    pub features: Var,
}

/// Plain-value outputs for evaluation.
#[derive(Clone, Debug)]
pub struct Outputs<T> {
    pub y_hat1: Vec<T>,
    pub y_hat2: Vec<T>,
    pub features: Vec<T>,
    pub feature_dim: usize,
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    config: NetConfig,
    params: ParamStore<T>,
    cells: CellPair,
}

impl<T: Scalar> Network<T> {
    /// Supernet with every operation on every edge and trainable logits δ.
    pub fn supernet(config: NetConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_backbone(&config, &mut params, &mut rng)?;
        init_stem(&config, &mut params, &mut rng)?;
        let normal = SearchCell::build(cell_spec(&config, CellKind::Normal), NORMAL_PREFIX, &mut params, &mut rng)?;
        init_pre_reduce(&config, &mut params, &mut rng)?;
        let reduction =
            SearchCell::build(cell_spec(&config, CellKind::Reduction), REDUCTION_PREFIX, &mut params, &mut rng)?;
        init_heads(&config, &mut params, &mut rng)?;
        let arch = ArchParams::<T>::random(config.nodes, &mut rng);
        params.insert(ARCH_NORMAL, ParamGroup::Arch, arch.normal)?;
        params.insert(ARCH_REDUCTION, ParamGroup::Arch, arch.reduction)?;
        Ok(Self { config, params, cells: CellPair::Search { normal, reduction } })
    }

    /// Discrete network holding only the genotype's operations, freshly initialised.
    pub fn reconstruct(genotype: &Genotype, config: NetConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        if genotype.nodes() != config.nodes {
            return Err(AutodiffError::Contract(format!(
                "genotype has {} nodes per cell, network expects {}",
                genotype.nodes(),
                config.nodes
            ))
            .into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_backbone(&config, &mut params, &mut rng)?;
        init_stem(&config, &mut params, &mut rng)?;
        let normal = DiscreteCell::build(
            cell_spec(&config, CellKind::Normal),
            NORMAL_PREFIX,
            &genotype.choices(CellKind::Normal),
            &mut params,
            &mut rng,
        )?;
        init_pre_reduce(&config, &mut params, &mut rng)?;
        let reduction = DiscreteCell::build(
            cell_spec(&config, CellKind::Reduction),
            REDUCTION_PREFIX,
            &genotype.choices(CellKind::Reduction),
            &mut params,
            &mut rng,
        )?;
        init_heads(&config, &mut params, &mut rng)?;
        Ok(Self { config, params, cells: CellPair::Discrete { normal, reduction, genotype: genotype.clone() } })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn is_supernet(&self) -> bool {
        matches!(self.cells, CellPair::Search { .. })
    }

    pub fn genotype(&self) -> Option<&Genotype> {
        match &self.cells {
            CellPair::Discrete { genotype, .. } => Some(genotype),
            CellPair::Search { .. } => None,
        }
    }

    /// Current logits δ; `None` for a discrete network.
    pub fn arch_params(&self) -> Option<ArchParams<T>> {
        let normal = self.params.get(ARCH_NORMAL)?.value.clone();
        let reduction = self.params.get(ARCH_REDUCTION)?.value.clone();
        Some(ArchParams { normal, reduction })
    }

    pub fn set_arch_params(&mut self, arch: &ArchParams<T>) -> Result<(), NetError> {
        for (name, value) in [(ARCH_NORMAL, &arch.normal), (ARCH_REDUCTION, &arch.reduction)] {
            let p = self.params.get_mut(name).ok_or_else(|| AutodiffError::UnknownParam(name.into()))?;
            if p.value.shape() != value.shape() {
                return Err(AutodiffError::Contract(format!("{name}: shape {:?} vs {:?}", value.shape(), p.value.shape())).into());
            }
            p.value = value.clone();
        }
        Ok(())
    }

    /// Copies every same-named, same-shaped parameter of `groups` from `other`.
    /// Returns how many tensors were copied.
    pub fn copy_params_from(&mut self, other: &Network<T>, groups: &[ParamGroup]) -> usize {
        let mut copied = 0;
        let names: Vec<String> = self.params.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let Some(src) = other.params.get(&name) else { continue };
            let dst = self.params.get_mut(&name).expect("own name");
            if groups.contains(&dst.group) && src.value.shape() == dst.value.shape() {
                dst.value = src.value.clone();
                copied += 1;
            }
        }
        copied
    }

    /// Records a forward pass. `alphas` replaces the softmax of δ with fixed
    /// per-edge weights (supernet only).
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bindings: &Bindings,
        images: &Tensor<T>,
        alphas: Option<&ArchWeights<T>>,
    ) -> Result<Prediction, NetError> {
        let c = self.config;
        let shape = images.shape();
        if shape.len() != 4 || shape[1..] != [c.in_channels, c.image_size, c.image_size] {
            return Err(AutodiffError::Contract(format!(
                "expected images [N, {}, {}, {}], got {shape:?}",
                c.in_channels, c.image_size, c.image_size
            ))
            .into());
        }
        let n = shape[0];
        let two = T::lit(2.0);
        let x = tape.constant(images.map(|v| two * v - T::one()));
        let h = tape.conv2d(x, bindings.get("backbone.conv1")?, 1, 1, 1)?;
        let h = tape.relu(h);
        let h = tape.conv2d(h, bindings.get("backbone.conv2")?, 1, 1, 1)?;
        let h = tape.relu(h);
        let s = tape.conv2d(h, bindings.get("head.stem")?, 1, 1, 1)?;

        let normal_out;
        let reduction_out;
        match &self.cells {
            CellPair::Search { normal, reduction } => {
                let (an, ar) = match alphas {
                    Some(w) => (edge_rows_const(tape, &w.normal)?, edge_rows_const(tape, &w.reduction)?),
                    None => (
                        edge_rows_softmax(tape, bindings.get(ARCH_NORMAL)?)?,
                        edge_rows_softmax(tape, bindings.get(ARCH_REDUCTION)?)?,
                    ),
                };
                normal_out = normal.forward(tape, bindings, [s, s], &an)?;
                let pre = self.pre_reduce(tape, bindings, normal_out)?;
                reduction_out = reduction.forward(tape, bindings, [s, pre], &ar)?;
            }
            CellPair::Discrete { normal, reduction, .. } => {
                if alphas.is_some() {
                    return Err(AutodiffError::Contract("a discrete network has no architecture weights".into()).into());
                }
                normal_out = normal.forward(tape, bindings, [s, s])?;
                let pre = self.pre_reduce(tape, bindings, normal_out)?;
                reduction_out = reduction.forward(tape, bindings, [s, pre])?;
            }
        }
        let features = tape.global_avg_pool(reduction_out)?;
        let logits = tape.linear(features, bindings.get("head.cls.w")?, bindings.get("head.cls.b")?)?;
        let y_hat1 = tape.reshape(logits, &[n])?;
        let reg_in = match c.regression {
            RegressionInput::Spatial => tape.reshape(reduction_out, &[n, c.regression_dim()])?,
            RegressionInput::Pooled => features,
        };
        let y_hat2 = tape.linear(reg_in, bindings.get("head.reg.w")?, bindings.get("head.reg.b")?)?;
        Ok(Prediction { y_hat1, y_hat2, features })
    }

    fn pre_reduce(&self, tape: &mut Tape<T>, bindings: &Bindings, x: Var) -> Result<Var, NetError> {
        let a = tape.relu(x);
        Ok(tape.conv2d(a, bindings.get("head.pre_reduce")?, 1, 1, 1)?)
    }

    /// Forward pass without gradients, in chunks of `chunk` examples.
    pub fn predict(&self, images: &Tensor<T>, chunk: usize) -> Result<Outputs<T>, NetError> {
        self.predict_with(images, chunk, None)
    }

    pub fn predict_with(
        &self,
        images: &Tensor<T>,
        chunk: usize,
        alphas: Option<&ArchWeights<T>>,
    ) -> Result<Outputs<T>, NetError> {
        let shape = images.shape().to_vec();
        if shape.len() != 4 {
            return Err(AutodiffError::Contract(format!("expected NCHW images, got {shape:?}")).into());
        }
        let per = shape[1..].iter().product::<usize>();
        let mut out = Outputs { y_hat1: Vec::new(), y_hat2: Vec::new(), features: Vec::new(), feature_dim: self.config.feature_dim() };
        let chunk = chunk.max(1);
        let mut start = 0;
        while start < shape[0] {
            let end = (start + chunk).min(shape[0]);
            let data = images.data()[start * per..end * per].to_vec();
            let batch = Tensor::from_vec([end - start, shape[1], shape[2], shape[3]], data).expect("chunk shape");
            let mut tape = Tape::new();
            let bindings = self.params.bind(&mut tape, &[]);
            let pred = self.forward(&mut tape, &bindings, &batch, alphas)?;
            out.y_hat1.extend_from_slice(tape.value(pred.y_hat1).data());
            out.y_hat2.extend_from_slice(tape.value(pred.y_hat2).data());
            out.features.extend_from_slice(tape.value(pred.features).data());
            start = end;
        }
        Ok(out)
    }

    /// SHA-256 over parameter names, shapes and little-endian values.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for (name, p) in self.params.iter() {
            h.update(name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            buf.clear();
            for &v in p.value.data() {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        hex::encode(h.finalize())
    }
}

fn cell_spec(c: &NetConfig, kind: CellKind) -> CellSpec {
    CellSpec::new(kind, c.nodes, c.channels)
}

fn edge_rows_softmax<T: Scalar>(tape: &mut Tape<T>, delta: Var) -> Result<Vec<Var>, AutodiffError> {
    let alpha = tape.softmax(delta);
    (0..tape.shape(delta)[0]).map(|e| tape.row(alpha, e)).collect()
}

fn edge_rows_const<T: Scalar>(tape: &mut Tape<T>, table: &Tensor<T>) -> Result<Vec<Var>, AutodiffError> {
    if table.shape().len() != 2 || table.shape()[1] != NUM_OPS {
        return Err(AutodiffError::Contract(format!("edge weight table must be [edges, {NUM_OPS}], got {:?}", table.shape())));
    }
    Ok(table
        .data()
        .chunks(NUM_OPS)
        .map(|row| tape.constant(Tensor::from_vec([NUM_OPS], row.to_vec()).expect("row")))
        .collect())
}

fn conv_init<T: Scalar>(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<T> {
    uniform_init(&shape, shape[1] * shape[2] * shape[3], rng)
}

fn init_backbone<T: Scalar>(c: &NetConfig, p: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<(), AutodiffError> {
    p.insert("backbone.conv1", ParamGroup::Backbone, conv_init([c.channels, c.in_channels, 3, 3], rng))?;
    p.insert("backbone.conv2", ParamGroup::Backbone, conv_init([c.channels, c.channels, 3, 3], rng))
}

fn init_stem<T: Scalar>(c: &NetConfig, p: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<(), AutodiffError> {
    p.insert("head.stem", ParamGroup::Head, conv_init([c.channels, c.channels, 1, 1], rng))
}

fn init_pre_reduce<T: Scalar>(c: &NetConfig, p: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<(), AutodiffError> {
    p.insert("head.pre_reduce", ParamGroup::Head, conv_init([c.channels, c.feature_dim(), 1, 1], rng))
}

fn init_heads<T: Scalar>(c: &NetConfig, p: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<(), AutodiffError> {
    let d = c.feature_dim();
    p.insert("head.cls.w", ParamGroup::Head, uniform_init(&[1, d], d, rng))?;
    p.insert("head.cls.b", ParamGroup::Head, Tensor::zeros([1]))?;
    let r = c.regression_dim();
    p.insert("head.reg.w", ParamGroup::Head, uniform_init(&[2, r], r, rng))?;
    p.insert("head.reg.b", ParamGroup::Head, Tensor::zeros([2]))
}
