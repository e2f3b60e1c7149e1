//! Two-level attention network over meta-path neighborhoods.
//!
//! Region features are projected per node type, attended over each
//! meta-path's neighbors with `K` heads (`leaky_relu(aᵀ[h'_i ‖ h'_j])`,
//! masked row softmax, ELU of the weighted sum, heads concatenated), fused
//! across meta-paths with semantic attention and mapped to the output
//! dimension by a dense layer.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Matrix, ParamStore, SoftmaxMask, Tape, Var};
use crate::graph::{HeterogeneousUrbanGraph, NodeType};
use crate::metapath::MetaPathAdjacency;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input feature width `m`.
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Attention heads `K`.
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Width of each head's output; heads concatenate to `heads * head_dim`.
    #[serde(default = "default_head_dim")]
    pub head_dim: usize,
    /// Hidden width of the semantic attention layer.
    #[serde(default = "default_semantic_dim")]
    pub semantic_dim: usize,
    /// Embedding dimension `d`.
    #[serde(default = "default_out_dim")]
    pub out_dim: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
}

fn default_feature_dim() -> usize {
    250
}
fn default_heads() -> usize {
    10
}
fn default_head_dim() -> usize {
    13
}
fn default_semantic_dim() -> usize {
    128
}
fn default_out_dim() -> usize {
    32
}
fn default_slope() -> f64 {
    0.2
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: default_feature_dim(),
            heads: default_heads(),
            head_dim: default_head_dim(),
            semantic_dim: default_semantic_dim(),
            out_dim: default_out_dim(),
            leaky_slope: default_slope(),
        }
    }
}

impl ModelConfig {
    /// Width of the concatenated node-level output.
    pub fn node_out_dim(&self) -> usize {
        self.heads * self.head_dim
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("meta-path {metapath}: region {region} has no neighbors")]
    EmptyNeighborSet { metapath: String, region: usize },
    #[error("expected {expected} meta-path adjacencies, got {got}")]
    MetaPathCount { expected: usize, got: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
}

type Result<T> = std::result::Result<T, ModelError>;

/// All trainable tensors, stored in a [`ParamStore`] under stable names.
#[derive(Clone, Debug, PartialEq)]
pub struct HanParameters {
    pub config: ModelConfig,
    pub metapaths: Vec<String>,
    pub store: ParamStore,
    proj: BTreeMap<NodeType, usize>,
    node_attn: Vec<Vec<usize>>,
    sem_w: usize,
    sem_b: usize,
    sem_q: usize,
    dense_w: usize,
    dense_b: usize,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

impl HanParameters {
    /// Glorot-uniform weights and zero biases, drawn in a fixed order from
    /// `seed`.
    pub fn init(config: &ModelConfig, metapaths: &[String], seed: u64) -> Result<Self> {
        let c = config;
        if c.feature_dim == 0 || c.heads == 0 || c.head_dim == 0 || c.semantic_dim == 0 || c.out_dim == 0 {
            return Err(ModelError::InvalidConfig(format!("{c:?}")));
        }
        if metapaths.is_empty() {
            return Err(ModelError::InvalidConfig("no meta-paths".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let proj = NodeType::ALL
            .iter()
            .map(|ty| {
                let slot = store.insert(format!("proj.{}", ty.short()), glorot(&mut rng, c.feature_dim, c.head_dim));
                (*ty, slot)
            })
            .collect();
        let node_attn = metapaths
            .iter()
            .map(|mp| {
                (0..c.heads)
                    .map(|h| store.insert(format!("attn.{mp}.{h}"), glorot(&mut rng, 2 * c.head_dim, 1)))
                    .collect()
            })
            .collect();
        let width = c.node_out_dim();
        let sem_w = store.insert("semantic.W", glorot(&mut rng, width, c.semantic_dim));
        let sem_b = store.insert("semantic.b", Matrix::zeros(1, c.semantic_dim));
        let sem_q = store.insert("semantic.q", glorot(&mut rng, c.semantic_dim, 1));
        let dense_w = store.insert("dense.W", glorot(&mut rng, width, c.out_dim));
        let dense_b = store.insert("dense.b", Matrix::zeros(1, c.out_dim));
        Ok(Self {
            config: c.clone(),
            metapaths: metapaths.to_vec(),
            store,
            proj,
            node_attn,
            sem_w,
            sem_b,
            sem_q,
            dense_w,
            dense_b,
        })
    }

    pub fn projection(&self, ty: NodeType) -> &Matrix {
        self.store.get(self.proj[&ty])
    }

    pub fn projection_mut(&mut self, ty: NodeType) -> &mut Matrix {
        self.store.get_mut(self.proj[&ty])
    }

    pub fn attention_vector(&self, metapath: usize, head: usize) -> &Matrix {
        self.store.get(self.node_attn[metapath][head])
    }

    pub fn attention_vector_mut(&mut self, metapath: usize, head: usize) -> &mut Matrix {
        self.store.get_mut(self.node_attn[metapath][head])
    }

    pub fn semantic_w_mut(&mut self) -> &mut Matrix {
        self.store.get_mut(self.sem_w)
    }

    pub fn semantic_q_mut(&mut self) -> &mut Matrix {
        self.store.get_mut(self.sem_q)
    }

    pub fn semantic_b_mut(&mut self) -> &mut Matrix {
        self.store.get_mut(self.sem_b)
    }

    pub fn dense_w_mut(&mut self) -> &mut Matrix {
        self.store.get_mut(self.dense_w)
    }
}

/// Tape handles for every parameter, in store order.
pub struct ParamVars {
    pub all: Vec<Var>,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &HanParameters) -> Result<Self> {
        let all = params
            .store
            .values()
            .iter()
            .map(|m| tape.param(m.clone()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { all })
    }

    /// Registers every parameter as a constant (no gradients).
    pub fn constants(tape: &mut Tape, params: &HanParameters) -> Result<Self> {
        let all = params
            .store
            .values()
            .iter()
            .map(|m| tape.constant(m.clone()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { all })
    }
}

/// Attention mask for one adjacency; errors if a region has no neighbors.
pub fn adjacency_mask(adj: &MetaPathAdjacency) -> Result<Rc<SoftmaxMask>> {
    let n = adj.region_count();
    if let Some(region) = adj.neighbor_sets.iter().position(Vec::is_empty) {
        return Err(ModelError::EmptyNeighborSet {
            metapath: adj.metapath.name.clone(),
            region,
        });
    }
    Ok(Rc::new(SoftmaxMask::from_neighbor_lists(n, &adj.neighbor_sets)))
}

/// Node-level attention weights of one head on the tape (`N x N`, rows sum
/// to one over each region's neighbors).
pub fn attention_on_tape(
    tape: &mut Tape,
    h_prime: Var,
    attn: Var,
    mask: Rc<SoftmaxMask>,
    slope: f64,
) -> Result<Var> {
    let d = tape.shape(h_prime).1;
    if tape.shape(attn) != (2 * d, 1) {
        return Err(ModelError::ShapeMismatch(format!(
            "attention vector {:?} for head width {d}",
            tape.shape(attn)
        )));
    }
    Ok(tape.graph_attention(h_prime, attn, mask, slope)?)
}

/// `‖_heads elu(α_head · H')` on the tape.
pub fn aggregate_on_tape(tape: &mut Tape, h_prime: Var, alphas: &[Var], mask: &Rc<SoftmaxMask>) -> Result<Var> {
    let mut heads = Vec::with_capacity(alphas.len());
    for &a in alphas {
        let s = tape.masked_matmul(a, h_prime, mask.clone())?;
        heads.push(tape.elu(s)?);
    }
    Ok(tape.concat_cols(&heads)?)
}

/// Semantic attention: returns `(β as 1 x P, fused Y)`.
pub fn semantic_on_tape(tape: &mut Tape, ys: &[Var], w: Var, b: Var, q: Var) -> Result<(Var, Var)> {
    let shape = tape.shape(*ys.first().ok_or(ModelError::MetaPathCount { expected: 1, got: 0 })?);
    let mut scores = Vec::with_capacity(ys.len());
    for &y in ys {
        if tape.shape(y) != shape {
            return Err(ModelError::ShapeMismatch(format!("{:?} vs {shape:?}", tape.shape(y))));
        }
        let t = tape.matmul(y, w)?;
        let t = tape.add_row_broadcast(t, b)?;
        let t = tape.tanh(t)?;
        let s = tape.matmul(t, q)?;
        scores.push(tape.mean(s)?);
    }
    let w_all = tape.concat_cols(&scores)?;
    let beta = tape.softmax_rows(w_all)?;
    let mut fused = None;
    for (k, &y) in ys.iter().enumerate() {
        let bk = tape.pick(beta, 0, k)?;
        let term = tape.mul_scalar_var(y, bk)?;
        fused = Some(match fused {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok((beta, fused.expect("at least one meta-path")))
}

/// Handles produced by [`forward_on_tape`].
pub struct ForwardVars {
    pub z: Var,
    pub beta: Var,
    pub per_metapath: Vec<Var>,
}

/// Full forward pass from region features to embeddings `Z`.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &HanParameters,
    vars: &ParamVars,
    region_features: Var,
    masks: &[Rc<SoftmaxMask>],
) -> Result<ForwardVars> {
    let c = &params.config;
    if masks.len() != params.metapaths.len() {
        return Err(ModelError::MetaPathCount {
            expected: params.metapaths.len(),
            got: masks.len(),
        });
    }
    let (n, m) = tape.shape(region_features);
    if m != c.feature_dim {
        return Err(ModelError::ShapeMismatch(format!("features have width {m}, expected {}", c.feature_dim)));
    }
    let h_prime = tape.matmul(region_features, vars.all[params.proj[&NodeType::Region]])?;
    let mut per_metapath = Vec::with_capacity(masks.len());
    for (k, mask) in masks.iter().enumerate() {
        if mask.shape() != (n, n) {
            return Err(ModelError::ShapeMismatch(format!("mask {:?} for {n} regions", mask.shape())));
        }
        let mut heads = Vec::with_capacity(c.heads);
        for h in 0..c.heads {
            let a = vars.all[params.node_attn[k][h]];
            let y = tape.attend(h_prime, a, mask.clone(), c.leaky_slope)?;
            heads.push(tape.elu(y)?);
        }
        per_metapath.push(tape.concat_cols(&heads)?);
    }
    let (beta, fused) = semantic_on_tape(
        tape,
        &per_metapath,
        vars.all[params.sem_w],
        vars.all[params.sem_b],
        vars.all[params.sem_q],
    )?;
    let z = tape.matmul(fused, vars.all[params.dense_w])?;
    let z = tape.add_row_broadcast(z, vars.all[params.dense_b])?;
    Ok(ForwardVars { z, beta, per_metapath })
}

/// Final region representations, one row per region in id order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub z: Matrix,
}

impl EmbeddingMatrix {
    pub fn region_count(&self) -> usize {
        self.z.rows()
    }

    pub fn dim(&self) -> usize {
        self.z.cols()
    }

    /// CSV with header `region_id,z_0,...,z_{d-1}`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut head = vec!["region_id".to_string()];
        head.extend((0..self.dim()).map(|k| format!("z_{k}")));
        wr.write_record(&head)?;
        for i in 0..self.region_count() {
            let mut rec = vec![i.to_string()];
            rec.extend(self.z.row(i).iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the layout written by [`EmbeddingMatrix::write_csv`]. Rows must
    /// be in region id order.
    pub fn read_csv<R: Read>(r: R) -> std::result::Result<Self, String> {
        let mut rd = csv::Reader::from_reader(r);
        let dim = rd.headers().map_err(|e| e.to_string())?.len().saturating_sub(1);
        let mut data = Vec::new();
        let mut rows = 0;
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| e.to_string())?;
            let line = i + 2;
            let id: usize = rec[0].trim().parse().map_err(|_| format!("line {line}: bad region id"))?;
            if id != i {
                return Err(format!("line {line}: expected region {i}, found {id}"));
            }
            for v in rec.iter().skip(1) {
                data.push(v.trim().parse::<f64>().map_err(|_| format!("line {line}: bad value {v:?}"))?);
            }
            rows += 1;
        }
        if data.len() != rows * dim {
            return Err("ragged embedding rows".into());
        }
        Ok(Self { z: Matrix::from_vec(rows, dim, data) })
    }
}

/// Model output with the semantic weights that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub embeddings: EmbeddingMatrix,
    pub beta: Vec<f64>,
}

/// `h'_i = h_i · M_type` for every node type with features.
pub fn project_features(g: &HeterogeneousUrbanGraph, params: &HanParameters) -> Result<BTreeMap<NodeType, Matrix>> {
    g.features
        .iter()
        .map(|(ty, f)| {
            let p = params.projection(*ty);
            if f.cols() != p.rows() {
                return Err(ModelError::ShapeMismatch(format!(
                    "{ty} features width {} vs projection input {}",
                    f.cols(),
                    p.rows()
                )));
            }
            Ok((*ty, f.matmul(p)))
        })
        .collect()
}

/// Attention weights of one head for one meta-path, as a dense `N x N`
/// matrix (zero outside each region's neighbor set).
pub fn node_level_attention(
    h_prime: &Matrix,
    adjacency: &MetaPathAdjacency,
    params: &HanParameters,
    metapath: usize,
    head: usize,
) -> Result<Matrix> {
    let mask = adjacency_mask(adjacency)?;
    if mask.shape().0 != h_prime.rows() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} regions in adjacency, {} feature rows",
            mask.shape().0,
            h_prime.rows()
        )));
    }
    let mut tape = Tape::new();
    let h = tape.constant(h_prime.clone())?;
    let a = tape.constant(params.attention_vector(metapath, head).clone())?;
    let alpha = attention_on_tape(&mut tape, h, a, mask, params.config.leaky_slope)?;
    Ok(tape.value(alpha).clone())
}

/// Concatenation over heads of `elu(α_head · H')`.
pub fn metapath_aggregate(h_prime: &Matrix, alphas: &[Matrix]) -> Result<Matrix> {
    let mut tape = Tape::new();
    let h = tape.constant(h_prime.clone())?;
    let a = alphas
        .iter()
        .map(|a| tape.constant(a.clone()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let n = h_prime.rows();
    let mask = Rc::new(SoftmaxMask::new(n, n, vec![true; n * n]));
    let y = aggregate_on_tape(&mut tape, h, &a, &mask)?;
    Ok(tape.value(y).clone())
}

/// Semantic-level weights `β` and the fused embedding `Σ β_k Y_k`.
pub fn semantic_attention(ys: &[Matrix], params: &HanParameters) -> Result<(Vec<f64>, Matrix)> {
    let mut tape = Tape::new();
    let vars = ParamVars::constants(&mut tape, params)?;
    let y = ys
        .iter()
        .map(|y| tape.constant(y.clone()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (beta, fused) = semantic_on_tape(&mut tape, &y, vars.all[params.sem_w], vars.all[params.sem_b], vars.all[params.sem_q])?;
    Ok((tape.value(beta).as_slice().to_vec(), tape.value(fused).clone()))
}

/// Evaluates the model without recording gradients for later use.
pub fn forward(
    g: &HeterogeneousUrbanGraph,
    adjacencies: &[MetaPathAdjacency],
    params: &HanParameters,
) -> Result<ForwardOutput> {
    let masks = adjacencies.iter().map(adjacency_mask).collect::<Result<Vec<_>>>()?;
    let mut tape = Tape::new();
    let vars = ParamVars::constants(&mut tape, params)?;
    let x = tape.constant(g.features[&NodeType::Region].clone())?;
    let out = forward_on_tape(&mut tape, params, &vars, x, &masks)?;
    Ok(ForwardOutput {
        embeddings: EmbeddingMatrix { z: tape.value(out.z).clone() },
        beta: tape.value(out.beta).as_slice().to_vec(),
    })
}
