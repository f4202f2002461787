//! Point convolution on graphs, `f_out(x_i) = sum_j k(x_i - x_j, z) f_in(x_j)`,
//! and the model built from it.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::equivariant_nn::{
    Ctx, EquivariantLinear, FieldBatch, GMlp, Gate, IrrepBatchNorm, ParamStore,
};
use crate::error::{Error, Result};
use crate::groups::{GroupElement, GroupId};
use crate::implicit_kernel::{ImplicitKernel, KernelHooks, KernelInput, KernelSpec};
use crate::reps::Rep;
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub positions: Vec<[f64; 3]>,
    pub node_features: FieldBatch,
    /// Optional per-node attributes fed to the kernels as `z_i`, `z_j`.
    pub node_attributes: Option<FieldBatch>,
    /// `(source j, target i)`.
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Option<FieldBatch>,
}

impl Graph {
    pub fn n_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if self.node_features.rows() != n {
            return Err(Error::Data(format!("{} feature rows for {n} nodes", self.node_features.rows())));
        }
        if let Some(a) = &self.node_attributes {
            if a.rows() != n {
                return Err(Error::Data(format!("{} attribute rows for {n} nodes", a.rows())));
            }
        }
        if let Some(&(j, i)) = self.edges.iter().find(|&&(j, i)| j >= n || i >= n) {
            return Err(Error::Index(format!("edge ({j}, {i}) out of range for {n} nodes")));
        }
        if let Some(e) = &self.edge_features {
            if e.rows() != self.edges.len() {
                return Err(Error::Data(format!("{} edge feature rows for {} edges", e.rows(), self.edges.len())));
            }
        }
        if self.positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Data("non-finite position".into()));
        }
        Ok(())
    }

    /// Positions mapped by `g`, features by their reps. Edges unchanged.
    pub fn transform(&self, g: &GroupElement<f64>) -> Result<Self> {
        Ok(Self {
            positions: self.positions.iter().map(|&p| g.act(p)).collect(),
            node_features: self.node_features.transform(g)?,
            node_attributes: self.node_attributes.as_ref().map(|a| a.transform(g)).transpose()?,
            edges: self.edges.clone(),
            edge_features: self.edge_features.as_ref().map(|e| e.transform(g)).transpose()?,
        })
    }

    pub fn translate(&self, t: [f64; 3]) -> Self {
        let mut out = self.clone();
        for p in &mut out.positions {
            for k in 0..3 {
                p[k] += t[k];
            }
        }
        out
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            positions: self.positions.clone(),
            node_features: FieldJson::from(&self.node_features),
            node_attributes: self.node_attributes.as_ref().map(FieldJson::from),
            edges: self.edges.iter().map(|&(j, i)| [j, i]).collect(),
            edge_features: self.edge_features.as_ref().map(FieldJson::from),
        }
    }

    pub fn from_json(j: &GraphJson) -> Result<Self> {
        let g = Self {
            positions: j.positions.clone(),
            node_features: j.node_features.to_batch()?,
            node_attributes: j.node_attributes.as_ref().map(FieldJson::to_batch).transpose()?,
            edges: j.edges.iter().map(|e| (e[0], e[1])).collect(),
            edge_features: j.edge_features.as_ref().map(FieldJson::to_batch).transpose()?,
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldJson {
    pub rep: Rep<f64>,
    /// Row-major `rows x dim`.
    pub data: Vec<f64>,
}

impl From<&FieldBatch> for FieldJson {
    fn from(b: &FieldBatch) -> Self {
        Self { rep: b.rep.clone(), data: b.data.data().to_vec() }
    }
}

impl FieldJson {
    pub fn to_batch(&self) -> Result<FieldBatch> {
        let d = self.rep.dim();
        if d == 0 || self.data.len() % d != 0 {
            return Err(Error::Data(format!("{} values do not fill rows of dimension {d}", self.data.len())));
        }
        FieldBatch::new(self.rep.clone(), Tensor::from_vec(self.data.len() / d, d, self.data.clone())?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphJson {
    pub positions: Vec<[f64; 3]>,
    pub node_features: FieldJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_attributes: Option<FieldJson>,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_features: Option<FieldJson>,
}

/// Edges from each node's `k` nearest neighbours into it. Ties go to the
/// smaller index.
pub fn knn_edges(positions: &[[f64; 3]], k: usize) -> Result<Vec<(usize, usize)>> {
    let n = positions.len();
    if k >= n {
        return Err(Error::config(format!("k = {k} needs more than {n} points")));
    }
    let mut edges = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d: f64 = (0..3).map(|c| (positions[i][c] - positions[j][c]).powi(2)).sum();
                (d, j)
            })
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        edges.extend(others.into_iter().take(k).map(|(_, j)| (j, i)));
    }
    Ok(edges)
}

/// Every ordered pair of distinct nodes.
pub fn fully_connected(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (j, i))).collect()
}

/// One or more graphs merged into a single disjoint graph, edges sorted by
/// `(target, source)`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub n_nodes: usize,
    pub n_graphs: usize,
    pub graph_of_node: Vec<usize>,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    /// `x_target - x_source` per edge.
    pub rel: Vec<[f64; 3]>,
    pub node_features: Tensor,
    pub node_attributes: Option<Tensor>,
    pub edge_features: Option<Tensor>,
    pub in_degree: Vec<usize>,
}

impl Batch {
    pub fn new(graphs: &[&Graph]) -> Result<Self> {
        let first = graphs.first().ok_or_else(|| Error::Data("empty batch".into()))?;
        let node_rep = &first.node_features.rep;
        let mut edges: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        let mut positions = Vec::new();
        let mut feats = Vec::new();
        let mut attrs = Vec::new();
        let mut graph_of_node = Vec::new();
        let mut off = 0;
        for (gi, g) in graphs.iter().enumerate() {
            g.validate()?;
            if &g.node_features.rep != node_rep
                || g.node_attributes.as_ref().map(|a| &a.rep) != first.node_attributes.as_ref().map(|a| &a.rep)
                || g.edge_features.as_ref().map(|a| &a.rep) != first.edge_features.as_ref().map(|a| &a.rep)
            {
                return Err(Error::ty("graphs in a batch must share feature reps"));
            }
            positions.extend_from_slice(&g.positions);
            feats.extend_from_slice(g.node_features.data.data());
            if let Some(a) = &g.node_attributes {
                attrs.extend_from_slice(a.data.data());
            }
            graph_of_node.extend(std::iter::repeat(gi).take(g.n_nodes()));
            for (e, &(j, i)) in g.edges.iter().enumerate() {
                let ef = g.edge_features.as_ref().map_or(Vec::new(), |f| f.data.row(e).to_vec());
                edges.push((j + off, i + off, ef));
            }
            off += g.n_nodes();
        }
        edges.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let n = off;
        let mut in_degree = vec![0; n];
        for e in &edges {
            in_degree[e.1] += 1;
        }
        let rel = edges
            .iter()
            .map(|&(j, i, _)| [0, 1, 2].map(|c| positions[i][c] - positions[j][c]))
            .collect();
        let d = node_rep.dim();
        let edge_features = match &first.edge_features {
            Some(f) => {
                let de = f.rep.dim();
                Some(Tensor::from_vec(edges.len(), de, edges.iter().flat_map(|e| e.2.iter().copied()).collect())?)
            }
            None => None,
        };
        let node_attributes = match &first.node_attributes {
            Some(a) => Some(Tensor::from_vec(n, a.rep.dim(), attrs)?),
            None => None,
        };
        Ok(Self {
            n_nodes: n,
            n_graphs: graphs.len(),
            graph_of_node,
            sources: edges.iter().map(|e| e.0).collect(),
            targets: edges.iter().map(|e| e.1).collect(),
            rel,
            node_features: Tensor::from_vec(n, d, feats)?,
            node_attributes,
            edge_features,
            in_degree,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Sum,
    /// Divides by the in-degree; not the plain sum of the convolution formula.
    Mean,
}

/// Kernel input `z = z_i ⊕ z_j ⊕ z_ij` for every edge.
pub fn edge_z(ctx: &mut Ctx, batch: &Batch) -> Result<Option<Var>> {
    let mut parts = Vec::new();
    if let Some(a) = &batch.node_attributes {
        let a = ctx.constant(a.clone());
        parts.push(ctx.tape.gather_rows(a, &batch.targets)?);
        parts.push(ctx.tape.gather_rows(a, &batch.sources)?);
    }
    if let Some(e) = &batch.edge_features {
        parts.push(ctx.constant(e.clone()));
    }
    if parts.is_empty() {
        return Ok(None);
    }
    ctx.tape.concat_cols(&parts).map(Some)
}

/// Rep of [`edge_z`] for the given attribute reps.
pub fn edge_z_rep(node_attr: Option<&Rep<f64>>, edge_attr: Option<&Rep<f64>>) -> Result<Option<Rep<f64>>> {
    let mut out: Option<Rep<f64>> = None;
    let mut push = |r: &Rep<f64>| -> Result<()> {
        out = Some(match out.take() {
            Some(o) => o.direct_sum(r)?,
            None => r.clone(),
        });
        Ok(())
    };
    if let Some(a) = node_attr {
        push(a)?;
        push(a)?;
    }
    if let Some(e) = edge_attr {
        push(e)?;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    kernel: ImplicitKernel,
    aggregation: Aggregation,
    self_interaction: Option<EquivariantLinear>,
}

impl ConvLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        spec: KernelSpec,
        aggregation: Aggregation,
        self_interaction: bool,
        rng: &mut impl Rng,
        hooks: KernelHooks,
    ) -> Result<Self> {
        let si = if self_interaction {
            Some(EquivariantLinear::new(store, &format!("{name}.self"), &spec.rho_in, &spec.rho_out, rng, hooks.linear_fault)?)
        } else {
            None
        };
        let kernel = ImplicitKernel::with_hooks(store, &format!("{name}.kernel"), spec, rng, hooks)?;
        Ok(Self { kernel, aggregation, self_interaction: si })
    }

    pub fn kernel(&self) -> &ImplicitKernel {
        &self.kernel
    }

    pub fn rho_in(&self) -> &Rep<f64> {
        &self.kernel.spec().rho_in
    }

    pub fn rho_out(&self) -> &Rep<f64> {
        &self.kernel.spec().rho_out
    }

    /// `f_in` is `N x d_in`, `z` is `E x dim(rho_z)`; returns `N x d_out`.
    pub fn forward(&self, ctx: &mut Ctx, batch: &Batch, f_in: Var, z: Option<Var>) -> Result<Var> {
        let (n, d) = ctx.tape.value(f_in).shape();
        if d != self.rho_in().dim() || n != batch.n_nodes {
            return Err(Error::ty(format!("conv input is {n}x{d}, expected {}x{}", batch.n_nodes, self.rho_in().dim())));
        }
        let f_src = ctx.tape.gather_rows(f_in, &batch.sources)?;
        let msgs = self.kernel.apply(ctx, &KernelInput { x: &batch.rel, z }, f_src)?;
        let mut out = ctx.tape.scatter_sum(msgs, &batch.targets, n)?;
        if self.aggregation == Aggregation::Mean {
            let inv: Vec<f64> = batch.in_degree.iter().map(|&k| if k == 0 { 0.0 } else { 1.0 / k as f64 }).collect();
            let dout = self.rho_out().dim();
            let scale = Tensor::from_fn(n, dout, |r, _| inv[r]);
            let scale = ctx.constant(scale);
            out = ctx.tape.mul(out, scale)?;
        }
        if let Some(si) = &self.self_interaction {
            let s = si.forward(ctx, f_in)?;
            out = ctx.tape.add(out, s)?;
        }
        Ok(out)
    }
}

fn default_degree() -> u32 {
    crate::harmonics::MAX_DEGREE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum Readout {
    /// Per-node output transforming under `rep`.
    Node { rep: Rep<f64> },
    /// `channels` invariant fields, mean-pooled per graph, then a plain MLP.
    Invariant { channels: usize, mlp_hidden: Vec<usize>, n_out: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub group: GroupId,
    pub node_in: Rep<f64>,
    #[serde(default)]
    pub node_attr: Option<Rep<f64>>,
    #[serde(default)]
    pub edge_attr: Option<Rep<f64>>,
    /// Output rep of the embedding layer.
    pub hidden: Rep<f64>,
    /// Output rep of each convolution block.
    pub blocks: Vec<Rep<f64>>,
    #[serde(default = "default_true")]
    pub residual: bool,
    #[serde(default = "default_degree")]
    pub kernel_degree: u32,
    pub kernel_hidden: Vec<Rep<f64>>,
    pub band_limit: u32,
    #[serde(default = "default_sigma")]
    pub sigma_init: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub self_interaction: bool,
    pub readout: Readout,
}

fn default_true() -> bool {
    true
}

fn default_sigma() -> f64 {
    1.0
}

#[derive(Clone, Debug)]
struct Block {
    conv: ConvLayer,
    bn: IrrepBatchNorm,
    gate: Gate,
    residual: bool,
}

#[derive(Clone, Debug)]
enum Head {
    Node(EquivariantLinear),
    Invariant { project: EquivariantLinear, mlp: GMlp },
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    embed: EquivariantLinear,
    blocks: Vec<Block>,
    head: Head,
}

impl Model {
    pub fn new(store: &mut ParamStore, config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::with_hooks(store, config, rng, KernelHooks::default())
    }

    pub fn with_hooks(store: &mut ParamStore, config: ModelConfig, rng: &mut impl Rng, hooks: KernelHooks) -> Result<Self> {
        let group = config.group;
        for r in [Some(&config.node_in), config.node_attr.as_ref(), config.edge_attr.as_ref(), Some(&config.hidden)]
            .into_iter()
            .flatten()
            .chain(&config.blocks)
            .chain(&config.kernel_hidden)
        {
            Error::check_group(group, r.group())?;
        }
        let fault = hooks.linear_fault;
        let embed = EquivariantLinear::new(store, "embed", &config.node_in, &config.hidden, rng, fault)?;
        let rho_z = edge_z_rep(config.node_attr.as_ref(), config.edge_attr.as_ref())?;
        let mut blocks = Vec::new();
        let mut prev = config.hidden.clone();
        for (b, rep) in config.blocks.iter().enumerate() {
            if config.residual && rep != &prev {
                return Err(Error::config(format!("residual block {b} maps {} to {}", prev.spec(), rep.spec())));
            }
            let spec = KernelSpec {
                group,
                rho_in: prev.clone(),
                rho_out: rep.clone(),
                rho_z: rho_z.clone(),
                degree: config.kernel_degree,
                hidden: config.kernel_hidden.clone(),
                band_limit: config.band_limit,
                sigma_init: config.sigma_init,
            };
            let name = format!("block{b}");
            let conv = ConvLayer::new(store, &format!("{name}.conv"), spec, config.aggregation, config.self_interaction, rng, hooks)?;
            let bn = IrrepBatchNorm::new(store, &format!("{name}.bn"), rep)?;
            let gate = Gate::new(store, &format!("{name}.gate"), rep)?;
            blocks.push(Block { conv, bn, gate, residual: config.residual });
            prev = rep.clone();
        }
        let head = match &config.readout {
            Readout::Node { rep } => {
                Error::check_group(group, rep.group())?;
                Head::Node(EquivariantLinear::new(store, "readout", &prev, rep, rng, fault)?)
            }
            Readout::Invariant { channels, mlp_hidden, n_out } => {
                let inv = Rep::trivial(group, *channels);
                let project = EquivariantLinear::new(store, "readout.project", &prev, &inv, rng, fault)?;
                let t = |n: usize| Rep::trivial(GroupId::Trivial, n);
                let hidden: Vec<_> = mlp_hidden.iter().map(|&n| t(n)).collect();
                let mlp = GMlp::new(store, "readout.mlp", &t(*channels), &hidden, &t(*n_out), rng)?;
                Head::Invariant { project, mlp }
            }
        };
        Ok(Self { config, embed, blocks, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Zero the final linear layer so the untrained model outputs zeros.
    pub fn zero_readout(&self, store: &mut ParamStore) {
        let last = match &self.head {
            Head::Node(lin) => lin,
            Head::Invariant { mlp, .. } => mlp.last(),
        };
        for id in std::iter::once(last.coeffs_id()).chain(last.bias_id()) {
            store.param_data_mut(id).fill(0.0);
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ConvLayer> {
        self.blocks.iter().map(|b| &b.conv)
    }

    /// Per-node outputs (`N x d_out`) or per-graph outputs (`G x n_out`).
    pub fn forward(&self, ctx: &mut Ctx, batch: &Batch) -> Result<Var> {
        if batch.node_features.cols() != self.config.node_in.dim() {
            return Err(Error::ty("node features do not match the model input rep"));
        }
        let x = ctx.constant(batch.node_features.clone());
        let mut h = self.embed.forward(ctx, x)?;
        let z = edge_z(ctx, batch)?;
        for b in &self.blocks {
            let c = b.conv.forward(ctx, batch, h, z)?;
            let c = b.bn.forward(ctx, c)?;
            let c = b.gate.forward(ctx, c)?;
            h = if b.residual { ctx.tape.add(h, c)? } else { c };
        }
        match &self.head {
            Head::Node(lin) => lin.forward(ctx, h),
            Head::Invariant { project, mlp } => {
                let s = project.forward(ctx, h)?;
                let mut counts = vec![0usize; batch.n_graphs];
                for &g in &batch.graph_of_node {
                    counts[g] += 1;
                }
                let pool = Tensor::from_fn(batch.n_graphs, batch.n_nodes, |g, i| {
                    if batch.graph_of_node[i] == g {
                        1.0 / counts[g] as f64
                    } else {
                        0.0
                    }
                });
                let pool = ctx.constant(pool);
                let pooled = ctx.tape.matmul(pool, s)?;
                mlp.forward(ctx, pooled)
            }
        }
    }
}

/// Unique undirected pairs of an edge list, for diagnostics.
pub fn undirected(edges: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
    edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equivariant_nn::Mode;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn knn_tie_break() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let e = knn_edges(&pts, 1).unwrap();
        assert_eq!(e, vec![(1, 0), (0, 1), (1, 2)]);
        assert_eq!(undirected(&knn_edges(&pts, 2).unwrap()).len(), 3);
        assert_eq!(knn_edges(&pts, 2).unwrap().len(), fully_connected(3).len());
        assert!(knn_edges(&pts, 3).is_err());
    }

    fn tiny_graph(edges: Vec<(usize, usize)>) -> Graph {
        let rep = Rep::parse("so2:k0+k1").unwrap();
        Graph {
            positions: vec![[0.0, 0.0, 0.0], [0.5, 0.2, -0.1], [-0.3, 0.4, 0.2]],
            node_features: FieldBatch::new(rep, Tensor::from_fn(3, 3, |r, c| (r * 3 + c) as f64 * 0.1 - 0.3)).unwrap(),
            node_attributes: None,
            edges,
            edge_features: None,
        }
    }

    fn conv(agg: Aggregation) -> (ParamStore, ConvLayer) {
        let rep = Rep::parse("so2:k0+k1").unwrap();
        let spec = KernelSpec::with_default_hidden(rep.clone(), rep, None, 2, 1, 1).unwrap();
        let mut store = ParamStore::new();
        let c = ConvLayer::new(&mut store, "c", spec, agg, false, &mut ChaCha8Rng::seed_from_u64(3), KernelHooks::default()).unwrap();
        (store, c)
    }

    fn run(store: &ParamStore, c: &ConvLayer, g: &Graph) -> Tensor {
        let batch = Batch::new(&[g]).unwrap();
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, store, Mode::Eval);
        let f = ctx.constant(batch.node_features.clone());
        let y = c.forward(&mut ctx, &batch, f, None).unwrap();
        ctx.tape.value(y).clone()
    }

    #[test]
    fn no_edges_gives_zero() {
        for agg in [Aggregation::Sum, Aggregation::Mean] {
            let (store, c) = conv(agg);
            assert_eq!(run(&store, &c, &tiny_graph(vec![])), Tensor::zeros(3, 3));
        }
    }

    #[test]
    fn single_edge_is_one_kernel_application() {
        let (store, c) = conv(Aggregation::Sum);
        let g = tiny_graph(vec![(2, 0)]);
        let out = run(&store, &c, &g);
        let rel = [0, 1, 2].map(|k| g.positions[0][k] - g.positions[2][k]);
        let k = c.kernel().matrices(&store, &[rel], None).unwrap().remove(0);
        let want = k.matvec(g.node_features.data.row(2));
        for o in 0..3 {
            assert!((out.get(0, o) - want[o]).abs() < 1e-14);
            assert_eq!(out.get(1, o), 0.0);
        }
    }

    #[test]
    fn translation_leaves_output_unchanged() {
        let (store, c) = conv(Aggregation::Sum);
        let g = tiny_graph(fully_connected(3));
        let a = run(&store, &c, &g);
        let b = run(&store, &c, &g.translate([3.0, -1.0, 0.5]));
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn graph_json_round_trip() {
        let g = tiny_graph(fully_connected(3));
        let s = serde_json::to_string(&g.to_json()).unwrap();
        let back = Graph::from_json(&serde_json::from_str(&s).unwrap()).unwrap();
        assert_eq!(back, g);
        let mut bad = g.to_json();
        bad.edges.push([0, 9]);
        assert!(Graph::from_json(&bad).is_err());
    }
}
