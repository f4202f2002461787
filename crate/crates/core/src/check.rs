//! Randomized equivariance checks over every building block.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::equivariant_nn::{transform_rows, Ctx, EquivariantLinear, FieldBatch, GMlp, LinearFault, Mode, ParamStore};
use crate::error::Result;
use crate::groups::{sample, GroupElement, GroupId};
use crate::harmonics::{solid_harmonic, MAX_DEGREE};
use crate::implicit_kernel::{default_hidden, ImplicitKernel, KernelHooks, KernelSpec, VecConvention};
use crate::irreps::list_irreps;
use crate::linalg::Mat;
use crate::reps::{harmonic_rep, standard_rep, Rep};
use crate::steerable_conv::{
    edge_z, knn_edges, Aggregation, Batch, ConvLayer, Graph, Model, ModelConfig, Readout,
};
use crate::tensor::{Tape, Tensor};

pub const TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Biases on non-trivial fields in every linear layer.
    BiasOnAllFields,
    /// Kernel vectors folded back row-major.
    RowMajorUnvec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub group: GroupId,
    pub trials: usize,
    pub seed: u64,
    pub with_features: bool,
    pub fault: Option<Fault>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub config: CheckConfig,
    pub tolerance: f64,
    /// Largest relative violation per component.
    pub errors: BTreeMap<String, f64>,
    pub passed: bool,
}

/// `max |a - b| / max(|a|, |b|, 1e-12)`, norms taken as max-abs.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(1e-12, f64::max);
    diff / scale
}

fn hooks(fault: Option<Fault>) -> KernelHooks {
    KernelHooks {
        convention: if fault == Some(Fault::RowMajorUnvec) { VecConvention::RowMajor } else { VecConvention::ColumnMajor },
        linear_fault: if fault == Some(Fault::BiasOnAllFields) { LinearFault::BiasOnAllFields } else { LinearFault::None },
    }
}

/// Every irrep up to frequency `cap`, once, after the standard rep.
pub fn mixed_rep(group: GroupId, cap: u32) -> Result<Rep<f64>> {
    let ids = list_irreps::<f64>(group, cap).iter().map(|i| i.id).collect();
    standard_rep(group)?.direct_sum(&Rep::aligned(group, ids)?)
}

/// One standard field and one trivial field.
pub fn feature_rep(group: GroupId) -> Result<Rep<f64>> {
    standard_rep(group)?.direct_sum(&Rep::trivial(group, 1))
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn point(rng: &mut impl Rng) -> [f64; 3] {
    [(); 3].map(|_| gaussian(rng))
}

fn random_batch(rep: &Rep<f64>, rows: usize, rng: &mut impl Rng) -> FieldBatch {
    FieldBatch::new(rep.clone(), Tensor::from_fn(rows, rep.dim(), |_, _| gaussian(rng))).expect("matching width")
}

fn mat_err(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    rel_error(a.as_slice(), b.as_slice())
}

/// `rho(gh) = rho(g) rho(h)` for the irreps up to frequency 3.
pub fn check_irreps(group: GroupId, elems: &[(GroupElement<f64>, GroupElement<f64>)]) -> Result<f64> {
    let mut worst = 0.0f64;
    for irrep in list_irreps::<f64>(group, 3) {
        for (g, h) in elems {
            let lhs = irrep.evaluate(&g.compose(h)?)?;
            let rhs = irrep.evaluate(g)?.mul_unchecked(&irrep.evaluate(h)?);
            worst = worst.max(mat_err(&lhs, &rhs));
        }
    }
    Ok(worst)
}

/// `Y_l(g x) = D_l(g) Y_l(x)`.
pub fn check_harmonics(group: GroupId, draws: &[(GroupElement<f64>, [f64; 3])]) -> Result<f64> {
    let mut worst = 0.0f64;
    for l in 0..=MAX_DEGREE {
        let rep = harmonic_rep(group, l)?;
        for (g, x) in draws {
            let lhs = solid_harmonic(l, g.act(*x))?;
            let rhs = rep.evaluate(g)?.matvec(&solid_harmonic(l, *x)?);
            worst = worst.max(rel_error(&lhs, &rhs));
        }
    }
    Ok(worst)
}

fn eval_rows(store: &ParamStore, mode: Mode, f: impl FnOnce(&mut Ctx) -> Result<crate::tensor::Var>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, store, mode);
    let v = f(&mut ctx)?;
    Ok(ctx.tape.value(v).clone())
}

fn check_map(
    store: &ParamStore,
    rin: &Rep<f64>,
    rout: &Rep<f64>,
    elems: &[GroupElement<f64>],
    rng: &mut impl Rng,
    f: impl Fn(&mut Ctx, crate::tensor::Var) -> Result<crate::tensor::Var>,
) -> Result<f64> {
    let x = random_batch(rin, elems.len(), rng).data;
    let y = eval_rows(store, Mode::Eval, |ctx| {
        let v = ctx.constant(x.clone());
        f(ctx, v)
    })?;
    let mut worst = 0.0f64;
    let mut gx = Tensor::zeros(elems.len(), rin.dim());
    let mut gy = Tensor::zeros(elems.len(), rout.dim());
    for (t, g) in elems.iter().enumerate() {
        let (mi, mo) = (rin.evaluate(g)?, rout.evaluate(g)?);
        let xi = mi.matvec(x.row(t));
        let yo = mo.matvec(y.row(t));
        gx.data_mut()[t * rin.dim()..(t + 1) * rin.dim()].copy_from_slice(&xi);
        gy.data_mut()[t * rout.dim()..(t + 1) * rout.dim()].copy_from_slice(&yo);
    }
    let y2 = eval_rows(store, Mode::Eval, |ctx| {
        let v = ctx.constant(gx);
        f(ctx, v)
    })?;
    for t in 0..elems.len() {
        worst = worst.max(rel_error(y2.row(t), gy.row(t)));
    }
    Ok(worst)
}

/// Kernel constraint `k(g x, g z) = rho_out(g) k(x, z) rho_in(g)^T`.
pub fn check_kernel(
    kernel: &ImplicitKernel,
    store: &ParamStore,
    draws: &[(GroupElement<f64>, [f64; 3])],
    rng: &mut impl Rng,
) -> Result<f64> {
    let spec = kernel.spec();
    let xs: Vec<[f64; 3]> = draws.iter().map(|d| d.1).collect();
    let gxs: Vec<[f64; 3]> = draws.iter().map(|(g, x)| g.act(*x)).collect();
    let (z, gz) = match &spec.rho_z {
        Some(rz) => {
            let z = random_batch(rz, draws.len(), rng);
            let mut gz = z.data.clone();
            for (t, (g, _)) in draws.iter().enumerate() {
                let row = rz.evaluate(g)?.matvec(z.data.row(t));
                gz.data_mut()[t * rz.dim()..(t + 1) * rz.dim()].copy_from_slice(&row);
            }
            (Some(z.clone()), Some(FieldBatch::new(rz.clone(), gz)?))
        }
        None => (None, None),
    };
    let k = kernel.matrices(store, &xs, z.as_ref())?;
    let gk = kernel.matrices(store, &gxs, gz.as_ref())?;
    let mut worst = 0.0f64;
    for (t, (g, _)) in draws.iter().enumerate() {
        let rhs = spec.rho_out.evaluate(g)?.mul_unchecked(&k[t]).mul_unchecked(&spec.rho_in.evaluate(g)?.transpose());
        worst = worst.max(mat_err(&gk[t], &rhs));
    }
    Ok(worst)
}

/// Random kernel from [`mixed_rep`] to the irreps up to frequency 2 plus a
/// trivial field, optionally conditioned on [`feature_rep`]. Input and output
/// differ so a transposed kernel cannot pass the constraint by accident.
pub fn random_kernel(
    group: GroupId,
    with_features: bool,
    store: &mut ParamStore,
    rng: &mut impl Rng,
    hooks: KernelHooks,
) -> Result<ImplicitKernel> {
    let rin = mixed_rep(group, 2)?;
    let ids = list_irreps::<f64>(group, 2).iter().map(|i| i.id).collect();
    let rout = Rep::aligned(group, ids)?.direct_sum(&Rep::trivial(group, 1))?;
    let rz = if with_features { Some(feature_rep(group)?) } else { None };
    let mut spec = KernelSpec::with_default_hidden(rin, rout, rz, 2, 1, 2)?;
    spec.sigma_init = 1.5;
    ImplicitKernel::with_hooks(store, "kernel", spec, rng, hooks)
}

/// Random point cloud graph with kNN edges and random features.
pub fn random_graph(
    n: usize,
    k: usize,
    node_rep: &Rep<f64>,
    node_attr: Option<&Rep<f64>>,
    edge_rep: Option<&Rep<f64>>,
    rng: &mut impl Rng,
) -> Result<Graph> {
    let positions: Vec<[f64; 3]> = (0..n).map(|_| point(rng)).collect();
    let edges = knn_edges(&positions, k)?;
    let e = edges.len();
    Ok(Graph {
        positions,
        node_features: random_batch(node_rep, n, rng),
        node_attributes: node_attr.map(|r| random_batch(r, n, rng)),
        edges,
        edge_features: edge_rep.map(|r| random_batch(r, e, rng)),
    })
}

fn graph_error(
    graph: &Graph,
    elems: &[GroupElement<f64>],
    out_rep: Option<&Rep<f64>>,
    run: impl Fn(&Batch) -> Result<Tensor>,
) -> Result<f64> {
    let y = run(&Batch::new(&[graph])?)?;
    let mut worst = 0.0f64;
    for g in elems {
        let y2 = run(&Batch::new(&[&graph.transform(g)?])?)?;
        let want = match out_rep {
            Some(r) => transform_rows(&y, &r.evaluate(g)?),
            None => y.clone(),
        };
        worst = worst.max(rel_error(y2.data(), want.data()));
    }
    Ok(worst)
}

/// Small model config over `group`: two residual blocks and the given readout.
pub fn small_model(group: GroupId, with_features: bool, readout: Readout) -> Result<ModelConfig> {
    let hidden = default_hidden(group, 2, 1)?;
    Ok(ModelConfig {
        group,
        node_in: feature_rep(group)?,
        node_attr: if with_features { Some(Rep::trivial(group, 1)) } else { None },
        edge_attr: if with_features { Some(feature_rep(group)?) } else { None },
        hidden: hidden.clone(),
        blocks: vec![hidden.clone(), hidden],
        residual: true,
        kernel_degree: MAX_DEGREE,
        kernel_hidden: vec![default_hidden(group, 2, 1)?],
        band_limit: 2,
        sigma_init: 1.5,
        aggregation: Aggregation::Sum,
        self_interaction: true,
        readout,
    })
}

/// Runs every component check and collects the worst violations.
pub fn check_equivariance(cfg: &CheckConfig) -> Result<CheckReport> {
    let group = cfg.group;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let trials = cfg.trials.max(1);
    let hooks = hooks(cfg.fault);
    let mut errors = BTreeMap::new();

    let pairs: Vec<_> = (0..trials).map(|_| (sample(group, &mut rng), sample(group, &mut rng))).collect();
    errors.insert("irreps".to_string(), check_irreps(group, &pairs)?);
    let draws: Vec<_> = (0..trials).map(|_| (sample::<f64, _>(group, &mut rng), point(&mut rng))).collect();
    errors.insert("harmonics".to_string(), check_harmonics(group, &draws)?);
    let elems: Vec<_> = draws.iter().map(|d| d.0.clone()).collect();

    let mut store = ParamStore::new();
    let (rin, rout) = (mixed_rep(group, 2)?, mixed_rep(group, 2)?);
    let lin = EquivariantLinear::new(&mut store, "linear", &rin, &rout, &mut rng, hooks.linear_fault)?;
    errors.insert("linear".to_string(), check_map(&store, &rin, &rout, &elems, &mut rng, |c, x| lin.forward(c, x))?);
    let hid = default_hidden(group, 2, 2)?;
    let mlp = GMlp::with_fault(&mut store, "mlp", &rin, &[hid.clone(), hid], &rout, &mut rng, hooks.linear_fault)?;
    errors.insert("mlp".to_string(), check_map(&store, &rin, &rout, &elems, &mut rng, |c, x| mlp.forward(c, x))?);

    let kernel = random_kernel(group, false, &mut store, &mut rng, hooks)?;
    errors.insert("kernel".to_string(), check_kernel(&kernel, &store, &draws, &mut rng)?);
    if cfg.with_features {
        let kz = random_kernel(group, true, &mut store, &mut rng, hooks)?;
        errors.insert("kernel_z".to_string(), check_kernel(&kz, &store, &draws, &mut rng)?);
    }

    let n_graph = trials.min(20);
    let edge_rep = if cfg.with_features { Some(feature_rep(group)?) } else { None };
    let spec = KernelSpec::with_default_hidden(rin.clone(), rout.clone(), edge_rep.clone(), 2, 1, 1)?;
    let conv = ConvLayer::new(&mut store, "conv", spec, Aggregation::Sum, true, &mut rng, hooks)?;
    let graph = random_graph(7, 3, &rin, None, edge_rep.as_ref(), &mut rng)?;
    let conv_err = graph_error(&graph, &elems[..n_graph], Some(&rout), |b| {
        eval_rows(&store, Mode::Eval, |ctx| {
            let f = ctx.constant(b.node_features.clone());
            let z = edge_z(ctx, b)?;
            conv.forward(ctx, b, f, z)
        })
    })?;
    errors.insert("conv".to_string(), conv_err);

    let out = mixed_rep(group, 2)?;
    let model = Model::with_hooks(&mut store, small_model(group, cfg.with_features, Readout::Node { rep: out.clone() })?, &mut rng, hooks)?;
    let inv = Model::with_hooks(
        &mut store,
        small_model(group, cfg.with_features, Readout::Invariant { channels: 3, mlp_hidden: vec![4], n_out: 2 })?,
        &mut rng,
        hooks,
    )?;
    let node_attr = cfg.with_features.then(|| Rep::trivial(group, 1));
    let graph = random_graph(7, 3, &feature_rep(group)?, node_attr.as_ref(), edge_rep.as_ref(), &mut rng)?;
    let model_err = graph_error(&graph, &elems[..n_graph], Some(&out), |b| {
        eval_rows(&store, Mode::Train, |ctx| model.forward(ctx, b))
    })?;
    errors.insert("model".to_string(), model_err);
    let inv_err = graph_error(&graph, &elems[..n_graph], None, |b| eval_rows(&store, Mode::Train, |ctx| inv.forward(ctx, b)))?;
    errors.insert("invariant_model".to_string(), inv_err);

    let passed = errors.values().all(|&e| e < TOLERANCE);
    Ok(CheckReport { config: cfg.clone(), tolerance: TOLERANCE, errors, passed })
}
