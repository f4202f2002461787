//! Equivariant MLP building blocks.
//!
//! Layers own no tensors. Their parameters live in a [`ParamStore`] and a
//! forward pass runs inside a [`Ctx`], which maps every parameter onto a
//! tape node.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::GroupElement;
use crate::irreps::{irrep_dim, IrrepId};
use crate::linalg::Mat;
use crate::reps::Rep;
use crate::tensor::{Gradients, Tape, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BufferId(usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl NamedTensor {
    fn new(name: String, t: Tensor) -> Self {
        let (rows, cols) = t.shape();
        Self { name, rows, cols, data: t.into_data() }
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::from_vec(self.rows, self.cols, self.data.clone()).expect("shape checked on insert")
    }
}

/// Trainable parameters and non-trainable buffers (running statistics).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<NamedTensor>,
    buffers: Vec<NamedTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(NamedTensor::new(name.into(), value));
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> BufferId {
        self.buffers.push(NamedTensor::new(name.into(), value));
        BufferId(self.buffers.len() - 1)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Total number of trainable scalars.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn param(&self, id: ParamId) -> Tensor {
        self.params[id.0].tensor()
    }

    pub fn param_data(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    pub fn param_data_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].data
    }

    pub fn param_name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn buffer(&self, id: BufferId) -> &[f64] {
        &self.buffers[id.0].data
    }

    pub fn set_buffer(&mut self, id: BufferId, data: &[f64]) -> Result<()> {
        let b = &mut self.buffers[id.0];
        if b.data.len() != data.len() {
            return Err(Error::dim(format!("buffer {} has {} entries, got {}", b.name, b.data.len(), data.len())));
        }
        b.data.copy_from_slice(data);
        Ok(())
    }

    /// All parameters concatenated in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_scalars() {
            return Err(Error::dim(format!("{} values for {} parameters", flat.len(), self.n_scalars())));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.data.len();
            p.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Copy values from a store with the same layout (names and shapes).
    pub fn load(&mut self, other: &ParamStore) -> Result<()> {
        let same = |a: &[NamedTensor], b: &[NamedTensor]| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| x.name == y.name && x.rows == y.rows && x.cols == y.cols)
        };
        if !same(&self.params, &other.params) || !same(&self.buffers, &other.buffers) {
            return Err(Error::Data("stored parameters do not match the model layout".into()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if b.data.len() != a.data.len() || b.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("parameter {} is malformed", a.name)));
            }
            a.data.clone_from(&b.data);
        }
        for (a, b) in self.buffers.iter_mut().zip(&other.buffers) {
            a.data.clone_from(&b.data);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: the tape, the parameters as tape nodes, and pending
/// running-statistic updates.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    store: &'a ParamStore,
    vars: Vec<Var>,
    pub mode: Mode,
    updates: Vec<(BufferId, Vec<f64>)>,
}

impl<'a> Ctx<'a> {
    /// Parameters become trainable leaves in train mode and constants in
    /// eval mode.
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, mode: Mode) -> Self {
        let vars = store
            .params
            .iter()
            .map(|p| match mode {
                Mode::Train => tape.param(p.tensor()),
                Mode::Eval => tape.constant(p.tensor()),
            })
            .collect();
        Self { tape, store, vars, mode, updates: Vec::new() }
    }

    /// Parameters read from slices of one flat `1 x n` row, so a whole
    /// network can be differentiated as a function of a single vector.
    pub fn from_flat(tape: &'a mut Tape, store: &'a ParamStore, mode: Mode, flat: Var) -> Result<Self> {
        if tape.value(flat).shape() != (1, store.n_scalars()) {
            return Err(Error::dim("flat parameter row has the wrong length"));
        }
        let mut vars = Vec::with_capacity(store.params.len());
        let mut off = 0;
        for p in &store.params {
            let n = p.data.len();
            let s = tape.slice_cols(flat, off, off + n)?;
            vars.push(tape.reshape(s, p.rows, p.cols)?);
            off += n;
        }
        Ok(Self { tape, store, vars, mode, updates: Vec::new() })
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn buffer(&self, id: BufferId) -> &[f64] {
        self.store.buffer(id)
    }

    pub fn queue_update(&mut self, id: BufferId, data: Vec<f64>) {
        self.updates.push((id, data));
    }

    pub fn take_updates(&mut self) -> Vec<(BufferId, Vec<f64>)> {
        std::mem::take(&mut self.updates)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    /// Repeat a `1 x n` row `rows` times.
    pub fn broadcast_rows(&mut self, row: Var, rows: usize) -> Result<Var> {
        let ones = self.tape.constant(Tensor::filled(rows, 1, 1.0));
        self.tape.matmul(ones, row)
    }

    /// Gradients of every parameter, in registration order.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.get_or_zeros(self.tape, v)).collect()
    }
}

/// Rows of features transforming under a common representation.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldBatch {
    pub rep: Rep<f64>,
    pub data: Tensor,
}

impl FieldBatch {
    pub fn new(rep: Rep<f64>, data: Tensor) -> Result<Self> {
        if data.cols() != rep.dim() {
            return Err(Error::dim(format!("{} columns for a rep of dimension {}", data.cols(), rep.dim())));
        }
        Ok(Self { rep, data })
    }

    /// A single typed vector.
    pub fn single(rep: Rep<f64>, values: &[f64]) -> Result<Self> {
        Self::new(rep, Tensor::row_vector(values))
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    /// Every row mapped through `rep(g)`.
    pub fn transform(&self, g: &GroupElement<f64>) -> Result<Self> {
        let m = self.rep.evaluate(g)?;
        Ok(Self { rep: self.rep.clone(), data: transform_rows(&self.data, &m) })
    }
}

/// `x -> m x` applied to every row.
pub fn transform_rows(data: &Tensor, m: &Mat<f64>) -> Tensor {
    let d = m.rows();
    Tensor::from_fn(data.rows(), d, |r, i| (0..m.cols()).map(|j| m[(i, j)] * data.get(r, j)).sum())
}

/// Test hook that breaks equivariance on purpose.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearFault {
    #[default]
    None,
    /// Learnable bias on every output component, not just trivial fields.
    BiasOnAllFields,
}

/// `y = W x + b`, with `W` confined to the equivariant subspace: each block
/// between two fields of the same irrep type is a combination of the
/// irrep's endomorphism basis, every other block is zero.
#[derive(Clone, Debug)]
pub struct EquivariantLinear {
    rep_in: Rep<f64>,
    rep_out: Rep<f64>,
    /// Sparse basis of `W^T` (`d_in x d_out`, flattened row-major): entry
    /// `k` adds `coeffs[basis_coeff[k]] * basis_val[k]` at `basis_pos[k]`.
    n_coeffs: usize,
    basis_coeff: Vec<usize>,
    basis_pos: Vec<usize>,
    basis_val: Tensor,
    coeffs: ParamId,
    bias: Option<(ParamId, Tensor)>,
}

impl EquivariantLinear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        rep_in: &Rep<f64>,
        rep_out: &Rep<f64>,
        rng: &mut impl Rng,
        fault: LinearFault,
    ) -> Result<Self> {
        Error::check_group(rep_in.group(), rep_out.group())?;
        let group = rep_in.group();
        let (din, dout) = (rep_in.dim(), rep_out.dim());
        let aligned = rep_in.is_aligned() && rep_out.is_aligned();
        let in_fields = rep_in.fields();
        let (mut basis_coeff, mut basis_pos, mut vals) = (Vec::new(), Vec::new(), Vec::new());
        let mut init = Vec::new();
        for (id_o, off_o, d) in rep_out.fields() {
            let fan_in = in_fields.iter().filter(|f| f.0 == id_o).count();
            for &(_, off_i, _) in in_fields.iter().filter(|f| f.0 == id_o) {
                let irrep = crate::irreps::Irrep::<f64>::new(group, id_o)?;
                let std = (2.0 / (fan_in * irrep.endo_dim()) as f64).sqrt();
                for e in &irrep.endo_basis {
                    let p = init.len();
                    let mut push = |i: usize, o: usize, v: f64| {
                        if v != 0.0 {
                            basis_coeff.push(p);
                            basis_pos.push(i * dout + o);
                            vals.push(v);
                        }
                    };
                    if aligned {
                        for a in 0..d {
                            for b in 0..d {
                                push(off_i + b, off_o + a, e[(a, b)]);
                            }
                        }
                    } else {
                        let mut w = Mat::zeros(dout, din);
                        for a in 0..d {
                            for b in 0..d {
                                w[(off_o + a, off_i + b)] = e[(a, b)];
                            }
                        }
                        let w = rep_out.q().transpose().mul_unchecked(&w).mul_unchecked(rep_in.q());
                        for o in 0..dout {
                            for i in 0..din {
                                push(i, o, w[(o, i)]);
                            }
                        }
                    }
                    init.push(std * Normal::new(0.0, 1.0).expect("unit normal").sample(rng));
                }
            }
        }
        let n_coeffs = init.len();
        let basis_val = Tensor::row_vector(&vals);
        let coeffs = store.add_param(format!("{name}.coeffs"), Tensor::row_vector(&init));
        let bias_rows: Vec<usize> = match fault {
            LinearFault::None => rep_out
                .fields()
                .into_iter()
                .filter(|f| f.0.is_trivial())
                .map(|f| f.1)
                .collect(),
            LinearFault::BiasOnAllFields => (0..dout).collect(),
        };
        let bias = if bias_rows.is_empty() {
            None
        } else {
            // Row t maps bias t to its output component: Q_out^T e_t.
            let q = rep_out.q();
            let embed = Tensor::from_fn(bias_rows.len(), dout, |t, c| q[(bias_rows[t], c)]);
            let init = match fault {
                LinearFault::None => vec![0.0; bias_rows.len()],
                LinearFault::BiasOnAllFields => {
                    let n01 = Normal::new(0.0, 1.0).expect("unit normal");
                    (0..bias_rows.len()).map(|_| n01.sample(rng)).collect()
                }
            };
            Some((store.add_param(format!("{name}.bias"), Tensor::row_vector(&init)), embed))
        };
        Ok(Self {
            rep_in: rep_in.clone(),
            rep_out: rep_out.clone(),
            n_coeffs,
            basis_coeff,
            basis_pos,
            basis_val,
            coeffs,
            bias,
        })
    }

    pub fn rep_in(&self) -> &Rep<f64> {
        &self.rep_in
    }

    pub fn rep_out(&self) -> &Rep<f64> {
        &self.rep_out
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn coeffs_id(&self) -> ParamId {
        self.coeffs
    }

    pub fn bias_id(&self) -> Option<ParamId> {
        self.bias.as_ref().map(|b| b.0)
    }

    /// `x` is `B x d_in`; returns `B x d_out`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (b, din) = ctx.tape.value(x).shape();
        if din != self.rep_in.dim() {
            return Err(Error::ty(format!("linear layer expects {} input columns, got {din}", self.rep_in.dim())));
        }
        let dout = self.rep_out.dim();
        let y = if self.basis_pos.is_empty() {
            ctx.constant(Tensor::zeros(b, dout))
        } else {
            let c = ctx.tape.gather_cols(ctx.var(self.coeffs), &self.basis_coeff)?;
            let vals = ctx.constant(self.basis_val.clone());
            let entries = ctx.tape.mul(c, vals)?;
            let entries = ctx.tape.reshape(entries, self.basis_pos.len(), 1)?;
            let flat = ctx.tape.scatter_sum(entries, &self.basis_pos, din * dout)?;
            let wt = ctx.tape.reshape(flat, din, dout)?;
            ctx.tape.matmul(x, wt)?
        };
        match &self.bias {
            None => Ok(y),
            Some((id, embed)) => {
                let embed = ctx.constant(embed.clone());
                let row = ctx.tape.matmul(ctx.var(*id), embed)?;
                let full = ctx.broadcast_rows(row, b)?;
                ctx.tape.add(y, full)
            }
        }
    }

    pub fn forward_batch(&self, ctx: &mut Ctx, x: &FieldBatch) -> Result<Var> {
        if x.rep != self.rep_in {
            return Err(Error::ty(format!("input rep {} does not match layer rep {}", x.rep.spec(), self.rep_in.spec())));
        }
        let v = ctx.constant(x.data.clone());
        self.forward(ctx, v)
    }

    /// The materialized `d_out x d_in` weight matrix.
    pub fn weight(&self, store: &ParamStore) -> Mat<f64> {
        let c = store.param_data(self.coeffs);
        let (din, dout) = (self.rep_in.dim(), self.rep_out.dim());
        let mut w = Mat::zeros(dout, din);
        for (k, &pos) in self.basis_pos.iter().enumerate() {
            w[(pos % dout, pos / dout)] += c[self.basis_coeff[k]] * self.basis_val.data()[k];
        }
        w
    }
}

/// `(offset, dim)` of every field of an aligned rep, split into trivial and
/// non-trivial ones.
fn split_fields(rep: &Rep<f64>) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut triv = Vec::new();
    let mut other = Vec::new();
    for (id, o, d) in rep.fields() {
        if id.is_trivial() {
            triv.push((o, d));
        } else {
            other.push((o, d));
        }
    }
    (triv, other)
}

/// `F x D` matrix copying field values onto their components.
fn expansion(fields: &[(usize, usize)], dim: usize) -> Tensor {
    let mut t = Tensor::zeros(fields.len(), dim);
    for (f, &(o, d)) in fields.iter().enumerate() {
        for c in o..o + d {
            t.set(f, c, 1.0);
        }
    }
    t
}

fn require_aligned(rep: &Rep<f64>, what: &str) -> Result<()> {
    if rep.is_aligned() {
        Ok(())
    } else {
        Err(Error::ty(format!("{what} needs an irrep-aligned rep, got one with a change of basis")))
    }
}

/// Norm gate on non-trivial fields, `v * sigmoid(alpha |v| + beta)`, and ELU
/// on trivial fields.
#[derive(Clone, Debug)]
pub struct Gate {
    dim: usize,
    gated: Vec<(usize, usize)>,
    expand: Tensor,
    triv_mask: Tensor,
    params: Option<(ParamId, ParamId)>,
}

impl Gate {
    pub fn new(store: &mut ParamStore, name: &str, rep: &Rep<f64>) -> Result<Self> {
        require_aligned(rep, "gate")?;
        let (triv, gated) = split_fields(rep);
        let dim = rep.dim();
        let mut mask = vec![0.0; dim];
        for &(o, _) in &triv {
            mask[o] = 1.0;
        }
        let params = (!gated.is_empty()).then(|| {
            let n = gated.len();
            (
                store.add_param(format!("{name}.alpha"), Tensor::filled(1, n, 1.0)),
                store.add_param(format!("{name}.beta"), Tensor::zeros(1, n)),
            )
        });
        Ok(Self { dim, expand: expansion(&gated, dim), gated, triv_mask: Tensor::row_vector(&mask), params })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let b = ctx.tape.value(x).rows();
        if ctx.tape.value(x).cols() != self.dim {
            return Err(Error::ty("gate input has the wrong width"));
        }
        let mask = ctx.constant(self.triv_mask.clone());
        let mask = ctx.broadcast_rows(mask, b)?;
        let e = ctx.tape.elu(x)?;
        let triv = ctx.tape.mul(e, mask)?;
        let Some((alpha, beta)) = self.params else {
            return Ok(triv);
        };
        let norms = ctx.tape.field_norm(x, &self.gated)?;
        let a = ctx.broadcast_rows(ctx.var(alpha), b)?;
        let bb = ctx.broadcast_rows(ctx.var(beta), b)?;
        let pre = ctx.tape.mul(norms, a)?;
        let pre = ctx.tape.add(pre, bb)?;
        let s = ctx.tape.sigmoid(pre)?;
        let expand = ctx.constant(self.expand.clone());
        let s = ctx.tape.matmul(s, expand)?;
        let gated = ctx.tape.mul(x, s)?;
        ctx.tape.add(gated, triv)
    }
}

/// Divides each field by `sqrt(mean_batch |v|^2 / dim + eps)`. No centering,
/// so non-trivial fields stay equivariant.
#[derive(Clone, Debug)]
pub struct IrrepBatchNorm {
    dim: usize,
    /// `D x F`: sums squared components into per-field `|v|^2 / dim`.
    reduce: Tensor,
    /// `F x D`.
    expand: Tensor,
    running: BufferId,
}

impl IrrepBatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, rep: &Rep<f64>) -> Result<Self> {
        require_aligned(rep, "batch norm")?;
        let fields: Vec<(usize, usize)> = rep.fields().into_iter().map(|f| (f.1, f.2)).collect();
        let dim = rep.dim();
        let expand = expansion(&fields, dim);
        let reduce = Tensor::from_fn(dim, fields.len(), |c, f| {
            let (o, d) = fields[f];
            if (o..o + d).contains(&c) {
                1.0 / d as f64
            } else {
                0.0
            }
        });
        let running = store.add_buffer(format!("{name}.running"), Tensor::filled(1, fields.len(), 1.0));
        Ok(Self { dim, reduce, expand, running })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (b, d) = ctx.tape.value(x).shape();
        if d != self.dim {
            return Err(Error::ty("batch norm input has the wrong width"));
        }
        let inv = match ctx.mode {
            Mode::Train => {
                if b == 0 {
                    return Err(Error::Data("batch norm on an empty batch in train mode".into()));
                }
                let sq = ctx.tape.mul(x, x)?;
                let reduce = ctx.constant(self.reduce.clone());
                let per = ctx.tape.matmul(sq, reduce)?;
                let avg = ctx.constant(Tensor::filled(1, b, 1.0 / b as f64));
                let stat = ctx.tape.matmul(avg, per)?;
                let running: Vec<f64> = ctx
                    .buffer(self.running)
                    .iter()
                    .zip(ctx.tape.value(stat).data())
                    .map(|(r, s)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * s)
                    .collect();
                ctx.queue_update(self.running, running);
                let eps = ctx.constant(Tensor::scalar(BN_EPS));
                let shifted = ctx.tape.add(stat, eps)?;
                ctx.tape.rsqrt(shifted)?
            }
            Mode::Eval => {
                let r: Vec<f64> = ctx.buffer(self.running).iter().map(|s| 1.0 / (s + BN_EPS).sqrt()).collect();
                ctx.constant(Tensor::row_vector(&r))
            }
        };
        let expand = ctx.constant(self.expand.clone());
        let row = ctx.tape.matmul(inv, expand)?;
        let full = ctx.broadcast_rows(row, b)?;
        ctx.tape.mul(x, full)
    }
}

/// Equivariant linear layers alternated with gates; the last layer is
/// linear into `rep_out`.
#[derive(Clone, Debug)]
pub struct GMlp {
    layers: Vec<(EquivariantLinear, Option<Gate>)>,
}

impl GMlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        rep_in: &Rep<f64>,
        hidden: &[Rep<f64>],
        rep_out: &Rep<f64>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::with_fault(store, name, rep_in, hidden, rep_out, rng, LinearFault::None)
    }

    /// Like [`GMlp::new`] with a fault applied to every linear layer.
    pub fn with_fault(
        store: &mut ParamStore,
        name: &str,
        rep_in: &Rep<f64>,
        hidden: &[Rep<f64>],
        rep_out: &Rep<f64>,
        rng: &mut impl Rng,
        fault: LinearFault,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut prev = rep_in.clone();
        for (i, h) in hidden.iter().enumerate() {
            Error::check_group(rep_in.group(), h.group())?;
            require_aligned(h, "hidden layer")?;
            let lin = EquivariantLinear::new(store, &format!("{name}.{i}"), &prev, h, rng, fault)?;
            let gate = Gate::new(store, &format!("{name}.{i}.gate"), h)?;
            layers.push((lin, Some(gate)));
            prev = h.clone();
        }
        let last = EquivariantLinear::new(store, &format!("{name}.out"), &prev, rep_out, rng, fault)?;
        layers.push((last, None));
        Ok(Self { layers })
    }

    pub fn last(&self) -> &EquivariantLinear {
        &self.layers.last().expect("at least the output layer").0
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn rep_in(&self) -> &Rep<f64> {
        self.layers[0].0.rep_in()
    }

    pub fn rep_out(&self) -> &Rep<f64> {
        self.layers.last().expect("at least one layer").0.rep_out()
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut h = x;
        for (lin, gate) in &self.layers {
            h = lin.forward(ctx, h)?;
            if let Some(g) = gate {
                h = g.forward(ctx, h)?;
            }
        }
        Ok(h)
    }
}

/// Aligned rep made of `copies` of each irrep in `ids`, grouped by irrep.
pub fn multiplicity_rep(group: crate::groups::GroupId, ids: &[IrrepId], copies: usize) -> Result<Rep<f64>> {
    let mut irreps = Vec::new();
    for &id in ids {
        irrep_dim(group, id).ok_or_else(|| Error::ty(format!("{group} has no such irrep")))?;
        irreps.extend(std::iter::repeat(id).take(copies));
    }
    Rep::aligned(group, irreps)
}

/// Adaptive-moments optimizer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update; `grads` are in parameter registration order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.n_params() {
            return Err(Error::dim("one gradient per parameter expected"));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = grads[k].data();
            let p = store.param_data_mut(id);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
