//! Steerable kernels `k(x, z)` parameterized by an equivariant MLP.
//!
//! Pipeline per point: solid-harmonic embedding of `x`, per-irrep batch
//! norm, concatenation with `z`, G-MLP into the irreps of `rho_in ⊗ rho_out`,
//! Clebsch-Gordan head back to `vec(k)`, Gaussian envelope.
//!
//! `vec` is column-major with `k` of shape `d_out x d_in`, so that
//! `vec(rho_out k rho_in^T) = (rho_in ⊗ rho_out) vec(k)`. The MLP output
//! transforms under the irreps of that tensor product and the head maps
//! it back with the transposed CG change of basis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::equivariant_nn::{Ctx, GMlp, IrrepBatchNorm, LinearFault, Mode, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::groups::GroupId;
use crate::harmonics::{harmonic_embed, MAX_DEGREE};
use crate::irreps::{list_irreps, IrrepId};
use crate::linalg::Mat;
use crate::reps::{cg, harmonic_rep, Rep};
use crate::tensor::{Tape, Tensor, Var};

fn default_degree() -> u32 {
    MAX_DEGREE
}

fn default_band() -> u32 {
    3
}

fn default_sigma() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub group: GroupId,
    pub rho_in: Rep<f64>,
    pub rho_out: Rep<f64>,
    #[serde(default)]
    pub rho_z: Option<Rep<f64>>,
    /// Highest harmonic degree of the position embedding.
    #[serde(default = "default_degree")]
    pub degree: u32,
    /// Hidden reps of the MLP (irrep-aligned).
    pub hidden: Vec<Rep<f64>>,
    /// Tensor-product constituents above this frequency get no coefficients.
    #[serde(default = "default_band")]
    pub band_limit: u32,
    #[serde(default = "default_sigma")]
    pub sigma_init: f64,
}

impl KernelSpec {
    /// Spec with `layers` hidden layers of `copies` of every irrep up to
    /// the band limit.
    pub fn with_default_hidden(
        rho_in: Rep<f64>,
        rho_out: Rep<f64>,
        rho_z: Option<Rep<f64>>,
        band_limit: u32,
        copies: usize,
        layers: usize,
    ) -> Result<Self> {
        let group = rho_in.group();
        Ok(Self {
            group,
            rho_in,
            rho_out,
            rho_z,
            degree: MAX_DEGREE,
            hidden: vec![default_hidden(group, band_limit, copies)?; layers],
            band_limit,
            sigma_init: 1.0,
        })
    }
}

/// `copies` of every irrep of frequency at most `band_limit`.
pub fn default_hidden(group: GroupId, band_limit: u32, copies: usize) -> Result<Rep<f64>> {
    let ids: Vec<IrrepId> = list_irreps::<f64>(group, band_limit).iter().map(|i| i.id).collect();
    crate::equivariant_nn::multiplicity_rep(group, &ids, copies)
}

/// How `vec(k)` is folded back into a matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VecConvention {
    #[default]
    ColumnMajor,
    /// Wrong on purpose; used to show the convention matters.
    RowMajor,
}

/// Deliberate faults for tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KernelHooks {
    pub convention: VecConvention,
    pub linear_fault: LinearFault,
}

#[derive(Clone, Debug)]
pub struct ImplicitKernel {
    spec: KernelSpec,
    /// Transposed change of basis of the harmonic embedding (rows in, aligned out).
    embed_qt: Tensor,
    bn: IrrepBatchNorm,
    z_qt: Option<Tensor>,
    mlp: GMlp,
    /// `n_coeff x (d_in d_out)`: coefficients to column-major `vec(k)`.
    head: Tensor,
    log_sigma: ParamId,
    /// `d_in x (d_in d_out)` and `(d_in d_out) x d_out`: dense `k f` as
    /// expand, multiply, sum. Only used with the row-major fault.
    expand: Tensor,
    collapse: Tensor,
    /// Block-sparse `k f`: `(f spread) * c[:, coeff_of] gather`, one
    /// column per (coefficient, output component).
    spread: Tensor,
    coeff_of: Vec<usize>,
    gather: Tensor,
    convention: VecConvention,
}

/// Kernel inputs for a batch of points.
pub struct KernelInput<'v> {
    pub x: &'v [[f64; 3]],
    /// `n x dim(rho_z)` tape node, in the basis of `rho_z`.
    pub z: Option<Var>,
}

fn mat_t(m: &Mat<f64>) -> Tensor {
    let t = m.transpose();
    Tensor::from_vec(t.rows(), t.cols(), t.into_vec()).expect("same size")
}

impl ImplicitKernel {
    pub fn new(store: &mut ParamStore, name: &str, spec: KernelSpec, rng: &mut impl Rng) -> Result<Self> {
        Self::with_hooks(store, name, spec, rng, KernelHooks::default())
    }

    pub fn with_hooks(
        store: &mut ParamStore,
        name: &str,
        spec: KernelSpec,
        rng: &mut impl Rng,
        hooks: KernelHooks,
    ) -> Result<Self> {
        let group = spec.group;
        Error::check_group(group, spec.rho_in.group())?;
        Error::check_group(group, spec.rho_out.group())?;
        if spec.degree > MAX_DEGREE {
            return Err(Error::UnsupportedDegree { degree: spec.degree, max: MAX_DEGREE });
        }
        if !(spec.sigma_init > 0.0 && spec.sigma_init.is_finite()) {
            return Err(Error::config("sigma must be positive"));
        }
        let mut harm = Rep::aligned(group, Vec::new())?;
        for l in 0..=spec.degree {
            harm = harm.direct_sum(&harmonic_rep(group, l)?)?;
        }
        let embed_aligned = Rep::aligned(group, harm.irreps().to_vec())?;
        let bn = IrrepBatchNorm::new(store, &format!("{name}.embed_bn"), &embed_aligned)?;
        let mut mlp_in = embed_aligned.irreps().to_vec();
        let z_qt = match &spec.rho_z {
            Some(z) => {
                Error::check_group(group, z.group())?;
                mlp_in.extend_from_slice(z.irreps());
                Some(mat_t(z.q()))
            }
            None => None,
        };
        let Head { targets, head, spread, coeff_of, gather } = build_head(&spec)?;
        let mlp = GMlp::with_fault(
            store,
            &format!("{name}.mlp"),
            &Rep::aligned(group, mlp_in)?,
            &spec.hidden,
            &Rep::aligned(group, targets)?,
            rng,
            hooks.linear_fault,
        )?;
        let log_sigma = store.add_param(format!("{name}.log_sigma"), Tensor::scalar(spec.sigma_init.ln()));
        let (din, dout) = (spec.rho_in.dim(), spec.rho_out.dim());
        let mut expand = Tensor::zeros(din, din * dout);
        let mut collapse = Tensor::zeros(din * dout, dout);
        for i in 0..din {
            for o in 0..dout {
                let idx = vec_index(hooks.convention, o, i, din, dout);
                expand.set(i, idx, 1.0);
                collapse.set(idx, o, 1.0);
            }
        }
        Ok(Self {
            spec,
            embed_qt: mat_t(harm.q()),
            bn,
            z_qt,
            mlp,
            head,
            log_sigma,
            expand,
            collapse,
            spread,
            coeff_of,
            gather,
            convention: hooks.convention,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn log_sigma_id(&self) -> ParamId {
        self.log_sigma
    }

    pub fn n_coefficients(&self) -> usize {
        self.head.rows()
    }

    /// MLP output (`n x n_coeff`) for a batch of points.
    pub fn coefficients(&self, ctx: &mut Ctx, input: &KernelInput) -> Result<Var> {
        let n = input.x.len();
        let degree = self.spec.degree;
        let mut rows = Vec::with_capacity(n * self.embed_qt.rows());
        for x in input.x {
            if !x.iter().all(|c| c.is_finite()) {
                return Err(Error::Data("kernel evaluated at a non-finite point".into()));
            }
            rows.extend(harmonic_embed(*x, degree)?);
        }
        let e = Tensor::from_vec(n, self.embed_qt.rows(), rows)?.matmul(&self.embed_qt)?;
        let e = ctx.constant(e);
        let mut h = self.bn.forward(ctx, e)?;
        match (&self.z_qt, input.z) {
            (Some(qt), Some(z)) => {
                let (zr, zc) = ctx.tape.value(z).shape();
                if zr != n || zc != qt.rows() {
                    return Err(Error::ty(format!("z features are {zr}x{zc}, expected {n}x{}", qt.rows())));
                }
                let qt = ctx.constant(qt.clone());
                let za = ctx.tape.matmul(z, qt)?;
                h = ctx.tape.concat_cols(&[h, za])?;
            }
            (None, None) => {}
            (Some(_), None) => return Err(Error::ty("kernel expects z features")),
            (None, Some(_)) => return Err(Error::ty("kernel takes no z features")),
        }
        self.mlp.forward(ctx, h)
    }

    /// `exp(-|x|^2 / (2 sigma^2))` as an `n x 1` node.
    pub fn envelope(&self, ctx: &mut Ctx, x: &[[f64; 3]]) -> Result<Var> {
        let r2 = Tensor::from_vec(x.len(), 1, x.iter().map(|p| p.iter().map(|c| c * c).sum()).collect())?;
        let r2 = ctx.constant(r2);
        let s = ctx.tape.scale(ctx.var(self.log_sigma), -2.0)?;
        let inv_s2 = ctx.tape.exp(s)?;
        let t = ctx.tape.mul(r2, inv_s2)?;
        let t = ctx.tape.scale(t, -0.5)?;
        ctx.tape.exp(t)
    }

    /// `vec(k(x, z))` for every point, envelope included (`n x d_in d_out`).
    pub fn vec_kernels(&self, ctx: &mut Ctx, input: &KernelInput) -> Result<Var> {
        let c = self.coefficients(ctx, input)?;
        let head = ctx.constant(self.head.clone());
        let v = ctx.tape.matmul(c, head)?;
        let env = self.envelope(ctx, input.x)?;
        let ones = ctx.constant(Tensor::filled(1, self.head.cols(), 1.0));
        let env = ctx.tape.matmul(env, ones)?;
        ctx.tape.mul(v, env)
    }

    /// `k(x_e, z_e) f_e` for each row `e`; `f` is `n x d_in`.
    pub fn apply(&self, ctx: &mut Ctx, input: &KernelInput, f: Var) -> Result<Var> {
        let c = self.coefficients(ctx, input)?;
        let m = match self.convention {
            VecConvention::ColumnMajor => {
                let spread = ctx.constant(self.spread.clone());
                let fs = ctx.tape.matmul(f, spread)?;
                let cs = ctx.tape.gather_cols(c, &self.coeff_of)?;
                let prod = ctx.tape.mul(fs, cs)?;
                let gather = ctx.constant(self.gather.clone());
                ctx.tape.matmul(prod, gather)?
            }
            VecConvention::RowMajor => {
                let head = ctx.constant(self.head.clone());
                let v = ctx.tape.matmul(c, head)?;
                let expand = ctx.constant(self.expand.clone());
                let fe = ctx.tape.matmul(f, expand)?;
                let prod = ctx.tape.mul(v, fe)?;
                let collapse = ctx.constant(self.collapse.clone());
                ctx.tape.matmul(prod, collapse)?
            }
        };
        let env = self.envelope(ctx, input.x)?;
        let ones = ctx.constant(Tensor::filled(1, self.spec.rho_out.dim(), 1.0));
        let env = ctx.tape.matmul(env, ones)?;
        ctx.tape.mul(m, env)
    }

    /// Kernel matrices (`d_out x d_in`) at the given points, eval mode.
    pub fn matrices(&self, store: &ParamStore, x: &[[f64; 3]], z: Option<&crate::equivariant_nn::FieldBatch>) -> Result<Vec<Mat<f64>>> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, store, Mode::Eval);
        let zv = match (z, &self.spec.rho_z) {
            (Some(z), Some(rz)) => {
                if &z.rep != rz {
                    return Err(Error::ty(format!("z has rep {}, kernel expects {}", z.rep.spec(), rz.spec())));
                }
                Some(ctx.constant(z.data.clone()))
            }
            (None, None) => None,
            _ => return Err(Error::ty("z features do not match the kernel spec")),
        };
        let v = self.vec_kernels(&mut ctx, &KernelInput { x, z: zv })?;
        let v = ctx.tape.value(v);
        Ok((0..x.len()).map(|e| self.unvec(v.row(e))).collect())
    }

    /// Fold one `vec(k)` row into a `d_out x d_in` matrix.
    pub fn unvec(&self, v: &[f64]) -> Mat<f64> {
        let (din, dout) = (self.spec.rho_in.dim(), self.spec.rho_out.dim());
        Mat::from_fn(dout, din, |o, i| v[vec_index(self.convention, o, i, din, dout)])
    }

    /// Samples at the centers of a `K^3` grid over `[-extent, extent]^3`.
    pub fn grid_sample(&self, store: &ParamStore, k: usize, extent: f64) -> Result<KernelGrid> {
        if k % 2 == 0 {
            return Err(Error::config(format!("grid size {k} must be odd")));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::config("grid extent must be positive"));
        }
        if self.spec.rho_z.is_some() {
            return Err(Error::config("grid sampling of z-conditioned kernels is not supported"));
        }
        let mut pts = Vec::with_capacity(k * k * k);
        for ix in 0..k {
            for iy in 0..k {
                for iz in 0..k {
                    pts.push([grid_center(ix, k, extent), grid_center(iy, k, extent), grid_center(iz, k, extent)]);
                }
            }
        }
        let mats = self.matrices(store, &pts, None)?;
        let (d_out, d_in) = (self.spec.rho_out.dim(), self.spec.rho_in.dim());
        let data = mats.into_iter().flat_map(Mat::into_vec).collect();
        Ok(KernelGrid { k, extent, d_out, d_in, data })
    }
}

pub fn grid_center(i: usize, k: usize, extent: f64) -> f64 {
    -extent + (2 * i + 1) as f64 * extent / k as f64
}

fn vec_index(conv: VecConvention, o: usize, i: usize, din: usize, dout: usize) -> usize {
    match conv {
        VecConvention::ColumnMajor => o + i * dout,
        VecConvention::RowMajor => o * din + i,
    }
}

struct Head {
    targets: Vec<IrrepId>,
    head: Tensor,
    spread: Tensor,
    coeff_of: Vec<usize>,
    gather: Tensor,
}

/// Kept CG targets and the head matrix whose row `s` is
/// `vec(Q_out^T K_s Q_in)`, `K_s` placing intertwiner column `s` of the
/// pair block `(field a of rho_in, field b of rho_out)`.
fn build_head(spec: &KernelSpec) -> Result<Head> {
    let group = spec.group;
    let (din, dout) = (spec.rho_in.dim(), spec.rho_out.dim());
    let mut targets = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    // aligned-basis spread columns and their output index
    let mut cols: Vec<(Vec<(usize, f64)>, usize)> = Vec::new();
    let mut coeff_of = Vec::new();
    for (ia, oa, da) in spec.rho_in.fields() {
        for (ib, ob, db) in spec.rho_out.fields() {
            let d = cg(group, ia, ib)?;
            for block in d.blocks.iter().filter(|b| b.target.freq <= spec.band_limit) {
                targets.push(block.target);
                for s in 0..block.intertwiner.cols() {
                    let idx = rows.len() / (din * dout);
                    let mut k = Mat::zeros(dout, din);
                    for p in 0..da {
                        for q in 0..db {
                            k[(ob + q, oa + p)] = block.intertwiner[(p * db + q, s)];
                        }
                    }
                    for q in 0..db {
                        cols.push(((0..da).map(|p| (oa + p, block.intertwiner[(p * db + q, s)])).collect(), ob + q));
                        coeff_of.push(idx);
                    }
                    let k = spec.rho_out.q().transpose().mul_unchecked(&k).mul_unchecked(spec.rho_in.q());
                    rows.extend(k.vec_col_major());
                }
            }
        }
    }
    let n = rows.len() / (din * dout).max(1);
    let t = cols.len();
    let mut spread_aligned = Mat::zeros(din, t);
    let mut gather_aligned = Mat::zeros(t, dout);
    for (c, (entries, o)) in cols.iter().enumerate() {
        for &(i, v) in entries {
            spread_aligned[(i, c)] = v;
        }
        gather_aligned[(c, *o)] = 1.0;
    }
    let to_tensor = |m: Mat<f64>| Tensor::from_vec(m.rows(), m.cols(), m.into_vec()).expect("same size");
    let spread = to_tensor(spec.rho_in.q().transpose().mul_unchecked(&spread_aligned));
    let gather = to_tensor(gather_aligned.mul_unchecked(spec.rho_out.q()));
    Ok(Head { targets, head: Tensor::from_vec(n, din * dout, rows)?, spread, coeff_of, gather })
}

/// Kernel sampled on a grid; `data` is row-major over
/// `(ix, iy, iz, out, in)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct KernelGrid {
    #[serde(rename = "K")]
    pub k: usize,
    pub extent: f64,
    pub d_out: usize,
    pub d_in: usize,
    pub data: Vec<f64>,
}

impl KernelGrid {
    pub fn cell(&self, ix: usize, iy: usize, iz: usize) -> Mat<f64> {
        let n = self.d_out * self.d_in;
        let start = ((ix * self.k + iy) * self.k + iz) * n;
        Mat::from_vec(self.d_out, self.d_in, self.data[start..start + n].to_vec()).expect("cell size")
    }
}
