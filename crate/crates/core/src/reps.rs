//! Representations as direct sums of irreps under an orthogonal change of
//! basis, `rho(g) = Q^T (sum_i psi_i(g)) Q`, and the numerical machinery
//! that finds such decompositions.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::groups::{constraint_elements, sample, GroupElement, GroupId};
use crate::harmonics::harmonic_action;
use crate::irreps::{irrep_dim, irrep_label, list_irreps, parse_irrep_label, Irrep, IrrepId};
use crate::linalg::{sym_eigen, Mat};
use crate::scalar::Real;

/// Haar samples used for continuous groups.
pub const CONSTRAINT_SAMPLES: usize = 30;
/// Seed of the constraint samples.
pub const CONSTRAINT_SEED: u64 = 0x5eed_c6c6;
/// Relative singular-value threshold of the nullspace solve (f64).
pub const NULLSPACE_THRESHOLD: f64 = 1e-8;
/// Required ratio between the smallest discarded and largest kept singular value.
pub const MIN_SPECTRAL_GAP: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Rep<T> {
    group: GroupId,
    irreps: Vec<IrrepId>,
    q: Mat<T>,
}

fn orthogonality_tol<T: Real>() -> T {
    T::c(1e-9).max(T::epsilon() * T::c(1e3))
}

impl<T: Real> Rep<T> {
    pub fn new(group: GroupId, irreps: Vec<IrrepId>, q: Mat<T>) -> Result<Self> {
        let mut dim = 0;
        for &id in &irreps {
            dim += irrep_dim(group, id)
                .ok_or_else(|| Error::ty(format!("{group} has no irrep {}", irrep_label(group, id))))?;
        }
        if q.rows() != dim || q.cols() != dim {
            return Err(Error::dim(format!(
                "change of basis is {}x{} but the irreps sum to dimension {dim}",
                q.rows(),
                q.cols()
            )));
        }
        let err = q.orthogonality_error();
        if err > orthogonality_tol() {
            return Err(Error::Numeric(format!("change of basis is not orthogonal (error {err:e})")));
        }
        Ok(Self { group, irreps, q })
    }

    /// Direct sum of irreps with `Q = I`.
    pub fn aligned(group: GroupId, irreps: Vec<IrrepId>) -> Result<Self> {
        let dim = irreps.iter().map(|&id| irrep_dim(group, id).unwrap_or(0)).sum();
        Self::new(group, irreps, Mat::identity(dim))
    }

    pub fn trivial(group: GroupId, copies: usize) -> Self {
        Self { group, irreps: vec![IrrepId::TRIVIAL; copies], q: Mat::identity(copies) }
    }

    pub fn group(&self) -> GroupId {
        self.group
    }

    pub fn irreps(&self) -> &[IrrepId] {
        &self.irreps
    }

    pub fn q(&self) -> &Mat<T> {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.rows()
    }

    pub fn is_aligned(&self) -> bool {
        self.q == Mat::identity(self.dim())
    }

    pub fn irrep_objects(&self) -> Result<Vec<Irrep<T>>> {
        self.irreps.iter().map(|&id| Irrep::new(self.group, id)).collect()
    }

    /// `(irrep, offset, dim)` for every field in the aligned basis.
    pub fn fields(&self) -> Vec<(IrrepId, usize, usize)> {
        let mut off = 0;
        self.irreps
            .iter()
            .map(|&id| {
                let d = irrep_dim(self.group, id).unwrap_or(0);
                off += d;
                (id, off - d, d)
            })
            .collect()
    }

    /// `sum_i psi_i(g)` without the change of basis.
    pub fn evaluate_aligned(&self, g: &GroupElement<T>) -> Result<Mat<T>> {
        Error::check_group(self.group, g.group())?;
        let blocks = self
            .irrep_objects()?
            .iter()
            .map(|ir| ir.evaluate(g))
            .collect::<Result<Vec<_>>>()?;
        Ok(Mat::block_diag(&blocks))
    }

    pub fn evaluate(&self, g: &GroupElement<T>) -> Result<Mat<T>> {
        let b = self.evaluate_aligned(g)?;
        if self.is_aligned() {
            return Ok(b);
        }
        Ok(self.q.transpose().mul_unchecked(&b).mul_unchecked(&self.q))
    }

    pub fn direct_sum(&self, other: &Self) -> Result<Self> {
        Error::check_group(self.group, other.group)?;
        let mut irreps = self.irreps.clone();
        irreps.extend_from_slice(&other.irreps);
        let q = Mat::block_diag(&[self.q.clone(), other.q.clone()]);
        Ok(Self { group: self.group, irreps, q })
    }

    /// Irrep labels joined with ` + `, e.g. `k0 + k1`.
    pub fn label(&self) -> String {
        if self.irreps.is_empty() {
            return "0".into();
        }
        self.irreps.iter().map(|&id| irrep_label(self.group, id)).collect::<Vec<_>>().join(" + ")
    }

    /// Compact spec string, e.g. `so2:k0+k1`. Drops `Q`.
    pub fn spec(&self) -> String {
        let labels: Vec<_> = self.irreps.iter().map(|&id| irrep_label(self.group, id)).collect();
        format!("{}:{}", self.group, labels.join("+"))
    }

    /// Multiplicity of each irrep.
    pub fn multiplicities(&self) -> BTreeMap<IrrepId, usize> {
        let mut m = BTreeMap::new();
        for &id in &self.irreps {
            *m.entry(id).or_insert(0) += 1;
        }
        m
    }

    /// Parse `group:tok+tok+...` where each token is an irrep label or `std`
    /// (the standard action on R^3, decomposed numerically).
    pub fn parse(spec: &str) -> Result<Self> {
        let (g, body) = spec
            .rsplit_once(':')
            .ok_or_else(|| Error::parse(format!("rep spec `{spec}` must look like group:irrep+irrep")))?;
        let group: GroupId = g.parse()?;
        Self::parse_in(group, body)
    }

    /// Parse the part after the colon for a known group.
    pub fn parse_in(group: GroupId, body: &str) -> Result<Self> {
        let mut rep = Self::aligned(group, Vec::new())?;
        for tok in body.split('+').map(str::trim) {
            if tok.is_empty() {
                return Err(Error::parse(format!("empty irrep token in `{body}`")));
            }
            let part = if tok == "std" {
                standard_rep_uncached(group)?
            } else {
                Self::aligned(group, vec![parse_irrep_label(group, tok)?])?
            };
            rep = rep.direct_sum(&part)?;
        }
        Ok(rep)
    }

    pub fn cast<U: Real>(&self) -> Rep<U> {
        Rep { group: self.group, irreps: self.irreps.clone(), q: self.q.cast() }
    }

    /// Largest entrywise deviation from `f` over the given elements.
    pub fn max_error_against(
        &self,
        f: impl Fn(&GroupElement<T>) -> Result<Mat<T>>,
        elements: &[GroupElement<T>],
    ) -> Result<T> {
        let mut worst = T::zero();
        for g in elements {
            worst = worst.max(self.evaluate(g)?.max_abs_diff(&f(g)?));
        }
        Ok(worst)
    }
}

#[derive(Serialize, Deserialize)]
struct RepJson {
    spec: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<Vec<f64>>,
}

impl Serialize for Rep<f64> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let q = (!self.is_aligned()).then(|| self.q.as_slice().to_vec());
        RepJson { spec: self.spec(), q }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rep<f64> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = RepJson::deserialize(d)?;
        let aligned = Rep::<f64>::parse(&j.spec).map_err(D::Error::custom)?;
        let Some(q) = j.q else { return Ok(aligned) };
        let n = aligned.dim();
        let q = Mat::from_vec(n, n, q).map_err(D::Error::custom)?;
        Rep::new(aligned.group, aligned.irreps, q).map_err(D::Error::custom)
    }
}

fn nullspace_threshold<T: Real>() -> T {
    T::c(NULLSPACE_THRESHOLD).max(T::epsilon() * T::c(100.0))
}

/// Orthonormal (Frobenius) basis of `{M : A_m M = M B_m for all m}` given
/// the two representations evaluated on the same elements.
///
/// Nullspace of the stacked constraints `(B_m ⊗ A_m - I) vec M`, obtained
/// from the eigendecomposition of their Gram matrix. Singular values of
/// near-null directions are re-measured on the constraints themselves so the
/// threshold is not limited by the squared conditioning of the Gram matrix.
pub fn intertwiner_basis_from_samples<T: Real>(a: &[Mat<T>], b: &[Mat<T>]) -> Result<Vec<Mat<T>>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::dim("intertwiner solve needs the same nonzero number of samples on both sides"));
    }
    let (da, db) = (a[0].rows(), b[0].rows());
    let n = da * db;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut gram = Mat::identity(n).scale(T::c(2.0 * a.len() as f64));
    for (am, bm) in a.iter().zip(b) {
        if am.rows() != da || bm.rows() != db || !am.is_square() || !bm.is_square() {
            return Err(Error::dim("constraint samples have inconsistent shapes"));
        }
        // vec(A M B^T) = (B ⊗ A) vec M under column-major vec.
        let k = bm.kron(am);
        for r in 0..n {
            for c in 0..n {
                gram[(r, c)] -= k[(r, c)] + k[(c, r)];
            }
        }
    }
    let (vals, vecs) = sym_eigen(&gram)?;
    // Singular values of the constraint are O(sqrt(m)); floor the scale there
    // so an all-null problem is not judged against rounding noise.
    let m_scale = T::c(a.len() as f64);
    let lam_max = vals.iter().fold(T::zero(), |m, &v| m.max(v)).max(m_scale);
    let residual = |m: &Mat<T>| -> T {
        let mut s = T::zero();
        for (am, bm) in a.iter().zip(b) {
            let d = am.mul_unchecked(m).sub(&m.mul_unchecked(bm));
            s += d.as_slice().iter().map(|&x| x * x).sum::<T>();
        }
        s.sqrt()
    };
    let mut sigma = Vec::with_capacity(n);
    let mut candidates = Vec::with_capacity(n);
    for i in 0..n {
        let m = Mat::unvec_col_major(&vecs.col(i), da, db)?;
        let s = if vals[i] < T::c(1e-6) * lam_max {
            residual(&m)
        } else {
            vals[i].sqrt()
        };
        sigma.push(s);
        candidates.push(m);
    }
    let sigma_max = sigma.iter().fold(T::zero(), |m, &v| m.max(v));
    let tau = nullspace_threshold::<T>() * sigma_max.max(m_scale.sqrt());
    let kept_max = sigma.iter().filter(|&&s| s < tau).fold(T::zero(), |m, &v| m.max(v));
    let disc_min = sigma.iter().filter(|&&s| s >= tau).fold(T::infinity(), |m, &v| m.min(v));
    let gap = T::c(MIN_SPECTRAL_GAP);
    let any_kept = sigma.iter().any(|&s| s < tau);
    if disc_min < gap * tau || (any_kept && disc_min < gap * kept_max) {
        return Err(Error::Instability(format!(
            "no clear spectral gap at the nullspace threshold (smallest discarded singular value {:e}, \
             threshold {:e}); use more samples",
            disc_min.to_f64_lossy(),
            tau.to_f64_lossy()
        )));
    }
    Ok(candidates.into_iter().zip(sigma).filter(|(_, s)| *s < tau).map(|(m, _)| m).collect())
}

/// Intertwiners `M` with `a(g) M = M b(g)`.
pub fn intertwiner_basis<T: Real>(a: &Rep<T>, b: &Rep<T>, n_samples: usize) -> Result<Vec<Mat<T>>> {
    Error::check_group(a.group, b.group)?;
    let elements = constraint_elements::<T>(a.group, n_samples, CONSTRAINT_SEED);
    let ma = elements.iter().map(|g| a.evaluate(g)).collect::<Result<Vec<_>>>()?;
    let mb = elements.iter().map(|g| b.evaluate(g)).collect::<Result<Vec<_>>>()?;
    intertwiner_basis_from_samples(&ma, &mb)
}

/// Isometric embeddings of every copy of each candidate irrep inside the
/// representation sampled as `rho` on `elements`.
///
/// Within one isotypic component the intertwiner space is `multiplicity *
/// endo_dim` dimensional; Gram-Schmidt on the embedding images extracts one
/// isometry per copy.
fn isotypic_embeddings<T: Real>(
    rho: &[Mat<T>],
    elements: &[GroupElement<T>],
    candidates: &[Irrep<T>],
) -> Result<Vec<(IrrepId, Mat<T>)>> {
    let mut out = Vec::new();
    for ir in candidates {
        let psi = elements.iter().map(|g| ir.evaluate(g)).collect::<Result<Vec<_>>>()?;
        let basis = intertwiner_basis_from_samples(rho, &psi)?;
        let mut accepted: Vec<Mat<T>> = Vec::new();
        for m in basis {
            let mut r = m.clone();
            for u in &accepted {
                r = r.sub(&u.mul_unchecked(&u.transpose().mul_unchecked(&m)));
            }
            let norm2 = r.as_slice().iter().map(|&x| x * x).sum::<T>();
            if norm2 < T::c(1e-6) {
                continue;
            }
            let u = r.scale((T::c(ir.dim as f64) / norm2).sqrt());
            let err = u.transpose().mul_unchecked(&u).max_abs_diff(&Mat::identity(ir.dim));
            if err > T::c(1e-6) {
                return Err(Error::Instability(format!(
                    "embedding of {} is not an isometry (error {:e})",
                    ir.label(),
                    err.to_f64_lossy()
                )));
            }
            accepted.push(u);
        }
        out.extend(accepted.into_iter().map(|u| (ir.id, u)));
    }
    Ok(out)
}

fn check_homomorphism<T: Real>(
    group: GroupId,
    rho: &dyn Fn(&GroupElement<T>) -> Result<Mat<T>>,
) -> Result<()> {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(CONSTRAINT_SEED ^ 1);
    let tol = T::c(1e-8).max(T::epsilon().sqrt() * T::c(10.0));
    for _ in 0..5 {
        let g: GroupElement<T> = sample(group, &mut rng);
        let h: GroupElement<T> = sample(group, &mut rng);
        let lhs = rho(&g.compose(&h)?)?;
        let rhs = rho(&g)?.matmul(&rho(&h)?)?;
        let err = lhs.max_abs_diff(&rhs);
        if err > tol {
            return Err(Error::Numeric(format!(
                "input is not a representation (homomorphism error {:e})",
                err.to_f64_lossy()
            )));
        }
    }
    Ok(())
}

/// Decompose the representation `rho` of dimension `dim` into irreps of
/// frequency (or degree) at most `cap`.
pub fn decompose_rep<T: Real>(
    group: GroupId,
    rho: &dyn Fn(&GroupElement<T>) -> Result<Mat<T>>,
    dim: usize,
    cap: u32,
) -> Result<Rep<T>> {
    check_homomorphism(group, rho)?;
    let elements = constraint_elements::<T>(group, CONSTRAINT_SAMPLES, CONSTRAINT_SEED);
    let mats = elements.iter().map(rho).collect::<Result<Vec<_>>>()?;
    if mats.iter().any(|m| m.rows() != dim || m.cols() != dim) {
        return Err(Error::dim(format!("representation does not have dimension {dim}")));
    }
    let found = isotypic_embeddings(&mats, &elements, &list_irreps(group, cap))?;
    let covered: usize = found.iter().map(|(_, u)| u.cols()).sum();
    if covered != dim {
        return Err(Error::IncompleteDecomposition { residual: dim.saturating_sub(covered), dim });
    }
    let irreps = found.iter().map(|(id, _)| *id).collect();
    let q = Mat::vstack(&found.iter().map(|(_, u)| u.transpose()).collect::<Vec<_>>())?;
    Rep::new(group, irreps, orthonormalize_rows(q))
}

/// Snap a nearly orthogonal matrix to orthogonal by one Newton-Schulz step.
fn orthonormalize_rows<T: Real>(q: Mat<T>) -> Mat<T> {
    let n = q.rows();
    let qqt = q.mul_unchecked(&q.transpose());
    let corr = Mat::identity(n).scale(T::c(1.5)).sub(&qqt.scale(T::c(0.5)));
    corr.mul_unchecked(&q)
}

/// Restriction of `rep` to `subgroup`, decomposed into the subgroup's irreps.
pub fn restrict<T: Real>(rep: &Rep<T>, subgroup: GroupId) -> Result<Rep<T>> {
    let parent = rep.group;
    let f = |g: &GroupElement<T>| rep.evaluate(&g.embed_in(parent)?);
    let cap = rep.irreps.iter().map(|id| id.freq).max().unwrap_or(0);
    decompose_rep(subgroup, &f, rep.dim(), cap)
}

/// Standard action on R^3, decomposed into irreps.
pub fn standard_rep_uncached<T: Real>(group: GroupId) -> Result<Rep<T>> {
    match group {
        GroupId::So3 => Rep::aligned(group, vec![IrrepId::new(1, false)]),
        GroupId::O3 => Rep::aligned(group, vec![IrrepId::new(1, true)]),
        _ => {
            let f = |g: &GroupElement<T>| Ok(Mat::from_rows(g.matrix()));
            decompose_rep(group, &f, 3, 1)
        }
    }
}

/// Action of the group on degree-`l` solid harmonics, decomposed into irreps.
pub fn harmonic_rep_uncached<T: Real>(group: GroupId, l: u32) -> Result<Rep<T>> {
    match group {
        GroupId::So3 => Rep::aligned(group, vec![IrrepId::new(l, false)]),
        GroupId::O3 => Rep::aligned(group, vec![IrrepId::new(l, l % 2 == 1)]),
        _ => {
            let f = |g: &GroupElement<T>| harmonic_action(l, g.matrix());
            decompose_rep(group, &f, 2 * l as usize + 1, l)
        }
    }
}

/// One isometric copy of `target` inside `left ⊗ right`.
#[derive(Clone, Debug)]
pub struct CgBlock<T> {
    pub target: IrrepId,
    /// `(d_left d_right) x d_target` isometry intertwining the tensor product
    /// with the target irrep.
    pub intertwiner: Mat<T>,
}

/// Tensor product of two irreps split into irreps. The tensor product is
/// taken with `kron(psi_left, psi_right)`; rows of `q` are the stacked
/// transposed block intertwiners, so `kron = q^T blockdiag(targets) q`.
#[derive(Clone, Debug)]
pub struct CgDecomposition<T> {
    pub group: GroupId,
    pub left: IrrepId,
    pub right: IrrepId,
    pub blocks: Vec<CgBlock<T>>,
    pub q: Mat<T>,
}

impl<T: Real> CgDecomposition<T> {
    pub fn targets(&self) -> Vec<IrrepId> {
        self.blocks.iter().map(|b| b.target).collect()
    }

    pub fn multiplicities(&self) -> BTreeMap<IrrepId, usize> {
        let mut m = BTreeMap::new();
        for b in &self.blocks {
            *m.entry(b.target).or_insert(0) += 1;
        }
        m
    }

    /// The tensor product as a [`Rep`].
    pub fn as_rep(&self) -> Rep<T> {
        Rep { group: self.group, irreps: self.targets(), q: self.q.clone() }
    }

    /// `kron(psi_left(g), psi_right(g))`.
    pub fn tensor_matrix(&self, g: &GroupElement<T>) -> Result<Mat<T>> {
        let a = Irrep::new(self.group, self.left)?.evaluate(g)?;
        let b = Irrep::new(self.group, self.right)?.evaluate(g)?;
        Ok(a.kron(&b))
    }

    /// Max-abs reconstruction error on the given elements.
    pub fn reconstruction_error(&self, elements: &[GroupElement<T>]) -> Result<T> {
        self.as_rep().max_error_against(|g| self.tensor_matrix(g), elements)
    }

    pub fn cast<U: Real>(&self) -> CgDecomposition<U> {
        CgDecomposition {
            group: self.group,
            left: self.left,
            right: self.right,
            blocks: self
                .blocks
                .iter()
                .map(|b| CgBlock { target: b.target, intertwiner: b.intertwiner.cast() })
                .collect(),
            q: self.q.cast(),
        }
    }
}

/// Numerical Clebsch-Gordan decomposition of `left ⊗ right`. Targets are
/// searched up to frequency `left.freq + right.freq`, which covers every
/// constituent for all supported groups.
pub fn decompose_tensor_product<T: Real>(group: GroupId, left: IrrepId, right: IrrepId) -> Result<CgDecomposition<T>> {
    let a = Irrep::<T>::new(group, left)?;
    let b = Irrep::<T>::new(group, right)?;
    let elements = constraint_elements::<T>(group, CONSTRAINT_SAMPLES, CONSTRAINT_SEED);
    let mats = elements
        .iter()
        .map(|g| Ok(a.evaluate(g)?.kron(&b.evaluate(g)?)))
        .collect::<Result<Vec<_>>>()?;
    let candidates = list_irreps::<T>(group, left.freq + right.freq);
    let found = isotypic_embeddings(&mats, &elements, &candidates)?;
    let dim = a.dim * b.dim;
    let covered: usize = found.iter().map(|(_, u)| u.cols()).sum();
    if covered != dim {
        return Err(Error::IncompleteDecomposition { residual: dim.saturating_sub(covered), dim });
    }
    let q = orthonormalize_rows(Mat::vstack(&found.iter().map(|(_, u)| u.transpose()).collect::<Vec<_>>())?);
    let mut blocks = Vec::with_capacity(found.len());
    let mut row = 0;
    for (target, u) in &found {
        let d = u.cols();
        let intertwiner = Mat::from_fn(dim, d, |r, c| q[(row + c, r)]);
        blocks.push(CgBlock { target: *target, intertwiner });
        row += d;
    }
    Ok(CgDecomposition { group, left, right, blocks, q })
}

type Cache<K, V> = OnceLock<Mutex<HashMap<K, V>>>;

fn cached<K: std::hash::Hash + Eq + Clone, V: Clone>(
    cache: &'static Cache<K, V>,
    key: K,
    build: impl FnOnce() -> Result<V>,
) -> Result<V> {
    let table = cache.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = table.lock().expect("cache poisoned").get(&key) {
        return Ok(v.clone());
    }
    let v = build()?;
    table.lock().expect("cache poisoned").entry(key).or_insert(v.clone());
    Ok(v)
}

/// Cached f64 Clebsch-Gordan decomposition.
pub fn cg(group: GroupId, left: IrrepId, right: IrrepId) -> Result<Arc<CgDecomposition<f64>>> {
    static CACHE: Cache<(GroupId, IrrepId, IrrepId), Arc<CgDecomposition<f64>>> = OnceLock::new();
    cached(&CACHE, (group, left, right), || decompose_tensor_product(group, left, right).map(Arc::new))
}

/// Cached f64 standard representation.
pub fn standard_rep(group: GroupId) -> Result<Rep<f64>> {
    static CACHE: Cache<GroupId, Rep<f64>> = OnceLock::new();
    cached(&CACHE, group, || standard_rep_uncached(group))
}

/// Cached f64 harmonic representation of degree `l`.
pub fn harmonic_rep(group: GroupId, l: u32) -> Result<Rep<f64>> {
    static CACHE: Cache<(GroupId, u32), Rep<f64>> = OnceLock::new();
    cached(&CACHE, (group, l), || harmonic_rep_uncached(group, l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::sample_seeded;
    use std::f64::consts::FRAC_PI_2;

    fn id(freq: u32, odd: bool) -> IrrepId {
        IrrepId::new(freq, odd)
    }

    fn fresh(group: GroupId, n: usize, seed: u64) -> Vec<GroupElement<f64>> {
        (0..n as u64).map(|i| sample_seeded(group, seed * 1000 + i)).collect()
    }

    #[test]
    fn parse_and_label() {
        let r = Rep::<f64>::parse("so2:k0+k1+k1").unwrap();
        assert_eq!(r.dim(), 5);
        assert_eq!(r.label(), "k0 + k1 + k1");
        assert_eq!(r.spec(), "so2:k0+k1+k1");
        let r = Rep::<f64>::parse("cn:4:k1+k2").unwrap();
        assert_eq!(r.dim(), 3);
        assert!(Rep::<f64>::parse("o3:l1").is_err());
        assert!(Rep::<f64>::parse("so2:").is_err());
        assert!(Rep::<f64>::parse("k1").is_err());
    }

    #[test]
    fn trivial_sum_is_identity() {
        let r = Rep::<f64>::trivial(GroupId::So3, 2);
        let g = sample_seeded(GroupId::So3, 3);
        assert_eq!(r.evaluate(&g).unwrap(), Mat::identity(2));
    }

    #[test]
    fn standard_rep_matches_matrix() {
        for group in GroupId::catalog() {
            let r = standard_rep(group).unwrap();
            assert_eq!(r.dim(), 3);
            let err = r.max_error_against(|g| Ok(Mat::from_rows(g.matrix())), &fresh(group, 20, 1)).unwrap();
            assert!(err < 1e-9, "{group}: {err:e}");
        }
    }

    #[test]
    fn so2_standard_quarter_turn() {
        let r = standard_rep(GroupId::So2).unwrap();
        assert_eq!(r.irreps(), &[id(0, false), id(1, false)]);
        let g = GroupElement::rotation_z(FRAC_PI_2);
        let want = Mat::from_f64_rows(&[[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(r.evaluate(&g).unwrap().max_abs_diff(&want) < 1e-9);
    }

    #[test]
    fn direct_sum_is_block_diagonal() {
        let a = Rep::<f64>::parse("so3:l0+l1").unwrap();
        let b = Rep::<f64>::parse("so3:l2").unwrap();
        let s = a.direct_sum(&b).unwrap();
        assert_eq!(s.dim(), 9);
        let g = sample_seeded(GroupId::So3, 9);
        let want = Mat::block_diag(&[a.evaluate(&g).unwrap(), b.evaluate(&g).unwrap()]);
        assert!(s.evaluate(&g).unwrap().max_abs_diff(&want) < 1e-14);
        assert!(s.evaluate(&GroupElement::identity(GroupId::So3)).unwrap().max_abs_diff(&Mat::identity(9)) < 1e-12);
        assert!(a.direct_sum(&Rep::parse("so2:k1").unwrap()).is_err());
    }

    #[test]
    fn intertwiner_examples() {
        let t = Rep::<f64>::trivial(GroupId::So2, 1);
        let basis = intertwiner_basis(&t, &t, 30).unwrap();
        assert_eq!(basis.len(), 1);
        assert!((basis[0][(0, 0)].abs() - 1.0).abs() < 1e-12);

        let k1 = Rep::<f64>::parse("so2:k1").unwrap();
        let k2 = Rep::<f64>::parse("so2:k2").unwrap();
        assert!(intertwiner_basis(&k1, &k2, 30).unwrap().is_empty());

        let basis = intertwiner_basis(&k1, &k1, 30).unwrap();
        assert_eq!(basis.len(), 2);
        let i = Mat::<f64>::identity(2);
        let j = Mat::from_f64_rows(&[[0.0, -1.0], [1.0, 0.0]]);
        for target in [i, j] {
            // Projection onto the span must recover the target (norm sqrt 2).
            let mut proj = Mat::zeros(2, 2);
            for m in &basis {
                let c: f64 = m.as_slice().iter().zip(target.as_slice()).map(|(a, b)| a * b).sum();
                proj = proj.add(&m.scale(c));
            }
            assert!(proj.max_abs_diff(&target) < 1e-9);
        }
    }

    #[test]
    fn so3_selection_rule_l1_l1() {
        let d = cg(GroupId::So3, id(1, false), id(1, false)).unwrap();
        assert_eq!(d.targets(), vec![id(0, false), id(1, false), id(2, false)]);
        assert!(d.reconstruction_error(&fresh(GroupId::So3, 20, 2)).unwrap() < 1e-7);
    }

    #[test]
    fn tensor_with_trivial_is_identity_up_to_sign() {
        for group in GroupId::catalog() {
            for ir in list_irreps::<f64>(group, 2) {
                let d = cg(group, ir.id, IrrepId::TRIVIAL).unwrap();
                assert_eq!(d.targets(), vec![ir.id], "{group}");
                let m = &d.blocks[0].intertwiner;
                let sign = m[(0, 0)].signum();
                assert!(m.max_abs_diff(&Mat::identity(ir.dim).scale(sign)) < 1e-8 || ir.endo_dim() == 2);
                // Complex type: identity up to the SO(2) commutant.
                assert!(m.orthogonality_error() < 1e-9);
            }
        }
    }

    #[test]
    fn so2_k1_k1() {
        let d = cg(GroupId::So2, id(1, false), id(1, false)).unwrap();
        assert_eq!(d.targets(), vec![id(0, false), id(0, false), id(2, false)]);
        assert!(d.reconstruction_error(&fresh(GroupId::So2, 20, 3)).unwrap() < 1e-7);
    }

    #[test]
    fn block_intertwines() {
        let d = cg(GroupId::O3, id(1, true), id(2, false)).unwrap();
        for g in fresh(GroupId::O3, 20, 4) {
            let t = d.tensor_matrix(&g).unwrap();
            for b in &d.blocks {
                let psi = Irrep::new(GroupId::O3, b.target).unwrap().evaluate(&g).unwrap();
                let err = t.mul_unchecked(&b.intertwiner).max_abs_diff(&b.intertwiner.mul_unchecked(&psi));
                assert!(err < 1e-7);
            }
        }
        assert!(d.q.orthogonality_error() < 1e-8);
    }

    #[test]
    fn aligned_rep_is_a_fixed_point() {
        let r = Rep::<f64>::parse("o2:k0_odd+k2+k0").unwrap();
        let got = decompose_rep(GroupId::O2, &|g| r.evaluate(g), r.dim(), 3).unwrap();
        assert_eq!(got.multiplicities(), r.multiplicities());
        assert!(got.max_error_against(|g| r.evaluate(g), &fresh(GroupId::O2, 20, 5)).unwrap() < 1e-7);
    }

    #[test]
    fn restriction_to_so2_and_mirror() {
        let v = Rep::<f64>::parse("o3:l1_odd").unwrap();
        let r = restrict(&v, GroupId::So2).unwrap();
        assert_eq!(r.label(), "k0 + k1");
        let pseudo = Rep::<f64>::parse("o3:l1_even+l1_even").unwrap();
        let r = restrict(&pseudo, GroupId::MirrorX).unwrap();
        let m = r.multiplicities();
        assert_eq!(m[&id(0, false)], 2);
        assert_eq!(m[&id(0, true)], 4);
    }

    #[test]
    fn incomplete_decomposition_names_residual() {
        let r = Rep::<f64>::parse("so2:k0+k3").unwrap();
        match decompose_rep(GroupId::So2, &|g| r.evaluate(g), 3, 1) {
            Err(Error::IncompleteDecomposition { residual, dim }) => assert_eq!((residual, dim), (2, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_representation_is_rejected() {
        let f = |g: &GroupElement<f64>| Ok(Mat::from_rows(g.matrix()).scale(2.0));
        assert!(matches!(decompose_rep(GroupId::So2, &f, 3, 1), Err(Error::Numeric(_))));
    }

    #[test]
    fn json_round_trip() {
        let r = standard_rep(GroupId::Dn(4)).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        let back: Rep<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn f32_solve() {
        let d = decompose_tensor_product::<f32>(GroupId::So2, id(1, false), id(2, false)).unwrap();
        assert_eq!(d.targets(), vec![id(1, false), id(3, false)]);
        let g = sample_seeded::<f32>(GroupId::So2, 1);
        assert!(d.reconstruction_error(&[g]).unwrap() < 1e-4);
    }
}
