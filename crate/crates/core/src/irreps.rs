//! Real irreducible representations of the supported groups.

use std::fmt;

use crate::error::{Error, Result};
use crate::groups::{cyclic_angle, GroupElement, GroupId, Params};
use crate::harmonics::{harmonic_action, MAX_INTERNAL_DEGREE};
use crate::linalg::{rot2, Mat};
use crate::scalar::Real;

/// Label of an irrep within its group: a frequency (or degree) and a
/// parity bit. The parity bit is the reflection sign for `o2`/`dn`
/// one-dimensional irreps, the inversion parity for `o3`, and the sign
/// irrep of the order-2 groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IrrepId {
    pub freq: u32,
    pub odd: bool,
}

impl IrrepId {
    pub const TRIVIAL: IrrepId = IrrepId { freq: 0, odd: false };

    pub fn new(freq: u32, odd: bool) -> Self {
        Self { freq, odd }
    }

    pub fn is_trivial(self) -> bool {
        self == Self::TRIVIAL
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Irrep<T> {
    pub group: GroupId,
    pub id: IrrepId,
    pub dim: usize,
    /// Basis of the matrices commuting with every `evaluate(g)`.
    pub endo_basis: Vec<Mat<T>>,
}

/// Dimension of the irrep `id` of `group`, or `None` if no such irrep exists.
pub fn irrep_dim(group: GroupId, id: IrrepId) -> Option<usize> {
    let IrrepId { freq: k, odd } = id;
    match group {
        GroupId::Trivial => (k == 0 && !odd).then_some(1),
        GroupId::So2 => (!odd).then_some(if k == 0 { 1 } else { 2 }),
        GroupId::O2 => match (k, odd) {
            (0, _) => Some(1),
            (_, false) => Some(2),
            _ => None,
        },
        GroupId::Cn(n) => {
            if odd || 2 * k > n {
                None
            } else if k == 0 || 2 * k == n {
                Some(1)
            } else {
                Some(2)
            }
        }
        GroupId::Dn(n) => {
            if 2 * k > n {
                None
            } else if k == 0 || 2 * k == n {
                Some(1)
            } else if !odd {
                Some(2)
            } else {
                None
            }
        }
        GroupId::So3 => (!odd).then_some(2 * k as usize + 1),
        GroupId::O3 => Some(2 * k as usize + 1),
        GroupId::MirrorX | GroupId::Inversion | GroupId::FlipX => (k == 0).then_some(1),
    }
}

/// Whether the irrep is of complex type (two-dimensional commutant).
fn is_complex_type(group: GroupId, id: IrrepId) -> bool {
    match group {
        GroupId::So2 => id.freq >= 1,
        GroupId::Cn(n) => id.freq >= 1 && 2 * id.freq != n,
        _ => false,
    }
}

impl<T: Real> Irrep<T> {
    pub fn new(group: GroupId, id: IrrepId) -> Result<Self> {
        let dim = irrep_dim(group, id).ok_or_else(|| {
            Error::ty(format!("{group} has no irrep {}", irrep_label(group, id)))
        })?;
        let mut endo_basis = vec![Mat::identity(dim)];
        if is_complex_type(group, id) {
            endo_basis.push(Mat::from_f64_rows(&[[0.0, -1.0], [1.0, 0.0]]));
        }
        Ok(Self { group, id, dim, endo_basis })
    }

    pub fn label(&self) -> String {
        irrep_label(self.group, self.id)
    }

    pub fn endo_dim(&self) -> usize {
        self.endo_basis.len()
    }

    pub fn evaluate(&self, g: &GroupElement<T>) -> Result<Mat<T>> {
        Error::check_group(self.group, g.group())?;
        let IrrepId { freq: k, odd } = self.id;
        let kf = T::c(f64::from(k));
        let sign = |neg: bool| Mat::from_rows(&[[if neg { -T::one() } else { T::one() }]]);
        let flip2 = Mat::<T>::from_f64_rows(&[[1.0, 0.0], [0.0, -1.0]]);
        let m = match *g.params() {
            Params::Identity => Mat::identity(1),
            Params::Angle(theta) => {
                if k == 0 {
                    Mat::identity(1)
                } else {
                    rot2(kf * theta)
                }
            }
            Params::AngleReflect { theta, reflect } => {
                if k == 0 {
                    sign(odd && reflect)
                } else if reflect {
                    rot2(kf * theta).mul_unchecked(&flip2)
                } else {
                    rot2(kf * theta)
                }
            }
            Params::Cyclic { i } => {
                let GroupId::Cn(n) = self.group else { unreachable!() };
                if k == 0 {
                    Mat::identity(1)
                } else if 2 * k == n {
                    sign(i % 2 == 1)
                } else {
                    rot2(cyclic_angle(n, k * i))
                }
            }
            Params::Dihedral { i, reflect } => {
                let GroupId::Dn(n) = self.group else { unreachable!() };
                if k == 0 {
                    sign(odd && reflect)
                } else if 2 * k == n {
                    sign((i % 2 == 1) ^ (odd && reflect))
                } else if reflect {
                    rot2(cyclic_angle(n, k * i)).mul_unchecked(&flip2)
                } else {
                    rot2(cyclic_angle(n, k * i))
                }
            }
            Params::Rotation(_) => wigner_d(k, g)?,
            Params::RotoInversion { inverted, .. } => {
                let d = wigner_d(k, g)?;
                if inverted && odd {
                    d.scale(-T::one())
                } else {
                    d
                }
            }
            Params::Flip(b) => sign(odd && b),
        };
        Ok(m)
    }
}

/// Real Wigner-D matrix of degree `l` at the rotation part of `g`.
fn wigner_d<T: Real>(l: u32, g: &GroupElement<T>) -> Result<Mat<T>> {
    if l > MAX_INTERNAL_DEGREE {
        return Err(Error::UnsupportedDegree { degree: l, max: MAX_INTERNAL_DEGREE });
    }
    let det = g.det();
    let r = g.matrix().map(|row| row.map(|x| x * det.signum()));
    harmonic_action(l, &r)
}

/// All irreps with frequency (or degree) at most `cap`, trivial first, then
/// ascending frequency, then even before odd.
pub fn list_irreps<T: Real>(group: GroupId, cap: u32) -> Vec<Irrep<T>> {
    let max_freq = match group {
        GroupId::Cn(n) | GroupId::Dn(n) => cap.min(n / 2),
        GroupId::Trivial | GroupId::MirrorX | GroupId::Inversion | GroupId::FlipX => 0,
        _ => cap,
    };
    let mut out = Vec::new();
    for freq in 0..=max_freq {
        for odd in [false, true] {
            if let Ok(irrep) = Irrep::new(group, IrrepId { freq, odd }) {
                out.push(irrep);
            }
        }
    }
    out
}

/// Text label of an irrep, e.g. `k1`, `k0_odd`, `l2`, `l1_odd`, `even`.
pub fn irrep_label(group: GroupId, id: IrrepId) -> String {
    let IrrepId { freq, odd } = id;
    match group {
        GroupId::So3 => format!("l{freq}"),
        GroupId::O3 => format!("l{freq}_{}", if odd { "odd" } else { "even" }),
        GroupId::MirrorX | GroupId::Inversion | GroupId::FlipX => {
            if odd { "odd" } else { "even" }.to_string()
        }
        _ => {
            if odd {
                format!("k{freq}_odd")
            } else {
                format!("k{freq}")
            }
        }
    }
}

pub fn parse_irrep_label(group: GroupId, s: &str) -> Result<IrrepId> {
    let s = s.trim();
    let bad = || Error::parse(format!("`{s}` is not an irrep label of {group}"));
    let id = match group {
        GroupId::MirrorX | GroupId::Inversion | GroupId::FlipX => match s {
            "even" | "k0" | "k0_even" => IrrepId::new(0, false),
            "odd" | "k0_odd" => IrrepId::new(0, true),
            _ => return Err(bad()),
        },
        _ => {
            let prefix = if matches!(group, GroupId::So3 | GroupId::O3) { 'l' } else { 'k' };
            let rest = s.strip_prefix(prefix).ok_or_else(bad)?;
            let (num, odd) = match rest.split_once('_') {
                Some((n, "odd")) => (n, Some(true)),
                Some((n, "even")) => (n, Some(false)),
                Some(_) => return Err(bad()),
                None => (rest, None),
            };
            let freq: u32 = num.parse().map_err(|_| bad())?;
            if group == GroupId::O3 && odd.is_none() {
                return Err(Error::parse(format!("o3 irrep `{s}` needs an `_even` or `_odd` suffix")));
            }
            IrrepId::new(freq, odd.unwrap_or(false))
        }
    };
    if irrep_dim(group, id).is_none() {
        return Err(bad());
    }
    Ok(id)
}

impl fmt::Display for IrrepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.freq, if self.odd { "odd" } else { "even" })
    }
}
