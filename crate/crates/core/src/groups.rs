//! Compact subgroups of O(3) and their standard action on R³.
//!
//! Planar groups (`so2`, `o2`, `cn`, `dn`) rotate about the Z axis; the
//! reflection of `o2`/`dn` mirrors across the XZ plane (`y ↦ -y`).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::{wrap_angle, Real};

pub type Matrix3<T> = [[T; 3]; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupId {
    Trivial,
    So2,
    O2,
    Cn(u32),
    Dn(u32),
    So3,
    O3,
    MirrorX,
    Inversion,
    FlipX,
}

impl GroupId {
    pub fn is_finite(self) -> bool {
        !matches!(self, GroupId::So2 | GroupId::O2 | GroupId::So3 | GroupId::O3)
    }

    /// Number of elements of a finite group.
    pub fn order(self) -> Option<usize> {
        match self {
            GroupId::Trivial => Some(1),
            GroupId::Cn(n) => Some(n as usize),
            GroupId::Dn(n) => Some(2 * n as usize),
            GroupId::MirrorX | GroupId::Inversion | GroupId::FlipX => Some(2),
            _ => None,
        }
    }

    /// All groups the library supports, with `cn`/`dn` at order 4.
    pub fn catalog() -> Vec<GroupId> {
        vec![
            GroupId::Trivial,
            GroupId::Cn(4),
            GroupId::Dn(4),
            GroupId::So2,
            GroupId::O2,
            GroupId::MirrorX,
            GroupId::Inversion,
            GroupId::FlipX,
            GroupId::So3,
            GroupId::O3,
        ]
    }

    /// Enumerate all elements of a finite group, in a fixed order.
    pub fn elements<T: Real>(self) -> Option<Vec<GroupElement<T>>> {
        let elems = match self {
            GroupId::Trivial => vec![GroupElement::identity(self)],
            GroupId::Cn(n) => (0..n).map(|i| GroupElement::cyclic(n, i)).collect(),
            GroupId::Dn(n) => (0..n)
                .flat_map(|i| [false, true].map(|r| GroupElement::dihedral(n, i, r)))
                .collect(),
            GroupId::MirrorX | GroupId::Inversion | GroupId::FlipX => {
                vec![GroupElement::identity(self), GroupElement::flip(self, true).expect("order-2")]
            }
            _ => return None,
        };
        Some(elems)
    }

    fn validate(self) -> Result<Self> {
        match self {
            GroupId::Cn(0) | GroupId::Dn(0) => Err(Error::parse("cn/dn need N >= 1")),
            g => Ok(g),
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupId::Trivial => write!(f, "trivial"),
            GroupId::So2 => write!(f, "so2"),
            GroupId::O2 => write!(f, "o2"),
            GroupId::Cn(n) => write!(f, "cn:{n}"),
            GroupId::Dn(n) => write!(f, "dn:{n}"),
            GroupId::So3 => write!(f, "so3"),
            GroupId::O3 => write!(f, "o3"),
            GroupId::MirrorX => write!(f, "mirror_x"),
            GroupId::Inversion => write!(f, "inversion"),
            GroupId::FlipX => write!(f, "flip_x"),
        }
    }
}

impl FromStr for GroupId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let g = match s {
            "trivial" => GroupId::Trivial,
            "so2" => GroupId::So2,
            "o2" => GroupId::O2,
            "so3" => GroupId::So3,
            "o3" => GroupId::O3,
            "mirror_x" => GroupId::MirrorX,
            "inversion" => GroupId::Inversion,
            "flip_x" => GroupId::FlipX,
            _ => {
                let (name, n) = s
                    .split_once(':')
                    .ok_or_else(|| Error::parse(format!("unknown group `{s}`")))?;
                let n: u32 =
                    n.parse().map_err(|_| Error::parse(format!("bad group order in `{s}`")))?;
                match name {
                    "cn" => GroupId::Cn(n),
                    "dn" => GroupId::Dn(n),
                    _ => return Err(Error::parse(format!("unknown group `{s}`"))),
                }
            }
        };
        g.validate()
    }
}

impl Serialize for GroupId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GroupId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Unit quaternion `[w, x, y, z]` kept with `w >= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat<T>(pub [T; 4]);

impl<T: Real> Quat<T> {
    pub fn identity() -> Self {
        Quat([T::one(), T::zero(), T::zero(), T::zero()])
    }

    pub fn canonical(self) -> Self {
        let n = self.0.iter().map(|&x| x * x).sum::<T>().sqrt();
        let mut q = self.0.map(|x| x / n);
        if q[0] < T::zero() {
            q = q.map(|x| -x);
        }
        Quat(q)
    }

    pub fn from_axis_angle(axis: [T; 3], angle: T) -> Self {
        let n = axis.iter().map(|&x| x * x).sum::<T>().sqrt();
        let (s, c) = (angle / T::c(2.0)).sin_cos();
        Quat([c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n]).canonical()
    }

    pub fn mul(self, o: Self) -> Self {
        let [a1, b1, c1, d1] = self.0;
        let [a2, b2, c2, d2] = o.0;
        Quat([
            a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
            a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
            a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
            a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
        ])
        .canonical()
    }

    pub fn conj(self) -> Self {
        let [w, x, y, z] = self.0;
        Quat([w, -x, -y, -z])
    }

    pub fn to_matrix(self) -> Matrix3<T> {
        let [w, x, y, z] = self.0;
        let two = T::c(2.0);
        let one = T::one();
        [
            [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
            [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
            [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
        ]
    }
}

/// Canonical parameters of a group element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Params<T> {
    Identity,
    /// Rotation about Z by an angle in `[0, 2π)`.
    Angle(T),
    /// Rotation about Z after an optional mirror `y ↦ -y`.
    AngleReflect { theta: T, reflect: bool },
    /// `i`-th power of the rotation by `2π/N`.
    Cyclic { i: u32 },
    Dihedral { i: u32, reflect: bool },
    Rotation(Quat<T>),
    /// `parity·R(q)`; `inverted` means parity −1.
    RotoInversion { q: Quat<T>, inverted: bool },
    /// Non-identity element of an order-2 group when `true`.
    Flip(bool),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement<T> {
    group: GroupId,
    params: Params<T>,
    matrix: Matrix3<T>,
}

fn rot_z<T: Real>(theta: T) -> Matrix3<T> {
    let (s, c) = theta.sin_cos();
    let (o, z) = (T::one(), T::zero());
    [[c, -s, z], [s, c, z], [z, z, o]]
}

fn mat3_mul<T: Real>(a: &Matrix3<T>, b: &Matrix3<T>) -> Matrix3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn diag3<T: Real>(d: [f64; 3]) -> Matrix3<T> {
    let mut m = [[T::zero(); 3]; 3];
    for i in 0..3 {
        m[i][i] = T::c(d[i]);
    }
    m
}

fn mirror_y<T: Real>() -> Matrix3<T> {
    diag3([1.0, -1.0, 1.0])
}

pub(crate) fn cyclic_angle<T: Real>(n: u32, i: u32) -> T {
    T::two_pi() * T::c(f64::from(i % n)) / T::c(f64::from(n))
}

impl<T: Real> GroupElement<T> {
    pub fn identity(group: GroupId) -> Self {
        let params = match group {
            GroupId::Trivial => Params::Identity,
            GroupId::So2 => Params::Angle(T::zero()),
            GroupId::O2 => Params::AngleReflect { theta: T::zero(), reflect: false },
            GroupId::Cn(_) => Params::Cyclic { i: 0 },
            GroupId::Dn(_) => Params::Dihedral { i: 0, reflect: false },
            GroupId::So3 => Params::Rotation(Quat::identity()),
            GroupId::O3 => Params::RotoInversion { q: Quat::identity(), inverted: false },
            GroupId::MirrorX | GroupId::Inversion | GroupId::FlipX => Params::Flip(false),
        };
        Self::from_params(group, params).expect("identity parameters are valid")
    }

    /// Build an element from parameters, checking they belong to `group`.
    pub fn from_params(group: GroupId, params: Params<T>) -> Result<Self> {
        let matrix = match (group, params) {
            (GroupId::Trivial, Params::Identity) => diag3([1.0; 3]),
            (GroupId::So2, Params::Angle(t)) => rot_z(t),
            (GroupId::O2, Params::AngleReflect { theta, reflect }) => {
                let r = rot_z(theta);
                if reflect {
                    mat3_mul(&r, &mirror_y())
                } else {
                    r
                }
            }
            (GroupId::Cn(n), Params::Cyclic { i }) if i < n => rot_z(cyclic_angle(n, i)),
            (GroupId::Dn(n), Params::Dihedral { i, reflect }) if i < n => {
                let r = rot_z(cyclic_angle(n, i));
                if reflect {
                    mat3_mul(&r, &mirror_y())
                } else {
                    r
                }
            }
            (GroupId::So3, Params::Rotation(q)) => q.to_matrix(),
            (GroupId::O3, Params::RotoInversion { q, inverted }) => {
                let m = q.to_matrix();
                if inverted {
                    m.map(|row| row.map(|x| -x))
                } else {
                    m
                }
            }
            (GroupId::MirrorX, Params::Flip(b)) => diag3(if b { [-1.0, 1.0, 1.0] } else { [1.0; 3] }),
            (GroupId::Inversion, Params::Flip(b)) => diag3(if b { [-1.0; 3] } else { [1.0; 3] }),
            (GroupId::FlipX, Params::Flip(b)) => diag3(if b { [1.0, -1.0, -1.0] } else { [1.0; 3] }),
            (g, p) => return Err(Error::ty(format!("parameters {p:?} do not describe an element of {g}"))),
        };
        Ok(Self { group, params, matrix })
    }

    pub fn rotation_z(theta: T) -> Self {
        Self::from_params(GroupId::So2, Params::Angle(wrap_angle(theta))).expect("so2")
    }

    pub fn o2(theta: T, reflect: bool) -> Self {
        Self::from_params(GroupId::O2, Params::AngleReflect { theta: wrap_angle(theta), reflect })
            .expect("o2")
    }

    pub fn cyclic(n: u32, i: u32) -> Self {
        Self::from_params(GroupId::Cn(n), Params::Cyclic { i: i % n }).expect("cn")
    }

    pub fn dihedral(n: u32, i: u32, reflect: bool) -> Self {
        Self::from_params(GroupId::Dn(n), Params::Dihedral { i: i % n, reflect }).expect("dn")
    }

    pub fn rotation(q: Quat<T>) -> Self {
        Self::from_params(GroupId::So3, Params::Rotation(q.canonical())).expect("so3")
    }

    pub fn roto_inversion(q: Quat<T>, inverted: bool) -> Self {
        Self::from_params(GroupId::O3, Params::RotoInversion { q: q.canonical(), inverted })
            .expect("o3")
    }

    pub fn flip(group: GroupId, flipped: bool) -> Result<Self> {
        Self::from_params(group, Params::Flip(flipped))
    }

    pub fn group(&self) -> GroupId {
        self.group
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    /// The standard action on R³.
    pub fn matrix(&self) -> &Matrix3<T> {
        &self.matrix
    }

    pub fn det(&self) -> T {
        let m = &self.matrix;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn act(&self, x: [T; 3]) -> [T; 3] {
        let m = &self.matrix;
        [0, 1, 2].map(|i| m[i][0] * x[0] + m[i][1] * x[1] + m[i][2] * x[2])
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        Error::check_group(self.group, other.group)?;
        let params = match (self.params, other.params) {
            (Params::Identity, Params::Identity) => Params::Identity,
            (Params::Angle(a), Params::Angle(b)) => Params::Angle(wrap_angle(a + b)),
            (
                Params::AngleReflect { theta: a, reflect: ra },
                Params::AngleReflect { theta: b, reflect: rb },
            ) => Params::AngleReflect {
                theta: wrap_angle(if ra { a - b } else { a + b }),
                reflect: ra ^ rb,
            },
            (Params::Cyclic { i: a }, Params::Cyclic { i: b }) => {
                let GroupId::Cn(n) = self.group else { unreachable!() };
                Params::Cyclic { i: (a + b) % n }
            }
            (Params::Dihedral { i: a, reflect: ra }, Params::Dihedral { i: b, reflect: rb }) => {
                let GroupId::Dn(n) = self.group else { unreachable!() };
                let i = if ra { (a + n - b) % n } else { (a + b) % n };
                Params::Dihedral { i, reflect: ra ^ rb }
            }
            (Params::Rotation(a), Params::Rotation(b)) => Params::Rotation(a.mul(b)),
            (
                Params::RotoInversion { q: a, inverted: ia },
                Params::RotoInversion { q: b, inverted: ib },
            ) => Params::RotoInversion { q: a.mul(b), inverted: ia ^ ib },
            (Params::Flip(a), Params::Flip(b)) => Params::Flip(a ^ b),
            _ => return Err(Error::ty("inconsistent element parameters")),
        };
        Self::from_params(self.group, params)
    }

    pub fn inverse(&self) -> Self {
        let params = match self.params {
            Params::Identity => Params::Identity,
            Params::Angle(a) => Params::Angle(wrap_angle(-a)),
            Params::AngleReflect { theta, reflect: true } => Params::AngleReflect { theta, reflect: true },
            Params::AngleReflect { theta, reflect: false } => {
                Params::AngleReflect { theta: wrap_angle(-theta), reflect: false }
            }
            Params::Cyclic { i } => {
                let GroupId::Cn(n) = self.group else { unreachable!() };
                Params::Cyclic { i: (n - i) % n }
            }
            Params::Dihedral { i, reflect: true } => Params::Dihedral { i, reflect: true },
            Params::Dihedral { i, reflect: false } => {
                let GroupId::Dn(n) = self.group else { unreachable!() };
                Params::Dihedral { i: (n - i) % n, reflect: false }
            }
            Params::Rotation(q) => Params::Rotation(q.conj().canonical()),
            Params::RotoInversion { q, inverted } => {
                Params::RotoInversion { q: q.conj().canonical(), inverted }
            }
            Params::Flip(b) => Params::Flip(b),
        };
        Self::from_params(self.group, params).expect("inverse of a valid element")
    }

    /// The same transformation viewed as an element of `so3` or `o3`.
    pub fn embed_in(&self, parent: GroupId) -> Result<GroupElement<T>> {
        let det = self.det();
        let inverted = det < T::zero();
        let proper = self.matrix.map(|row| row.map(|x| x * det.signum()));
        let q = quat_from_rotation(&proper);
        match parent {
            GroupId::O3 => Ok(GroupElement::roto_inversion(q, inverted)),
            GroupId::So3 if !inverted => Ok(GroupElement::rotation(q)),
            _ if parent == self.group => Ok(self.clone()),
            _ => Err(Error::ty(format!("cannot embed an element of {} into {parent}", self.group))),
        }
    }

    /// Max-abs distance between the standard-action matrices.
    pub fn distance(&self, other: &Self) -> T {
        let mut d = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.matrix[i][j] - other.matrix[i][j]).abs());
            }
        }
        d
    }
}

/// Unit quaternion of a proper rotation matrix (Shepperd's method).
pub fn quat_from_rotation<T: Real>(m: &Matrix3<T>) -> Quat<T> {
    let one = T::one();
    let quarter = T::c(0.25);
    let tr = m[0][0] + m[1][1] + m[2][2];
    let q = if tr > m[0][0].max(m[1][1]).max(m[2][2]) {
        let s = (one + tr).sqrt() * T::c(2.0);
        [quarter * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s]
    } else if m[0][0] >= m[1][1] && m[0][0] >= m[2][2] {
        let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::c(2.0);
        [(m[2][1] - m[1][2]) / s, quarter * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s]
    } else if m[1][1] >= m[2][2] {
        let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::c(2.0);
        [(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, quarter * s, (m[1][2] + m[2][1]) / s]
    } else {
        let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::c(2.0);
        [(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, quarter * s]
    };
    Quat(q).canonical()
}

/// Draw an element. Finite groups are sampled uniformly, `so2`/`o2` with a
/// uniform angle (and fair reflection bit), `so3`/`o3` Haar-uniformly through
/// a normalized Gaussian quaternion (and fair parity bit).
pub fn sample<T: Real, R: Rng + ?Sized>(group: GroupId, rng: &mut R) -> GroupElement<T> {
    let angle = |rng: &mut R| T::c(rng.gen_range(0.0..std::f64::consts::TAU));
    let quat = |rng: &mut R| {
        let mut q = [0.0f64; 4];
        loop {
            for x in q.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            if q.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
                break;
            }
        }
        Quat(q.map(T::c)).canonical()
    };
    match group {
        GroupId::Trivial => GroupElement::identity(group),
        GroupId::So2 => GroupElement::rotation_z(angle(rng)),
        GroupId::O2 => {
            let theta = angle(rng);
            GroupElement::o2(theta, rng.gen())
        }
        GroupId::Cn(n) => GroupElement::cyclic(n, rng.gen_range(0..n)),
        GroupId::Dn(n) => {
            let i = rng.gen_range(0..n);
            GroupElement::dihedral(n, i, rng.gen())
        }
        GroupId::So3 => GroupElement::rotation(quat(rng)),
        GroupId::O3 => {
            let q = quat(rng);
            GroupElement::roto_inversion(q, rng.gen())
        }
        GroupId::MirrorX | GroupId::Inversion | GroupId::FlipX => {
            GroupElement::flip(group, rng.gen()).expect("order-2")
        }
    }
}

pub fn sample_seeded<T: Real>(group: GroupId, seed: u64) -> GroupElement<T> {
    sample(group, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Elements used to pin down intertwiner constraints: every element of a
/// finite group, or `n_samples` Haar draws from a fixed seed.
pub fn constraint_elements<T: Real>(group: GroupId, n_samples: usize, seed: u64) -> Vec<GroupElement<T>> {
    if let Some(all) = group.elements() {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples).map(|_| sample(group, &mut rng)).collect()
}
