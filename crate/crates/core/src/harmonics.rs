//! Real solid harmonics `Y_l : R³ → R^{2l+1}` and the real Wigner-D
//! matrices they induce.
//!
//! Degrees up to [`MAX_DEGREE`] use fixed Cartesian coefficient tables and
//! are the only ones exposed as features. Higher degrees (up to
//! [`MAX_INTERNAL_DEGREE`]) come from the standard solid-harmonic recurrence
//! and are used only to identify Clebsch-Gordan targets.
//!
//! Normalization: `‖Y_l(x)‖ = ‖x‖^l`, so every `D_l(R)` is orthogonal.
//! Components are ordered by `m = -l..=l`, except degree 1 which is `(x, y, z)`.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::groups::Matrix3;
use crate::linalg::{spd_inverse, sym_eigen, Mat};
use crate::scalar::Real;

pub const MAX_DEGREE: u32 = 3;
pub const MAX_INTERNAL_DEGREE: u32 = 6;

/// Evaluate `Y_l(x)` for `l <= MAX_DEGREE` from the coefficient tables.
pub fn solid_harmonic<T: Real>(l: u32, x: [T; 3]) -> Result<Vec<T>> {
    let [x, y, z] = x;
    let c = T::c;
    let v = match l {
        0 => vec![T::one()],
        1 => vec![x, y, z],
        2 => {
            let s3 = c(3f64.sqrt());
            vec![
                s3 * x * y,
                s3 * y * z,
                z * z - c(0.5) * (x * x + y * y),
                s3 * x * z,
                c(0.5) * s3 * (x * x - y * y),
            ]
        }
        3 => {
            let a = c((5.0f64 / 8.0).sqrt());
            let b = c(15f64.sqrt());
            let d = c((3.0f64 / 8.0).sqrt());
            let rho = x * x + y * y;
            vec![
                a * y * (c(3.0) * x * x - y * y),
                b * x * y * z,
                d * y * (c(4.0) * z * z - rho),
                c(0.5) * z * (c(2.0) * z * z - c(3.0) * rho),
                d * x * (c(4.0) * z * z - rho),
                c(0.5) * b * z * (x * x - y * y),
                a * x * (x * x - c(3.0) * y * y),
            ]
        }
        _ => return Err(Error::UnsupportedDegree { degree: l, max: MAX_DEGREE }),
    };
    Ok(v)
}

/// Solid harmonics of every degree `0..=l_max` by recurrence, each ordered
/// `m = -l..=l` (degree 1 comes out as `(y, z, x)` here).
pub fn solid_harmonics_recurrence<T: Real>(l_max: u32, p: [T; 3]) -> Vec<Vec<T>> {
    let [x, y, z] = p;
    let r2 = x * x + y * y + z * z;
    let mut out: Vec<Vec<T>> = vec![vec![T::one()]];
    for l in 0..l_max as usize {
        let lf = l as f64;
        let prev = &out[l];
        let mut next = vec![T::zero(); 2 * l + 3];
        let at = |v: &Vec<T>, deg: usize, m: i64| -> T {
            if m.unsigned_abs() as usize > deg {
                T::zero()
            } else {
                v[(m + deg as i64) as usize]
            }
        };
        let li = l as i64;
        for m in -li..=li {
            let a = T::c((2.0 * lf + 1.0) * 1.0) * z * at(prev, l, m);
            let b = if l >= 1 {
                T::c((((li + m) * (li - m)) as f64).sqrt()) * r2 * at(&out[l - 1], l - 1, m)
            } else {
                T::zero()
            };
            let denom = T::c((((li + m + 1) * (li - m + 1)) as f64).sqrt());
            next[(m + li + 1) as usize] = (a - b) / denom;
        }
        let delta = if l == 0 { 2.0 } else { 1.0 };
        let f = T::c((delta * (2.0 * lf + 1.0) / (2.0 * lf + 2.0)).sqrt());
        let s_ll = at(prev, l, li);
        let s_lml = if l == 0 { T::zero() } else { at(prev, l, -li) };
        next[2 * l + 2] = f * (x * s_ll - y * s_lml);
        next[0] = f * (y * s_ll + x * s_lml);
        out.push(next);
    }
    out
}

/// `Y_l(x)` for any degree up to [`MAX_INTERNAL_DEGREE`], using the
/// tables where available.
pub fn solid_harmonic_internal<T: Real>(l: u32, x: [T; 3]) -> Result<Vec<T>> {
    if l <= MAX_DEGREE {
        return solid_harmonic(l, x);
    }
    if l > MAX_INTERNAL_DEGREE {
        return Err(Error::UnsupportedDegree { degree: l, max: MAX_INTERNAL_DEGREE });
    }
    Ok(solid_harmonics_recurrence(l, x).pop().expect("non-empty"))
}

/// Concatenated `Y_0(x) ⊕ … ⊕ Y_L(x)`.
pub fn harmonic_embed<T: Real>(x: [T; 3], degree: u32) -> Result<Vec<T>> {
    if degree > MAX_DEGREE {
        return Err(Error::UnsupportedDegree { degree, max: MAX_DEGREE });
    }
    let mut out = Vec::with_capacity(((degree + 1) * (degree + 1)) as usize);
    for l in 0..=degree {
        out.extend(solid_harmonic(l, x)?);
    }
    Ok(out)
}

pub fn embed_dim(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

/// Least-squares table for one degree: sample points and the right
/// pseudo-inverse of their harmonic matrix.
struct LstsqTable {
    points: Vec<[f64; 3]>,
    /// `M × (2l+1)`, with `D = Y(R·P)·pinv`.
    pinv: Mat<f64>,
}

fn tables() -> &'static Vec<LstsqTable> {
    static TABLES: OnceLock<Vec<LstsqTable>> = OnceLock::new();
    TABLES.get_or_init(|| {
        (0..=MAX_INTERNAL_DEGREE)
            .map(|l| build_table(l).expect("harmonic point set is well conditioned"))
            .collect()
    })
}

fn build_table(l: u32) -> Result<LstsqTable> {
    let dim = 2 * l as usize + 1;
    let n_points = 2 * dim;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + u64::from(l));
    let points: Vec<[f64; 3]> = (0..n_points)
        .map(|_| {
            let v: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(&mut rng));
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.map(|a| a / n)
        })
        .collect();
    let mut yp = Mat::<f64>::zeros(dim, n_points);
    for (j, p) in points.iter().enumerate() {
        yp.set_col(j, &solid_harmonic_internal(l, *p)?);
    }
    let gram = yp.mul_unchecked(&yp.transpose());
    let (vals, _) = sym_eigen(&gram)?;
    let smallest_sv = vals[0].max(0.0).sqrt();
    if smallest_sv <= 1e-6 {
        return Err(Error::Numeric(format!(
            "degree-{l} harmonic point set is ill conditioned (σ_min = {smallest_sv:e})"
        )));
    }
    let pinv = yp.transpose().mul_unchecked(&spd_inverse(&gram)?);
    Ok(LstsqTable { points, pinv })
}

/// Smallest singular value of the stored degree-`l` harmonic point matrix.
pub fn point_set_conditioning(l: u32) -> Result<f64> {
    let t = tables()
        .get(l as usize)
        .ok_or(Error::UnsupportedDegree { degree: l, max: MAX_INTERNAL_DEGREE })?;
    let dim = 2 * l as usize + 1;
    let mut yp = Mat::<f64>::zeros(dim, t.points.len());
    for (j, p) in t.points.iter().enumerate() {
        yp.set_col(j, &solid_harmonic_internal(l, *p)?);
    }
    let (vals, _) = sym_eigen(&yp.mul_unchecked(&yp.transpose()))?;
    Ok(vals[0].max(0.0).sqrt())
}

/// The matrix `D` with `Y_l(M·x) = D·Y_l(x)` for an orthogonal `M`.
///
/// For a rotation this is the real Wigner-D matrix; for an improper `M`
/// it equals `det(M)^l · D_l(det(M)·M)`.
pub fn harmonic_action<T: Real>(l: u32, m: &Matrix3<T>) -> Result<Mat<T>> {
    if l == 0 {
        return Ok(Mat::identity(1));
    }
    let t = tables()
        .get(l as usize)
        .ok_or(Error::UnsupportedDegree { degree: l, max: MAX_INTERNAL_DEGREE })?;
    let dim = 2 * l as usize + 1;
    let mut yr = Mat::<T>::zeros(dim, t.points.len());
    for (j, p) in t.points.iter().enumerate() {
        let p = p.map(T::c);
        let rp = [0, 1, 2].map(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2]);
        yr.set_col(j, &solid_harmonic_internal(l, rp)?);
    }
    Ok(yr.mul_unchecked(&t.pinv.cast()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{sample, GroupElement, GroupId};
    use rand::Rng;

    fn rand_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
        [0; 3].map(|_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn tables_match_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = rand_point(&mut rng);
            let rec = solid_harmonics_recurrence(3, p);
            for l in 0..=3u32 {
                let mut table = solid_harmonic(l, p).unwrap();
                if l == 1 {
                    // recurrence order is (y, z, x)
                    table = vec![table[1], table[2], table[0]];
                }
                for (a, b) in table.iter().zip(&rec[l as usize]) {
                    assert!((a - b).abs() < 1e-12, "l={l}");
                }
            }
        }
    }

    #[test]
    fn norm_is_radius_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = rand_point(&mut rng);
            let r = p.iter().map(|a| a * a).sum::<f64>().sqrt();
            for l in 0..=MAX_INTERNAL_DEGREE {
                let y = solid_harmonic_internal(l, p).unwrap();
                let n = y.iter().map(|a| a * a).sum::<f64>().sqrt();
                assert!((n - r.powi(l as i32)).abs() < 1e-10 * r.powi(l as i32).max(1.0));
            }
        }
    }

    #[test]
    fn embed_at_origin_keeps_only_degree_zero() {
        let e = harmonic_embed([0.0f64; 3], 2).unwrap();
        assert_eq!(e, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(solid_harmonic(1, [1.0f64, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(matches!(harmonic_embed([0.0f64; 3], 4), Err(Error::UnsupportedDegree { .. })));
    }

    #[test]
    fn homogeneity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = rand_point(&mut rng);
            for l in 0..=3u32 {
                let base = solid_harmonic(l, p).unwrap();
                for lam in [0.0, -1.0, 2.0] {
                    let scaled = solid_harmonic(l, p.map(|a| lam * a)).unwrap();
                    let f = f64::powi(lam, l as i32);
                    for (a, b) in scaled.iter().zip(&base) {
                        assert!((a - f * b).abs() <= 1e-14 * (1.0 + b.abs()) * f.abs().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn wigner_d_degree_one_is_the_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let g: GroupElement<f64> = sample(GroupId::So3, &mut rng);
            let d = harmonic_action(1, g.matrix()).unwrap();
            let r = Mat::from_rows(g.matrix());
            assert!(d.max_abs_diff(&r) < 1e-12);
        }
    }

    #[test]
    fn wigner_d_is_orthogonal_and_steers_harmonics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let g: GroupElement<f64> = sample(GroupId::O3, &mut rng);
            let x = rand_point(&mut rng);
            for l in 0..=MAX_INTERNAL_DEGREE {
                let d = harmonic_action(l, g.matrix()).unwrap();
                assert!(d.orthogonality_error() < 1e-9, "l={l}");
                let lhs = solid_harmonic_internal(l, g.act(x)).unwrap();
                let rhs = d.matvec(&solid_harmonic_internal(l, x).unwrap());
                for (a, b) in lhs.iter().zip(&rhs) {
                    assert!((a - b).abs() < 1e-9 * 10f64.powi(l as i32));
                }
            }
        }
    }

    #[test]
    fn point_sets_are_well_conditioned() {
        for l in 0..=MAX_INTERNAL_DEGREE {
            assert!(point_set_conditioning(l).unwrap() > 1e-6);
        }
    }
}
