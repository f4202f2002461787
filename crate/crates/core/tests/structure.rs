use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use steerkit::check::{check_harmonics, check_irreps};
use steerkit::groups::sample;
use steerkit::harmonics::{solid_harmonic, MAX_DEGREE};
use steerkit::irreps::list_irreps;
use steerkit::reps::intertwiner_basis;
use steerkit::{GroupId, Mat, Rep};

fn random_mat(rng: &mut impl Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

#[test]
fn intertwiners_between_irreps_follow_schur() {
    for group in GroupId::catalog() {
        let irreps = list_irreps::<f64>(group, 3);
        for a in &irreps {
            let ra = Rep::aligned(group, vec![a.id]).unwrap();
            for b in &irreps {
                let rb = Rep::aligned(group, vec![b.id]).unwrap();
                let basis = intertwiner_basis(&ra, &rb, 30).unwrap();
                let want = if a.id == b.id { a.endo_dim() } else { 0 };
                assert_eq!(basis.len(), want, "{group}: {} -> {}", a.label(), b.label());
            }
        }
    }
}

#[test]
fn so2_endomorphisms_are_two_dimensional_above_frequency_zero() {
    for ir in list_irreps::<f64>(GroupId::So2, 3) {
        assert_eq!(ir.endo_dim(), if ir.id.freq == 0 { 1 } else { 2 });
    }
    for group in [GroupId::So3, GroupId::O3, GroupId::O2, GroupId::Dn(4)] {
        assert!(list_irreps::<f64>(group, 3).iter().all(|ir| ir.endo_dim() == 1), "{group}");
    }
}

#[test]
fn irreps_are_homomorphisms() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for group in GroupId::catalog() {
        let pairs: Vec<_> = (0..50).map(|_| (sample(group, &mut rng), sample(group, &mut rng))).collect();
        let err = check_irreps(group, &pairs).unwrap();
        assert!(err < 1e-10, "{group}: {err:e}");
    }
}

#[test]
fn harmonics_are_steerable() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for group in GroupId::catalog() {
        let draws: Vec<_> = (0..1000)
            .map(|_| (sample::<f64, _>(group, &mut rng), [(); 3].map(|_| rng.gen_range(-2.0..2.0))))
            .collect();
        let err = check_harmonics(group, &draws).unwrap();
        assert!(err < 1e-9, "{group}: {err:e}");
    }
}

#[test]
fn harmonics_are_homogeneous() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let x: [f64; 3] = [(); 3].map(|_| rng.gen_range(-2.0..2.0));
        for l in 0..=MAX_DEGREE {
            // scaling by a power of two is exact in floating point
            let scaled = solid_harmonic(l, x.map(|c| 2.0 * c)).unwrap();
            let want: Vec<f64> = solid_harmonic(l, x).unwrap().iter().map(|v| v * 2f64.powi(l as i32)).collect();
            assert_eq!(scaled, want);
        }
    }
}

#[test]
fn harmonics_above_max_degree_are_rejected() {
    assert!(solid_harmonic(MAX_DEGREE + 1, [1.0, 0.0, 0.0]).is_err());
}

fn shapes() -> impl Strategy<Value = (usize, usize, usize, usize, u64)> {
    (1usize..6, 1usize..6, 1usize..6, 1usize..6, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn vec_of_product_is_kron_times_vec((m, n, p, q, seed) in shapes()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_mat(&mut rng, m, n);
        let b = random_mat(&mut rng, n, p);
        let c = random_mat(&mut rng, p, q);
        let lhs = a.mul_unchecked(&b).mul_unchecked(&c).vec_col_major();
        let rhs = c.transpose().kron(&a).matvec(&b.vec_col_major());
        let err = lhs.iter().zip(&rhs).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12, "{err:e}");
    }

    #[test]
    fn unvec_inverts_vec((m, n, _p, _q, seed) in shapes()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_mat(&mut rng, m, n);
        prop_assert_eq!(Mat::unvec_col_major(&a.vec_col_major(), m, n).unwrap(), a);
    }
}
