use proptest::prelude::*;
use steerkit::tensor::grad_check;
use steerkit::{Result, Tape, Tensor, Var};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn coords(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

/// Weighted sum so every output entry carries a distinct cotangent.
fn weighted_sum(t: &mut Tape, x: Var) -> Result<Var> {
    let (r, c) = t.value(x).shape();
    let w = t.constant(Tensor::from_fn(r, c, |i, j| 0.3 + 0.7 * ((i * 7 + j * 3) % 5) as f64));
    let y = t.mul(x, w)?;
    t.sum(y)
}

fn check(f: impl Fn(&mut Tape, Var) -> Result<Var>, theta: &[f64]) -> f64 {
    grad_check(f, theta, EPS).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn matmul_grad(theta in coords(12)) {
        let err = check(|t, p| {
            let a = t.slice_cols(p, 0, 6)?;
            let a = t.reshape(a, 2, 3)?;
            let b = t.slice_cols(p, 6, 12)?;
            let b = t.reshape(b, 3, 2)?;
            let c = t.matmul(a, b)?;
            weighted_sum(t, c)
        }, &theta);
        prop_assert!(err < TOL, "{err:e}");
    }

    #[test]
    fn add_mul_scale_grad(theta in coords(7)) {
        let err = check(|t, p| {
            let a = t.slice_cols(p, 0, 3)?;
            let b = t.slice_cols(p, 3, 6)?;
            let s = t.slice_cols(p, 6, 7)?;
            let x = t.mul(a, b)?;
            let y = t.add(x, s)?;
            let z = t.mul(y, s)?;
            let z = t.scale(z, -1.7)?;
            let w = t.sub(z, a)?;
            weighted_sum(t, w)
        }, &theta);
        prop_assert!(err < TOL, "{err:e}");
    }

    #[test]
    fn activation_grads(theta in coords(6)) {
        let err = check(|t, p| {
            let e = t.elu(p)?;
            let s = t.sigmoid(p)?;
            let x = t.exp(p)?;
            let y = t.mul(e, s)?;
            let y = t.add(y, x)?;
            weighted_sum(t, y)
        }, &theta);
        prop_assert!(err < TOL, "{err:e}");
    }

    #[test]
    fn rsqrt_grad(theta in prop::collection::vec(0.2f64..3.0, 5)) {
        let err = check(|t, p| {
            let r = t.rsqrt(p)?;
            weighted_sum(t, r)
        }, &theta);
        prop_assert!(err < TOL, "{err:e}");
    }

    #[test]
    fn concat_reshape_grad(theta in coords(8)) {
        let err = check(|t, p| {
            let a = t.slice_cols(p, 0, 3)?;
            let b = t.slice_cols(p, 3, 8)?;
            let c = t.concat_cols(&[b, a, b])?;
            let c = t.reshape(c, 13, 1)?;
            weighted_sum(t, c)
        }, &theta);
        prop_assert!(err < TOL, "{err:e}");
    }

    #[test]
    fn field_norm_grad(theta in coords(12)) {
        let err = check(|t, p| {
            let x = t.reshape(p, 2, 6)?;
            let n = t.field_norm(x, &[(0, 1), (1, 2), (3, 3)])?;
            weighted_sum(t, n)
        }, &theta);
        prop_assert!(err < TOL, "{err:e}");
    }

    #[test]
    fn scatter_gather_grad(theta in coords(8)) {
        let err = check(|t, p| {
            let x = t.reshape(p, 4, 2)?;
            let g = t.gather_rows(x, &[3, 0, 0, 2, 1, 3])?;
            let s = t.scatter_sum(g, &[0, 2, 2, 1, 0, 0], 3)?;
            let s = t.elu(s)?;
            weighted_sum(t, s)
        }, &theta);
        prop_assert!(err < TOL, "{err:e}");
    }

    #[test]
    fn gather_cols_grad(theta in coords(6)) {
        let err = check(|t, p| {
            let x = t.reshape(p, 2, 3)?;
            let g = t.gather_cols(x, &[2, 0, 2, 1, 1])?;
            let g = t.elu(g)?;
            weighted_sum(t, g)
        }, &theta);
        prop_assert!(err < TOL, "{err:e}");
    }

    #[test]
    fn sigmoid_sum_grad(theta in coords(5)) {
        let err = check(|t, p| {
            let s = t.sigmoid(p)?;
            t.sum(s)
        }, &theta);
        prop_assert!(err < 1e-6, "{err:e}");
    }

    #[test]
    fn matmul_matches_triple_loop(a in coords(9), b in coords(9)) {
        let ta = Tensor::from_vec(3, 3, a.clone()).unwrap();
        let tb = Tensor::from_vec(3, 3, b.clone()).unwrap();
        let c = ta.matmul(&tb).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a[i * 3 + k] * b[k * 3 + j];
                }
                prop_assert!((c.get(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scatter_matches_loop_oracle(
        msgs in coords(10),
        targets in prop::collection::vec(0usize..4, 5),
    ) {
        let mut t = Tape::new();
        let m = t.constant(Tensor::from_vec(5, 2, msgs.clone()).unwrap());
        let s = t.scatter_sum(m, &targets, 4).unwrap();
        for node in 0..4 {
            for c in 0..2 {
                let want: f64 = (0..5).filter(|&e| targets[e] == node).map(|e| msgs[e * 2 + c]).sum();
                prop_assert_eq!(t.value(s).get(node, c), want);
            }
        }
    }
}

#[test]
fn identical_inputs_give_identical_bits() {
    let run = || {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_fn(3, 4, |i, j| (i as f64 * 0.37 - j as f64 * 0.11).sin()));
        let w = t.constant(Tensor::from_fn(4, 2, |i, j| (i + 2 * j) as f64 * 0.1));
        let y = t.matmul(x, w).unwrap();
        let y = t.sigmoid(y).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        (t.value(s).clone(), g.get(x).unwrap().clone())
    };
    assert_eq!(run(), run());
}
