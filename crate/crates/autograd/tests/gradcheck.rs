mod common;

use common::{max_grad_error, random_tensor, rng, spread_tensor};
use sonospine_autograd::{Tape, Tensor, Var};

const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;
const CASES: u64 = 20;

fn mse_head(tape: &mut Tape, out: Var, target: &Tensor) -> Var {
    let t = tape.constant(target.clone());
    tape.mse_loss(out, t).unwrap()
}

#[test]
fn conv2d_matches_finite_differences() {
    let configs = [(1, 1, 0), (3, 1, 1), (3, 2, 1), (5, 1, 0), (7, 2, 3)];
    for seed in 0..CASES {
        let (k, stride, pad) = configs[seed as usize % configs.len()];
        let mut r = rng(seed);
        let x = random_tensor(&mut r, &[2, 2, 7, 6]);
        let w = random_tensor(&mut r, &[3, 2, k, k]);
        let b = random_tensor(&mut r, &[3]);
        let probe = {
            let mut t = Tape::new();
            let (xv, wv, bv) = (t.leaf(x.clone()), t.leaf(w.clone()), t.leaf(b.clone()));
            let o = t.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
            t.value(o).shape().to_vec()
        };
        let target = random_tensor(&mut r, &probe);
        let err = max_grad_error(
            |t, v| {
                let o = t.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap();
                mse_head(t, o, &target)
            },
            &[x, w, b],
            FLOOR,
        );
        assert!(err < TOL, "seed {seed} k{k} s{stride} p{pad}: {err:e}");
    }
}

#[test]
fn maxpool2_matches_finite_differences() {
    for seed in 0..CASES {
        let mut r = rng(100 + seed);
        let x = spread_tensor(&mut r, &[2, 2, 4, 6], 0.01);
        let target = random_tensor(&mut r, &[2, 2, 2, 3]);
        let err = max_grad_error(
            |t, v| {
                let o = t.maxpool2(v[0]).unwrap();
                mse_head(t, o, &target)
            },
            &[x],
            FLOOR,
        );
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn upsample_matches_finite_differences() {
    for seed in 0..CASES {
        let mut r = rng(200 + seed);
        let x = random_tensor(&mut r, &[1, 3, 3, 2]);
        let target = random_tensor(&mut r, &[1, 3, 6, 4]);
        let err = max_grad_error(
            |t, v| {
                let o = t.upsample_nearest2(v[0]).unwrap();
                mse_head(t, o, &target)
            },
            &[x],
            FLOOR,
        );
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn relu_matches_finite_differences() {
    for seed in 0..CASES {
        let mut r = rng(300 + seed);
        let x = spread_tensor(&mut r, &[1, 2, 3, 5], 0.013);
        let target = random_tensor(&mut r, &[1, 2, 3, 5]);
        let err = max_grad_error(
            |t, v| {
                let o = t.relu(v[0]);
                mse_head(t, o, &target)
            },
            &[x],
            FLOOR,
        );
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn add_matches_finite_differences() {
    for seed in 0..CASES {
        let mut r = rng(400 + seed);
        let a = random_tensor(&mut r, &[2, 3, 2, 2]);
        let b = random_tensor(&mut r, &[2, 3, 2, 2]);
        let target = random_tensor(&mut r, &[2, 3, 2, 2]);
        let err = max_grad_error(
            |t, v| {
                let o = t.add(v[0], v[1]).unwrap();
                mse_head(t, o, &target)
            },
            &[a, b],
            FLOOR,
        );
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn mse_matches_finite_differences_in_both_arguments() {
    for seed in 0..CASES {
        let mut r = rng(500 + seed);
        let p = random_tensor(&mut r, &[1, 2, 4, 4]);
        let q = random_tensor(&mut r, &[1, 2, 4, 4]);
        let err = max_grad_error(|t, v| t.mse_loss(v[0], v[1]).unwrap(), &[p, q], FLOOR);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn sum_matches_finite_differences() {
    for seed in 0..CASES {
        let mut r = rng(600 + seed);
        let x = random_tensor(&mut r, &[2, 1, 3, 3]);
        let err = max_grad_error(|t, v| t.sum(v[0]), &[x], FLOOR);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn batch_norm_matches_finite_differences() {
    for seed in 0..CASES {
        let mut r = rng(700 + seed);
        let x = random_tensor(&mut r, &[2, 3, 3, 3]);
        let gamma = random_tensor(&mut r, &[3]);
        let beta = random_tensor(&mut r, &[3]);
        let target = random_tensor(&mut r, &[2, 3, 3, 3]);
        let err = max_grad_error(
            |t, v| {
                let o = t.batch_norm(v[0], v[1], v[2], 1e-5).unwrap();
                mse_head(t, o, &target)
            },
            &[x, gamma, beta],
            FLOOR,
        );
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

/// conv -> relu -> maxpool -> conv -> upsample -> add(skip) -> mse, checked
/// end to end against finite differences.
#[test]
fn two_layer_net_matches_finite_differences() {
    for seed in 0..10 {
        let mut r = rng(800 + seed);
        let x = random_tensor(&mut r, &[1, 2, 6, 6]);
        let w1 = random_tensor(&mut r, &[3, 2, 3, 3]);
        let b1 = random_tensor(&mut r, &[3]);
        let w2 = random_tensor(&mut r, &[3, 3, 1, 1]);
        let b2 = random_tensor(&mut r, &[3]);
        let target = random_tensor(&mut r, &[1, 3, 6, 6]);
        let err = max_grad_error(
            |t, v| {
                let h = t.conv2d(v[0], v[1], Some(v[2]), 1, 1).unwrap();
                let h = t.relu(h);
                let p = t.maxpool2(h).unwrap();
                let q = t.conv2d(p, v[3], Some(v[4]), 1, 0).unwrap();
                let u = t.upsample_nearest2(q).unwrap();
                let s = t.add(u, h).unwrap();
                mse_head(t, s, &target)
            },
            &[x, w1, b1, w2, b2],
            FLOOR,
        );
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}
