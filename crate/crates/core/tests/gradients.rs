mod common;

use chameleon_core::autodiff::Tape;
use chameleon_core::base_model::{predict_on_tape, BaseModelParams};
use chameleon_core::encoder::{enc_on_tape, phi_on_tape, EncoderParams};
use chameleon_core::rng;
use chameleon_core::ValueGrid;
use common::*;
use rand::Rng;

const INSTANCES: usize = 20;

fn one_hot<R: Rng>(r: &mut R, rows: usize, cols: usize) -> ValueGrid {
    let mut t = ValueGrid::zeros(rows, cols);
    for i in 0..rows {
        t.set(i, r.gen_range(0..cols), 1.0);
    }
    t
}

#[test]
fn matmul_and_transpose() {
    let mut r = rng::stream(10, &[]);
    for _ in 0..INSTANCES {
        let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
        let w = random_grid(&mut r, n, m, -1.0, 1.0);
        let inputs = [random_grid(&mut r, m, k, -1.0, 1.0), random_grid(&mut r, k, n, -1.0, 1.0)];
        let err = fd_check(&inputs, |t, x| {
            let p = t.matmul(x[0], x[1]).unwrap();
            let pt = t.transpose(p);
            t.weighted_sum(pt, &w).unwrap()
        });
        assert!(err <= FD_REL_TOL, "{err}");
    }
}

#[test]
fn bias_relu_softmax() {
    let mut r = rng::stream(11, &[]);
    for _ in 0..INSTANCES {
        let (m, n) = (r.gen_range(1..6), r.gen_range(1..6));
        let w = random_grid(&mut r, m, n, -1.0, 1.0);
        let inputs = [random_grid_off_zero(&mut r, m, n, 0.05), random_grid(&mut r, 1, n, -0.02, 0.02)];
        let err = fd_check(&inputs, |t, x| {
            let z = t.add_bias(x[0], x[1]).unwrap();
            let h = t.relu(z);
            let s = t.softmax_rows(h);
            t.weighted_sum(s, &w).unwrap()
        });
        assert!(err <= FD_REL_TOL, "{err}");
    }
}

#[test]
fn softmax_cross_entropy() {
    let mut r = rng::stream(12, &[]);
    for _ in 0..INSTANCES {
        let (m, n) = (r.gen_range(1..6), r.gen_range(2..6));
        let target = one_hot(&mut r, m, n);
        let inputs = [random_grid(&mut r, m, n, -3.0, 3.0)];
        let err = fd_check(&inputs, |t, x| {
            let s = t.softmax_rows(x[0]);
            t.cross_entropy(s, &target).unwrap()
        });
        assert!(err <= FD_REL_TOL, "{err}");
    }
}

#[test]
fn reordering_network() {
    let mut r = rng::stream(13, &[]);
    for _ in 0..INSTANCES {
        let (n, f, k) = (r.gen_range(2..6), r.gen_range(1..5), r.gen_range(2..6));
        let enc = EncoderParams::glorot(n, k, &mut r);
        let target = one_hot(&mut r, f, k);
        let mut inputs = vec![random_grid(&mut r, n, f, 0.0, 1.0)];
        inputs.extend(enc.store().values().iter().cloned());
        let err = fd_check(&inputs, |t, x| {
            let pi = phi_on_tape(t, x[0], &x[1..], n).unwrap();
            t.cross_entropy(pi, &target).unwrap()
        });
        assert!(err <= FD_REL_TOL, "{err}");
    }
}

#[test]
fn classifier_composed_with_alignment() {
    let mut r = rng::stream(14, &[]);
    for _ in 0..INSTANCES {
        let (n, f, k, c) = (r.gen_range(2..6), r.gen_range(1..5), r.gen_range(2..5), r.gen_range(2..4));
        let enc = EncoderParams::glorot(n, k, &mut r);
        let base = BaseModelParams::glorot(k, c, &mut r);
        let y = one_hot(&mut r, n, c);
        let mut inputs = vec![random_grid(&mut r, n, f, 0.0, 1.0)];
        inputs.extend(enc.store().values().iter().cloned());
        inputs.extend(base.store().values().iter().cloned());
        let err = fd_check(&inputs, |t, x| {
            let (aligned, _) = enc_on_tape(t, x[0], &x[1..7], n).unwrap();
            let p = predict_on_tape(t, aligned, &x[7..], k).unwrap();
            t.cross_entropy(p, &y).unwrap()
        });
        assert!(err <= FD_REL_TOL, "{err}");
    }
}

#[test]
fn unused_input_has_zero_numeric_gradient() {
    let mut r = rng::stream(15, &[]);
    let inputs = [random_grid(&mut r, 2, 2, -1.0, 1.0), random_grid(&mut r, 2, 2, -1.0, 1.0)];
    let w = random_grid(&mut r, 2, 2, -1.0, 1.0);
    let err = fd_check(&inputs, |t: &mut Tape, x| t.weighted_sum(x[0], &w).unwrap());
    assert!(err <= FD_REL_TOL);
}
