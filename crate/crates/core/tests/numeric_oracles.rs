#![allow(clippy::needless_range_loop)]

use cat_core::{grad_check, GradCheckOptions, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Neumaier-compensated sum.
fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (m, k, n) in [(1, 1, 1), (3, 5, 2), (7, 4, 9), (16, 33, 5)] {
        let a = random(&mut rng, m, k, 2.0);
        let b = random(&mut rng, k, n, 2.0);
        let mut tape = Tape::new();
        let (va, vb) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
        let c = tape.matmul(va, vb).unwrap();
        let got = tape.value(c);
        assert_eq!(got.shape(), &[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.at2(i, p) * b.at2(p, j);
                }
                assert!((got.at2(i, j) - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn softmax_matches_compensated_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, 6, 11, 30.0);
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let s = tape.softmax(v, 1).unwrap();
    let got = tape.value(s);
    for i in 0..6 {
        let row = x.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = compensated_sum(row.iter().map(|v| (v - max).exp()));
        for j in 0..11 {
            let expect = (row[j] - max).exp() / z;
            assert!((got.at2(i, j) - expect).abs() < 1e-15 + 1e-13 * expect);
        }
    }
}

#[test]
fn softmax_survives_huge_logits() {
    let mut tape = Tape::new();
    let v = tape.leaf(Tensor::from_rows(&[vec![1000.0, 1000.0, -1000.0]]).unwrap());
    let s = tape.softmax(v, 1).unwrap();
    let got = tape.value(s).data().to_vec();
    assert!((got[0] - 0.5).abs() < 1e-15 && (got[1] - 0.5).abs() < 1e-15 && got[2] == 0.0);
}

#[test]
fn layer_norm_on_known_rows() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![5.0, 5.0, 5.0]]).unwrap());
    let gain = tape.leaf(Tensor::new(vec![3], vec![1.0; 3]).unwrap());
    let bias = tape.leaf(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
    let y = tape.layer_norm(x, gain, bias, 1e-12).unwrap();
    let s = (1.5f64).sqrt();
    let expect = [-s, 0.0, s, 0.0, 0.0, 0.0];
    for (g, e) in tape.value(y).data().iter().zip(expect) {
        assert!((g - e).abs() < 1e-9, "{g} vs {e}");
    }
    let zero_gain = tape.leaf(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
    let shift = tape.leaf(Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
    let y = tape.layer_norm(x, zero_gain, shift, 1e-5).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
}

#[test]
fn cross_entropy_known_values() {
    let mut tape = Tape::new();
    let logits = tape.leaf(Tensor::from_rows(&[vec![0.0, 0.0, 0.0, 0.0], vec![10.0, 0.0, 0.0, 0.0]]).unwrap());
    let targets = Tensor::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
    let l = tape.cross_entropy(logits, &targets).unwrap();
    let second = -(10f64.exp() / (10f64.exp() + 3.0)).ln();
    assert!((tape.value(l).item() - 0.5 * (4f64.ln() + second)).abs() < 1e-12);
}

#[test]
fn two_layer_perceptron_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, 5, 4, 1.0);
    let targets = Tensor::new(
        vec![5, 3],
        (0..5).flat_map(|i| (0..3).map(move |c| if c == i % 3 { 1.0 } else { 0.0 })).collect(),
    )
    .unwrap();
    let params = vec![
        ("w1".to_string(), random(&mut rng, 4, 6, 0.8)),
        ("b1".to_string(), Tensor::new(vec![6], (0..6).map(|_| rng.random_range(-0.3..0.3)).collect()).unwrap()),
        ("w2".to_string(), random(&mut rng, 6, 3, 0.8)),
        ("b2".to_string(), Tensor::new(vec![3], vec![0.1, -0.2, 0.05]).unwrap()),
    ];
    let report = grad_check(
        |tape, p| {
            let xv = tape.constant(x.clone());
            let h = tape.matmul(xv, p[0])?;
            let h = tape.add_row(h, p[1])?;
            let h = tape.gelu(h);
            let o = tape.matmul(h, p[2])?;
            let o = tape.add_row(o, p[3])?;
            tape.cross_entropy(o, &targets)
        },
        &params,
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed());
    assert!(report.max_rel_error() < 1e-4, "{}", report.max_rel_error());
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_form_distributions(x in matrix(4, 7)) {
        let mut tape = Tape::new();
        let v = tape.leaf(x);
        let s = tape.softmax(v, 1).unwrap();
        let out = tape.value(s);
        for i in 0..4 {
            prop_assert!((out.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(out.row(i).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn layer_norm_centres_and_scales(x in matrix(3, 8)) {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let g = tape.leaf(Tensor::new(vec![8], vec![1.0; 8]).unwrap());
        let b = tape.leaf(Tensor::new(vec![8], vec![0.0; 8]).unwrap());
        let y = tape.layer_norm(v, g, b, 1e-12).unwrap();
        let out = tape.value(y);
        for i in 0..3 {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            prop_assume!(var > 1e-6);
            let r = out.row(i);
            let m = r.iter().sum::<f64>() / 8.0;
            let s2 = r.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 8.0;
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((s2 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn composite_graph_gradients_match_differences(a in matrix(3, 4), b in matrix(4, 2)) {
        let params = vec![("a".to_string(), a.map(|v| v * 0.3)), ("b".to_string(), b.map(|v| v * 0.3))];
        let report = grad_check(
            |tape, p| {
                let m = tape.matmul(p[0], p[1])?;
                let s = tape.softmax(m, 1)?;
                let t = tape.transpose(p[1])?;
                let back = tape.matmul(s, t)?;
                let g = tape.gelu(back);
                let q = tape.mul(g, p[0])?;
                Ok(tape.sum(q))
            },
            &params,
            GradCheckOptions::default(),
        )
        .unwrap();
        prop_assert!(report.passed(), "max rel {}", report.max_rel_error());
    }
}
