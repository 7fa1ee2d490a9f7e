use gam_core::tensor::{Tape, Tensor, Var};
use proptest::prelude::*;

fn subset_and_scores() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (1usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(-30.0f64..30.0, n),
            prop::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n),
        )
    })
}

/// `loss = sum(tanh(x·w + b) ⊙ c)` through matmul, broadcasting, concat and slice.
fn composite(tape: &mut Tape, x: Var, w: Var, b: Var, c: Var) -> Var {
    let xw = tape.matmul(x, w).unwrap();
    let z = tape.add(xw, b).unwrap();
    let a = tape.tanh(z);
    let s = tape.sigmoid(a);
    let both = tape.concat(&[a, s], 1).unwrap();
    let cols = tape.shape(a)[1];
    let back = tape.slice(both, 1, cols / 2, cols).unwrap();
    let prod = tape.mul(back, c).unwrap();
    let e = tape.leaky_relu(prod, 0.2);
    tape.sum(e)
}

fn run(x: &Tensor, w: &Tensor, b: &Tensor, c: &Tensor) -> (f64, Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.leaf(x.clone(), true), tape.leaf(w.clone(), true), tape.leaf(b.clone(), true));
    let cv = tape.constant(c.clone());
    let loss = composite(&mut tape, xv, wv, bv, cv);
    let value = tape.value(loss).item().unwrap();
    let g = tape.backward(loss).unwrap();
    (value, g.get(xv).unwrap().to_vec(), g.get(wv).unwrap().to_vec())
}

proptest! {
    #[test]
    fn subset_softmax_is_a_distribution_on_the_subset((scores, subset) in subset_and_scores()) {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(scores.clone()), false);
        let s = tape.softmax_over_subset(a, &subset).unwrap();
        let out = tape.value(s).data();
        let total: f64 = subset.iter().map(|&i| out[i]).sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
        for (i, &v) in out.iter().enumerate() {
            prop_assert!(v >= 0.0);
            if !subset.contains(&i) {
                prop_assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn composite_gradients_match_central_differences(
        (m, k, n) in (1usize..5, 1usize..5, 2usize..6),
        seed in any::<u64>(),
    ) {
        let mut state = seed | 1;
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
                })
                .collect()
        };
        let x = Tensor::new([m, k], draw(m * k)).unwrap();
        let w = Tensor::new([k, n], draw(k * n)).unwrap();
        let b = Tensor::new([1, n], draw(n)).unwrap();
        let c = Tensor::new([m, n], draw(m * n)).unwrap();
        let (_, gx, gw) = run(&x, &w, &b, &c);
        let h = 1e-5;
        for (target, analytic) in [(0, &gx), (1, &gw)] {
            for (i, &a) in analytic.iter().enumerate() {
                let nudge = |d: f64| {
                    let (mut x, mut w) = (x.clone(), w.clone());
                    let t = if target == 0 { &mut x } else { &mut w };
                    t.data_mut()[i] += d;
                    run(&x, &w, &b, &c).0
                };
                let fd = (nudge(h) - nudge(-h)) / (2.0 * h);
                let err = (a - fd).abs();
                prop_assert!(err <= 1e-6 || err <= 1e-3 * fd.abs().max(a.abs()), "{} vs {}", a, fd);
            }
        }
    }

    #[test]
    fn forward_values_are_bitwise_repeatable(vals in prop::collection::vec(-5.0f64..5.0, 12)) {
        let x = Tensor::new([3, 4], vals.clone()).unwrap();
        let w = Tensor::new([4, 4], vals.iter().rev().copied().chain(vals.iter().copied()).take(16).collect()).unwrap();
        let b = Tensor::new([1, 4], vals[..4].to_vec()).unwrap();
        let c = Tensor::new([3, 4], vals.clone()).unwrap();
        let (a1, gx1, gw1) = run(&x, &w, &b, &c);
        let (a2, gx2, gw2) = run(&x, &w, &b, &c);
        prop_assert_eq!(a1.to_bits(), a2.to_bits());
        prop_assert_eq!(gx1, gx2);
        prop_assert_eq!(gw1, gw2);
    }
}

#[test]
fn identity_points() {
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::vector(vec![0.0, -1.0]), false);
    let s = tape.sigmoid(z);
    let t = tape.tanh(z);
    let l = tape.leaky_relu(z, 0.2);
    assert_eq!(tape.value(s).data()[0], 0.5);
    assert_eq!(tape.value(t).data()[0], 0.0);
    assert_eq!(tape.value(l).data()[1], -0.2);
}
