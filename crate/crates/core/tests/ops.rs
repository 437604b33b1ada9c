use std::sync::Arc;

use gameon_core::autodiff::Tape;
use gameon_core::gradcheck::grad_check;
use gameon_core::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vector(x: &[f64]) -> Tensor<f64> {
    Tensor::vector(x.to_vec()).unwrap()
}

/// Scores plus a segment id per score, every segment non-empty.
fn segmented() -> impl Strategy<Value = (Vec<f64>, Vec<usize>, usize)> {
    (1usize..6).prop_flat_map(|n_seg| {
        prop::collection::vec((-30.0f64..30.0, 0..n_seg), 1..40).prop_map(move |pairs| {
            let (mut scores, mut seg): (Vec<f64>, Vec<usize>) = pairs.into_iter().unzip();
            for s in 0..n_seg {
                scores.push(0.0);
                seg.push(s);
            }
            (scores, seg, n_seg)
        })
    })
}

fn softmax(scores: &[f64], seg: &[usize], n_seg: usize) -> Vec<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(vector(scores));
    let y = tape.segment_softmax(x, Arc::from(seg), n_seg).unwrap();
    tape.value(y).data().to_vec()
}

proptest! {
    #[test]
    fn segment_softmax_is_a_distribution((scores, seg, n_seg) in segmented()) {
        let y = softmax(&scores, &seg, n_seg);
        let mut sums = vec![0.0; n_seg];
        for (&v, &s) in y.iter().zip(&seg) {
            prop_assert!(v >= 0.0);
            sums[s] += v;
        }
        for s in sums {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn segment_softmax_ignores_per_segment_shifts(
        (scores, seg, n_seg) in segmented(),
        shift in prop::collection::vec(-50.0f64..50.0, 6),
    ) {
        let shifted: Vec<f64> = scores.iter().zip(&seg).map(|(&v, &s)| v + shift[s]).collect();
        for (a, b) in softmax(&scores, &seg, n_seg).iter().zip(softmax(&shifted, &seg, n_seg)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn activations_are_monotone(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut tape = Tape::new();
        let x = tape.constant(vector(&[lo, hi]));
        let e = tape.elu(x, 1.0).unwrap();
        let l = tape.leaky_relu(x, 0.2).unwrap();
        for y in [e, l] {
            let v = tape.value(y).data();
            prop_assert!(v[0] <= v[1]);
        }
    }

    #[test]
    fn dropout_off_is_the_identity(values in prop::collection::vec(-1e3f32..1e3, 1..64), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(values.clone()).unwrap());
        let eval = tape.dropout(x, 0.4, false, &mut rng).unwrap();
        let zero = tape.dropout(x, 0.0, true, &mut rng).unwrap();
        prop_assert_eq!(tape.value(eval).data(), &values[..]);
        prop_assert_eq!(tape.value(zero).data(), &values[..]);
    }
}

#[test]
fn every_op_passes_gradcheck() {
    let x = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let w = Tensor::matrix(4, 2, (0..8).map(|i| (i as f64 * 0.91).cos()).collect()).unwrap();
    let b = vector(&[0.1, -0.2]);
    let src: Arc<[usize]> = Arc::from(vec![0, 1, 2, 0, 2]);
    let dst: Arc<[usize]> = Arc::from(vec![0, 0, 1, 2, 2]);
    let err = grad_check(
        |tape, p| {
            let h = tape.matmul(p[0], p[1])?;
            let h = tape.add_row_bias(h, p[2])?;
            let h = tape.elu(h, 1.0)?;
            let flat = tape.reshape(h, vec![6])?;
            let scores = tape.gather(flat, Arc::from(vec![0, 2, 3, 4, 5]))?;
            let scores = tape.leaky_relu(scores, 0.2)?;
            let att = tape.segment_softmax(scores, dst.clone(), 3)?;
            let agg = tape.edge_aggregate(att, h, src.clone(), dst.clone(), 3)?;
            let pooled = tape.segment_mean(agg, Arc::from(vec![0, 0, 1]), 2)?;
            let wide = tape.concat_cols(pooled, pooled)?;
            let wide = tape.relu(wide)?;
            let wide = tape.reshape(wide, vec![8])?;
            let head = tape.slice(wide, 0, 4)?;
            let head = tape.reshape(head, vec![2, 2])?;
            let probs = tape.softmax_rows(head)?;
            let nll = tape.nll(probs, &[0, 1], 1e-7)?;
            let sq = tape.mul(p[2], p[2])?;
            let sq = tape.sum(sq)?;
            let sq = tape.scale(sq, 0.5)?;
            tape.add(nll, sq)
        },
        &[x, w, b],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}
