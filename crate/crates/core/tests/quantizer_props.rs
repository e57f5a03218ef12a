use proptest::prelude::*;

use vqlab::numerics::finite_diff_grad;
use vqlab::quantizer::{
    codebook_grad, nearest_code, perplexity, quantize, straight_through_backward, used_tokens,
    vq_loss, Codebook, QuantizerConfig, UsageHistogram,
};
use vqlab::{Matrix, Rng};

fn randn(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn zero_commitment_passes_gradient_through(n in 1usize..10, d in 1usize..6, seed: u64) {
        let mut rng = Rng::seed_from_u64(seed);
        let (g, e, q) = (randn(n, d, &mut rng), randn(n, d, &mut rng), randn(n, d, &mut rng));
        prop_assert_eq!(straight_through_backward(&g, &e, &q, 0.0).unwrap(), g);
    }

    #[test]
    fn loss_terms_share_distortion(n in 1usize..10, d in 1usize..6, gamma in 0.0f64..2.0, task in -5.0f64..5.0, seed: u64) {
        let mut rng = Rng::seed_from_u64(seed);
        let (e, q) = (randn(n, d, &mut rng), randn(n, d, &mut rng));
        let l = vq_loss(&e, &q, task, gamma).unwrap();
        let mut dist = 0.0;
        for r in 0..n {
            for c in 0..d {
                dist += (e.get(r, c) - q.get(r, c)).powi(2);
            }
        }
        dist /= n as f64;
        prop_assert!((l.codebook - dist).abs() <= 1e-12 * dist.max(1.0));
        prop_assert!((l.commitment - gamma * dist).abs() <= 1e-12 * dist.max(1.0));
        prop_assert!((l.total - (task + l.codebook + l.commitment)).abs() <= 1e-12);
    }

    #[test]
    fn codebook_grad_matches_differences(k in 1usize..6, seed: u64) {
        let (n, d) = (8, 4);
        let mut rng = Rng::seed_from_u64(seed);
        let e = randn(n, d, &mut rng);
        let cb = Codebook::new(randn(k, d, &mut rng)).unwrap();
        let a = nearest_code(&e, &cb).unwrap();
        let g = codebook_grad(&e, a.indices(), &cb).unwrap();
        let idx = a.indices().to_vec();
        let fd = finite_diff_grad(
            |w| {
                (0..n)
                    .map(|j| (0..d).map(|c| (e.get(j, c) - w.get(idx[j], c)).powi(2)).sum::<f64>())
                    .sum::<f64>()
                    / n as f64
            },
            cb.words(),
            1e-5,
        )
        .unwrap();
        prop_assert!(rel_err(&g, &fd) <= 1e-6);
    }

    #[test]
    fn commitment_grad_matches_differences(gamma in 0.01f64..1.0, seed: u64) {
        let (n, d) = (8, 4);
        let mut rng = Rng::seed_from_u64(seed);
        let (e, q, up) = (randn(n, d, &mut rng), randn(n, d, &mut rng), randn(n, d, &mut rng));
        let g = straight_through_backward(&up, &e, &q, gamma).unwrap();
        let fd = finite_diff_grad(
            |x| {
                let lin: f64 = x.data().iter().zip(up.data()).map(|(a, b)| a * b).sum();
                lin + gamma * x.sub(&q).unwrap().sq_norm() / n as f64
            },
            &e,
            1e-5,
        )
        .unwrap();
        prop_assert!(rel_err(&g, &fd) <= 1e-6);
    }

    #[test]
    fn perplexity_bounds_and_uniform_case(counts in prop::collection::vec(0u64..50, 1..20)) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let k = counts.len();
        let h = UsageHistogram::from_counts(counts.clone());
        let p = perplexity(&h).unwrap();
        prop_assert!(p >= 1.0 && p <= k as f64);
        prop_assert!(used_tokens(&h) as f64 >= p.ceil());
        let uniform = counts.iter().all(|&c| c == counts[0]);
        if uniform {
            prop_assert!((p - k as f64).abs() < 1e-9);
        } else {
            prop_assert!(p < k as f64 - 1e-9);
        }
    }

    #[test]
    fn heads_quantize_their_own_blocks(n in 1usize..12, heads in 1usize..4, d in 1usize..4, k in 1usize..8, seed: u64) {
        let mut rng = Rng::seed_from_u64(seed);
        let e = randn(n, heads * d, &mut rng);
        let cbs: Vec<Codebook> = (0..heads).map(|_| Codebook::new(randn(k, d, &mut rng)).unwrap()).collect();
        let cfg = QuantizerConfig { num_heads: heads, ..QuantizerConfig::default() };
        let (q, a) = quantize(&e, &cbs, &cfg).unwrap();
        for (h, cb) in cbs.iter().enumerate() {
            let block = e.col_block(h * d, d).unwrap();
            let single = nearest_code(&block, cb).unwrap();
            prop_assert_eq!(a.head_indices(h), single.indices().to_vec());
            prop_assert_eq!(a.head_histogram(h), single.head_histogram(0));
            let expect = cb.words().select_rows(single.indices()).unwrap();
            prop_assert_eq!(q.col_block(h * d, d).unwrap(), expect);
        }
        prop_assert_eq!(a.histogram().total(), (n * heads) as u64);
    }
}

#[test]
fn ties_resolve_to_lowest_index() {
    let cb = Codebook::new(Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![1.0]])).unwrap();
    let e = Matrix::from_rows(&[vec![0.0], vec![2.0], vec![-3.0]]);
    assert_eq!(nearest_code(&e, &cb).unwrap().indices(), &[0, 0, 1]);
}
