use proptest::prelude::*;

use vqlab::models::{Activation, DiscretizedLikelihoodHead, MlpStack};
use vqlab::quantizer::{codebook_grad, init_codebook, Codebook, QuantizerConfig};
use vqlab::trainer::{
    ema_codebook_update, schedule_step, sgd_codebook_update, Batch, BatchNormState, BottleneckMode,
    CodebookRule, EmaState, OptimConfig, Phase, TaskKind, TrainSchedule, Trainer, TrainerConfig, VqModel,
};
use vqlab::{Matrix, Rng};

fn randn(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

fn model(rng: &mut Rng, k: usize) -> VqModel {
    let head = DiscretizedLikelihoodHead { dims: 3, levels: 4 };
    VqModel {
        encoder: MlpStack::new(&[3, 6, 4], Activation::Tanh, rng).unwrap(),
        batch_norm: Some(BatchNormState::new(4)),
        codebooks: Some(vec![init_codebook(k, 4, 1.0, rng).unwrap()]),
        decoder: MlpStack::new(&[4, 6, 12], Activation::Tanh, rng).unwrap(),
        task: TaskKind::Autoencode(head),
        quantizer: QuantizerConfig::default(),
    }
}

fn batch(n: usize, rng: &mut Rng) -> Batch {
    Batch {
        inputs: randn(n, 3, rng),
        targets: (0..n * 3).map(|_| rng.below(4)).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn unassigned_codewords_stay_put(n in 1usize..12, k in 2usize..8, seed: u64) {
        let mut rng = Rng::seed_from_u64(seed);
        let d = 3;
        let e = randn(n, d, &mut rng);
        // leave the last codeword out of the batch on purpose
        let idx: Vec<usize> = (0..n).map(|_| rng.below(k - 1)).collect();
        let start = Codebook::new(randn(k, d, &mut rng)).unwrap();

        let mut sgd = start.clone();
        let g = codebook_grad(&e, &idx, &sgd).unwrap();
        sgd_codebook_update(&mut sgd, &g, &OptimConfig::default()).unwrap();

        let mut ema_cb = start.clone();
        let mut ema = EmaState::new(&ema_cb, 0.9).unwrap();
        for _ in 0..3 {
            ema_codebook_update(&mut ema, &e, &idx, &mut ema_cb).unwrap();
        }
        for i in 0..k {
            if !idx.contains(&i) {
                prop_assert_eq!(sgd.word(i), start.word(i));
                for c in 0..d {
                    prop_assert!((ema_cb.word(i)[c] - start.word(i)[c]).abs() <= 1e-12 * start.word(i)[c].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn ema_codeword_is_running_mean(n in 1usize..12, k in 1usize..6, seed: u64) {
        let mut rng = Rng::seed_from_u64(seed);
        let mut cb = Codebook::new(randn(k, 2, &mut rng)).unwrap();
        let mut ema = EmaState::new(&cb, 0.95).unwrap();
        for _ in 0..5 {
            let e = randn(n, 2, &mut rng);
            let idx: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            ema_codebook_update(&mut ema, &e, &idx, &mut cb).unwrap();
            for i in 0..k {
                prop_assert!(ema.counts()[i] > 0.0);
                for c in 0..2 {
                    let expect = ema.means().get(i, c) / ema.counts()[i];
                    prop_assert!((cb.word(i)[c] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn warmup_gradient_equals_no_bottleneck(n in 2usize..8, seed: u64) {
        let mut rng = Rng::seed_from_u64(seed);
        let with = model(&mut rng, 5);
        let mut without = with.clone();
        without.codebooks = None;
        let b = batch(n, &mut rng);
        let f1 = with.clone().forward(&b, BottleneckMode::PassThrough, true).unwrap();
        let f2 = without.clone().forward(&b, BottleneckMode::PassThrough, true).unwrap();
        prop_assert_eq!(f1.loss, f2.loss);
        let g1 = with.full_backward(&f1, 1.0).unwrap();
        let g2 = without.full_backward(&f2, 1.0).unwrap();
        prop_assert_eq!(&g1.latents, &g2.latents);
        prop_assert_eq!(&g1.bn_gain, &g2.bn_gain);
        prop_assert_eq!(&g1.encoder, &g2.encoder);
        prop_assert_eq!(&g1.decoder, &g2.decoder);
        prop_assert!(g1.codebooks.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }
}

#[test]
fn busier_codeword_moves_further() {
    // Both codewords sit at 0 and see a batch mean of 1. Codeword 0 has
    // N = 1 and gets three samples; codeword 1 has N = 5 and gets one.
    let cb_words = Matrix::zeros(2, 1);
    let mut cb = Codebook::new(cb_words.clone()).unwrap();
    let mut ema = EmaState::from_parts(vec![1.0, 5.0], cb_words, 0.9, false).unwrap();
    let e = Matrix::filled(4, 1, 1.0);
    ema_codebook_update(&mut ema, &e, &[0, 0, 0, 1], &mut cb).unwrap();
    let (w0, w1) = (cb.word(0)[0], cb.word(1)[0]);
    // N0 = 0.9 + 0.3, m0 = 0.3 ; N1 = 4.5 + 0.1, m1 = 0.1
    assert!((w0 - 0.3 / 1.2).abs() < 1e-12);
    assert!((w1 - 0.1 / 4.6).abs() < 1e-12);
    assert!(w0 > w1);
}

#[test]
fn commitment_only_backward() {
    let mut rng = Rng::seed_from_u64(5);
    let mut m = model(&mut rng, 6);
    let b = batch(5, &mut rng);
    let fwd = m.forward(&b, BottleneckMode::Quantize, true).unwrap();
    let g = m.full_backward(&fwd, 0.0).unwrap();
    let q = fwd.quantized.as_ref().unwrap();
    let gamma = m.quantizer.gamma_commit;
    let expect = fwd.latents.sub(q).unwrap().scale(2.0 * gamma / 5.0);
    assert!(g.latents.max_abs_diff(&expect).unwrap() < 1e-14);
    assert!(g.decoder.iter().all(|d| d.weights.data().iter().all(|&v| v == 0.0)));
}

fn trainer(schedule: TrainSchedule, rule: CodebookRule, seed: u64) -> Trainer {
    let mut rng = Rng::seed_from_u64(seed);
    let cfg = TrainerConfig {
        schedule,
        reestimate: true,
        optim: OptimConfig::default(),
        rule,
        ema_discount: 0.99,
        reservoir_capacity: 64,
        lloyd_iters: 5,
        polyak_decay: None,
    };
    Trainer::new(model(&mut rng, 4), cfg, rng.fork()).unwrap()
}

#[test]
fn warmup_leaves_codebook_and_reestimates_on_schedule() {
    let schedule = TrainSchedule {
        m_init: 3,
        m_reestim: 4,
        r_reestim: 2,
    };
    let mut t = trainer(schedule, CodebookRule::Sgd, 1);
    let mut rng = Rng::seed_from_u64(2);
    let start = t.model.codebooks.clone();
    let mut reest = Vec::new();
    for it in 0..10u64 {
        let r = t.train_step(&batch(8, &mut rng)).unwrap();
        assert_eq!(r.iteration, it);
        if it < 3 {
            assert_eq!(r.phase, Some(Phase::Warmup));
            assert_eq!(t.model.codebooks, start);
            assert!(r.usage.is_none());
        } else {
            assert!(r.usage.is_some());
        }
        assert_eq!(r.phase, Some(schedule_step(it, &schedule)));
        if r.reestimated {
            reest.push(it);
        }
    }
    assert_eq!(reest, vec![4, 6]);
    assert_eq!(t.reservoir.seen(), 80);
}

#[test]
fn ema_state_resets_after_reestimation() {
    let schedule = TrainSchedule {
        m_init: 2,
        m_reestim: 1,
        r_reestim: 1,
    };
    let mut t = trainer(schedule, CodebookRule::Ema, 3);
    let mut rng = Rng::seed_from_u64(4);
    for _ in 0..2 {
        t.train_step(&batch(16, &mut rng)).unwrap();
    }
    let before = t.model.codebooks.clone();
    // reestimation happens at the start of this step, EMA runs after it
    let r = t.train_step(&batch(16, &mut rng)).unwrap();
    assert!(r.reestimated);
    assert_ne!(t.model.codebooks, before);
    let ema = &t.ema[0];
    let cb = &t.model.codebooks.as_ref().unwrap()[0];
    for i in 0..cb.size() {
        for c in 0..cb.dim() {
            let w = ema.means().get(i, c) / ema.counts()[i];
            assert!((w - cb.word(i)[c]).abs() < 1e-12);
        }
    }
}
