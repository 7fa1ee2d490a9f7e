mod common;

use common::{participant, participants, tiny_model, tiny_train};
use gam_core::ingest::RegularSample;
use gam_core::model::layers::mse;
use gam_core::model::{Model, Variant};
use gam_core::tensor::{Tape, Tensor};
use gam_core::train::{
    compute_metrics, evaluate, evaluate_participant, fine_tune, init_seed, mean_valid_rmse, run_stage, train_pooled,
    Split, StageConfig, TrainConfig, TrainError, Trainer,
};
use gam_core::util::derive_seed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mse_value(y: &[f64], yhat: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::vector(yhat.to_vec()), false);
    let t = tape.constant(Tensor::vector(y.to_vec()));
    let l = mse(&mut tape, p, t).unwrap();
    tape.value(l).item().unwrap()
}

#[test]
fn mse_examples() {
    assert_eq!(mse_value(&[1.0, 1.0], &[1.0, 1.0]), 0.0);
    assert_eq!(mse_value(&[0.0], &[2.0]), 4.0);
}

#[test]
fn mse_gradient_matches_closed_form_and_differences() {
    let y = [0.3, -1.2, 2.0, 0.0];
    let yhat = [1.1, -0.4, 1.5, 0.25];
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::vector(yhat.to_vec()), true);
    let t = tape.constant(Tensor::vector(y.to_vec()));
    let l = mse(&mut tape, p, t).unwrap();
    let g = tape.backward(l).unwrap().get(p).unwrap().to_vec();
    let h = 1e-5;
    for b in 0..y.len() {
        let closed = 2.0 * (yhat[b] - y[b]) / y.len() as f64;
        let (mut up, mut down) = (yhat, yhat);
        up[b] += h;
        down[b] -= h;
        let fd = (mse_value(&y, &up) - mse_value(&y, &down)) / (2.0 * h);
        assert!((g[b] - closed).abs() < 1e-15);
        assert!((g[b] - fd).abs() < 1e-8);
    }
}

#[test]
fn empty_batch_is_a_contract_error() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::vector(vec![]), true);
    let t = tape.constant(Tensor::vector(vec![]));
    assert!(mse(&mut tape, p, t).is_err());
}

#[test]
fn zero_global_steps_keeps_the_initialization() {
    let data = participants(2, 220);
    let cfg = TrainConfig {
        t_global: 0,
        ..tiny_train(4)
    };
    let model = tiny_model(Variant::Gam);
    let out = train_pooled(&data, &model, &cfg, 0).unwrap();
    let init = Model::new(model, init_seed(4)).unwrap();
    assert_eq!(out.global.best, init);
    assert_eq!(out.global.best_step, 0);
    assert_eq!(out.global.improvements.len(), 1);
    for (p, r) in data.iter().zip(&out.personal) {
        let base = evaluate_participant(&init, p, Split::Valid, 0).unwrap().rmse;
        assert_eq!(r.stage.improvements[0], (0, base));
    }
}

/// Stage 2 at the stage-1 learning rate is stage-1 training continued from
/// the best checkpoint with a fresh optimizer and the personal stream.
#[test]
fn personal_stage_continues_from_best_checkpoint() {
    let p = participant("solo", 240, 0.3);
    let only = std::slice::from_ref(&p);
    let lr = 5e-3;
    let (steps1, steps2, every, batch, seed) = (12, 8, 4, 6, 9u64);
    let stage1 = StageConfig {
        steps: steps1,
        eval_every: every,
        batch_size: batch,
        lr,
    };
    let stage2 = StageConfig { steps: steps2, ..stage1 };
    let start = Model::new(tiny_model(Variant::Gam), init_seed(seed)).unwrap();
    let pool: Vec<&RegularSample> = p.train.iter().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let global = run_stage(start.clone(), &pool, &stage1, &mut rng, |m| mean_valid_rmse(m, only, 0)).unwrap();
    let personal_seed = derive_seed(seed, "stage2/solo");
    let personal = fine_tune(&global.best, &p, &stage2, personal_seed, 0).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trainer = Trainer::new(start.clone(), lr);
    let mut best = (mean_valid_rmse(&start, only, 0).unwrap(), start);
    for step in 1..=steps1 {
        trainer.step(&pool, batch, &mut rng).unwrap();
        if step % every == 0 {
            let r = mean_valid_rmse(&trainer.model, only, 0).unwrap();
            if r < best.0 {
                best = (r, trainer.model.clone());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(personal_seed);
    let mut trainer = Trainer::new(best.1.clone(), lr);
    for _ in 0..steps2 {
        trainer.step(&pool, batch, &mut rng).unwrap();
    }
    assert_eq!(global.best, best.1);
    let (a, b) = (personal.last.params.flat_view(), trainer.model.params.flat_view());
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn recorded_best_rmse_strictly_decreases() {
    let data = participants(2, 220);
    let cfg = TrainConfig {
        t_global: 40,
        t_eval1: 2,
        ..tiny_train(1)
    };
    let out = train_pooled(&data, &tiny_model(Variant::Gam), &cfg, 0).unwrap();
    for stage in std::iter::once(&out.global).chain(out.personal.iter().map(|p| &p.stage)) {
        for w in stage.improvements.windows(2) {
            assert!(w[1].0 > w[0].0);
            assert!(w[1].1 < w[0].1);
        }
        assert_eq!(stage.improvements.last().copied(), Some((stage.best_step, stage.best_rmse)));
    }
    assert_eq!(mean_valid_rmse(&out.global.best, &data, 0).unwrap(), out.global.best_rmse);
}

#[test]
fn identical_runs_give_identical_reports() {
    let data = participants(3, 200);
    let cfg = tiny_train(17);
    let run = || {
        let out = train_pooled(&data, &tiny_model(Variant::GamTa), &cfg, 0).unwrap();
        let global = evaluate(&out.global.best, &data, Split::Valid, 0, "x").unwrap();
        let personal = gam_core::train::evaluate_each(&data, Split::Valid, 0, "x", |p| {
            out.personal_model(&p.id).unwrap()
        })
        .unwrap();
        (global, personal)
    };
    let (a, b) = (run(), run());
    assert!(a.0.max_abs_diff(&b.0).unwrap() <= 1e-9);
    assert!(a.1.max_abs_diff(&b.1).unwrap() <= 1e-9);
}

#[test]
fn zero_parameter_model_predicts_training_mean() {
    let data = participants(2, 240);
    let model = Model::zeros(tiny_model(Variant::Gam)).unwrap();
    for p in &data {
        let (mean, std) = p.glucose_stats(0);
        let truth: Vec<f64> = p.valid.iter().map(|s| s.y * std + mean).collect();
        let expected = (truth.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / truth.len() as f64).sqrt();
        let got = evaluate_participant(&model, p, Split::Valid, 0).unwrap();
        assert!((got.rmse - expected).abs() <= 1e-9 * expected);
        let preds = model.predict(&p.valid).unwrap();
        assert!(preds.iter().all(|&z| z == 0.0));
    }
}

#[test]
fn identity_statistics_pass_values_through() {
    let mut p = participant("p", 200, 0.0);
    p.stats.mean[0] = 0.0;
    p.stats.std[0] = 1.0;
    for s in &mut p.valid {
        s.y = 100.0 + s.y * 20.0;
    }
    let model = Model::zeros(tiny_model(Variant::Gam)).unwrap();
    let pairs: Vec<(f64, f64)> = p.valid.iter().map(|s| (s.y, 0.0)).collect();
    let direct = compute_metrics("p", &pairs).unwrap();
    assert_eq!(evaluate_participant(&model, &p, Split::Valid, 0).unwrap(), direct);
}

#[test]
fn training_loss_falls() {
    let data = participants(1, 400);
    let cfg = TrainConfig {
        t_global: 300,
        t_eval1: 100,
        batch_size: 16,
        ..tiny_train(3)
    };
    let out = train_pooled(&data, &tiny_model(Variant::Gam), &cfg, 0).unwrap();
    let avg = |r: std::ops::Range<usize>| out.global.losses[r.clone()].iter().sum::<f64>() / r.len() as f64;
    assert!(avg(200..300) < avg(0..100));
}

#[test]
fn participant_without_validation_is_rejected() {
    let mut data = participants(2, 200);
    data[1].valid.clear();
    let err = train_pooled(&data, &tiny_model(Variant::Gam), &tiny_train(0), 0).unwrap_err();
    assert!(matches!(err, TrainError::Config(_)));
}

#[test]
fn learning_rates_must_decrease() {
    let cfg = TrainConfig {
        lr_stage2: 1e-3,
        lr_stage1: 1e-3,
        ..TrainConfig::default()
    };
    assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
    assert!(TrainConfig::default().validate().is_ok());
}
