use mafn_core::data::{select_sensors, WindowSample};
use mafn_core::model::{LossSetup, Mafn, MafnDims};
use mafn_core::pipeline::{prepare_training, PreparedData};
use mafn_core::synth::{synthesize, SynthSpec};
use mafn_core::train::{evaluate_losses, train, train_step, AdamHyper, AdamState};
use mafn_core::TrainConfig;

fn small_config() -> TrainConfig {
    TrainConfig {
        window: 20,
        horizon: 5,
        num_states: 2,
        embed_dim: 4,
        conv_filters: 8,
        lstm_hidden: 8,
        attention_dim: 8,
        decoder_hidden: 8,
        trend_dim: 2,
        fusion_widths: vec![16],
        rul_hidden: [16, 8],
        batch_size: 32,
        ..TrainConfig::default()
    }
}

fn data(engines: usize, cfg: &TrainConfig) -> PreparedData {
    let d = synthesize(&SynthSpec {
        engines,
        ..SynthSpec::default()
    })
    .unwrap();
    let recs: Vec<_> = d.records.iter().map(select_sensors).collect();
    prepare_training(&recs, cfg).unwrap()
}

fn model(cfg: &TrainConfig) -> Mafn {
    Mafn::new(MafnDims::from_config(cfg, 11)).unwrap()
}

/// Ten windows spread over the training set.
fn ten_windows(p: &PreparedData) -> Vec<WindowSample> {
    let step = p.train.len() / 10;
    (0..10).map(|i| p.train[i * step].clone()).collect()
}

pub fn overfits_ten_windows() {
    let cfg = TrainConfig {
        max_epochs: 500,
        patience: 500,
        batch_size: 10,
        learning_rate: 1e-2,
        ..small_config()
    };
    let p = data(4, &cfg);
    let ten = ten_windows(&p);
    let m = model(&cfg);
    let out = train(&m, m.init_params(cfg.seed), &ten, &ten, &cfg).unwrap();
    let first = out.log.epochs[0].total;
    let last = out.log.epochs.last().unwrap().total;
    assert_eq!(out.log.epochs.len(), 500);
    assert!(last <= 0.1 * first, "L_total {first} -> {last}");
    let se: f64 = ten
        .iter()
        .map(|w| (m.predict_window(&out.params, &w.inputs, &w.input_states).unwrap().rul - w.rul).powi(2))
        .sum();
    let rmse = (se / 10.0).sqrt();
    assert!(rmse < 2.0, "train RMSE {rmse}");
}

pub fn same_seed_same_run() {
    let cfg = TrainConfig {
        max_epochs: 3,
        stride: 4,
        ..small_config()
    };
    let p = data(6, &cfg);
    let m = model(&cfg);
    let a = train(&m, m.init_params(cfg.seed), &p.train, &p.validation, &cfg).unwrap();
    let b = train(&m, m.init_params(cfg.seed), &p.train, &p.validation, &cfg).unwrap();
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.params.to_bytes(), b.params.to_bytes());
    let c = train(
        &m,
        m.init_params(cfg.seed),
        &p.train,
        &p.validation,
        &TrainConfig {
            seed: 43,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_ne!(a.log.to_csv(), c.log.to_csv());
}

pub fn early_stopping_keeps_the_best_epoch() {
    // a large learning rate makes validation loss bounce
    let cfg = TrainConfig {
        max_epochs: 12,
        patience: 2,
        stride: 4,
        learning_rate: 0.05,
        ..small_config()
    };
    let p = data(6, &cfg);
    let m = model(&cfg);
    let out = train(&m, m.init_params(cfg.seed), &p.train, &p.validation, &cfg).unwrap();
    let vals: Vec<f64> = out.log.epochs.iter().map(|e| e.val_total).collect();
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_val, min);
    assert_eq!(vals[out.best_epoch - 1], min);
    let again = evaluate_losses(
        &m,
        &out.params,
        &p.validation,
        &LossSetup::from_config(&cfg),
        cfg.batch_size,
    )
    .unwrap();
    assert!((again.total / again.windows as f64 - min).abs() < 1e-12);
    if out.stopped_early {
        // stopped exactly patience + 1 epochs after the best
        assert_eq!(out.log.epochs.len(), out.best_epoch + cfg.patience + 1);
    }
}

pub fn patience_zero_stops_at_first_non_improvement() {
    let cfg = TrainConfig {
        max_epochs: 30,
        patience: 0,
        stride: 4,
        learning_rate: 0.05,
        ..small_config()
    };
    let p = data(6, &cfg);
    let m = model(&cfg);
    let out = train(&m, m.init_params(cfg.seed), &p.train, &p.validation, &cfg).unwrap();
    let vals: Vec<f64> = out.log.epochs.iter().map(|e| e.val_total).collect();
    assert!(out.stopped_early, "{vals:?}");
    let n = vals.len();
    assert!(vals[..n - 1].windows(2).all(|w| w[1] < w[0]), "{vals:?}");
    assert!(vals[n - 1] >= vals[n - 2]);
}

pub fn repeated_batch_loss_does_not_increase() {
    let cfg = TrainConfig {
        learning_rate: 1e-4,
        ..small_config()
    };
    let p = data(4, &cfg);
    let m = model(&cfg);
    let mut params = m.init_params(1);
    let mut adam = AdamState::new(&params);
    let batch: Vec<&WindowSample> = p.train.iter().take(16).collect();
    let setup = LossSetup::from_config(&cfg);
    let hyper = AdamHyper::from_config(&cfg);
    let mut prev = f64::INFINITY;
    for step in 0..5 {
        let s = train_step(&m, &mut params, &mut adam, &batch, &setup, &hyper, cfg.grad_clip).unwrap();
        assert!(s.total <= prev, "step {step}: {} > {prev}", s.total);
        prev = s.total;
    }
}

pub fn nan_target_names_component_and_batch() {
    let cfg = TrainConfig {
        max_epochs: 1,
        stride: 4,
        ..small_config()
    };
    let p = data(4, &cfg);
    let mut train_set = p.train.clone();
    train_set.iter_mut().for_each(|w| w.rul = f64::NAN);
    let m = model(&cfg);
    let err = train(&m, m.init_params(0), &train_set, &p.validation, &cfg).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("rul") && msg.contains("batch 1"), "{msg}");
    assert_eq!(err.exit_code(), 3);
}
