//! Hand-evaluated loss and metric values, and mask invariance.

use mafn_core::loss::{
    degradation_loss_value, forecast_loss_value, rul_loss_value, state_loss_value, total_loss_value, LossWeights,
};
use mafn_core::metrics::{re, relative_error, rmse, score, RE_EPSILON};

pub fn degradation_hand_values() {
    assert!((degradation_loss_value(&[0.0, 2.0, 1.0], 0.5).unwrap() - 1.75).abs() <= 1e-12);
    assert_eq!(degradation_loss_value(&[1.0, 0.0], 0.0).unwrap(), 1.0);
    assert_eq!(degradation_loss_value(&[0.0, 0.5, 2.0], 0.0).unwrap(), 0.0);
    assert!(degradation_loss_value(&[1.0], 0.1).is_err());
}

pub fn rul_asymmetry_hand_values() {
    assert!((rul_loss_value(&[55.0], &[50.0], 2.0, 1.0).unwrap() - 50.0).abs() <= 1e-12);
    assert!((rul_loss_value(&[45.0], &[50.0], 2.0, 1.0).unwrap() - 25.0).abs() <= 1e-12);
    assert_eq!(rul_loss_value(&[7.0, 3.0], &[7.0, 3.0], 2.0, 1.0).unwrap(), 0.0);
    assert!(rul_loss_value(&[], &[], 2.0, 1.0).is_err());
}

pub fn score_and_re_hand_values() {
    let e1 = std::f64::consts::E - 1.0;
    assert!((score(&[60.0], &[50.0]).unwrap() - e1).abs() <= 1e-9);
    assert!((score(&[37.0], &[50.0]).unwrap() - e1).abs() <= 1e-9);
    assert_eq!(RE_EPSILON, 1e-8);
    // zero truth: |ŷ − 0| / (0 + 1e-8)
    assert_eq!(re(&[1e-8], &[0.0]).unwrap(), 1.0);
    assert_eq!(
        re(&[2.0], &[4.0]).unwrap(),
        relative_error(&[2.0], &[4.0], 1e-8).unwrap()
    );
    assert_eq!(rmse(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 0.0);
}

pub fn state_and_forecast_hand_values() {
    let uniform = vec![vec![0.3; 4]; 2];
    let l = state_loss_value(&uniform, &[1, 3], &[true, true]).unwrap();
    assert!((l - 4f64.ln()).abs() <= 1e-12);
    let f = forecast_loss_value(&[vec![1.0, -1.0]], &[vec![0.0, 0.0]], &[true]).unwrap();
    assert_eq!(f, 2.0);
    assert!(forecast_loss_value(&[vec![1.0]], &[vec![0.0]], &[false]).is_err());
}

pub fn total_is_weighted_sum() {
    let ones = LossWeights {
        w_state: 1.0,
        w_degradation: 1.0,
        w_forecast: 1.0,
        w_rul: 1.0,
        ..LossWeights::default()
    };
    assert_eq!(total_loss_value([1.0, 2.0, 3.0, 4.0], &ones).unwrap(), 10.0);
    let only_rul = LossWeights {
        w_state: 0.0,
        w_degradation: 0.0,
        w_forecast: 0.0,
        w_rul: 1.0,
        ..LossWeights::default()
    };
    assert_eq!(total_loss_value([1.0, 2.0, 3.0, 4.0], &only_rul).unwrap(), 4.0);
    let err = total_loss_value([1.0, f64::NAN, 3.0, 4.0], &ones)
        .unwrap_err()
        .to_string();
    assert!(err.contains("degradation"), "{err}");
}
