use mvpure_demo::{localization_steps, mse_curves, spectrum_explorer};
use serde_json::Value;

fn call(f: fn(&str) -> Result<String, String>, params: &str) -> Value {
    serde_json::from_str(&f(params).unwrap()).unwrap()
}

#[test]
fn spectrum_defaults() {
    let v = call(spectrum_explorer, "");
    assert_eq!(v["l0_true"], 3);
    assert_eq!(v["l0_est"], 3);
    let lambdas = v["lambdas"].as_array().unwrap();
    assert_eq!(lambdas.len(), 24);
    assert!(lambdas.iter().all(|l| l.as_f64().unwrap() >= 1.0 - 1e-9));
    let loss: Vec<f64> = v["resolution_loss"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(loss.len(), 3);
    assert!(loss.windows(2).all(|w| w[0] >= w[1]));
    assert!(loss[2].abs() < 1e-12);
}

#[test]
fn spectrum_printed_rule_keeps_every_source() {
    let v = call(spectrum_explorer, r#"{"snr": [2.0, 0.3], "rank_rule": "printed"}"#);
    assert_eq!(v["r_opt"], v["l0_est"]);
}

#[test]
fn localization_trace_covers_every_candidate() {
    let v = call(localization_steps, r#"{"seed": 4, "index": "mpz_mvp"}"#);
    let mut truth: Vec<u64> = v["true_sources"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    let mut found: Vec<u64> = v["found"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    truth.sort();
    found.sort();
    assert_eq!(truth, found);
    let steps = v["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 3);
    for (k, s) in steps.iter().enumerate() {
        let values = s["values"].as_array().unwrap();
        assert_eq!(values.len(), 40);
        assert_eq!(values.iter().filter(|x| x.is_null()).count(), k);
    }
}

#[test]
fn mse_curves_with_samples() {
    let exact = call(mse_curves, r#"{"seed": 2}"#);
    let lcmv_r = exact["lcmv_r"].as_f64().unwrap();
    let full_rank = exact["mvp_r"].as_array().unwrap().last().unwrap().as_f64().unwrap();
    assert!((lcmv_r - full_rank).abs() < 1e-8);
    let est = call(mse_curves, r#"{"seed": 2, "samples": 400, "reg": 0.01}"#);
    assert_eq!(est["ranks"].as_array().unwrap().len(), 3);
    assert!(est["mvp_n"].as_array().unwrap().iter().all(|x| x.as_f64().unwrap().is_finite()));
}

#[test]
fn bad_parameters_are_reported() {
    assert!(spectrum_explorer(r#"{"channels": "many"}"#).is_err());
    assert!(mse_curves(r#"{"chanels": 4}"#).is_err());
    assert!(localization_steps(r#"{"channels": 2, "snr": [1, 1, 1]}"#).is_err());
}
