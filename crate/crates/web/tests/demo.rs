use alignnet_web::train_demo_json;
use serde_json::Value;

#[test]
fn train_demo_reports_both_regimens() {
    let v: Value = serde_json::from_str(&train_demo_json(0.8, 1, 6).unwrap()).unwrap();
    let scores = v["scores"].as_array().unwrap();
    assert_eq!(scores.len(), 2);
    for s in scores {
        assert!(s["pooled_rmse"].as_f64().unwrap().is_finite());
        assert_eq!(s["per_dataset"].as_array().unwrap().len(), 3);
    }
    let curves = v["curves"].as_array().unwrap();
    assert_eq!(curves.len(), 3);
    for p in curves[0]["points"].as_array().unwrap() {
        assert_eq!(p[0], p[1], "reference curve is the identity");
    }
    assert_eq!(v["distortions"].as_array().unwrap().len(), 3);
}

#[test]
fn train_demo_is_deterministic() {
    assert_eq!(train_demo_json(0.5, 3, 3).unwrap(), train_demo_json(0.5, 3, 3).unwrap());
}
