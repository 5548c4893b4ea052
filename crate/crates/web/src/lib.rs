//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string. The `*_json` functions hold the logic
//! and are what the native tests call.

use alignnet::io::to_json;
use alignnet::metrics::{alignment_curves, evaluate};
use alignnet::model::{Estimator, ModelConfig};
use alignnet::nn::mse;
use alignnet::sim::{grid, make_distortion, ExperimentConfig, SimulationConfig};
use alignnet::training::{train_regimen, weighted_loss, RegimenKind, TrainConfig};
use alignnet::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct DistortionCurve {
    severity: f64,
    seed: u64,
    points: Vec<(f64, f64)>,
}

/// Samples the monotone distortion drawn for `severity` and `seed` on [1, 5].
pub fn distortion_json(severity: f64, seed: u64, points: usize) -> Result<String> {
    let p = make_distortion(severity, seed)?;
    let points = grid(1.0, 5.0, points.max(2)).map(|s| (s, p.eval(s))).collect();
    to_json(&DistortionCurve { severity, seed, points })
}

#[derive(Serialize)]
struct LossCurve {
    factor: usize,
    constants: Vec<f64>,
    balanced: Vec<f64>,
    pooled: Vec<f64>,
    balanced_min: f64,
    pooled_min: f64,
}

/// A constant predictor against two datasets that rate one clip 2.0 and 4.0,
/// the second holding `factor` times as many ratings. Returns both losses
/// over a grid of constants.
pub fn loss_landscape_json(factor: usize, points: usize) -> Result<String> {
    if factor == 0 {
        return Err(Error::Config("factor must be at least 1".into()));
    }
    let a = vec![2.0; 8];
    let b = vec![4.0; 8 * factor];
    let pooled_targets: Vec<f64> = a.iter().chain(&b).copied().collect();
    let constants: Vec<f64> = grid(1.0, 5.0, points.max(2)).collect();
    let mut balanced = Vec::with_capacity(constants.len());
    let mut pooled = Vec::with_capacity(constants.len());
    for &c in &constants {
        let ea = vec![c; a.len()];
        let eb = vec![c; b.len()];
        balanced.push(weighted_loss(&[(&a, &ea), (&b, &eb)])?);
        pooled.push(mse(&pooled_targets, &vec![c; pooled_targets.len()])?);
    }
    let k = factor as f64;
    to_json(&LossCurve {
        factor,
        constants,
        balanced,
        pooled,
        balanced_min: 3.0,
        pooled_min: (2.0 + 4.0 * k) / (1.0 + k),
    })
}

#[derive(Serialize)]
struct RegimenScore {
    regimen: String,
    per_dataset: Vec<(String, f64)>,
    pooled_rmse: f64,
}

#[derive(Serialize)]
struct TrainDemo {
    scores: Vec<RegimenScore>,
    curves: Vec<alignnet::metrics::AlignmentCurve>,
    distortions: Vec<(String, Vec<(f64, f64)>)>,
}

fn demo_simulation(severity: f64) -> SimulationConfig {
    let exp = |name: &str, n_files, severity, is_reference| ExperimentConfig {
        name: name.into(),
        n_files,
        votes_per_file: 6,
        vote_noise_sd: 0.6,
        severity,
        condition_range: (1.0, 5.0),
        is_reference,
    };
    SimulationConfig {
        feature_dim: 8,
        feature_noise_sd: 0.2,
        common_fraction: 0.2,
        experiment: vec![
            exp("ref", 300, 0.0, true),
            exp("shifted", 200, severity * 0.5, false),
            exp("warped", 200, severity, false),
        ],
    }
}

fn demo_training(seed: u64, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs_pretrain: epochs,
        epochs_finetune: epochs,
        batch_size: 16,
        patience: epochs,
        seed,
        ..TrainConfig::default()
    };
    cfg.model = ModelConfig {
        audio_hidden: vec![32, 32],
        ..cfg.model
    };
    cfg
}

/// Simulates three small experiments, trains pooled and aligned regimens and
/// reports test RMSE plus the learned and generating alignment curves.
pub fn train_demo_json(severity: f64, seed: u64, epochs: usize) -> Result<String> {
    let sim = demo_simulation(severity.clamp(0.0, 1.0));
    let (collection, oracle) = sim.build(seed)?;
    let cfg = demo_training(seed, epochs.clamp(1, 200));
    let mut scores = Vec::new();
    let mut curves = Vec::new();
    for regimen in [RegimenKind::All, RegimenKind::AllMdfAlignnet] {
        let outcome = train_regimen(regimen, &collection, &cfg, None)?;
        let est = &outcome.checkpoint.estimator;
        let (report, _) = evaluate(regimen.label(), est, &collection, Some(&oracle))?;
        scores.push(RegimenScore {
            regimen: regimen.label().to_string(),
            per_dataset: report.per_dataset.iter().map(|d| (d.name.clone(), d.rmse)).collect(),
            pooled_rmse: report.pooled.rmse,
        });
        if let Estimator::Aligned(model) = est {
            curves = alignment_curves(model, &collection, 61)?;
        }
    }
    let distortions = curves
        .iter()
        .filter_map(|c| {
            let exp = oracle.experiment(&c.dataset)?;
            let (lo, hi) = c.range()?;
            let pts = grid(lo, hi, 61).map(|s| (s, exp.distortion.eval(s).clamp(1.0, 5.0)));
            Some((c.dataset.clone(), pts.collect()))
        })
        .collect();
    to_json(&TrainDemo {
        scores,
        curves,
        distortions,
    })
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn distortion(severity: f64, seed: u32, points: usize) -> std::result::Result<String, JsError> {
    js(distortion_json(severity, seed.into(), points))
}

#[wasm_bindgen(js_name = lossLandscape)]
pub fn loss_landscape(factor: usize, points: usize) -> std::result::Result<String, JsError> {
    js(loss_landscape_json(factor, points))
}

#[wasm_bindgen(js_name = trainDemo)]
pub fn train_demo(severity: f64, seed: u32, epochs: usize) -> std::result::Result<String, JsError> {
    js(train_demo_json(severity, seed.into(), epochs))
}
