//! Small constructed collections with known loss floors.

use crate::data::{Dataset, DatasetCollection, Sample, SampleSet};

/// The single feature vector shared by both datasets of
/// [`conflicting_targets`].
pub const SHARED_INPUT: [f64; 2] = [0.5, -0.25];

fn repeated(id: &str, features: &[f64], score: f64, n: usize) -> SampleSet {
    let samples: Vec<Sample> = (0..n)
        .map(|i| Sample {
            file_id: format!("{id}{i}"),
            features: features.to_vec(),
            score,
        })
        .collect();
    SampleSet::new(&samples, features.len()).expect("finite fixture")
}

/// Two datasets rating the same input: 2.0 in the reference `a`, 4.0 in `b`.
pub fn conflicting_targets() -> DatasetCollection {
    let make = |name: &str, reference: bool, score: f64| {
        Dataset::with_splits(
            name,
            reference,
            repeated("shared", &SHARED_INPUT, score, 16),
            repeated("shared", &SHARED_INPUT, score, 2),
            repeated("shared", &SHARED_INPUT, score, 2),
        )
        .expect("nonempty fixture")
    };
    DatasetCollection::new(vec![make("a", true, 2.0), make("b", false, 4.0)]).expect("valid fixture")
}

/// Target function of [`affine_corpus`] on the reference scale.
pub fn affine_target(x: &[f64]) -> f64 {
    1.0 + 2.0 * x[0] + 2.0 * x[1]
}

/// Affine map from the reference scale to dataset `b`'s scale.
pub const AFFINE_B: (f64, f64) = (0.5, 1.0);

fn affine_inputs(n: usize) -> Vec<[f64; 2]> {
    // Deterministic low-discrepancy points in [0, 1]^2.
    let phi = 0.618_033_988_749_894_9;
    (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64;
            [u, (i as f64 * phi).fract()]
        })
        .collect()
}

/// Reference `a` scores `affine_target(x)`; `b` scores the same inputs with
/// `0.5 * affine_target(x) + 1`.
pub fn affine_corpus() -> DatasetCollection {
    let inputs = affine_inputs(80);
    let make = |name: &str, reference: bool, map: (f64, f64)| {
        let samples: Vec<Sample> = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| Sample {
                file_id: format!("x{i:03}"),
                features: x.to_vec(),
                score: map.0 * affine_target(x) + map.1,
            })
            .collect();
        Dataset::from_samples(name, reference, 2, samples).expect("valid fixture")
    };
    DatasetCollection::new(vec![make("a", true, (1.0, 0.0)), make("b", false, AFFINE_B)]).expect("valid fixture")
}

/// Lowest dataset-balanced training loss any single unaligned estimator can
/// reach on [`affine_corpus`]: at each input the best shared estimate is the
/// midpoint of the two targets.
pub fn affine_conflict_floor() -> f64 {
    let c = affine_corpus();
    let a = c.datasets()[0].train().scores();
    let b = c.datasets()[1].train().scores();
    let per: Vec<f64> = a.iter().zip(b).map(|(x, y)| ((x - y) / 2.0).powi(2)).collect();
    // Each dataset contributes the same squared half-gap.
    per.iter().sum::<f64>() / per.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::weighted_loss;

    #[test]
    fn conflict_floor_is_brute_force_minimum() {
        let c = affine_corpus();
        let a = c.datasets()[0].train().scores();
        let b = c.datasets()[1].train().scores();
        let floor = affine_conflict_floor();
        assert!(floor > 0.01);
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect();
        assert!((weighted_loss(&[(a, &mid), (b, &mid)]).unwrap() - floor).abs() < 1e-12);
        for delta in [-0.1, -0.01, 0.01, 0.1] {
            let moved: Vec<f64> = mid.iter().map(|m| m + delta).collect();
            assert!(weighted_loss(&[(a, &moved), (b, &moved)]).unwrap() > floor);
        }
    }

    #[test]
    fn conflicting_fixture_shape() {
        let c = conflicting_targets();
        assert_eq!(c.reference().name(), "a");
        assert!(c.datasets()[1].train().scores().iter().all(|&s| s == 4.0));
    }
}
