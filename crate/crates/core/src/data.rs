//! Rated datasets, their train/validation/test splits, and the collection
//! that fixes dataset indices and the reference dataset.

use ndarray::Array2;

use crate::{Error, Result};

/// Fractions of each dataset assigned to training and validation; the rest
/// is the test split.
pub const TRAIN_FRACTION: f64 = 0.8;
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub file_id: String,
    pub features: Vec<f64>,
    pub score: f64,
}

/// Column-oriented set of samples sharing one feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    file_ids: Vec<String>,
    features: Array2<f64>,
    scores: Vec<f64>,
}

impl SampleSet {
    pub fn new(samples: &[Sample], feature_dim: usize) -> Result<Self> {
        let mut flat = Vec::with_capacity(samples.len() * feature_dim);
        for s in samples {
            if s.features.len() != feature_dim {
                return Err(Error::Shape(format!(
                    "file {} has {} features, expected {feature_dim}",
                    s.file_id,
                    s.features.len()
                )));
            }
            if !s.score.is_finite() || s.features.iter().any(|f| !f.is_finite()) {
                return Err(Error::NonFinite(format!("file {}", s.file_id)));
            }
            flat.extend_from_slice(&s.features);
        }
        Ok(Self {
            file_ids: samples.iter().map(|s| s.file_id.clone()).collect(),
            features: Array2::from_shape_vec((samples.len(), feature_dim), flat)
                .expect("sized above"),
            scores: samples.iter().map(|s| s.score).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn file_ids(&self) -> &[String] {
        &self.file_ids
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> (Array2<f64>, Vec<f64>) {
        let features = self.features.select(ndarray::Axis(0), indices);
        let scores = indices.iter().map(|&i| self.scores[i]).collect();
        (features, scores)
    }

    pub fn samples(&self) -> Vec<Sample> {
        (0..self.len())
            .map(|i| Sample {
                file_id: self.file_ids[i].clone(),
                features: self.features.row(i).to_vec(),
                score: self.scores[i],
            })
            .collect()
    }

    /// Every sample repeated `k` times (block-wise).
    pub fn repeated(&self, k: usize) -> Self {
        let samples = self.samples();
        let all: Vec<Sample> = (0..k).flat_map(|_| samples.iter().cloned()).collect();
        Self::new(&all, self.features.ncols()).expect("same shape as self")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    is_reference: bool,
    train: SampleSet,
    validation: SampleSet,
    test: SampleSet,
}

/// `(train, validation)` sizes for `n` files; the remainder is test.
pub fn split_sizes(n: usize) -> (usize, usize) {
    let train = (TRAIN_FRACTION * n as f64).round() as usize;
    let validation = ((VALIDATION_FRACTION * n as f64).round() as usize).min(n - train);
    (train, validation)
}

impl Dataset {
    /// Positional 80/10/10 split of `samples` in file order.
    pub fn from_samples(
        name: &str,
        is_reference: bool,
        feature_dim: usize,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        let (n_train, n_val) = split_sizes(samples.len());
        let train = &samples[..n_train];
        let validation = &samples[n_train..n_train + n_val];
        let test = &samples[n_train + n_val..];
        Self::with_splits(
            name,
            is_reference,
            SampleSet::new(train, feature_dim)?,
            SampleSet::new(validation, feature_dim)?,
            SampleSet::new(test, feature_dim)?,
        )
    }

    pub fn with_splits(
        name: &str,
        is_reference: bool,
        train: SampleSet,
        validation: SampleSet,
        test: SampleSet,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config(format!("dataset {name} has no training files")));
        }
        let width = train.features().ncols();
        if validation.features().ncols() != width || test.features().ncols() != width {
            return Err(Error::Shape(format!("dataset {name} splits disagree on feature width")));
        }
        Ok(Self {
            name: name.to_string(),
            is_reference,
            train,
            validation,
            test,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_reference(&self) -> bool {
        self.is_reference
    }

    pub fn train(&self) -> &SampleSet {
        &self.train
    }

    pub fn validation(&self) -> &SampleSet {
        &self.validation
    }

    pub fn test(&self) -> &SampleSet {
        &self.test
    }

    pub fn feature_dim(&self) -> usize {
        self.train.features().ncols()
    }

    /// Train, validation, then test samples: the on-disk file order.
    pub fn all_samples(&self) -> Vec<Sample> {
        let mut out = self.train.samples();
        out.extend(self.validation.samples());
        out.extend(self.test.samples());
        out
    }

    /// Copy with the training split repeated `k` times.
    pub fn with_repeated_training(&self, k: usize) -> Self {
        Self {
            train: self.train.repeated(k),
            ..self.clone()
        }
    }

    pub fn with_reference(mut self, is_reference: bool) -> Self {
        self.is_reference = is_reference;
        self
    }
}

/// Categorical dataset indicator fed to the alignment network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetIndicator {
    pub index: usize,
    pub is_reference: bool,
}

/// Ordered datasets with exactly one reference.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetCollection {
    datasets: Vec<Dataset>,
    reference_index: usize,
}

impl DatasetCollection {
    pub fn new(datasets: Vec<Dataset>) -> Result<Self> {
        let refs: Vec<usize> = datasets
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_reference)
            .map(|(i, _)| i)
            .collect();
        if refs.len() != 1 {
            return Err(Error::Config(format!(
                "exactly one reference dataset required, found {}",
                refs.len()
            )));
        }
        let width = datasets[0].feature_dim();
        for d in &datasets {
            if d.feature_dim() != width {
                return Err(Error::Shape(format!(
                    "dataset {} has feature width {}, expected {width}",
                    d.name,
                    d.feature_dim()
                )));
            }
        }
        for (i, d) in datasets.iter().enumerate() {
            if datasets[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::Config(format!("duplicate dataset name {}", d.name)));
            }
        }
        Ok(Self {
            reference_index: refs[0],
            datasets,
        })
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn reference(&self) -> &Dataset {
        &self.datasets[self.reference_index]
    }

    pub fn feature_dim(&self) -> usize {
        self.datasets[0].feature_dim()
    }

    pub fn names(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.datasets.iter().position(|d| d.name == name)
    }

    pub fn indicator(&self, index: usize) -> Result<DatasetIndicator> {
        if index >= self.datasets.len() {
            return Err(Error::Indicator {
                index,
                count: self.datasets.len(),
            });
        }
        Ok(DatasetIndicator {
            index,
            is_reference: index == self.reference_index,
        })
    }

    /// A one-dataset collection holding `index`, marked as its reference.
    pub fn single(&self, index: usize) -> Result<Self> {
        self.indicator(index)?;
        Self::new(vec![self.datasets[index].clone().with_reference(true)])
    }

    pub fn replace(&self, index: usize, dataset: Dataset) -> Result<Self> {
        let mut datasets = self.datasets.clone();
        datasets[index] = dataset;
        Self::new(datasets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                file_id: format!("f{i}"),
                features: vec![i as f64, 1.0],
                score: 1.0 + (i % 4) as f64,
            })
            .collect()
    }

    #[test]
    fn split_is_80_10_10() {
        assert_eq!(split_sizes(100), (80, 10));
        assert_eq!(split_sizes(1000), (800, 100));
        assert_eq!(split_sizes(10), (8, 1));
        let d = Dataset::from_samples("a", true, 2, samples(100)).unwrap();
        assert_eq!(d.train().len(), 80);
        assert_eq!(d.validation().len(), 10);
        assert_eq!(d.test().len(), 10);
        assert_eq!(d.all_samples(), samples(100));
    }

    #[test]
    fn collection_requires_one_reference() {
        let a = Dataset::from_samples("a", true, 2, samples(20)).unwrap();
        let b = Dataset::from_samples("b", true, 2, samples(20)).unwrap();
        assert!(DatasetCollection::new(vec![a.clone(), b.clone()]).is_err());
        let c = DatasetCollection::new(vec![a, b.with_reference(false)]).unwrap();
        assert_eq!(c.reference_index(), 0);
        assert!(c.indicator(0).unwrap().is_reference);
        assert!(!c.indicator(1).unwrap().is_reference);
        assert!(matches!(c.indicator(2), Err(Error::Indicator { .. })));
    }

    #[test]
    fn feature_width_is_checked() {
        let mut s = samples(20);
        s[3].features.push(0.0);
        assert!(Dataset::from_samples("a", true, 2, s).is_err());
    }

    #[test]
    fn repeat_duplicates_training_rows() {
        let d = Dataset::from_samples("a", true, 2, samples(20)).unwrap();
        let r = d.with_repeated_training(3);
        assert_eq!(r.train().len(), 48);
        assert_eq!(r.test(), d.test());
    }
}
