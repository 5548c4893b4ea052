//! AudioNet + AlignmentNet composition.
//!
//! The AudioNet maps features to an intermediate score on the reference
//! dataset's scale. The AlignmentNet looks up a learned embedding for the
//! dataset indicator, concatenates it with the intermediate score, and maps
//! the pair to a score on that dataset's scale. The reference dataset bypasses
//! the AlignmentNet entirely, so its alignment is the identity bit for bit.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use crate::data::DatasetIndicator;
use crate::metrics::AlignmentCurve;
use crate::nn::{mse, mse_gradient, Layout, ParamVector};
use crate::numeric::hash_f64s;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden widths of the AudioNet MLP.
    pub audio_hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub align_width: usize,
    pub align_hidden_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            audio_hidden: vec![512, 512],
            embedding_dim: 10,
            align_width: 16,
            align_hidden_layers: 5,
        }
    }
}

impl ModelConfig {
    pub fn audio_layout(&self, feature_dim: usize) -> Result<Layout> {
        Layout::mlp(feature_dim, &self.audio_hidden, 1)
    }

    pub fn align_layout(&self) -> Result<Layout> {
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        let hidden = vec![self.align_width; self.align_hidden_layers];
        Layout::mlp(1 + self.embedding_dim, &hidden, 1)
    }
}

/// One embedding row per dataset, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    values: Vec<f64>,
}

impl EmbeddingTable {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("embedding rows must share a positive width".into()));
        }
        Ok(Self {
            dim,
            values: rows.concat(),
        })
    }

    pub fn random<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            dim,
            values: (0..count * dim).map(|_| StandardNormal.sample(rng)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignModel {
    audio: ParamVector,
    align: ParamVector,
    embeddings: EmbeddingTable,
    reference_index: usize,
}

/// Gradients of one loss term with respect to each parameter group.
/// `audio` is `None` when the AudioNet was frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub audio: Option<Vec<f64>>,
    pub align: Vec<f64>,
    pub embeddings: Vec<f64>,
}

impl ModelGrads {
    /// `self += other`, group by group.
    pub fn accumulate(&mut self, other: &ModelGrads) {
        add_into(&mut self.align, &other.align);
        add_into(&mut self.embeddings, &other.embeddings);
        match (&mut self.audio, &other.audio) {
            (Some(a), Some(b)) => add_into(a, b),
            (None, Some(b)) => self.audio = Some(b.clone()),
            _ => {}
        }
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

impl AlignModel {
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        n_datasets: usize,
        reference_index: usize,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let audio = ParamVector::glorot(config.audio_layout(feature_dim)?, rng);
        Self::with_audio(audio, n_datasets, reference_index, config, rng)
    }

    /// Fresh AlignmentNet and embeddings on top of an existing AudioNet.
    pub fn with_audio<R: Rng + ?Sized>(
        audio: ParamVector,
        n_datasets: usize,
        reference_index: usize,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let align = ParamVector::glorot(config.align_layout()?, rng);
        let embeddings = EmbeddingTable::random(n_datasets, config.embedding_dim, rng);
        Self::from_parts(audio, align, embeddings, reference_index)
    }

    pub fn from_parts(
        audio: ParamVector,
        align: ParamVector,
        embeddings: EmbeddingTable,
        reference_index: usize,
    ) -> Result<Self> {
        if audio.layout().output_width() != Some(1) {
            return Err(Error::Shape("AudioNet must produce one score".into()));
        }
        if align.layout().input_width() != Some(1 + embeddings.dim())
            || align.layout().output_width() != Some(1)
        {
            return Err(Error::Shape(format!(
                "AlignmentNet must map {} inputs to one score",
                1 + embeddings.dim()
            )));
        }
        if reference_index >= embeddings.count() {
            return Err(Error::Indicator {
                index: reference_index,
                count: embeddings.count(),
            });
        }
        Ok(Self {
            audio,
            align,
            embeddings,
            reference_index,
        })
    }

    pub fn audio(&self) -> &ParamVector {
        &self.audio
    }

    pub fn audio_mut(&mut self) -> &mut ParamVector {
        &mut self.audio
    }

    pub fn align_params(&self) -> &ParamVector {
        &self.align
    }

    pub fn align_mut(&mut self) -> &mut ParamVector {
        &mut self.align
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    pub fn embeddings_mut(&mut self) -> &mut EmbeddingTable {
        &mut self.embeddings
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn dataset_count(&self) -> usize {
        self.embeddings.count()
    }

    /// AlignmentNet MLP plus embedding table.
    pub fn alignment_param_count(&self) -> usize {
        self.align.len() + self.embeddings.values.len()
    }

    pub fn total_param_count(&self) -> usize {
        self.audio.len() + self.alignment_param_count()
    }

    pub fn audio_hash(&self) -> u64 {
        hash_f64s(self.audio.values())
    }

    /// Hash of the AlignmentNet weights and embeddings together.
    pub fn alignment_hash(&self) -> u64 {
        hash_f64s(self.align.values()) ^ hash_f64s(self.embeddings.values()).rotate_left(1)
    }

    pub fn indicator(&self, index: usize) -> Result<DatasetIndicator> {
        self.check_index(index)?;
        Ok(DatasetIndicator {
            index,
            is_reference: index == self.reference_index,
        })
    }

    fn check_indicator(&self, indicator: DatasetIndicator) -> Result<()> {
        self.check_index(indicator.index)?;
        if indicator.is_reference != (indicator.index == self.reference_index) {
            return Err(Error::Config(format!(
                "indicator {} disagrees with reference dataset {}",
                indicator.index, self.reference_index
            )));
        }
        Ok(())
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.dataset_count() {
            return Err(Error::Indicator {
                index,
                count: self.dataset_count(),
            });
        }
        Ok(())
    }

    /// Intermediate (reference-scale) scores; not clamped to 1..5.
    pub fn audionet_estimate(&self, features: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.audio.forward(features)
    }

    fn align_inputs(&self, intermediate: &[f64], index: usize) -> Array2<f64> {
        let emb = self.embeddings.row(index);
        let mut x = Array2::zeros((intermediate.len(), 1 + emb.len()));
        for (mut row, &s) in x.rows_mut().into_iter().zip(intermediate) {
            row[0] = s;
            for (dst, &e) in row.iter_mut().skip(1).zip(emb) {
                *dst = e;
            }
        }
        x
    }

    /// Maps intermediate scores to the scale of `indicator`'s dataset.
    pub fn align(&self, intermediate: &[f64], indicator: DatasetIndicator) -> Result<Vec<f64>> {
        self.check_indicator(indicator)?;
        if indicator.is_reference {
            return Ok(intermediate.to_vec());
        }
        if intermediate.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.align_inputs(intermediate, indicator.index);
        Ok(self.align.forward(x.view())?.to_vec())
    }

    pub fn forward(&self, features: ArrayView2<'_, f64>, indicator: DatasetIndicator) -> Result<Array1<f64>> {
        self.check_indicator(indicator)?;
        let s = self.audionet_estimate(features)?;
        if indicator.is_reference {
            return Ok(s);
        }
        Ok(Array1::from(self.align(s.as_slice().expect("contiguous"), indicator)?))
    }

    /// Alignment function evaluated on `grid`, which should span the
    /// intermediate scores observed on that dataset's training files.
    pub fn sample_alignment_curve(
        &self,
        indicator: DatasetIndicator,
        grid: &[f64],
        dataset: &str,
    ) -> Result<AlignmentCurve> {
        if grid.is_empty() {
            return Err(Error::Config("alignment grid is empty".into()));
        }
        if grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("alignment grid must be sorted ascending".into()));
        }
        let aligned = self.align(grid, indicator)?;
        Ok(AlignmentCurve {
            dataset: dataset.to_string(),
            points: grid.iter().copied().zip(aligned).collect(),
            fitted: None,
        })
    }

    /// `weight * mse(forward(features), targets)` and its gradients. The
    /// AudioNet backward pass is skipped when `train_audio` is false.
    pub fn loss_and_grads(
        &self,
        features: ArrayView2<'_, f64>,
        targets: &[f64],
        indicator: DatasetIndicator,
        weight: f64,
        train_audio: bool,
    ) -> Result<(f64, ModelGrads)> {
        self.check_indicator(indicator)?;
        let audio_trace = self.audio.trace(features)?;
        let s = audio_trace.output().to_owned();
        if s.len() != targets.len() {
            return Err(Error::Shape(format!("{} targets for {} rows", targets.len(), s.len())));
        }
        let mut grads = ModelGrads {
            audio: None,
            align: vec![0.0; self.align.len()],
            embeddings: vec![0.0; self.embeddings.values.len()],
        };
        let (loss, ds) = if indicator.is_reference {
            let loss = weight * mse(s.as_slice().expect("contiguous"), targets)?;
            (loss, mse_gradient(s.view(), targets, weight))
        } else {
            let x = self.align_inputs(s.as_slice().expect("contiguous"), indicator.index);
            let align_trace = self.align.trace(x.view())?;
            let y = align_trace.output().to_owned();
            let loss = weight * mse(y.as_slice().expect("contiguous"), targets)?;
            let upstream = mse_gradient(y.view(), targets, weight);
            let (g_align, dx) = self.align.backward_traced(&align_trace, upstream.view())?;
            grads.align = g_align.values;
            let d = self.embeddings.dim;
            let demb = dx.slice(ndarray::s![.., 1..]).sum_axis(Axis(0));
            grads.embeddings[indicator.index * d..(indicator.index + 1) * d]
                .copy_from_slice(demb.as_slice().expect("contiguous"));
            (loss, dx.column(0).to_owned())
        };
        if train_audio {
            let (g_audio, _) = self.audio.backward_traced(&audio_trace, ds.view())?;
            grads.audio = Some(g_audio.values);
        }
        Ok((loss, grads))
    }
}

/// A trained estimator: either a bare AudioNet or a full AlignNet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Estimator {
    Bare { audio: ParamVector },
    Aligned(AlignModel),
}

impl Estimator {
    pub fn audio(&self) -> &ParamVector {
        match self {
            Estimator::Bare { audio } => audio,
            Estimator::Aligned(m) => m.audio(),
        }
    }

    /// Scores on the scale of dataset `index`. Bare networks ignore the index.
    pub fn predict(&self, features: ArrayView2<'_, f64>, index: usize) -> Result<Array1<f64>> {
        match self {
            Estimator::Bare { audio } => audio.forward(features),
            Estimator::Aligned(m) => m.forward(features, m.indicator(index)?),
        }
    }

    /// Reference-scale scores, usable for datasets without an indicator.
    pub fn intermediate(&self, features: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.audio().forward(features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            audio_hidden: vec![6, 4],
            embedding_dim: 3,
            align_width: 5,
            align_hidden_layers: 2,
        }
    }

    fn model(seed: u64) -> AlignModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AlignModel::new(4, 3, 0, &small_config(), &mut rng).unwrap()
    }

    #[test]
    fn reference_bypass_is_exact() {
        let m = model(1);
        let ind = m.indicator(0).unwrap();
        assert_eq!(m.align(&[1.7, 4.2], ind).unwrap(), vec![1.7, 4.2]);
        let x = array![[0.1, 0.2, 0.3, 0.4], [1.0, 0.0, -1.0, 0.5]];
        assert_eq!(m.forward(x.view(), ind).unwrap(), m.audionet_estimate(x.view()).unwrap());
    }

    #[test]
    fn zero_alignment_weights_give_final_bias() {
        let mut m = model(2);
        let n = m.align.len();
        let v = m.align.values_mut();
        v.iter_mut().for_each(|x| *x = 0.0);
        v[n - 1] = 2.5;
        let ind = m.indicator(1).unwrap();
        assert_eq!(m.align(&[-3.0, 1.0, 9.0], ind).unwrap(), vec![2.5; 3]);
    }

    #[test]
    fn zero_audionet_estimates_zero() {
        let mut m = model(3);
        m.audio.values_mut().iter_mut().for_each(|x| *x = 0.0);
        let x = array![[0.1, 0.2, 0.3, 0.4]];
        assert_eq!(m.audionet_estimate(x.view()).unwrap().to_vec(), vec![0.0]);
    }

    #[test]
    fn unknown_indicator_rejected() {
        let m = model(4);
        assert!(matches!(m.indicator(3), Err(Error::Indicator { .. })));
        let forged = DatasetIndicator {
            index: 1,
            is_reference: true,
        };
        assert!(m.align(&[1.0], forged).is_err());
    }

    #[test]
    fn identical_embeddings_give_identical_alignments() {
        let mut m = model(5);
        let row = m.embeddings.row(1).to_vec();
        let d = m.embeddings.dim;
        m.embeddings.values[2 * d..3 * d].copy_from_slice(&row);
        let s = [1.0, 2.5, 4.0];
        assert_eq!(
            m.align(&s, m.indicator(1).unwrap()).unwrap(),
            m.align(&s, m.indicator(2).unwrap()).unwrap()
        );
    }

    #[test]
    fn shared_row_same_intermediate_different_final() {
        let m = model(6);
        let x = array![[0.3, -0.2, 0.8, 0.1]];
        let s = m.audionet_estimate(x.view()).unwrap();
        let a = m.forward(x.view(), m.indicator(1).unwrap()).unwrap();
        let b = m.forward(x.view(), m.indicator(2).unwrap()).unwrap();
        assert_eq!(s, m.audionet_estimate(x.view()).unwrap());
        assert_ne!(a, b);
    }

    #[test]
    fn curve_contract() {
        let m = model(7);
        let grid: Vec<f64> = crate::sim::grid(1.0, 5.0, 100).collect();
        let r = m.sample_alignment_curve(m.indicator(0).unwrap(), &grid, "ref").unwrap();
        assert!(r.points.iter().all(|(x, y)| x == y));
        let c = m.sample_alignment_curve(m.indicator(1).unwrap(), &grid, "b").unwrap();
        assert_eq!(c.points.len(), 100);
        assert!(c.points.iter().all(|(_, y)| y.is_finite()));
        assert!(m.sample_alignment_curve(m.indicator(1).unwrap(), &[2.0, 1.0], "b").is_err());
        assert!(m.sample_alignment_curve(m.indicator(1).unwrap(), &[], "b").is_err());
    }

    #[test]
    fn parameter_budget_at_default_sizes() {
        let cfg = ModelConfig::default();
        // 11*16+16, 4 x (16*16+16), 16+1
        assert_eq!(cfg.align_layout().unwrap().param_count(), 192 + 4 * 272 + 17);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = AlignModel::new(16, 4, 0, &cfg, &mut rng).unwrap();
        assert_eq!(m.alignment_param_count(), 1297 + 40);
        assert!((m.alignment_param_count() as f64) < 0.005 * m.total_param_count() as f64);
    }

    /// Central differences over every parameter group of the composed model.
    #[test]
    fn composed_gradient_matches_finite_differences() {
        let m = model(8);
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let t: Vec<f64> = (0..5).map(|_| rng.random_range(1.0..5.0)).collect();
        for index in [0, 2] {
            let ind = m.indicator(index).unwrap();
            let (_, g) = m.loss_and_grads(x.view(), &t, ind, 0.7, true).unwrap();
            let loss = |mm: &AlignModel| {
                let y = mm.forward(x.view(), ind).unwrap();
                0.7 * mse(y.as_slice().unwrap(), &t).unwrap()
            };
            let eps = 1e-6;
            let check = |get: &dyn Fn(&mut AlignModel) -> &mut [f64], analytic: &[f64]| {
                let n = analytic.len();
                for i in 0..n {
                    let mut up = m.clone();
                    get(&mut up)[i] += eps;
                    let mut down = m.clone();
                    get(&mut down)[i] -= eps;
                    let numeric = (loss(&up) - loss(&down)) / (2.0 * eps);
                    let a = analytic[i];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
                    assert!(rel < 1e-4, "index {index} param {i}: {a} vs {numeric}");
                }
            };
            check(&|mm| mm.audio.values_mut(), g.audio.as_ref().unwrap());
            check(&|mm| mm.align.values_mut(), &g.align);
            check(&|mm| mm.embeddings.values_mut(), &g.embeddings);
        }
    }

    #[test]
    fn frozen_audio_skips_gradient() {
        let m = model(9);
        let x = array![[0.1, 0.2, 0.3, 0.4]];
        let (_, g) = m.loss_and_grads(x.view(), &[3.0], m.indicator(1).unwrap(), 1.0, false).unwrap();
        assert!(g.audio.is_none());
    }
}
