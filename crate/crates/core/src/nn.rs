//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat `ParamVector`. A `Layout` maps slices of that
//! vector to per-layer weight matrices (row-major, `output x input`) followed
//! by bias vectors. Every network here produces a single scalar per input row.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::numeric::exact_sum;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Ordered layer descriptors. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LayerSpec>", into = "Vec<LayerSpec>")]
pub struct Layout {
    layers: Vec<LayerSpec>,
}

impl Layout {
    /// ReLU after every hidden layer, linear scalar output.
    pub fn mlp(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = input;
        for &h in hidden {
            layers.push(LayerSpec {
                input: width,
                output: h,
                activation: Activation::Relu,
            });
            width = h;
        }
        layers.push(LayerSpec {
            input: width,
            output,
            activation: Activation::Linear,
        });
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<LayerSpec>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.input == 0 || l.output == 0 {
                return Err(Error::Shape(format!("layer {i} has a zero width")));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].output != pair[1].input {
                return Err(Error::Shape(format!(
                    "layer output {} does not feed input {}",
                    pair[0].output, pair[1].input
                )));
            }
        }
        Ok(Self { layers })
    }

    /// A layout with no layers and therefore no parameters.
    pub fn empty() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn input_width(&self) -> Option<usize> {
        self.layers.first().map(|l| l.input)
    }

    pub fn output_width(&self) -> Option<usize> {
        self.layers.last().map(|l| l.output)
    }

    /// `(weight_offset, bias_offset)` for each layer.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut at = 0;
        self.layers
            .iter()
            .map(|l| {
                let w = at;
                let b = w + l.input * l.output;
                at = b + l.output;
                (w, b)
            })
            .collect()
    }
}

impl TryFrom<Vec<LayerSpec>> for Layout {
    type Error = Error;

    fn try_from(layers: Vec<LayerSpec>) -> Result<Self> {
        Self::from_layers(layers)
    }
}

impl From<Layout> for Vec<LayerSpec> {
    fn from(layout: Layout) -> Self {
        layout.layers
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    layout: Layout,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
}

/// Activations recorded by [`ParamVector::trace`].
#[derive(Debug, Clone)]
pub struct Trace {
    layers: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> ArrayView1<'_, f64> {
        self.layers.last().expect("trace holds the input").column(0)
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Vec<f64>,
    pub dataset_index: usize,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, targets: Vec<f64>, dataset_index: usize) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::Shape("batch has no rows".into()));
        }
        if inputs.nrows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} targets",
                inputs.nrows(),
                targets.len()
            )));
        }
        Ok(Self {
            inputs,
            targets,
            dataset_index,
        })
    }
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        let n = layout.param_count();
        Self {
            layout,
            values: vec![0.0; n],
        }
    }

    /// Uniform Glorot weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(layout: Layout, rng: &mut R) -> Self {
        let mut p = Self::zeros(layout);
        let offsets = p.layout.offsets();
        for (spec, (w, _)) in p.layout.layers.clone().iter().zip(offsets) {
            let limit = (6.0 / (spec.input + spec.output) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            for v in &mut p.values[w..w + spec.input * spec.output] {
                *v = dist.sample(rng);
            }
        }
        p
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.param_count() {
            return Err(Error::Shape(format!(
                "layout needs {} parameters, got {}",
                layout.param_count(),
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn layer_views(&self, i: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let spec = self.layout.layers[i];
        let (w, b) = self.layout.offsets()[i];
        let weights = ArrayView2::from_shape(
            (spec.output, spec.input),
            &self.values[w..w + spec.input * spec.output],
        )
        .expect("layout offsets are consistent");
        let bias = ArrayView1::from(&self.values[b..b + spec.output]);
        (weights, bias)
    }

    fn check_inputs(&self, inputs: &ArrayView2<'_, f64>) -> Result<()> {
        match self.layout.input_width() {
            None => Err(Error::Shape("network has no layers".into())),
            Some(w) if w != inputs.ncols() => Err(Error::Shape(format!(
                "network expects {w} input columns, got {}",
                inputs.ncols()
            ))),
            Some(_) if self.layout.output_width() != Some(1) => {
                Err(Error::Shape("network must have a scalar output".into()))
            }
            Some(_) => Ok(()),
        }
    }

    /// Forward pass that keeps every layer's activations for a later
    /// [`ParamVector::backward_traced`].
    pub fn trace(&self, inputs: ArrayView2<'_, f64>) -> Result<Trace> {
        self.check_inputs(&inputs)?;
        Ok(Trace {
            layers: self.forward_trace(inputs),
        })
    }

    pub fn backward_traced(
        &self,
        trace: &Trace,
        upstream: ArrayView1<'_, f64>,
    ) -> Result<(GradientVector, Array2<f64>)> {
        if trace.layers.len() != self.layout.layers.len() + 1 {
            return Err(Error::Shape("trace was produced by another layout".into()));
        }
        if upstream.len() != trace.layers[0].nrows() {
            return Err(Error::Shape(format!(
                "{} upstream gradients for {} rows",
                upstream.len(),
                trace.layers[0].nrows()
            )));
        }
        Ok(self.backward_trace(&trace.layers, upstream))
    }

    /// Post-activation outputs of every layer, with the input as entry 0.
    fn forward_trace(&self, inputs: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut trace = Vec::with_capacity(self.layout.layers.len() + 1);
        trace.push(inputs.to_owned());
        for (i, spec) in self.layout.layers.iter().enumerate() {
            let (w, b) = self.layer_views(i);
            let mut z = trace[i].dot(&w.t());
            z += &b;
            if spec.activation == Activation::Relu {
                z.mapv_inplace(|v| v.max(0.0));
            }
            trace.push(z);
        }
        trace
    }

    /// One scalar per input row.
    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.check_inputs(&inputs)?;
        let mut trace = self.forward_trace(inputs);
        let out = trace.pop().expect("at least one layer");
        Ok(out.column(0).to_owned())
    }

    /// Back-propagates `upstream` (dL/d output, one per row) and returns the
    /// parameter gradient together with dL/d input.
    pub fn backward_from(
        &self,
        inputs: ArrayView2<'_, f64>,
        upstream: ArrayView1<'_, f64>,
    ) -> Result<(GradientVector, Array2<f64>)> {
        self.check_inputs(&inputs)?;
        if upstream.len() != inputs.nrows() {
            return Err(Error::Shape(format!(
                "{} upstream gradients for {} rows",
                upstream.len(),
                inputs.nrows()
            )));
        }
        let trace = self.forward_trace(inputs);
        Ok(self.backward_trace(&trace, upstream))
    }

    fn backward_trace(
        &self,
        trace: &[Array2<f64>],
        upstream: ArrayView1<'_, f64>,
    ) -> (GradientVector, Array2<f64>) {
        let offsets = self.layout.offsets();
        let mut grads = vec![0.0; self.values.len()];
        let mut delta = upstream.insert_axis(Axis(1)).to_owned();
        for i in (0..self.layout.layers.len()).rev() {
            let spec = self.layout.layers[i];
            if spec.activation == Activation::Relu {
                delta.zip_mut_with(&trace[i + 1], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let dw = delta.t().dot(&trace[i]);
            let (w_at, b_at) = offsets[i];
            // dot() may hand back column-major storage; iter() is row-major.
            for (g, v) in grads[w_at..w_at + spec.input * spec.output].iter_mut().zip(dw.iter()) {
                *g = *v;
            }
            for (g, col) in grads[b_at..b_at + spec.output]
                .iter_mut()
                .zip(delta.columns())
            {
                *g = col.sum();
            }
            let (w, _) = self.layer_views(i);
            delta = delta.dot(&w);
        }
        (GradientVector { values: grads }, delta)
    }

    /// Loss `loss_weight * mse(forward(inputs), targets)` and its exact
    /// gradient with respect to every parameter.
    pub fn backward(&self, batch: &Batch, loss_weight: f64) -> Result<(f64, GradientVector)> {
        self.check_inputs(&batch.inputs.view())?;
        let trace = self.forward_trace(batch.inputs.view());
        let pred = trace.last().expect("at least one layer").column(0).to_owned();
        let loss = loss_weight * mse(pred.as_slice().expect("contiguous"), &batch.targets)?;
        let upstream = mse_gradient(pred.view(), &batch.targets, loss_weight);
        let (grads, _) = self.backward_trace(&trace, upstream.view());
        Ok((loss, grads))
    }
}

/// Mean of squared element-wise differences.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "mse over {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("mse of empty vectors".into()));
    }
    let sum = exact_sum(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)));
    Ok(sum / pred.len() as f64)
}

/// d(weight * mse)/d pred.
pub(crate) fn mse_gradient(pred: ArrayView1<'_, f64>, target: &[f64], weight: f64) -> Array1<f64> {
    let scale = 2.0 * weight / pred.len() as f64;
    Array1::from_iter(pred.iter().zip(target).map(|(p, t)| scale * (p - t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam { .. } => len,
        };
        Self {
            kind,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], step_size: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameters but {} gradient components",
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient component {i} is {}", grads[i])));
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= step_size * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.len() != params.len() {
                    return Err(Error::Shape("optimizer state sized for another vector".into()));
                }
                let t = self.t as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= step_size * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Max relative error between the analytic gradient and central differences.
pub fn finite_difference_check(params: &ParamVector, batch: &Batch, eps: f64) -> Result<f64> {
    finite_difference_check_with(params, batch, eps, |p, b| p.backward(b, 1.0).map(|r| r.1))
}

/// Same check against an arbitrary gradient routine, so faults can be injected.
pub fn finite_difference_check_with<F>(
    params: &ParamVector,
    batch: &Batch,
    eps: f64,
    gradient: F,
) -> Result<f64>
where
    F: Fn(&ParamVector, &Batch) -> Result<GradientVector>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    if params.is_empty() {
        return Ok(0.0);
    }
    let analytic = gradient(params, batch)?;
    let loss_at = |p: &ParamVector| -> Result<f64> {
        let pred = p.forward(batch.inputs.view())?;
        mse(pred.as_slice().expect("contiguous"), &batch.targets)
    };
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = params.values[i];
        probe.values[i] = orig + eps;
        let up = loss_at(&probe)?;
        probe.values[i] = orig - eps;
        let down = loss_at(&probe)?;
        probe.values[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.values[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_layer() -> ParamVector {
        // 2 -> 2 (relu) -> 1
        let layout = Layout::mlp(2, &[2], 1).unwrap();
        ParamVector::from_values(
            layout,
            vec![0.5, -1.0, 0.25, 2.0, 0.1, -0.3, 1.5, -0.5, 0.2],
        )
        .unwrap()
    }

    #[test]
    fn param_counts_match_hand_counts() {
        assert_eq!(Layout::mlp(3, &[], 1).unwrap().param_count(), 4);
        assert_eq!(Layout::mlp(2, &[2], 1).unwrap().param_count(), 6 + 3);
        // 16*64+64 + 64*64+64 + 64*32+32 + 32+1
        assert_eq!(Layout::mlp(16, &[64, 64, 32], 1).unwrap().param_count(), 7361);
        assert_eq!(Layout::empty().param_count(), 0);
    }

    #[test]
    fn layout_rejects_broken_chain() {
        let layers = vec![
            LayerSpec { input: 2, output: 3, activation: Activation::Relu },
            LayerSpec { input: 4, output: 1, activation: Activation::Linear },
        ];
        assert!(Layout::from_layers(layers).is_err());
    }

    #[test]
    fn zero_net_outputs_zero() {
        let p = ParamVector::zeros(Layout::mlp(3, &[4, 4], 1).unwrap());
        let out = p.forward(array![[1.0, -2.0, 3.0], [0.5, 0.5, 9.0]].view()).unwrap();
        assert_eq!(out.to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_through_activation() {
        let layout = Layout::from_layers(vec![LayerSpec {
            input: 1,
            output: 1,
            activation: Activation::Relu,
        }])
        .unwrap();
        let p = ParamVector::from_values(layout, vec![1.0, 0.0]).unwrap();
        let out = p.forward(array![[1.0], [2.0], [-3.0]].view()).unwrap();
        assert_eq!(out.to_vec(), vec![1.0, 2.0, 0.0]);
    }

    #[test]
    fn forward_matches_hand_arithmetic() {
        let p = two_layer();
        // hidden = relu([0.5*1 - 1*2 + 0.1, 0.25*1 + 2*2 - 0.3]) = relu([-1.4, 3.95]) = [0, 3.95]
        // out = 1.5*0 - 0.5*3.95 + 0.2 = -1.775
        let out = p.forward(array![[1.0, 2.0]].view()).unwrap();
        assert!((out[0] - -1.775).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = two_layer();
        assert!(matches!(p.forward(array![[1.0, 2.0, 3.0]].view()), Err(Error::Shape(_))));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[2.0, 2.0]).unwrap(), 4.0);
        assert_eq!(mse(&[1.0, 3.0], &[2.0, 5.0]).unwrap(), 2.5);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn zero_weight_gives_zero_gradient() {
        let p = two_layer();
        let batch = Batch::new(array![[1.0, 2.0], [0.3, -0.1]], vec![1.0, 2.0], 0).unwrap();
        let (loss, g) = p.backward(&batch, 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perfect_fit_gives_zero_gradient() {
        let p = two_layer();
        let inputs = array![[1.0, 2.0], [0.3, -0.1]];
        let targets = p.forward(inputs.view()).unwrap().to_vec();
        let batch = Batch::new(inputs, targets, 0).unwrap();
        let (loss, g) = p.backward(&batch, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layout = Layout::mlp(3, &[5, 4], 1).unwrap();
        let mut p = ParamVector::glorot(layout, &mut rng);
        for v in p.values_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let inputs = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let targets = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = Batch::new(inputs, targets, 0).unwrap();
        assert!(finite_difference_check(&p, &batch, 1e-5).unwrap() < 1e-5);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ParamVector::glorot(Layout::mlp(2, &[3], 1).unwrap(), &mut rng);
        let inputs = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let batch = Batch::new(inputs, vec![0.5, -0.2, 1.0, 0.0], 0).unwrap();
        let err = finite_difference_check_with(&p, &batch, 1e-5, |p, b| {
            let (_, mut g) = p.backward(b, 1.0)?;
            let i = g.values.iter().position(|v| v.abs() > 1e-3).unwrap();
            g.values[i] *= 2.0;
            Ok(g)
        })
        .unwrap();
        assert!(err > 1e-2);
    }

    #[test]
    fn empty_layout_check_is_zero() {
        let p = ParamVector::zeros(Layout::empty());
        let batch = Batch::new(array![[1.0]], vec![1.0], 0).unwrap();
        assert_eq!(finite_difference_check(&p, &batch, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn sgd_steps() {
        let mut p = vec![1.0];
        let mut s = OptimizerState::new(OptimizerKind::Sgd, 1);
        s.step(&mut p, &[0.0], 0.1).unwrap();
        assert_eq!(p, vec![1.0]);
        s.step(&mut p, &[2.0], 0.1).unwrap();
        assert_eq!(p, vec![0.8]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // f(x) = (x - 3)^2, minimizer 3.
        let mut x = vec![2.9];
        let mut s = OptimizerState::new(OptimizerKind::default(), 1);
        for _ in 0..100 {
            let g = 2.0 * (x[0] - 3.0);
            s.step(&mut x, &[g], 1e-2).unwrap();
        }
        assert!((x[0] - 3.0).abs() < 1e-3, "{}", x[0]);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = vec![1.0];
        let mut s = OptimizerState::new(OptimizerKind::Sgd, 1);
        assert!(matches!(s.step(&mut p, &[f64::NAN], 0.1), Err(Error::NonFinite(_))));
        assert_eq!(p, vec![1.0]);
    }
}
