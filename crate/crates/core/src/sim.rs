//! Synthetic listening experiments with a shared latent quality scale.
//!
//! Every experiment rates files whose true quality lives on a latent 1..5
//! scale. Each experiment reports scores through its own monotone cubic
//! distortion of that scale plus listener noise, which reproduces the corpus
//! effect while keeping the ground truth available for evaluation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetCollection, Sample};
use crate::numeric::mean;
use crate::{Error, Result};

pub const SCORE_MIN: f64 = 1.0;
pub const SCORE_MAX: f64 = 5.0;

/// `p(s) = c0 + c1 s + c2 s^2 + c3 s^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCubic {
    pub coefficients: [f64; 4],
}

impl MonotoneCubic {
    pub fn identity() -> Self {
        Self {
            coefficients: [0.0, 1.0, 0.0, 0.0],
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let [c0, c1, c2, c3] = self.coefficients;
        c0 + s * (c1 + s * (c2 + s * c3))
    }

    pub fn derivative(&self, s: f64) -> f64 {
        let [_, c1, c2, c3] = self.coefficients;
        c1 + s * (2.0 * c2 + s * 3.0 * c3)
    }

    /// Smallest derivative over `points` evenly spaced samples of `[lo, hi]`.
    pub fn min_derivative(&self, lo: f64, hi: f64, points: usize) -> f64 {
        grid(lo, hi, points)
            .map(|s| self.derivative(s))
            .fold(f64::INFINITY, f64::min)
    }

    /// 1000-point grid check of `p' > 0` on `[lo, hi]`.
    pub fn is_increasing_on(&self, lo: f64, hi: f64) -> bool {
        self.min_derivative(lo, hi, 1000) > 0.0
    }

    pub fn max_deviation_from_identity(&self, lo: f64, hi: f64) -> f64 {
        grid(lo, hi, 1000)
            .map(|s| (self.eval(s) - s).abs())
            .fold(0.0, f64::max)
    }

    /// Rewrites a polynomial in `t = alpha + beta * s` as a polynomial in `s`.
    pub(crate) fn from_affine(in_t: [f64; 4], alpha: f64, beta: f64) -> Self {
        let binom = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0], [1.0, 3.0, 3.0, 1.0]];
        let mut out = [0.0; 4];
        for (k, &a) in in_t.iter().enumerate() {
            // (alpha + beta s)^k
            for j in 0..=k {
                out[j] += a * binom[k][j] * alpha.powi((k - j) as i32) * beta.powi(j as i32);
            }
        }
        Self { coefficients: out }
    }
}

/// `points` evenly spaced values covering `[lo, hi]` inclusive.
pub fn grid(lo: f64, hi: f64, points: usize) -> impl Iterator<Item = f64> {
    let step = if points > 1 {
        (hi - lo) / (points - 1) as f64
    } else {
        0.0
    };
    (0..points).map(move |i| if i + 1 == points { hi } else { lo + step * i as f64 })
}

/// Draws a random monotone distortion of the 1..5 scale.
///
/// The draw is either "generous" (low qualities pushed up towards the top of
/// the scale) or "harsh" (high qualities pushed down), with a random bend.
/// At severity 1 the worst-case shift is at least 2.5 points; the distortion
/// scales linearly towards the identity as severity drops to 0.
pub fn make_distortion(severity: f64, seed: u64) -> Result<MonotoneCubic> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::Config(format!("severity {severity} outside [0, 1]")));
    }
    if severity == 0.0 {
        return Ok(MonotoneCubic::identity());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let (lo, hi) = if rng.random_bool(0.5) {
            (rng.random_range(3.5..3.8), rng.random_range(4.7..5.0))
        } else {
            (rng.random_range(1.0..1.3), rng.random_range(2.2..2.5))
        };
        let bend = rng.random_range(-0.6..0.6);
        let twist = rng.random_range(-0.4..0.4);
        // g(t) = t + bend t(1-t) + twist t(1-t)(2t-1), g(0)=0, g(1)=1
        let g = [0.0, 1.0 + bend - twist, -bend + 3.0 * twist, -2.0 * twist];
        let q_in_t = [
            lo + (hi - lo) * g[0],
            (hi - lo) * g[1],
            (hi - lo) * g[2],
            (hi - lo) * g[3],
        ];
        let span = SCORE_MAX - SCORE_MIN;
        let q = MonotoneCubic::from_affine(q_in_t, -SCORE_MIN / span, 1.0 / span);
        if !q.is_increasing_on(SCORE_MIN, SCORE_MAX) {
            continue;
        }
        let mut c = q.coefficients;
        for v in &mut c {
            *v *= severity;
        }
        c[1] += 1.0 - severity;
        let p = MonotoneCubic { coefficients: c };
        if p.is_increasing_on(SCORE_MIN, SCORE_MAX) {
            return Ok(p);
        }
    }
    Err(Error::Degenerate(
        "no monotone distortion found in 100 draws".into(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub n_files: usize,
    pub votes_per_file: usize,
    pub distortion: MonotoneCubic,
    pub vote_noise_sd: f64,
    pub condition_range: (f64, f64),
    pub feature_dim: usize,
    pub feature_noise_sd: f64,
    pub is_reference: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("experiment {}: {msg}", self.name)));
        if self.n_files < 10 {
            return bad(format!("n_files {} < 10", self.n_files));
        }
        if self.votes_per_file == 0 {
            return bad("votes_per_file must be at least 1".into());
        }
        let (lo, hi) = self.condition_range;
        if !(SCORE_MIN <= lo && lo <= hi && hi <= SCORE_MAX) {
            return bad(format!("condition range [{lo}, {hi}] not inside [1, 5]"));
        }
        if self.feature_dim < 2 {
            return bad("feature_dim must be at least 2".into());
        }
        if !(self.vote_noise_sd >= 0.0 && self.feature_noise_sd >= 0.0) {
            return bad("noise levels must be nonnegative".into());
        }
        if !self.distortion.is_increasing_on(SCORE_MIN, SCORE_MAX) {
            return bad("distortion is not increasing on [1, 5]".into());
        }
        if self.is_reference && self.distortion != MonotoneCubic::identity() {
            return bad("the reference experiment must use the identity distortion".into());
        }
        Ok(())
    }
}

/// Stream seed for a named experiment.
pub fn derive_seed(seed: u64, name: &str, purpose: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in name.bytes().chain([0xff]).chain(purpose.bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn sample_latent(spec: &ExperimentSpec, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw_latents(spec.condition_range, spec.n_files, &mut rng))
}

fn draw_latents<R: Rng>(range: (f64, f64), n: usize, rng: &mut R) -> Vec<f64> {
    let (lo, hi) = range;
    if lo == hi {
        return vec![lo; n];
    }
    let dist = Uniform::new_inclusive(lo, hi).expect("nonempty range");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Clipped mean of `votes_per_file` noisy votes around the distorted latent.
pub fn simulate_votes<R: Rng>(latent: f64, spec: &ExperimentSpec, rng: &mut R) -> Result<f64> {
    if !(SCORE_MIN..=SCORE_MAX).contains(&latent) {
        return Err(Error::Config(format!("latent {latent} outside [1, 5]")));
    }
    let center = spec.distortion.eval(latent);
    let noise = Normal::new(center, spec.vote_noise_sd)
        .map_err(|e| Error::Config(format!("vote noise: {e}")))?;
    let votes: Vec<f64> = (0..spec.votes_per_file).map(|_| noise.sample(rng)).collect();
    Ok(mean(&votes).clamp(SCORE_MIN, SCORE_MAX))
}

/// Noiseless feature core: Gaussian bumps tiled over the latent scale plus a
/// few smooth global terms. Depends only on the latent and the width.
pub fn feature_core(latent: f64, feature_dim: usize) -> Vec<f64> {
    let globals = 2.min(feature_dim);
    let bumps = feature_dim - globals;
    let mut out = Vec::with_capacity(feature_dim);
    let x = (latent - 3.0) / 2.0;
    out.push(x.tanh());
    if globals > 1 {
        out.push((x * std::f64::consts::PI).sin());
    }
    let spacing = (SCORE_MAX - SCORE_MIN) / bumps.saturating_sub(1).max(1) as f64;
    let width = 1.5 * spacing;
    for k in 0..bumps {
        let center = SCORE_MIN + spacing * k as f64;
        let z = (latent - center) / width;
        out.push((-0.5 * z * z).exp());
    }
    out
}

pub fn synthesize_features<R: Rng>(latent: f64, spec: &ExperimentSpec, rng: &mut R) -> Result<Vec<f64>> {
    if spec.feature_dim < 2 {
        return Err(Error::Config("feature_dim must be at least 2".into()));
    }
    let mut features = feature_core(latent, spec.feature_dim);
    if spec.feature_noise_sd > 0.0 {
        let noise = Normal::new(0.0, spec.feature_noise_sd)
            .map_err(|e| Error::Config(format!("feature noise: {e}")))?;
        for f in &mut features {
            *f += noise.sample(rng);
        }
    }
    Ok(features)
}

/// A simulated file, latent included. Only the oracle keeps the latent.
#[derive(Debug, Clone, PartialEq)]
pub struct RatedSample {
    pub file_id: String,
    pub features: Vec<f64>,
    pub mos: f64,
    pub latent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatedDataset {
    pub name: String,
    pub is_reference: bool,
    pub samples: Vec<RatedSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleExperiment {
    pub name: String,
    pub distortion: MonotoneCubic,
    pub condition_range: (f64, f64),
    pub latents: Vec<(String, f64)>,
}

/// Ground truth retained for evaluation only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBundle {
    pub experiments: Vec<OracleExperiment>,
}

impl OracleBundle {
    pub fn experiment(&self, name: &str) -> Option<&OracleExperiment> {
        self.experiments.iter().find(|e| e.name == name)
    }
}

/// Generates every experiment. Non-reference experiments reuse
/// `common_fraction` of their files from the reference experiment (same id,
/// same features, independently voted scores).
pub fn simulate_experiments(
    specs: &[ExperimentSpec],
    common_fraction: f64,
    seed: u64,
) -> Result<Vec<RatedDataset>> {
    let references = specs.iter().filter(|s| s.is_reference).count();
    if references != 1 {
        return Err(Error::Config(format!(
            "exactly one reference experiment required, found {references}"
        )));
    }
    if !(0.0..=1.0).contains(&common_fraction) {
        return Err(Error::Config(format!("common_fraction {common_fraction} outside [0, 1]")));
    }
    let mut names = std::collections::HashSet::new();
    for spec in specs {
        spec.validate()?;
        if !names.insert(spec.name.as_str()) {
            return Err(Error::Config(format!("duplicate experiment name {}", spec.name)));
        }
    }
    let ref_spec = specs.iter().find(|s| s.is_reference).expect("checked above");
    let reference = simulate_one(ref_spec, &[], seed)?;
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        if spec.is_reference {
            out.push(reference.clone());
            continue;
        }
        let want = ((common_fraction * spec.n_files as f64).round() as usize).min(spec.n_files);
        let (lo, hi) = spec.condition_range;
        let shared: Vec<&RatedSample> = reference
            .samples
            .iter()
            .filter(|s| (lo..=hi).contains(&s.latent) && s.features.len() == spec.feature_dim)
            .take(want)
            .collect();
        out.push(simulate_one(spec, &shared, seed)?);
    }
    Ok(out)
}

fn simulate_one(spec: &ExperimentSpec, shared: &[&RatedSample], seed: u64) -> Result<RatedDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &spec.name, "experiment"));
    let own = spec.n_files - shared.len();
    let latents = draw_latents(spec.condition_range, own, &mut rng);
    let mut samples = Vec::with_capacity(spec.n_files);
    for s in shared {
        samples.push(RatedSample {
            file_id: s.file_id.clone(),
            features: s.features.clone(),
            mos: simulate_votes(s.latent, spec, &mut rng)?,
            latent: s.latent,
        });
    }
    for (i, latent) in latents.into_iter().enumerate() {
        samples.push(RatedSample {
            file_id: format!("{}_{i:05}", spec.name),
            features: synthesize_features(latent, spec, &mut rng)?,
            mos: simulate_votes(latent, spec, &mut rng)?,
            latent,
        });
    }
    samples.shuffle(&mut rng);
    Ok(RatedDataset {
        name: spec.name.clone(),
        is_reference: spec.is_reference,
        samples,
    })
}

/// Splits simulated experiments into a training-facing collection and the
/// oracle bundle. The collection carries no latent values.
pub fn build_collection(
    specs: &[ExperimentSpec],
    common_fraction: f64,
    seed: u64,
) -> Result<(DatasetCollection, OracleBundle)> {
    let rated = simulate_experiments(specs, common_fraction, seed)?;
    let feature_dim = specs[0].feature_dim;
    let mut datasets = Vec::with_capacity(rated.len());
    let mut oracle = Vec::with_capacity(rated.len());
    for (exp, spec) in rated.iter().zip(specs) {
        let samples = exp
            .samples
            .iter()
            .map(|s| Sample {
                file_id: s.file_id.clone(),
                features: s.features.clone(),
                score: s.mos,
            })
            .collect();
        datasets.push(Dataset::from_samples(&exp.name, exp.is_reference, feature_dim, samples)?);
        oracle.push(OracleExperiment {
            name: exp.name.clone(),
            distortion: spec.distortion,
            condition_range: spec.condition_range,
            latents: exp.samples.iter().map(|s| (s.file_id.clone(), s.latent)).collect(),
        });
    }
    Ok((
        DatasetCollection::new(datasets)?,
        OracleBundle { experiments: oracle },
    ))
}

/// One experiment of a simulation config; the distortion is drawn from the
/// severity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub n_files: usize,
    pub votes_per_file: usize,
    pub vote_noise_sd: f64,
    pub severity: f64,
    pub condition_range: (f64, f64),
    pub is_reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub feature_dim: usize,
    pub feature_noise_sd: f64,
    pub common_fraction: f64,
    pub experiment: Vec<ExperimentConfig>,
}

impl SimulationConfig {
    /// Four experiments: one reference and three of increasing severity.
    pub fn benchmark() -> Self {
        let exp = |name: &str, n, votes, severity, range, is_reference| ExperimentConfig {
            name: name.into(),
            n_files: n,
            votes_per_file: votes,
            vote_noise_sd: 0.6,
            severity,
            condition_range: range,
            is_reference,
        };
        Self {
            feature_dim: 16,
            feature_noise_sd: 0.27,
            common_fraction: 0.2,
            experiment: vec![
                exp("ref", 2000, 8, 0.0, (1.0, 5.0), true),
                exp("mild", 1000, 8, 0.3, (1.0, 5.0), false),
                exp("moderate", 1000, 4, 0.6, (1.5, 5.0), false),
                exp("severe", 1000, 4, 0.9, (1.0, 4.5), false),
            ],
        }
    }

    pub fn specs(&self, seed: u64) -> Result<Vec<ExperimentSpec>> {
        self.experiment
            .iter()
            .map(|e| {
                if e.is_reference && e.severity != 0.0 {
                    return Err(Error::Config(format!(
                        "reference experiment {} must have severity 0",
                        e.name
                    )));
                }
                Ok(ExperimentSpec {
                    name: e.name.clone(),
                    n_files: e.n_files,
                    votes_per_file: e.votes_per_file,
                    distortion: make_distortion(e.severity, derive_seed(seed, &e.name, "distortion"))?,
                    vote_noise_sd: e.vote_noise_sd,
                    condition_range: e.condition_range,
                    feature_dim: self.feature_dim,
                    feature_noise_sd: self.feature_noise_sd,
                    is_reference: e.is_reference,
                })
            })
            .collect()
    }

    pub fn build(&self, seed: u64) -> Result<(DatasetCollection, OracleBundle)> {
        build_collection(&self.specs(seed)?, self.common_fraction, seed)
    }
}
