//! Scoring, significance testing, and alignment-curve summaries.

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::DatasetCollection;
use crate::model::{AlignModel, Estimator};
use crate::nn::mse;
use crate::numeric::mean;
use crate::sim::{grid, MonotoneCubic, OracleBundle, SCORE_MAX, SCORE_MIN};
use crate::{Error, Result};

/// Pearson's linear correlation coefficient.
pub fn lcc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("lcc over {} and {} values", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::Shape(format!("lcc needs at least 3 pairs, got {}", x.len())));
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(mse(x, y)?.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.low <= v && v <= self.high
    }

    pub fn excludes_zero(&self) -> bool {
        !self.contains(0.0)
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level {level} outside (0, 1)")));
    }
    Ok(())
}

fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Zou's interval for `r1 - r2`, where `r1` and `r2` correlate two
/// estimators with the same targets and `r12` correlates the estimators.
pub fn zou_ci_lcc_diff(r1: f64, r2: f64, r12: f64, n: usize, level: f64) -> Result<Interval> {
    check_level(level)?;
    if n < 10 {
        return Err(Error::Config(format!("need n >= 10 for Zou's interval, got {n}")));
    }
    for r in [r1, r2] {
        if !(r.abs() < 1.0) {
            return Err(Error::Degenerate(format!("correlation {r} has no Fisher transform")));
        }
    }
    if !(r12.abs() <= 1.0) {
        return Err(Error::Config(format!("correlation {r12} outside [-1, 1]")));
    }
    let det = 1.0 - r1 * r1 - r2 * r2 - r12 * r12 + 2.0 * r1 * r2 * r12;
    if det < -1e-9 {
        return Err(Error::Config(format!(
            "correlations ({r1}, {r2}, {r12}) do not form a correlation matrix"
        )));
    }
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    let half = z / ((n - 3) as f64).sqrt();
    let limits = |r: f64| {
        let f = r.atanh();
        ((f - half).tanh(), (f + half).tanh())
    };
    let (l1, u1) = limits(r1);
    let (l2, u2) = limits(r2);
    let c = ((r12 - 0.5 * r1 * r2) * (1.0 - r1 * r1 - r2 * r2 - r12 * r12) + r12.powi(3))
        / ((1.0 - r1 * r1) * (1.0 - r2 * r2));
    let d = r1 - r2;
    let lower = (r1 - l1).powi(2) + (u2 - r2).powi(2) - 2.0 * c * (r1 - l1) * (u2 - r2);
    let upper = (u1 - r1).powi(2) + (r2 - l2).powi(2) - 2.0 * c * (u1 - r1) * (r2 - l2);
    Ok(Interval {
        low: d - lower.max(0.0).sqrt(),
        high: d + upper.max(0.0).sqrt(),
    })
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v * v;
        n += 1;
    }
    (s / n as f64).sqrt()
}

/// Percentile bootstrap interval for `rmse(a) - rmse(b)` over paired errors.
pub fn bootstrap_rmse_diff(
    err_a: &[f64],
    err_b: &[f64],
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<Interval> {
    check_level(level)?;
    if err_a.len() != err_b.len() {
        return Err(Error::Pairing(format!(
            "{} errors against {} errors",
            err_a.len(),
            err_b.len()
        )));
    }
    if err_a.is_empty() {
        return Err(Error::Shape("no paired errors".into()));
    }
    if n_boot < 1000 {
        return Err(Error::Config(format!("n_boot must be at least 1000, got {n_boot}")));
    }
    let n = err_a.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = vec![0usize; n];
    let mut diffs: Vec<f64> = (0..n_boot)
        .map(|_| {
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
            rms(idx.iter().map(|&i| err_a[i])) - rms(idx.iter().map(|&i| err_b[i]))
        })
        .collect();
    diffs.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok(Interval {
        low: percentile(&diffs, alpha / 2.0),
        high: percentile(&diffs, 1.0 - alpha / 2.0),
    })
}

/// Linear-interpolated percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Sampled alignment function for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentCurve {
    pub dataset: String,
    /// `(intermediate, aligned)` sorted by intermediate score.
    pub points: Vec<(f64, f64)>,
    pub fitted: Option<MonotoneCubic>,
}

impl AlignmentCurve {
    pub fn range(&self) -> Option<(f64, f64)> {
        Some((self.points.first()?.0, self.points.last()?.0))
    }

    /// Largest gap between the curve and `clip(p(s), 1, 5)`.
    pub fn max_deviation(&self, distortion: &MonotoneCubic) -> f64 {
        self.points
            .iter()
            .map(|&(s, y)| (y - distortion.eval(s).clamp(SCORE_MIN, SCORE_MAX)).abs())
            .fold(0.0, f64::max)
    }
}

/// Least-squares cubic through the curve points, refit under a
/// positive-derivative constraint when the free fit is not increasing.
pub fn fit_monotone_cubic(curve: &AlignmentCurve) -> Result<MonotoneCubic> {
    if curve.points.len() < 8 {
        return Err(Error::Degenerate(format!(
            "need at least 8 points, got {}",
            curve.points.len()
        )));
    }
    let xs: Vec<f64> = curve.points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = curve.points.iter().map(|p| p.1).collect();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-9) || ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::Degenerate("curve spans no range".into()));
    }
    // Fit in u = (x - center) / half for conditioning.
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let design = DMatrix::from_fn(xs.len(), 4, |r, c| ((xs[r] - center) / half).powi(c as i32));
    let target = DVector::from_vec(ys.clone());

    let solve = |a: &DMatrix<f64>, b: &DVector<f64>| -> Result<[f64; 4]> {
        let svd = a.clone().svd(true, true);
        let sol = svd
            .solve(b, 1e-12)
            .map_err(|e| Error::Degenerate(format!("least squares: {e}")))?;
        Ok([sol[0], sol[1], sol[2], sol[3]])
    };
    let to_x = |c: [f64; 4]| MonotoneCubic::from_affine(c, -center / half, 1.0 / half);

    let free = to_x(solve(&design, &target)?);
    if free.is_increasing_on(lo, hi) {
        return Ok(free);
    }

    // Penalized refit: derivative rows at violated grid points are pulled up
    // to a small positive slope with a growing weight.
    let ys_span = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - ys.iter().copied().fold(f64::INFINITY, f64::min);
    let slope_floor = (1e-3 * ys_span / (hi - lo)).max(1e-6);
    let us: Vec<f64> = grid(-1.0, 1.0, 200).collect();
    let mut active: Vec<usize> = Vec::new();
    let mut weight: f64 = 1.0;
    let mut fit = free;
    for _ in 0..60 {
        for (k, &u) in us.iter().enumerate() {
            if fit.derivative(center + half * u) <= slope_floor && !active.contains(&k) {
                active.push(k);
            }
        }
        let rows = xs.len() + active.len();
        let mut a = DMatrix::zeros(rows, 4);
        let mut b = DVector::zeros(rows);
        a.view_mut((0, 0), (xs.len(), 4)).copy_from(&design);
        b.rows_mut(0, xs.len()).copy_from(&target);
        for (r, &k) in active.iter().enumerate() {
            let u = us[k];
            // d/dx = (1/half) d/du; target twice the floor
            let w = weight.sqrt();
            a[(xs.len() + r, 1)] = w / half;
            a[(xs.len() + r, 2)] = w * 2.0 * u / half;
            a[(xs.len() + r, 3)] = w * 3.0 * u * u / half;
            b[xs.len() + r] = w * 2.0 * slope_floor;
        }
        fit = to_x(solve(&a, &b)?);
        if fit.is_increasing_on(lo, hi) {
            return Ok(fit);
        }
        weight *= 10.0;
    }
    Err(Error::Degenerate("monotone refit did not converge".into()))
}

/// Alignment curves of every dataset, each sampled at `points` evenly spaced
/// intermediate scores spanning that dataset's training files, with a
/// monotone cubic fitted where possible.
pub fn alignment_curves(
    model: &AlignModel,
    collection: &DatasetCollection,
    points: usize,
) -> Result<Vec<AlignmentCurve>> {
    let mut out = Vec::with_capacity(collection.len());
    for (index, ds) in collection.datasets().iter().enumerate() {
        let inter = model.audionet_estimate(ds.train().features().view())?;
        let lo = inter.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = inter.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let xs: Vec<f64> = if hi > lo { grid(lo, hi, points).collect() } else { vec![lo] };
        let mut curve = model.sample_alignment_curve(model.indicator(index)?, &xs, ds.name())?;
        curve.fitted = fit_monotone_cubic(&curve).ok();
        out.push(curve);
    }
    Ok(out)
}

/// Metrics for one dataset (or the pooled "All" column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub name: String,
    pub n: usize,
    /// `None` when the correlation is undefined; see `lcc_error`.
    pub lcc: Option<f64>,
    pub lcc_error: Option<String>,
    pub rmse: f64,
    /// Correlation of intermediate scores with the simulator's latent
    /// quality, when an oracle was supplied.
    pub latent_lcc: Option<f64>,
}

impl DatasetScore {
    fn compute(name: &str, targets: &[f64], estimates: &[f64]) -> Result<Self> {
        let (lcc, lcc_error) = match lcc(estimates, targets) {
            Ok(r) => (Some(r), None),
            Err(e @ (Error::UndefinedCorrelation(_) | Error::Shape(_))) => (None, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        Ok(Self {
            name: name.to_string(),
            n: targets.len(),
            lcc,
            lcc_error,
            rmse: rmse(estimates, targets)?,
            latent_lcc: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceEntry {
    pub candidate: String,
    pub baseline: String,
    pub dataset: String,
    /// `"lcc"` or `"rmse"`.
    pub metric: String,
    /// Candidate minus baseline.
    pub difference: f64,
    pub ci: Interval,
    /// Interval excludes zero.
    pub significant: bool,
    /// Significant and in the candidate's favour.
    pub improvement: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub per_dataset: Vec<DatasetScore>,
    pub pooled: DatasetScore,
    #[serde(default)]
    pub significance: Vec<SignificanceEntry>,
}

impl EvalReport {
    pub fn dataset(&self, name: &str) -> Option<&DatasetScore> {
        self.per_dataset.iter().find(|d| d.name == name)
    }
}

/// Test-set predictions, one row per file, in collection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub dataset: String,
    pub file_id: String,
    pub target: f64,
    pub estimate: f64,
    pub intermediate: f64,
}

/// Scores `predict(features, dataset_index)` on every test split.
pub fn evaluate_with<F, G>(
    label: &str,
    collection: &DatasetCollection,
    oracle: Option<&OracleBundle>,
    predict: F,
    intermediate: G,
) -> Result<(EvalReport, Vec<PredictionRow>)>
where
    F: Fn(ArrayView2<'_, f64>, usize) -> Result<Vec<f64>>,
    G: Fn(ArrayView2<'_, f64>) -> Result<Vec<f64>>,
{
    let mut per_dataset = Vec::with_capacity(collection.len());
    let mut rows = Vec::new();
    for (index, ds) in collection.datasets().iter().enumerate() {
        let test = ds.test();
        if test.is_empty() {
            return Err(Error::Config(format!("dataset {} has an empty test split", ds.name())));
        }
        let est = predict(test.features().view(), index)?;
        let inter = intermediate(test.features().view())?;
        let mut score = DatasetScore::compute(ds.name(), test.scores(), &est)?;
        if let Some(exp) = oracle.and_then(|o| o.experiment(ds.name())) {
            let latents: Vec<f64> = test
                .file_ids()
                .iter()
                .map(|id| {
                    exp.latents
                        .iter()
                        .find(|(f, _)| f == id)
                        .map(|(_, l)| *l)
                        .ok_or_else(|| Error::Pairing(format!("file {id} missing from oracle")))
                })
                .collect::<Result<_>>()?;
            score.latent_lcc = lcc(&inter, &latents).ok();
        }
        per_dataset.push(score);
        for i in 0..test.len() {
            rows.push(PredictionRow {
                dataset: ds.name().to_string(),
                file_id: test.file_ids()[i].clone(),
                target: test.scores()[i],
                estimate: est[i],
                intermediate: inter[i],
            });
        }
    }
    let targets: Vec<f64> = rows.iter().map(|r| r.target).collect();
    let estimates: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
    let pooled = DatasetScore::compute("All", &targets, &estimates)?;
    Ok((
        EvalReport {
            label: label.to_string(),
            per_dataset,
            pooled,
            significance: Vec::new(),
        },
        rows,
    ))
}

pub fn evaluate(
    label: &str,
    estimator: &Estimator,
    collection: &DatasetCollection,
    oracle: Option<&OracleBundle>,
) -> Result<(EvalReport, Vec<PredictionRow>)> {
    evaluate_with(
        label,
        collection,
        oracle,
        |x, i| Ok(estimator.predict(x, i)?.to_vec()),
        |x| Ok(estimator.intermediate(x)?.to_vec()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareSettings {
    pub level: f64,
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for CompareSettings {
    fn default() -> Self {
        Self {
            level: 0.95,
            n_boot: 2000,
            seed: 0,
        }
    }
}

/// Significance of candidate `a` against baseline `b`, per dataset and
/// pooled, on identical test files.
pub fn compare_predictions(
    label_a: &str,
    a: &[PredictionRow],
    label_b: &str,
    b: &[PredictionRow],
    settings: CompareSettings,
) -> Result<Vec<SignificanceEntry>> {
    if a.len() != b.len() {
        return Err(Error::Pairing(format!("{} predictions against {}", a.len(), b.len())));
    }
    for (x, y) in a.iter().zip(b) {
        if x.dataset != y.dataset || x.file_id != y.file_id || x.target != y.target {
            return Err(Error::Pairing(format!(
                "row {}/{} does not match {}/{}",
                x.dataset, x.file_id, y.dataset, y.file_id
            )));
        }
    }
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, r) in a.iter().enumerate() {
        match groups.iter_mut().find(|(name, _)| *name == r.dataset) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((r.dataset.clone(), vec![i])),
        }
    }
    groups.push(("All".to_string(), (0..a.len()).collect()));

    let mut out = Vec::new();
    for (name, idx) in groups {
        let t: Vec<f64> = idx.iter().map(|&i| a[i].target).collect();
        let ea: Vec<f64> = idx.iter().map(|&i| a[i].estimate).collect();
        let eb: Vec<f64> = idx.iter().map(|&i| b[i].estimate).collect();
        let entry = |metric: &str, difference: f64, ci: Interval, better_when_positive: bool| {
            let significant = ci.excludes_zero();
            SignificanceEntry {
                candidate: label_a.to_string(),
                baseline: label_b.to_string(),
                dataset: name.clone(),
                metric: metric.to_string(),
                difference,
                ci,
                significant,
                improvement: significant && ((ci.low > 0.0) == better_when_positive),
            }
        };
        if let (Ok(r1), Ok(r2)) = (lcc(&ea, &t), lcc(&eb, &t)) {
            let r12 = lcc(&ea, &eb).unwrap_or(1.0);
            if let Ok(ci) = zou_ci_lcc_diff(r1, r2, r12, t.len(), settings.level) {
                out.push(entry("lcc", r1 - r2, ci, true));
            }
        }
        let err_a: Vec<f64> = ea.iter().zip(&t).map(|(e, y)| e - y).collect();
        let err_b: Vec<f64> = eb.iter().zip(&t).map(|(e, y)| e - y).collect();
        let ci = bootstrap_rmse_diff(&err_a, &err_b, settings.n_boot, settings.level, settings.seed)?;
        let diff = rmse(&ea, &t)? - rmse(&eb, &t)?;
        out.push(entry("rmse", diff, ci, false));
    }
    Ok(out)
}

/// Text table with one LCC row and one RMSE row per report. `*` marks a
/// significant improvement recorded in the report, `+` the best and `-` the
/// second best value in each column.
pub fn render_table(reports: &[EvalReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut columns: Vec<String> = first.per_dataset.iter().map(|d| d.name.clone()).collect();
    columns.push("All".into());
    let score = |r: &EvalReport, col: &str| -> Option<DatasetScore> {
        if col == "All" {
            Some(r.pooled.clone())
        } else {
            r.dataset(col).cloned()
        }
    };
    let rank_marks = |values: Vec<Option<f64>>, higher_better: bool| -> Vec<&'static str> {
        let mut order: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
        order.sort_by(|&i, &j| {
            let (a, b) = (values[i].unwrap(), values[j].unwrap());
            if higher_better {
                b.total_cmp(&a)
            } else {
                a.total_cmp(&b)
            }
        });
        let mut marks = vec![" "; values.len()];
        if let Some(&i) = order.first() {
            marks[i] = "+";
        }
        if let Some(&i) = order.get(1) {
            marks[i] = "-";
        }
        marks
    };
    let label_w = reports.iter().map(|r| r.label.len()).max().unwrap_or(0).max(8) + 2;
    let col_w = columns.iter().map(String::len).max().unwrap_or(0).max(8) + 2;
    let mut out = format!("{:<label_w$}{:<6}", "", "");
    for c in &columns {
        out.push_str(&format!("{c:>col_w$}"));
    }
    out.push('\n');
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); reports.len() * 2];
    for col in &columns {
        let lccs: Vec<Option<f64>> = reports.iter().map(|r| score(r, col).and_then(|s| s.lcc)).collect();
        let rmses: Vec<Option<f64>> = reports.iter().map(|r| score(r, col).map(|s| s.rmse)).collect();
        let lm = rank_marks(lccs.clone(), true);
        let rm = rank_marks(rmses.clone(), false);
        for (k, r) in reports.iter().enumerate() {
            let star = |metric: &str| {
                if r.significance
                    .iter()
                    .any(|e| e.dataset == *col && e.metric == metric && e.improvement)
                {
                    "*"
                } else {
                    " "
                }
            };
            let l = lccs[k].map_or("n/a".to_string(), |v| format!("{v:.3}"));
            let m = rmses[k].map_or("n/a".to_string(), |v| format!("{v:.3}"));
            cells[2 * k].push(format!("{l}{}{}", star("lcc"), lm[k]));
            cells[2 * k + 1].push(format!("{m}{}{}", star("rmse"), rm[k]));
        }
    }
    for (k, r) in reports.iter().enumerate() {
        for (j, metric) in ["LCC", "RMSE"].iter().enumerate() {
            let label = if j == 0 { r.label.as_str() } else { "" };
            out.push_str(&format!("{label:<label_w$}{metric:<6}"));
            for c in &cells[2 * k + j] {
                out.push_str(&format!("{c:>col_w$}"));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn lcc_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((lcc(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((lcc(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!((lcc(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn lcc_zero_variance_is_an_error() {
        assert!(matches!(
            lcc(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(lcc(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 2.0], &[1.5, 2.5]).unwrap(), 0.5);
        assert_eq!(rmse(&[1.0, 3.0], &[2.0, 5.0]).unwrap(), 2.5f64.sqrt());
    }

    #[test]
    fn zou_symmetric_null_contains_zero() {
        for r12 in [0.0, 0.3, 0.9, 1.0] {
            let ci = zou_ci_lcc_diff(0.7, 0.7, r12, 50, 0.95).unwrap();
            assert!(ci.contains(0.0), "{r12}: {ci:?}");
        }
    }

    #[test]
    fn zou_rejects_degenerate_inputs() {
        assert!(matches!(zou_ci_lcc_diff(1.0, 0.5, 0.3, 100, 0.95), Err(Error::Degenerate(_))));
        assert!(zou_ci_lcc_diff(0.5, 0.5, 0.3, 5, 0.95).is_err());
        assert!(zou_ci_lcc_diff(0.5, 0.5, 0.3, 50, 1.0).is_err());
        assert!(matches!(zou_ci_lcc_diff(0.6, 0.9, -0.4, 100, 0.95), Err(Error::Config(_))));
    }

    #[test]
    fn zou_width_shrinks_with_n() {
        let w: Vec<f64> = [50, 500, 5000]
            .iter()
            .map(|&n| zou_ci_lcc_diff(0.8, 0.6, 0.5, n, 0.95).unwrap().width())
            .collect();
        assert!(w[0] > w[1] && w[1] > w[2], "{w:?}");
    }

    #[test]
    fn bootstrap_identical_errors_centered_on_zero() {
        let e: Vec<f64> = (0..200).map(|i| ((i * 37) % 11) as f64 / 10.0 - 0.5).collect();
        let ci = bootstrap_rmse_diff(&e, &e, 1000, 0.95, 1).unwrap();
        assert_eq!((ci.low, ci.high), (0.0, 0.0));
    }

    #[test]
    fn bootstrap_strict_dominance_is_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..300)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                1.0 + 0.2 * z
            })
            .collect();
        let b = vec![0.0; 300];
        let ci = bootstrap_rmse_diff(&a, &b, 1000, 0.95, 3).unwrap();
        assert!(ci.low > 0.0);
    }

    #[test]
    fn bootstrap_is_deterministic_and_checks_inputs() {
        let a: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..50).map(|i| (i as f64).cos() * 0.5).collect();
        assert_eq!(
            bootstrap_rmse_diff(&a, &b, 1000, 0.9, 5).unwrap(),
            bootstrap_rmse_diff(&a, &b, 1000, 0.9, 5).unwrap()
        );
        assert!(matches!(bootstrap_rmse_diff(&a, &b[..10], 1000, 0.9, 5), Err(Error::Pairing(_))));
        assert!(bootstrap_rmse_diff(&a, &b, 999, 0.9, 5).is_err());
    }

    fn curve_from(p: &MonotoneCubic, lo: f64, hi: f64, n: usize) -> AlignmentCurve {
        AlignmentCurve {
            dataset: "d".into(),
            points: grid(lo, hi, n).map(|s| (s, p.eval(s))).collect(),
            fitted: None,
        }
    }

    #[test]
    fn fit_identity_curve() {
        let c = fit_monotone_cubic(&curve_from(&MonotoneCubic::identity(), 1.0, 5.0, 50)).unwrap();
        for (a, b) in c.coefficients.iter().zip([0.0, 1.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-6, "{:?}", c.coefficients);
        }
    }

    #[test]
    fn fit_recovers_known_cubic() {
        let p = MonotoneCubic {
            coefficients: [0.4, 0.9, -0.05, 0.012],
        };
        assert!(p.is_increasing_on(1.0, 5.0));
        let c = fit_monotone_cubic(&curve_from(&p, 1.0, 5.0, 40)).unwrap();
        for (a, b) in c.coefficients.iter().zip(p.coefficients) {
            assert!((a - b).abs() < 1e-6, "{:?}", c.coefficients);
        }
    }

    #[test]
    fn fit_enforces_monotonicity() {
        // a dip in the middle of otherwise increasing data
        let points: Vec<(f64, f64)> = grid(1.0, 5.0, 30)
            .map(|s| (s, s - 1.5 * (-(s - 3.0).powi(2) * 4.0).exp() * (s - 3.0).signum()))
            .collect();
        let curve = AlignmentCurve {
            dataset: "d".into(),
            points,
            fitted: None,
        };
        let c = fit_monotone_cubic(&curve).unwrap();
        assert!(c.is_increasing_on(1.0, 5.0));
    }

    #[test]
    fn fit_rejects_degenerate_curves() {
        let few = curve_from(&MonotoneCubic::identity(), 1.0, 5.0, 5);
        assert!(fit_monotone_cubic(&few).is_err());
        let flat = AlignmentCurve {
            dataset: "d".into(),
            points: vec![(2.0, 2.0); 10],
            fitted: None,
        };
        assert!(fit_monotone_cubic(&flat).is_err());
    }

    #[test]
    fn table_marks_best_and_significance() {
        let score = |name: &str, lcc: f64, rmse: f64| DatasetScore {
            name: name.into(),
            n: 10,
            lcc: Some(lcc),
            lcc_error: None,
            rmse,
            latent_lcc: None,
        };
        let a = EvalReport {
            label: "All".into(),
            per_dataset: vec![score("x", 0.8, 0.5)],
            pooled: score("All", 0.8, 0.5),
            significance: vec![],
        };
        let mut b = a.clone();
        b.label = "AlignNet".into();
        b.pooled = score("All", 0.9, 0.3);
        b.significance.push(SignificanceEntry {
            candidate: "AlignNet".into(),
            baseline: "All".into(),
            dataset: "All".into(),
            metric: "rmse".into(),
            difference: -0.2,
            ci: Interval { low: -0.3, high: -0.1 },
            significant: true,
            improvement: true,
        });
        let t = render_table(&[a, b]);
        assert!(t.contains("0.300*+"), "{t}");
        assert!(t.contains("0.500 -"), "{t}");
    }
}
