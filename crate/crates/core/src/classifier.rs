//! Sparse logistic-regression bucket classifiers.
//!
//! One-vs-rest over standardized features, fitted by proximal gradient descent
//! with backtracking so every accepted step lowers the penalized objective.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.01;
/// Log-spaced strengths reported alongside the default fit.
pub const LAMBDA_GRID: [f64; 5] = [
    0.001,
    0.003_162_277_660_168_379_5,
    0.01,
    0.031_622_776_601_683_79,
    0.1,
];
pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    HandLabeled,
    Activations,
}

/// Rectangular, finite feature rows with unique column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: Vec<Vec<f64>>,
    names: Vec<String>,
    source: FeatureSource,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<f64>>, names: Vec<String>, source: FeatureSource) -> Result<Self> {
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "duplicate feature name `{dup}`"
            )));
        }
        for row in &rows {
            if row.len() != names.len() {
                return Err(Error::ShapeMismatch {
                    expected: names.len(),
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite feature value".into()));
            }
        }
        Ok(Self {
            rows,
            names,
            source,
        })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn source(&self) -> FeatureSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            names: self.names.clone(),
            source: self.source,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        for row in &self.rows {
            w.write_record(row.iter().map(f64::to_string))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, source: FeatureSource) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("bad feature value `{v}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(rows, names, source)
    }
}

/// Stratified, seeded 80/20 split of example indices into (train, test).
///
/// The test set holds round(0.2·n) examples, allotted to classes by largest
/// remainder, so each class is within one example of its proportional share.
pub fn split_80_20(labels: &[usize], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "need at least 5 examples to split, got {}",
            labels.len()
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if let Some((class, _)) = by_class.iter().find(|(_, v)| v.len() < 2) {
        return Err(Error::InvalidArgument(format!(
            "class {class} has a single example and cannot be stratified"
        )));
    }
    let total_test = (TEST_FRACTION * labels.len() as f64).round() as usize;
    let shares: Vec<(usize, f64)> = by_class
        .values()
        .map(|v| {
            let exact = TEST_FRACTION * v.len() as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut quota: Vec<usize> = shares.iter().map(|s| s.0).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| shares[b].1.total_cmp(&shares[a].1).then(a.cmp(&b)));
    let mut left = total_test.saturating_sub(quota.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        let size = by_class.values().nth(c).expect("index in range").len();
        if quota[c] + 1 < size {
            quota[c] += 1;
            left -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (members, &q) in by_class.values().zip(&quota) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        test.extend_from_slice(&shuffled[..q]);
        train.extend_from_slice(&shuffled[q..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegParams {
    pub lambda: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the objective by less than this.
    pub tolerance: f64,
}

impl Default for LogRegParams {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            max_iterations: 5000,
            tolerance: 1e-8,
        }
    }
}

/// One-vs-rest model; weights live in standardized feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub feature_names: Vec<String>,
    /// Bucket label of each one-vs-rest head, ascending.
    pub classes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub lambda: f64,
}

/// Objective values of every accepted step, one trace per head.
pub type ObjectiveTraces = Vec<Vec<f64>>;

pub fn fit_l1_logreg(
    features: &FeatureMatrix,
    labels: &[usize],
    params: &LogRegParams,
) -> Result<LogRegModel> {
    fit_l1_logreg_traced(features, labels, params).map(|(m, _)| m)
}

pub fn fit_l1_logreg_traced(
    features: &FeatureMatrix,
    labels: &[usize],
    params: &LogRegParams,
) -> Result<(LogRegModel, ObjectiveTraces)> {
    if labels.len() != features.len() {
        return Err(Error::ShapeMismatch {
            expected: features.len(),
            actual: labels.len(),
        });
    }
    if !(params.lambda >= 0.0 && params.lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "invalid lambda {}",
            params.lambda
        )));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two classes to fit".into(),
        ));
    }

    let (means, scales) = standardization(features);
    let x: Vec<Vec<f64>> = features
        .rows()
        .iter()
        .map(|r| standardize(r, &means, &scales))
        .collect();
    let active = distinct_columns(&x, features.width());

    let mut weights = Vec::with_capacity(classes.len());
    let mut intercepts = Vec::with_capacity(classes.len());
    let mut traces = Vec::with_capacity(classes.len());
    for &c in &classes {
        let y: Vec<f64> = labels
            .iter()
            .map(|&l| f64::from(u8::from(l == c)))
            .collect();
        let (w, b, trace) = fit_binary(&x, &y, &active, features.width(), params);
        if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
            return Err(Error::InvalidArgument(
                "logistic fit produced non-finite weights".into(),
            ));
        }
        weights.push(w);
        intercepts.push(b);
        traces.push(trace);
    }
    Ok((
        LogRegModel {
            feature_names: features.names().to_vec(),
            classes,
            weights,
            intercepts,
            means,
            scales,
            lambda: params.lambda,
        },
        traces,
    ))
}

fn standardization(features: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = features.len().max(1) as f64;
    let d = features.width();
    let mut means = vec![0.0; d];
    for row in features.rows() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut vars = vec![0.0; d];
    for row in features.rows() {
        for ((s, v), m) in vars.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let scales = vars
        .into_iter()
        .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    (means, scales)
}

fn standardize(row: &[f64], means: &[f64], scales: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(means.iter().zip(scales))
        .map(|(v, (m, s))| (v - m) / s)
        .collect()
}

/// Columns that are not exact copies of an earlier one, and not constant.
///
/// Splitting an L1-penalized weight across identical columns never lowers the
/// objective, so the first copy carries it and later copies stay at zero.
fn distinct_columns(x: &[Vec<f64>], d: usize) -> Vec<usize> {
    let column = |j: usize| x.iter().map(|r| r[j].to_bits()).collect::<Vec<u64>>();
    let mut seen = HashSet::new();
    (0..d)
        .filter(|&j| x.iter().any(|r| r[j] != 0.0))
        .filter(|&j| seen.insert(column(j)))
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss, computed stably as log(1 + e^z) − y·z.
fn smooth_loss(x: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, active: &[usize]) -> f64 {
    let n = x.len() as f64;
    x.iter()
        .zip(y)
        .map(|(r, &t)| {
            let z = b + active.iter().map(|&j| w[j] * r[j]).sum::<f64>();
            let softplus = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            softplus - t * z
        })
        .sum::<f64>()
        / n
}

fn gradient(x: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, active: &[usize]) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (r, &t) in x.iter().zip(y) {
        let z = b + active.iter().map(|&j| w[j] * r[j]).sum::<f64>();
        let e = (sigmoid(z) - t) / n;
        gb += e;
        for &j in active {
            gw[j] += e * r[j];
        }
    }
    (gw, gb)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn fit_binary(
    x: &[Vec<f64>],
    y: &[f64],
    active: &[usize],
    d: usize,
    params: &LogRegParams,
) -> (Vec<f64>, f64, Vec<f64>) {
    let penalty = |w: &[f64]| params.lambda * w.iter().map(|v| v.abs()).sum::<f64>();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut f = smooth_loss(x, y, &w, b, active);
    let mut objective = f + penalty(&w);
    let mut trace = vec![objective];
    let mut lipschitz = 1.0;
    for _ in 0..params.max_iterations {
        let (gw, gb) = gradient(x, y, &w, b, active);
        let step = loop {
            let eta = 1.0 / lipschitz;
            let mut nw = vec![0.0; d];
            for &j in active {
                nw[j] = soft_threshold(w[j] - eta * gw[j], eta * params.lambda);
            }
            let nb = b - eta * gb;
            let nf = smooth_loss(x, y, &nw, nb, active);
            let (mut lin, mut quad) = (gb * (nb - b), (nb - b) * (nb - b));
            for &j in active {
                lin += gw[j] * (nw[j] - w[j]);
                quad += (nw[j] - w[j]) * (nw[j] - w[j]);
            }
            if nf <= f + lin + 0.5 * lipschitz * quad + 1e-15 || lipschitz > 1e12 {
                break (nw, nb, nf);
            }
            lipschitz *= 2.0;
        };
        let (nw, nb, nf) = step;
        let next = nf + penalty(&nw);
        // The majorization makes this non-increasing; a rise is floating-point noise at the optimum.
        if next > objective {
            break;
        }
        let decrease = objective - next;
        (w, b, f, objective) = (nw, nb, nf, next);
        trace.push(objective);
        lipschitz = (lipschitz * 0.5).max(1e-3);
        if decrease < params.tolerance {
            break;
        }
    }
    (w, b, trace)
}

impl LogRegModel {
    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    fn check_width(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.width() {
            return Err(Error::ShapeMismatch {
                expected: self.width(),
                actual: row.len(),
            });
        }
        Ok(())
    }

    /// Per-class probabilities: one-vs-rest sigmoids normalized to sum to 1.
    pub fn probabilities(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_width(row)?;
        let x = standardize(row, &self.means, &self.scales);
        let raw: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.intercepts)
            .map(|(w, b)| sigmoid(b + w.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>()))
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(if total > 0.0 {
            raw.iter().map(|p| p / total).collect()
        } else {
            vec![1.0 / raw.len() as f64; raw.len()]
        })
    }

    /// Bucket label with the highest probability; ties go to the lowest label.
    pub fn predict_row(&self, row: &[f64]) -> Result<usize> {
        let p = self.probabilities(row)?;
        let mut best = 0;
        for (k, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = k;
            }
        }
        Ok(self.classes[best])
    }

    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<usize>> {
        features
            .rows()
            .iter()
            .map(|r| self.predict_row(r))
            .collect()
    }

    pub fn accuracy(&self, features: &FeatureMatrix, labels: &[usize]) -> Result<f64> {
        agreement(&self.predict(features)?, labels)
    }

    pub fn nonzero_count(&self) -> usize {
        self.weights.iter().flatten().filter(|w| **w != 0.0).count()
    }

    /// Up to `k` nonzero features per head, by descending |weight| (ties by column order).
    pub fn top_features(&self, k: usize) -> Vec<ClassFeatures> {
        self.classes
            .iter()
            .zip(&self.weights)
            .map(|(&class, w)| {
                let mut ranked: Vec<(usize, f64)> = w
                    .iter()
                    .copied()
                    .enumerate()
                    .filter(|(_, v)| *v != 0.0)
                    .collect();
                ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
                ClassFeatures {
                    class,
                    features: ranked
                        .into_iter()
                        .take(k)
                        .map(|(j, v)| (self.feature_names[j].clone(), v))
                        .collect(),
                }
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFeatures {
    pub class: usize,
    pub features: Vec<(String, f64)>,
}

/// Fraction of positions where two label sequences agree.
pub fn agreement(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("agreement over an empty set".into()));
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        let names = (0..rows[0].len()).map(|j| format!("f{j}")).collect();
        FeatureMatrix::new(rows, names, FeatureSource::HandLabeled).unwrap()
    }

    #[test]
    fn feature_matrix_validation() {
        let names = vec!["a".to_string(), "a".to_string()];
        assert!(FeatureMatrix::new(vec![], names, FeatureSource::HandLabeled).is_err());
        let names = vec!["a".to_string()];
        assert!(FeatureMatrix::new(
            vec![vec![f64::NAN]],
            names.clone(),
            FeatureSource::HandLabeled
        )
        .is_err());
        assert!(
            FeatureMatrix::new(vec![vec![1.0, 2.0]], names, FeatureSource::HandLabeled).is_err()
        );
    }

    #[test]
    fn csv_round_trip() {
        let m = matrix(vec![vec![0.5, 1.0], vec![-2.0, 3.25]]);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = FeatureMatrix::read_csv(buf.as_slice(), FeatureSource::HandLabeled).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn split_arithmetic() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let (train, test) = split_80_20(&labels, 3).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        assert_eq!(test.iter().filter(|&&i| labels[i] == 0).count(), 10);
        assert_eq!(split_80_20(&labels, 3).unwrap(), (train, test));

        let ten: Vec<usize> = (0..10).map(|i| usize::from(i >= 7)).collect();
        let (train, test) = split_80_20(&ten, 0).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));

        assert!(split_80_20(&[0, 0, 0, 0, 1], 0).is_err());
        assert!(split_80_20(&[0, 1, 0, 1], 0).is_err());
    }

    #[test]
    fn huge_lambda_predicts_majority() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64, (i * 7 % 5) as f64])
            .collect();
        let labels: Vec<usize> = (0..20).map(|i| usize::from(i >= 14)).collect();
        let params = LogRegParams {
            lambda: 1e3,
            ..Default::default()
        };
        let m = fit_l1_logreg(&matrix(rows.clone()), &labels, &params).unwrap();
        assert_eq!(m.nonzero_count(), 0);
        assert!(m.top_features(5).iter().all(|c| c.features.is_empty()));
        assert!(rows.iter().all(|r| m.predict_row(r).unwrap() == 0));
    }

    #[test]
    fn zero_model_is_uniform_and_picks_lowest() {
        let m = LogRegModel {
            feature_names: vec!["a".into()],
            classes: vec![2, 5, 7],
            weights: vec![vec![0.0]; 3],
            intercepts: vec![0.0; 3],
            means: vec![0.0],
            scales: vec![1.0],
            lambda: 0.0,
        };
        let p = m.probabilities(&[4.0]).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert_eq!(m.predict_row(&[4.0]).unwrap(), 2);
        assert!(m.predict_row(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn duplicate_columns_share_one_weight() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let v = f64::from(i % 2 == 0) + 0.1 * f64::from(i % 3);
                vec![v, v, f64::from(i % 5)]
            })
            .collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i % 2 == 0)).collect();
        let m = fit_l1_logreg(
            &matrix(rows),
            &labels,
            &LogRegParams {
                lambda: 0.05,
                ..Default::default()
            },
        )
        .unwrap();
        for w in &m.weights {
            assert!(w[0] != 0.0);
            assert_eq!(w[1], 0.0);
        }
    }

    #[test]
    fn agreement_checks_lengths() {
        assert_eq!(agreement(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(agreement(&[1, 0], &[1, 1]).unwrap(), 0.5);
        assert!(agreement(&[1], &[1, 2]).is_err());
        assert!(agreement(&[], &[]).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![f64::from(i), f64::from(i % 3)])
            .collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let m = fit_l1_logreg(&matrix(rows), &labels, &LogRegParams::default()).unwrap();
        assert_eq!(m.classes, vec![0, 1, 2]);
        assert_eq!(LogRegModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}
