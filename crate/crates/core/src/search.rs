//! Candidate alignment search: localist site sweeps and 1-D direction search.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::causal::{
    Abstraction, AlignedSite, Alignment, CausalModel, InputEncoder, LowLevelModel, Readout, Site,
    Tau,
};
use crate::error::{Error, Result};
use crate::models::TokenMlp;

/// Initial hill-climbing step; halves whenever a full coordinate pass finds no gain.
pub const INITIAL_STEP: f64 = 0.5;
pub const MIN_STEP: f64 = 1e-3;
pub const MAX_ITERATIONS: usize = 100;

pub const HEATMAP_HEADER: [&str; 5] = ["variable", "site", "iia", "n_pairs", "degenerate"];

/// The fixed parts of an alignment search for one high-level variable.
pub struct SearchProblem<'a, L: LowLevelModel> {
    pub low: &'a L,
    pub high: &'a CausalModel,
    pub encode: InputEncoder<'a, L::Input>,
    pub variable: &'a str,
    /// Output readouts carried into every candidate alignment.
    pub readouts: BTreeMap<String, Readout>,
}

impl<L: LowLevelModel> SearchProblem<'_, L> {
    pub fn alignment(&self, at: AlignedSite) -> Alignment {
        let mut a = Alignment::single(self.variable, at);
        a.readouts = self.readouts.clone();
        a
    }

    /// IIA of `{variable → at}` over `pairs` of indices into `inputs`.
    pub fn score(
        &self,
        at: AlignedSite,
        inputs: &[L::Input],
        pairs: &[(usize, usize)],
    ) -> Result<f64> {
        let alignment = self.alignment(at);
        let abs = Abstraction::new(self.low, self.high, &alignment, self.encode)?;
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("IIA needs at least one pair".into()));
        }
        if pairs.iter().any(|&(s, b)| s.max(b) >= inputs.len()) {
            return Err(Error::InvalidArgument("pair index out of range".into()));
        }
        let prepared = abs.prepare(inputs)?;
        let hits = pairs
            .par_iter()
            .map(|&(s, b)| prepared.directional_success(s, b).map(usize::from))
            .sum::<Result<usize>>()?;
        Ok(hits as f64 / pairs.len() as f64)
    }

    /// Value of the searched variable under the hypothesis, per input.
    pub fn variable_values(&self, inputs: &[L::Input]) -> Result<Vec<i64>> {
        inputs
            .iter()
            .map(|x| {
                let run = self.high.evaluate(&(self.encode)(x))?;
                run.get(self.variable)
                    .ok_or_else(|| Error::UnknownVariable(self.variable.to_string()))
            })
            .collect()
    }

    /// Midpoint-of-class-means τ for `site` on the calibration inputs, and whether the
    /// site reading is constant there.
    pub fn fit_tau(
        &self,
        site: &Site,
        calibration: &[L::Input],
        labels: &[i64],
    ) -> Result<(Tau, bool)> {
        let values = calibration
            .iter()
            .map(|x| self.low.read_site(x, &[], site))
            .collect::<Result<Vec<f64>>>()?;
        let constant = values.windows(2).all(|w| w[0] == w[1]);
        let binary = self
            .high
            .variable(self.variable)
            .is_some_and(|v| v.domain == [0, 1]);
        let tau = if binary {
            Tau::fit_threshold(&values, labels).unwrap_or(Tau::Identity)
        } else {
            Tau::Identity
        };
        Ok((tau, constant))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub site: Site,
    pub tau: Tau,
    pub iia: f64,
    pub n_pairs: usize,
    /// The site reading was constant over the calibration set.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub variable: String,
    pub entries: Vec<SweepEntry>,
    /// Index into `entries` of the first maximal score.
    pub best: usize,
}

impl SweepResult {
    pub fn best_entry(&self) -> &SweepEntry {
        &self.entries[self.best]
    }

    pub fn best_site(&self) -> AlignedSite {
        let e = self.best_entry();
        AlignedSite::new(e.site.clone(), e.tau)
    }

    /// Plot-ready rows: `variable,site,iia,n_pairs,degenerate`.
    pub fn write_heatmap_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(HEATMAP_HEADER)?;
        for e in &self.entries {
            w.write_record([
                self.variable.clone(),
                e.site.to_string(),
                e.iia.to_string(),
                e.n_pairs.to_string(),
                e.degenerate.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores the alignment `{variable → site}` for every site.
///
/// τ is fitted per site on `calibration`; `pairs` index into `inputs`.
pub fn localist_sweep<L: LowLevelModel>(
    problem: &SearchProblem<'_, L>,
    sites: &[Site],
    inputs: &[L::Input],
    pairs: &[(usize, usize)],
    calibration: &[L::Input],
) -> Result<SweepResult> {
    if sites.is_empty() || pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one site and one pair".into(),
        ));
    }
    let labels = problem.variable_values(calibration)?;
    let entries = sites
        .par_iter()
        .map(|site| {
            let (tau, degenerate) = problem.fit_tau(site, calibration, &labels)?;
            let iia = problem.score(AlignedSite::new(site.clone(), tau), inputs, pairs)?;
            Ok(SweepEntry {
                site: site.clone(),
                tau,
                iia,
                n_pairs: pairs.len(),
                degenerate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = first_argmax(entries.iter().map(|e| e.iia));
    Ok(SweepResult {
        variable: problem.variable.to_string(),
        entries,
        best,
    })
}

fn first_argmax(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in scores.enumerate() {
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

/// `count` distinct ordered pairs over `0..n` without self-pairs; all of them if fewer exist.
pub fn sample_pairs(n: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1);
    let decode = |k: usize| {
        let s = k / (n - 1);
        let r = k % (n - 1);
        (s, if r >= s { r + 1 } else { r })
    };
    if count >= total {
        return (0..total).map(decode).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, total, count).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(decode).collect()
}

/// Models exposing hidden-layer activation vectors, addressable with direction sites.
pub trait HiddenStates: LowLevelModel {
    fn hidden_state(&self, input: &Self::Input, layer: usize) -> Result<Vec<f64>>;
}

impl HiddenStates for TokenMlp {
    fn hidden_state(&self, input: &Self::Input, layer: usize) -> Result<Vec<f64>> {
        self.hidden_activations(input, layer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateOrigin {
    MeanDifference,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionCandidate {
    pub origin: CandidateOrigin,
    pub refined: bool,
    /// IIA on the pairs used for hill climbing.
    pub fit_iia: f64,
    /// IIA on the held-out pairs; used for selection.
    pub held_out_iia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionResult {
    pub site: AlignedSite,
    pub iia: f64,
    pub candidates: Vec<DirectionCandidate>,
    pub fit_pairs: usize,
    pub held_out_pairs: usize,
}

/// Searches a unit direction at `layer` realizing the problem variable.
///
/// Candidates are the difference of class means plus `restarts` random unit vectors.
/// Each is refined by coordinate hill climbing on one half of `pairs`; all candidates,
/// unrefined and refined, are then ranked on the other half. Ties keep the earlier
/// candidate, so the unrefined mean difference is never beaten by a worse one.
pub fn direction_search<L: HiddenStates>(
    problem: &SearchProblem<'_, L>,
    layer: usize,
    inputs: &[L::Input],
    pairs: &[(usize, usize)],
    restarts: usize,
    seed: u64,
) -> Result<DirectionResult> {
    if pairs.len() < 2 || inputs.is_empty() {
        return Err(Error::InvalidArgument(
            "direction search needs at least two pairs".into(),
        ));
    }
    let states = inputs
        .par_iter()
        .map(|x| problem.low.hidden_state(x, layer))
        .collect::<Result<Vec<_>>>()?;
    let width = states[0].len();
    let labels = problem.variable_values(inputs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fit, held_out) = split_pairs(pairs, &mut rng);

    let mut starts: Vec<(CandidateOrigin, Vec<f64>)> = Vec::new();
    if let Some(d) = mean_difference(&states, &labels) {
        starts.push((CandidateOrigin::MeanDifference, d));
    }
    for _ in 0..restarts {
        let v: Vec<f64> = (0..width).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(v) = normalized(&v) {
            starts.push((CandidateOrigin::Random, v));
        }
    }
    if starts.is_empty() {
        return Err(Error::InvalidArgument(
            "no usable direction: class means coincide and no random restarts requested".into(),
        ));
    }

    let aligned = |v: &[f64]| -> Result<AlignedSite> {
        let projections: Vec<f64> = states.iter().map(|h| dot(v, h)).collect();
        let tau = Tau::fit_threshold(&projections, &labels).unwrap_or(Tau::Identity);
        Ok(AlignedSite::new(Site::direction(layer, v.to_vec())?, tau))
    };
    let score = |v: &[f64], on: &[(usize, usize)]| problem.score(aligned(v)?, inputs, on);

    let mut pool: Vec<(Vec<f64>, DirectionCandidate)> = Vec::new();
    for (origin, start) in starts {
        let start_fit = score(&start, &fit)?;
        let (refined, refined_fit) = hill_climb(start.clone(), start_fit, |v| score(v, &fit))?;
        pool.push((
            start.clone(),
            DirectionCandidate {
                origin,
                refined: false,
                fit_iia: start_fit,
                held_out_iia: score(&start, &held_out)?,
            },
        ));
        if refined != start {
            let held = score(&refined, &held_out)?;
            pool.push((
                refined,
                DirectionCandidate {
                    origin,
                    refined: true,
                    fit_iia: refined_fit,
                    held_out_iia: held,
                },
            ));
        }
    }
    let best = first_argmax(pool.iter().map(|(_, c)| c.held_out_iia));
    let site = aligned(&pool[best].0)?;
    Ok(DirectionResult {
        site,
        iia: pool[best].1.held_out_iia,
        candidates: pool.into_iter().map(|(_, c)| c).collect(),
        fit_pairs: fit.len(),
        held_out_pairs: held_out.len(),
    })
}

type PairList = Vec<(usize, usize)>;

fn split_pairs(pairs: &[(usize, usize)], rng: &mut ChaCha8Rng) -> (PairList, PairList) {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let half = pairs.len() / 2;
    let take = |idx: &[usize]| {
        let mut v: Vec<usize> = idx.to_vec();
        v.sort_unstable();
        v.into_iter().map(|i| pairs[i]).collect()
    };
    (take(&order[..half]), take(&order[half..]))
}

fn mean_difference(states: &[Vec<f64>], labels: &[i64]) -> Option<Vec<f64>> {
    let width = states.first()?.len();
    let (mut m0, mut m1) = (vec![0.0; width], vec![0.0; width]);
    let (mut n0, mut n1) = (0usize, 0usize);
    for (h, &l) in states.iter().zip(labels) {
        let (m, n) = if l != 0 {
            (&mut m1, &mut n1)
        } else {
            (&mut m0, &mut n0)
        };
        for (a, b) in m.iter_mut().zip(h) {
            *a += b;
        }
        *n += 1;
    }
    if n0 == 0 || n1 == 0 {
        return None;
    }
    let diff: Vec<f64> = m1
        .iter()
        .zip(&m0)
        .map(|(a, b)| a / n1 as f64 - b / n0 as f64)
        .collect();
    normalized(&diff)
}

/// Coordinate ascent: try ±step on each coordinate, keep strict gains, halve the
/// step after a pass with none.
fn hill_climb(
    mut v: Vec<f64>,
    mut best: f64,
    mut score: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<(Vec<f64>, f64)> {
    let mut step = INITIAL_STEP;
    for _ in 0..MAX_ITERATIONS {
        if step < MIN_STEP || best >= 1.0 {
            break;
        }
        let mut improved = false;
        for k in 0..v.len() {
            for sign in [1.0, -1.0] {
                let mut trial = v.clone();
                trial[k] += sign * step;
                let Some(trial) = normalized(&trial) else {
                    continue;
                };
                let s = score(&trial)?;
                if s > best {
                    best = s;
                    v = trial;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok((v, best))
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let norm = dot(v, v).sqrt();
    (norm > 1e-12 && norm.is_finite()).then(|| v.iter().map(|x| x / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_pairs_is_deterministic_and_valid() {
        let a = sample_pairs(10, 30, 4);
        assert_eq!(a, sample_pairs(10, 30, 4));
        assert_eq!(a.len(), 30);
        assert!(a.iter().all(|&(s, b)| s != b && s < 10 && b < 10));
        let mut d = a.clone();
        d.dedup();
        assert_eq!(d.len(), 30);
        assert_eq!(sample_pairs(4, 100, 0).len(), 12);
        assert!(sample_pairs(1, 5, 0).is_empty());
    }

    #[test]
    fn argmax_keeps_first() {
        assert_eq!(first_argmax([0.2, 0.9, 0.9, 0.1].into_iter()), 1);
    }

    #[test]
    fn hill_climb_finds_axis() {
        // Score peaks when v aligns with e_0.
        let score = |v: &[f64]| Ok((v[0] * 100.0).round() / 100.0);
        let start = normalized(&[0.3, 1.0, -0.5]).unwrap();
        let s0 = score(&start).unwrap();
        let (v, s) = hill_climb(start, s0, score).unwrap();
        assert!(s >= 0.99, "{v:?}");
    }
}
