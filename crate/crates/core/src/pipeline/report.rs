use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::causal::{AlignedSite, Alignment};
use crate::classifier::{
    agreement, fit_l1_logreg, split_80_20, ClassFeatures, FeatureMatrix, FeatureSource,
    LogRegModel, LAMBDA_GRID,
};
use crate::diagnosis::{BucketReport, Partition};
use crate::error::Result;
use crate::models::logic::WIRES;
use crate::models::TokenInput;
use crate::pipeline::config::{ClassifierConfig, RunConfig};
use crate::search::DirectionResult;

pub const REPORT_FORMAT: &str = "bucketing-report-v1";
const MASKED: &str = "masked";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub started_at: String,
    pub finished_at: String,
}

impl Provenance {
    pub fn start(config: &RunConfig) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("task".to_string(), config.task.seed);
        seeds.insert("pairs".to_string(), config.diagnosis.pair_seed);
        seeds.insert("split".to_string(), config.classifier.split_seed);
        if let crate::pipeline::AlignmentConfig::Search { seed, .. } = &config.alignment {
            seeds.insert("search".to_string(), *seed);
        }
        if let crate::pipeline::ModelConfig::MlpTrain {
            data_seed, params, ..
        } = &config.model
        {
            seeds.insert("train_data".to_string(), *data_seed);
            seeds.insert("train".to_string(), params.seed);
        }
        let now = timestamp(config.mask_timestamps);
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            seeds,
            started_at: now.clone(),
            finished_at: now,
        }
    }

    pub fn finish(&mut self, masked: bool) {
        self.finished_at = timestamp(masked);
    }
}

fn timestamp(masked: bool) -> String {
    if masked {
        MASKED.to_string()
    } else {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub variable: String,
    pub best: AlignedSite,
    pub best_iia: f64,
    pub sites_scored: usize,
    pub directions: Vec<DirectionResult>,
}

/// Per-bucket statistics plus a description by input class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub name: String,
    pub size: usize,
    pub density: f64,
    pub within_iia: Option<f64>,
    /// Counts per (o1,o2,o3) class.
    pub class_histogram: BTreeMap<String, usize>,
    pub dominant_class: String,
    pub dominance: f64,
    /// Majority value of each wire o1..o5 and the fraction of the bucket holding it.
    pub wire_majority: BTreeMap<String, WireMajority>,
    /// The wire with the purest majority; the first such wire on ties.
    pub dominant_wire: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireMajority {
    pub value: bool,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub test_accuracy: f64,
    pub nonzero: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub source: FeatureSource,
    pub features: usize,
    pub lambda: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub nonzero: usize,
    pub top_features: Vec<ClassFeatures>,
    pub lambda_grid: Vec<GridPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub hand: ClassifierSummary,
    pub activations: ClassifierSummary,
    /// Fraction of test inputs on which both classifiers predict the same bucket.
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub format: String,
    pub model: String,
    pub hypothesis_outputs: Vec<String>,
    pub alignment: Alignment,
    pub search: Option<SearchSummary>,
    pub dataset_size: usize,
    pub correct_inputs: usize,
    pub nodes: usize,
    pub global_iia: Option<f64>,
    pub global_density: f64,
    pub buckets: Vec<BucketSummary>,
    /// Rows are source groups, columns base groups, in `buckets` order.
    pub cross_iia: Vec<Vec<Option<f64>>>,
    pub classifiers: Option<ClassifierReport>,
    pub classifier_note: Option<String>,
    pub provenance: Provenance,
}

pub(crate) fn bucket_summaries(
    stats: &BucketReport,
    partition: &Partition,
    inputs: &[TokenInput],
) -> Vec<BucketSummary> {
    partition
        .groups()
        .iter()
        .zip(&stats.buckets)
        .map(|((name, nodes), s)| {
            let mut class_histogram = BTreeMap::new();
            for &v in *nodes {
                *class_histogram
                    .entry(inputs[v].class().to_string())
                    .or_insert(0) += 1;
            }
            // first class in key order among the most frequent
            let (dominant_class, top) =
                class_histogram
                    .iter()
                    .fold((String::new(), 0), |acc, (k, &c)| {
                        if c > acc.1 {
                            (k.clone(), c)
                        } else {
                            acc
                        }
                    });
            let mut wire_majority = BTreeMap::new();
            let mut dominant_wire = (String::new(), -1.0);
            for wire in WIRES {
                let ones = nodes
                    .iter()
                    .filter(|&&i| inputs[i].wires().get(wire) == Some(true))
                    .count();
                let value = 2 * ones > nodes.len();
                let held = if value { ones } else { nodes.len() - ones };
                let fraction = if nodes.is_empty() {
                    0.0
                } else {
                    held as f64 / nodes.len() as f64
                };
                if fraction > dominant_wire.1 {
                    dominant_wire = (wire.to_string(), fraction);
                }
                wire_majority.insert(wire.to_string(), WireMajority { value, fraction });
            }
            BucketSummary {
                name: name.clone(),
                size: s.size,
                density: s.density,
                within_iia: s.within_iia,
                dominance: if nodes.is_empty() {
                    0.0
                } else {
                    top as f64 / nodes.len() as f64
                },
                class_histogram,
                dominant_class,
                wire_majority,
                dominant_wire: dominant_wire.0,
            }
        })
        .collect()
}

pub(crate) struct FittedClassifiers {
    pub report: ClassifierReport,
    pub hand: LogRegModel,
    pub activations: LogRegModel,
}

/// Fits hand-feature and activation-feature classifiers on one shared stratified split.
pub(crate) fn fit_classifiers(
    hand: &FeatureMatrix,
    activations: &FeatureMatrix,
    labels: &[usize],
    config: &ClassifierConfig,
) -> Result<FittedClassifiers> {
    let (train, test) = split_80_20(labels, config.split_seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let (y_train, y_test) = (pick(&train), pick(&test));

    let fit_one =
        |features: &FeatureMatrix| -> Result<(ClassifierSummary, LogRegModel, Vec<usize>)> {
            let (xt, xs) = (features.select(&train), features.select(&test));
            let model = fit_l1_logreg(&xt, &y_train, &config.params(config.lambda))?;
            let predictions = model.predict(&xs)?;
            let mut lambda_grid = Vec::with_capacity(LAMBDA_GRID.len());
            for lambda in LAMBDA_GRID {
                let m = fit_l1_logreg(&xt, &y_train, &config.params(lambda))?;
                lambda_grid.push(GridPoint {
                    lambda,
                    test_accuracy: m.accuracy(&xs, &y_test)?,
                    nonzero: m.nonzero_count(),
                });
            }
            let summary = ClassifierSummary {
                source: features.source(),
                features: features.width(),
                lambda: config.lambda,
                n_train: train.len(),
                n_test: test.len(),
                train_accuracy: model.accuracy(&xt, &y_train)?,
                test_accuracy: agreement(&predictions, &y_test)?,
                nonzero: model.nonzero_count(),
                top_features: model.top_features(config.top_k),
                lambda_grid,
            };
            Ok((summary, model, predictions))
        };
    let (hand_summary, hand_model, hand_pred) = fit_one(hand)?;
    let (act_summary, act_model, act_pred) = fit_one(activations)?;
    Ok(FittedClassifiers {
        report: ClassifierReport {
            hand: hand_summary,
            activations: act_summary,
            agreement: agreement(&hand_pred, &act_pred)?,
        },
        hand: hand_model,
        activations: act_model,
    })
}
