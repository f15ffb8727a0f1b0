use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::causal::{Abstraction, AlignedSite, Alignment, CausalModel};
use crate::classifier::LogRegModel;
use crate::diagnosis::{
    bucket_report, build_graph, partition_graph, GraphExport, InterchangeGraph, Partition,
    PartitionExport,
};
use crate::error::{Error, Result};
use crate::models::{
    encode_logic_input, filter_correct, generate_dataset, stratified_by_class, train_mlp,
    BalanceStats, Dataset, LogicCircuit, TokenInput, TokenMlp, TrainParams, TrainReport,
};
use crate::pipeline::config::{AlignmentConfig, ModelConfig, RunConfig, Sampling};
use crate::pipeline::features::{hand_features, PipelineModel};
use crate::pipeline::report::{
    bucket_summaries, fit_classifiers, ClassifierReport, DiagnosisReport, Provenance,
    SearchSummary, REPORT_FORMAT,
};
use crate::pipeline::{write_atomic, write_json, AtStage, Stage, StageResult};
use crate::search::{
    localist_sweep, sample_pairs, SearchProblem, SweepEntry, SweepResult, HEATMAP_HEADER,
};

pub const DATASET_FILE: &str = "dataset.csv";
pub const BALANCE_FILE: &str = "dataset_balance.json";
pub const CHECKPOINT_FILE: &str = "mlp.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const REPORT_FILE: &str = "report.json";
pub const GRAPH_JSON_FILE: &str = "graph.json";
pub const GRAPH_DOT_FILE: &str = "graph.dot";
pub const PARTITION_FILE: &str = "partition.json";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const SWEEP_FILE: &str = "sweep.json";
pub const CONFIG_FILE: &str = "config.json";
pub const HAND_CLASSIFIER_FILE: &str = "classifier_hand.json";
pub const ACTIVATION_CLASSIFIER_FILE: &str = "classifier_activations.json";
pub const CLASSIFY_REPORT_FILE: &str = "classify_report.json";
pub const HAND_FEATURES_FILE: &str = "features_hand.csv";
pub const ACTIVATION_FEATURES_FILE: &str = "features_activations.csv";

pub enum LoadedModel {
    Circuit(LogicCircuit),
    Mlp(TokenMlp),
}

macro_rules! with_model {
    ($model:expr, $low:ident => $body:expr) => {
        match $model {
            LoadedModel::Circuit($low) => $body,
            LoadedModel::Mlp($low) => $body,
        }
    };
}
pub(crate) use with_model;

/// Builds the low-level model; trains one when the config asks for it.
pub fn load_model(config: &RunConfig) -> Result<(LoadedModel, Option<TrainReport>)> {
    match &config.model {
        ModelConfig::Circuit => Ok((LoadedModel::Circuit(LogicCircuit), None)),
        ModelConfig::MlpCheckpoint { path } => {
            let mlp = TokenMlp::from_json(&std::fs::read_to_string(path)?)?;
            if mlp.vocab != config.task.vocab {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint vocabulary {} differs from task vocabulary {}",
                    mlp.vocab, config.task.vocab
                )));
            }
            Ok((LoadedModel::Mlp(mlp), None))
        }
        ModelConfig::MlpTrain {
            train_size,
            data_seed,
            params,
        } => {
            let data = generate_dataset(*train_size, config.task.vocab, *data_seed)?;
            let (mlp, report) = train_mlp(&data, params)?;
            Ok((LoadedModel::Mlp(mlp), Some(report)))
        }
    }
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    match &config.task.dataset_path {
        Some(path) => Dataset::read_csv(std::fs::File::open(path)?, config.task.vocab),
        None => generate_dataset(config.task.n, config.task.vocab, config.task.seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateOutcome {
    pub dataset_path: PathBuf,
    pub balance: BalanceStats,
}

/// Writes the task dataset as CSV with balance statistics in a sidecar JSON.
pub fn cmd_generate(config: &RunConfig) -> StageResult<GenerateOutcome> {
    let data =
        generate_dataset(config.task.n, config.task.vocab, config.task.seed).at(Stage::Dataset)?;
    let mut csv = Vec::new();
    data.write_csv(&mut csv).at(Stage::Dataset)?;
    let dataset_path = config.output_dir.join(DATASET_FILE);
    write_atomic(&dataset_path, &csv).at(Stage::Write)?;
    let balance = data.balance();
    write_json(&config.output_dir.join(BALANCE_FILE), &balance).at(Stage::Write)?;
    Ok(GenerateOutcome {
        dataset_path,
        balance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub train_size: usize,
    pub report: TrainReport,
}

/// Trains the MLP from `model.mlp_train` (or its defaults) and writes the checkpoint.
pub fn cmd_train(config: &RunConfig) -> StageResult<TrainOutcome> {
    config.validate().at(Stage::Config)?;
    let (train_size, data_seed, params) = match &config.model {
        ModelConfig::MlpTrain {
            train_size,
            data_seed,
            params,
        } => (*train_size, *data_seed, params.clone()),
        _ => (
            crate::pipeline::DEFAULT_TRAIN_SIZE,
            1,
            TrainParams::default(),
        ),
    };
    let data = generate_dataset(train_size, config.task.vocab, data_seed).at(Stage::Dataset)?;
    let (mlp, report) = train_mlp(&data, &params).at(Stage::Model)?;
    let checkpoint_path = config.output_dir.join(CHECKPOINT_FILE);
    write_atomic(&checkpoint_path, mlp.to_json().at(Stage::Model)?.as_bytes()).at(Stage::Write)?;
    let outcome = TrainOutcome {
        checkpoint_path,
        train_size,
        report,
    };
    write_json(&config.output_dir.join(TRAIN_REPORT_FILE), &outcome).at(Stage::Write)?;
    Ok(outcome)
}

/// Correct inputs selected for the graph, with the counts behind them.
pub(crate) struct Nodes {
    pub dataset_size: usize,
    pub correct: usize,
    pub inputs: Vec<TokenInput>,
}

pub(crate) fn select_nodes<L: PipelineModel>(
    low: &L,
    data: &Dataset,
    sampling: Sampling,
) -> Result<Nodes> {
    let correct = filter_correct(low, data)?;
    let inputs = match sampling {
        Sampling::PerClass { per_class } => stratified_by_class(&correct, per_class),
        Sampling::First { n } => correct.inputs().into_iter().take(n).collect(),
    };
    if inputs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "only {} correct inputs selected; need at least 2",
            inputs.len()
        )));
    }
    Ok(Nodes {
        dataset_size: data.len(),
        correct: correct.len(),
        inputs,
    })
}

pub(crate) struct ChosenAlignment {
    pub alignment: Alignment,
    pub search: Option<SearchSummary>,
    pub heatmap: Vec<SweepResult>,
}

/// Explicit alignments are scored per variable for the heatmap; searches sweep
/// localist sites and, for MLPs, directions per layer.
pub(crate) fn choose_alignment<L: PipelineModel>(
    low: &L,
    high: &CausalModel,
    alignment: &AlignmentConfig,
    nodes: &[TokenInput],
    pairs: &[(usize, usize)],
) -> Result<ChosenAlignment> {
    match alignment {
        AlignmentConfig::Explicit { alignment } => {
            let mut heatmap = Vec::new();
            for (variable, at) in &alignment.variables {
                let problem = SearchProblem {
                    low,
                    high,
                    encode: &encode_logic_input,
                    variable,
                    readouts: alignment.readouts.clone(),
                };
                heatmap.push(localist_sweep(
                    &problem,
                    std::slice::from_ref(&at.site),
                    nodes,
                    pairs,
                    nodes,
                )?);
            }
            Ok(ChosenAlignment {
                alignment: alignment.clone(),
                search: None,
                heatmap,
            })
        }
        AlignmentConfig::Search {
            variable,
            layers,
            directions,
            restarts,
            seed,
        } => {
            let variable = match variable {
                Some(v) => v.clone(),
                None => high
                    .output_names()
                    .next()
                    .expect("models have an output")
                    .to_string(),
            };
            let problem = SearchProblem {
                low,
                high,
                encode: &encode_logic_input,
                variable: &variable,
                readouts: Default::default(),
            };
            let sites = low.localist_sites(layers.as_deref())?;
            let mut sweep = localist_sweep(&problem, &sites, nodes, pairs, nodes)?;
            let mut found = Vec::new();
            if *directions {
                for layer in low.direction_layers(layers.as_deref()) {
                    if let Some(d) =
                        low.search_direction(&problem, layer, nodes, pairs, *restarts, *seed)?
                    {
                        sweep.entries.push(SweepEntry {
                            site: d.site.site.clone(),
                            tau: d.site.tau,
                            iia: d.iia,
                            n_pairs: d.held_out_pairs,
                            degenerate: false,
                        });
                        found.push(d);
                    }
                }
            }
            let mut best = 0;
            for (i, e) in sweep.entries.iter().enumerate() {
                if e.iia > sweep.entries[best].iia {
                    best = i;
                }
            }
            sweep.best = best;
            let chosen: AlignedSite = sweep.best_site();
            Ok(ChosenAlignment {
                alignment: problem.alignment(chosen.clone()),
                search: Some(SearchSummary {
                    variable: variable.clone(),
                    best: chosen,
                    best_iia: sweep.best_entry().iia,
                    sites_scored: sweep.entries.len(),
                    directions: found,
                }),
                heatmap: vec![sweep],
            })
        }
    }
}

pub(crate) fn heatmap_csv(results: &[SweepResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEATMAP_HEADER)?;
    for r in results {
        for e in &r.entries {
            w.write_record([
                r.variable.clone(),
                e.site.to_string(),
                e.iia.to_string(),
                e.n_pairs.to_string(),
                e.degenerate.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// One diagnosis of `high` against `low` on fixed nodes.
pub struct DiagnoseOutcome {
    pub report: DiagnosisReport,
    pub graph: InterchangeGraph,
    pub partition: Partition,
    pub heatmap: Vec<SweepResult>,
    pub nodes: Vec<TokenInput>,
    pub classifiers: Option<(LogRegModel, LogRegModel)>,
}

pub(crate) fn run_pass<L: PipelineModel>(
    config: &RunConfig,
    low: &L,
    high: &CausalModel,
    alignment: &AlignmentConfig,
    nodes: &Nodes,
    mut provenance: Provenance,
) -> StageResult<DiagnoseOutcome> {
    let inputs = &nodes.inputs;
    let pairs = sample_pairs(
        inputs.len(),
        config.diagnosis.pairs,
        config.diagnosis.pair_seed,
    );
    let chosen = choose_alignment(low, high, alignment, inputs, &pairs).at(Stage::Search)?;

    let abstraction =
        Abstraction::new(low, high, &chosen.alignment, &encode_logic_input).at(Stage::Graph)?;
    let labels: Vec<i64> = inputs.iter().map(TokenInput::label).collect();
    let graph = build_graph(&abstraction, inputs, &labels).at(Stage::Graph)?;
    let partition =
        partition_graph(&graph, &config.diagnosis.quasi_clique()).at(Stage::Partition)?;
    let stats = bucket_report(&graph, &partition).at(Stage::Report)?;

    let bucket_of = partition.assignments();
    let (classifiers, classifier_note, models) = if partition.groups().len() < 2 {
        (
            None,
            Some("single bucket: nothing to classify".to_string()),
            None,
        )
    } else {
        let layer = config.classifier.activation_layer.or_else(|| {
            chosen
                .alignment
                .variables
                .values()
                .find_map(|a| a.site.layer())
        });
        let hand = hand_features(inputs).at(Stage::Classify)?;
        let acts = low.internal_features(inputs, layer).at(Stage::Classify)?;
        match fit_classifiers(&hand, &acts, &bucket_of, &config.classifier) {
            Ok(f) => (Some(f.report), None, Some((f.hand, f.activations))),
            // a bucket too small to stratify is reported, not fatal
            Err(Error::InvalidArgument(msg)) => (None, Some(msg), None),
            Err(e) => return Err(e).at(Stage::Classify),
        }
    };

    provenance.finish(config.mask_timestamps);
    let report = DiagnosisReport {
        format: REPORT_FORMAT.to_string(),
        model: low.kind().to_string(),
        hypothesis_outputs: high.output_names().map(str::to_string).collect(),
        alignment: chosen.alignment.clone(),
        search: chosen.search,
        dataset_size: nodes.dataset_size,
        correct_inputs: nodes.correct,
        nodes: inputs.len(),
        global_iia: stats.global_iia,
        global_density: stats.global_density,
        buckets: bucket_summaries(&stats, &partition, inputs),
        cross_iia: stats.cross_iia,
        classifiers,
        classifier_note,
        provenance,
    };
    Ok(DiagnoseOutcome {
        report,
        graph,
        partition,
        heatmap: chosen.heatmap,
        nodes: inputs.clone(),
        classifiers: models,
    })
}

/// Writes report, graph (JSON and DOT), partition, heatmap and classifier models into `dir`.
pub(crate) fn write_diagnosis(dir: &Path, outcome: &DiagnoseOutcome) -> Result<()> {
    write_json(&dir.join(REPORT_FILE), &outcome.report)?;
    write_json(&dir.join(GRAPH_JSON_FILE), &outcome.graph.to_export())?;
    let bucket_of = outcome.partition.assignments();
    write_atomic(
        &dir.join(GRAPH_DOT_FILE),
        outcome.graph.to_dot(Some(&bucket_of)).as_bytes(),
    )?;
    write_json(&dir.join(PARTITION_FILE), &outcome.partition.to_export())?;
    write_atomic(&dir.join(HEATMAP_FILE), &heatmap_csv(&outcome.heatmap)?)?;
    if let Some((hand, acts)) = &outcome.classifiers {
        write_json(&dir.join(HAND_CLASSIFIER_FILE), hand)?;
        write_json(&dir.join(ACTIVATION_CLASSIFIER_FILE), acts)?;
    }
    Ok(())
}

pub(crate) struct Prepared {
    pub model: LoadedModel,
    pub train_report: Option<TrainReport>,
    pub high: CausalModel,
    pub data: Dataset,
}

pub(crate) fn prepare(config: &RunConfig) -> StageResult<Prepared> {
    config.validate().at(Stage::Config)?;
    let (model, train_report) = load_model(config).at(Stage::Model)?;
    let high = config.hypothesis.load().at(Stage::Hypothesis)?;
    let data = load_dataset(config).at(Stage::Dataset)?;
    Ok(Prepared {
        model,
        train_report,
        high,
        data,
    })
}

/// Persists the config and, for trained models, the checkpoint next to the run outputs.
pub(crate) fn write_run_inputs(config: &RunConfig, prepared: &Prepared) -> Result<()> {
    write_json(&config.output_dir.join(CONFIG_FILE), config)?;
    if let (LoadedModel::Mlp(mlp), Some(report)) = (&prepared.model, &prepared.train_report) {
        write_atomic(
            &config.output_dir.join(CHECKPOINT_FILE),
            mlp.to_json()?.as_bytes(),
        )?;
        write_json(&config.output_dir.join(TRAIN_REPORT_FILE), report)?;
    }
    Ok(())
}

/// filter → optional search → graph → partition → report → classifiers → files.
pub fn cmd_diagnose(config: &RunConfig) -> StageResult<DiagnoseOutcome> {
    let provenance = Provenance::start(config);
    let prepared = prepare(config)?;
    let outcome = with_model!(&prepared.model, low => {
        let nodes = select_nodes(low, &prepared.data, config.diagnosis.sampling).at(Stage::Filter)?;
        run_pass(config, low, &prepared.high, &config.alignment, &nodes, provenance)?
    });
    write_run_inputs(config, &prepared).at(Stage::Write)?;
    write_diagnosis(&config.output_dir, &outcome).at(Stage::Write)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub alignment: Alignment,
    pub search: Option<SearchSummary>,
    pub sweeps: Vec<SweepResult>,
    pub provenance: Provenance,
}

/// Alignment scoring only: writes the sweep JSON and heatmap CSV.
pub fn cmd_sweep(config: &RunConfig) -> StageResult<SweepOutcome> {
    let mut provenance = Provenance::start(config);
    let prepared = prepare(config)?;
    let chosen = with_model!(&prepared.model, low => {
        let nodes = select_nodes(low, &prepared.data, config.diagnosis.sampling).at(Stage::Filter)?;
        let pairs = sample_pairs(nodes.inputs.len(), config.diagnosis.pairs, config.diagnosis.pair_seed);
        choose_alignment(low, &prepared.high, &config.alignment, &nodes.inputs, &pairs).at(Stage::Search)?
    });
    provenance.finish(config.mask_timestamps);
    let outcome = SweepOutcome {
        alignment: chosen.alignment,
        search: chosen.search,
        sweeps: chosen.heatmap,
        provenance,
    };
    write_run_inputs(config, &prepared).at(Stage::Write)?;
    write_json(&config.output_dir.join(SWEEP_FILE), &outcome).at(Stage::Write)?;
    write_atomic(
        &config.output_dir.join(HEATMAP_FILE),
        &heatmap_csv(&outcome.sweeps).at(Stage::Write)?,
    )
    .at(Stage::Write)?;
    Ok(outcome)
}

fn read_artifacts(
    config: &RunConfig,
    graph_path: Option<&Path>,
    partition_path: Option<&Path>,
) -> Result<(InterchangeGraph, Partition, Vec<TokenInput>)> {
    let gp = graph_path.map_or_else(
        || config.output_dir.join(GRAPH_JSON_FILE),
        Path::to_path_buf,
    );
    let pp =
        partition_path.map_or_else(|| config.output_dir.join(PARTITION_FILE), Path::to_path_buf);
    let export: GraphExport = serde_json::from_str(&std::fs::read_to_string(gp)?)?;
    let graph = InterchangeGraph::from_export(&export)?;
    let pexport: PartitionExport = serde_json::from_str(&std::fs::read_to_string(pp)?)?;
    let partition = Partition::from_export(&pexport)?;
    if partition.node_count() != graph.len() {
        return Err(Error::ShapeMismatch {
            expected: graph.len(),
            actual: partition.node_count(),
        });
    }
    let inputs = graph
        .labels()
        .iter()
        .map(|l| TokenInput::parse(l, config.task.vocab))
        .collect::<Result<Vec<_>>>()?;
    Ok((graph, partition, inputs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOutcome {
    pub report: ClassifierReport,
    pub provenance: Provenance,
}

/// Refits both bucket classifiers from exported graph and partition files.
pub fn cmd_classify(
    config: &RunConfig,
    graph_path: Option<&Path>,
    partition_path: Option<&Path>,
) -> StageResult<ClassifyOutcome> {
    let mut provenance = Provenance::start(config);
    config.validate().at(Stage::Config)?;
    let (_, partition, inputs) =
        read_artifacts(config, graph_path, partition_path).at(Stage::Dataset)?;
    let (model, _) = load_model(config).at(Stage::Model)?;
    let labels = partition.assignments();
    let hand = hand_features(&inputs).at(Stage::Classify)?;
    let acts = with_model!(&model, low => low.internal_features(&inputs, config.classifier.activation_layer))
        .at(Stage::Classify)?;
    let fitted = fit_classifiers(&hand, &acts, &labels, &config.classifier).at(Stage::Classify)?;
    provenance.finish(config.mask_timestamps);
    let outcome = ClassifyOutcome {
        report: fitted.report,
        provenance,
    };
    let dir = &config.output_dir;
    write_json(&dir.join(HAND_CLASSIFIER_FILE), &fitted.hand).at(Stage::Write)?;
    write_json(&dir.join(ACTIVATION_CLASSIFIER_FILE), &fitted.activations).at(Stage::Write)?;
    write_json(&dir.join(CLASSIFY_REPORT_FILE), &outcome).at(Stage::Write)?;
    Ok(outcome)
}

/// Writes a bucket-coloured DOT graph and both feature matrices as CSV.
pub fn cmd_export(
    config: &RunConfig,
    graph_path: Option<&Path>,
    partition_path: Option<&Path>,
) -> StageResult<Vec<PathBuf>> {
    config.validate().at(Stage::Config)?;
    let (graph, partition, inputs) =
        read_artifacts(config, graph_path, partition_path).at(Stage::Dataset)?;
    let (model, _) = load_model(config).at(Stage::Model)?;
    let acts = with_model!(&model, low => low.internal_features(&inputs, config.classifier.activation_layer))
        .at(Stage::Classify)?;
    let hand = hand_features(&inputs).at(Stage::Classify)?;
    let dir = &config.output_dir;
    let mut written = Vec::new();
    let dot = dir.join(GRAPH_DOT_FILE);
    write_atomic(
        &dot,
        graph.to_dot(Some(&partition.assignments())).as_bytes(),
    )
    .at(Stage::Write)?;
    written.push(dot);
    for (name, m) in [
        (HAND_FEATURES_FILE, &hand),
        (ACTIVATION_FEATURES_FILE, &acts),
    ] {
        let mut buf = Vec::new();
        m.write_csv(&mut buf).at(Stage::Write)?;
        let path = dir.join(name);
        write_atomic(&path, &buf).at(Stage::Write)?;
        written.push(path);
    }
    Ok(written)
}
