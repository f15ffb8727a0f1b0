mod common;

use std::fs;
use std::path::Path;

use bucketing::causal::{AlignedSite, Alignment, Site};
use bucketing::diagnosis::{
    bucket_report, GraphExport, InterchangeGraph, Partition, PartitionExport,
};
use bucketing::models::{Dataset, TokenInput};
use bucketing::pipeline::{
    cmd_classify, cmd_diagnose, cmd_export, cmd_generate, cmd_recurse, cmd_sweep, AlignmentConfig,
    HypothesisConfig, Promotion, RunConfig, Stage, WireMajority, FINAL_HYPOTHESIS_FILE,
    RECURSE_REPORT_FILE,
};
use tempfile::TempDir;

fn config_in(dir: &Path) -> RunConfig {
    RunConfig {
        output_dir: dir.to_path_buf(),
        mask_timestamps: true,
        ..RunConfig::default()
    }
}

fn read_graph(dir: &Path) -> (InterchangeGraph, Partition) {
    let g: GraphExport =
        serde_json::from_str(&fs::read_to_string(dir.join("graph.json")).unwrap()).unwrap();
    let p: PartitionExport =
        serde_json::from_str(&fs::read_to_string(dir.join("partition.json")).unwrap()).unwrap();
    (
        InterchangeGraph::from_export(&g).unwrap(),
        Partition::from_export(&p).unwrap(),
    )
}

fn parse_labels(graph: &InterchangeGraph) -> Vec<TokenInput> {
    graph
        .labels()
        .iter()
        .map(|l| TokenInput::parse(l, common::VOCAB).unwrap())
        .collect()
}

#[test]
fn default_run_splits_on_o4_and_matches_exported_files() {
    let tmp = TempDir::new().unwrap();
    let out = cmd_diagnose(&config_in(tmp.path())).unwrap();
    let r = &out.report;
    assert_eq!(r.nodes, 64);
    assert_eq!(r.dataset_size, 8000);
    assert_eq!(r.correct_inputs, 8000);
    assert_eq!(r.buckets.len(), 2);
    assert_eq!((r.buckets[0].size, r.buckets[1].size), (48, 16));
    assert_eq!(r.buckets[0].dominant_wire, "o4");
    assert_eq!(
        r.buckets[0].wire_majority["o4"],
        WireMajority {
            value: false,
            fraction: 1.0
        }
    );
    assert_eq!(
        r.buckets[1].wire_majority["o4"],
        WireMajority {
            value: true,
            fraction: 1.0
        }
    );
    assert_eq!(
        r.global_iia,
        Some(
            out.graph
                .iia_between(&(0..64).collect::<Vec<_>>(), &(0..64).collect::<Vec<_>>())
                .unwrap()
        )
    );

    // recompute everything from the files on disk
    let (graph, partition) = read_graph(tmp.path());
    assert_eq!(graph, out.graph);
    assert_eq!(partition, out.partition);
    let recomputed = bucket_report(&graph, &partition).unwrap();
    assert_eq!(recomputed.global_iia, r.global_iia);
    assert_eq!(recomputed.cross_iia, r.cross_iia);
    for (b, s) in recomputed.buckets.iter().zip(&r.buckets) {
        assert_eq!(
            (b.size, b.density, b.within_iia),
            (s.size, s.density, s.within_iia)
        );
    }
    let inputs = parse_labels(&graph);
    assert_eq!(inputs, out.nodes);
    for (v, x) in inputs.iter().enumerate() {
        let bucket = partition.assignments()[v];
        assert_eq!(bucket == 1, x.class().o4(), "node {v}");
    }

    let classifiers = r.classifiers.as_ref().expect("two buckets are classified");
    assert_eq!(classifiers.hand.test_accuracy, 1.0);
    assert_eq!(classifiers.activations.test_accuracy, 1.0);
    for name in [
        "report.json",
        "graph.dot",
        "heatmap.csv",
        "config.json",
        "classifier_hand.json",
        "classifier_activations.json",
    ] {
        assert!(tmp.path().join(name).is_file(), "{name}");
    }
    let heatmap = fs::read_to_string(tmp.path().join("heatmap.csv")).unwrap();
    assert!(heatmap.starts_with("variable,site,iia,n_pairs,degenerate\no5,var:o3,"));
}

#[test]
fn masked_runs_are_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    cmd_diagnose(&config_in(a.path())).unwrap();
    cmd_diagnose(&config_in(b.path())).unwrap();
    for name in [
        "report.json",
        "graph.json",
        "partition.json",
        "heatmap.csv",
        "graph.dot",
        "classifier_hand.json",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let report = fs::read_to_string(a.path().join("report.json")).unwrap();
    assert!(report.contains("\"started_at\": \"masked\""));
}

#[test]
fn exact_alignment_gives_one_bucket() {
    let tmp = TempDir::new().unwrap();
    let mut config = config_in(tmp.path());
    config.alignment = AlignmentConfig::Explicit {
        alignment: common::o5_to_wire("o5"),
    };
    let out = cmd_diagnose(&config).unwrap();
    assert_eq!(out.report.global_iia, Some(1.0));
    assert_eq!(out.report.buckets.len(), 1);
    assert_eq!(out.report.buckets[0].size, 64);
    assert!(out.report.classifiers.is_none());
    assert!(out.report.classifier_note.is_some());
}

#[test]
fn strict_gamma_keeps_the_same_buckets() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let loose = cmd_diagnose(&config_in(a.path())).unwrap();
    let mut config = config_in(b.path());
    config.diagnosis.gamma = 1.0;
    let strict = cmd_diagnose(&config).unwrap();
    assert_eq!(loose.partition, strict.partition);
}

#[test]
fn search_finds_output_wire() {
    let tmp = TempDir::new().unwrap();
    let mut config = config_in(tmp.path());
    config.alignment = AlignmentConfig::Search {
        variable: None,
        layers: None,
        directions: true,
        restarts: 1,
        seed: 0,
    };
    let out = cmd_sweep(&config).unwrap();
    let search = out.search.unwrap();
    assert_eq!(search.best.site, Site::variable("o5"));
    assert_eq!(search.best_iia, 1.0);
    assert_eq!(search.sites_scored, 5);
    assert!(search.directions.is_empty());
    let heatmap = fs::read_to_string(tmp.path().join("heatmap.csv")).unwrap();
    assert_eq!(heatmap.lines().count(), 6);
}

#[test]
fn recursion_into_o4() {
    let tmp = TempDir::new().unwrap();
    let config = config_in(tmp.path());
    let mut promotion = Promotion::new("o4=and(o1,o2)".parse().unwrap());
    promotion.consumers.push("o5=or(o4,o3)".parse().unwrap());
    promotion.align_to = Some(Site::variable("o1"));
    let out = cmd_recurse(&config, &[promotion]).unwrap();

    assert_eq!(out.report.hierarchy, "o1,o2,o3 -> o4 -> o5");
    assert_eq!(out.passes.len(), 2);
    let pass = &out.report.passes[1];
    let sweep = pass.readout_sweep.as_ref().expect("readout was located");
    assert_eq!(sweep.best_site().site, Site::variable("o4"));
    assert_eq!(sweep.best_entry().iia, 1.0);

    let second = &out.passes[1];
    assert_eq!(second.report.hypothesis_outputs, ["o4"]);
    let first_bucket: Vec<usize> = second.partition.buckets[0].clone();
    assert_eq!(first_bucket.len(), 32);
    assert!(first_bucket.iter().all(|&v| !second.nodes[v].class().o1));
    for k in 0..2 {
        assert!(tmp.path().join(format!("pass{k}/report.json")).is_file());
    }
    assert!(tmp.path().join(RECURSE_REPORT_FILE).is_file());
    assert!(tmp.path().join(FINAL_HYPOTHESIS_FILE).is_file());
}

#[test]
fn recursion_within_a_bucket() {
    let tmp = TempDir::new().unwrap();
    let mut promotion = Promotion::new("o4=and(o1,o2)".parse().unwrap());
    promotion.consumers.push("o5=or(o4,o3)".parse().unwrap());
    promotion.align_to = Some(Site::variable("o1"));
    promotion.readout = Some(Site::variable("o4"));
    promotion.within = Some("C1".into());
    let out = cmd_recurse(&config_in(tmp.path()), &[promotion.clone()]).unwrap();
    assert_eq!(out.passes[1].report.nodes, 48);
    assert!(out.report.passes[1].readout_sweep.is_none());

    promotion.within = Some("C9".into());
    let err = cmd_recurse(&config_in(tmp.path()), &[promotion])
        .err()
        .unwrap();
    assert_eq!(err.stage, Stage::Recurse);
}

#[test]
fn classify_and_export_from_files() {
    let tmp = TempDir::new().unwrap();
    let config = config_in(tmp.path());
    let diagnosed = cmd_diagnose(&config).unwrap();
    let refit = cmd_classify(&config, None, None).unwrap();
    assert_eq!(Some(&refit.report), diagnosed.report.classifiers.as_ref());
    let written = cmd_export(&config, None, None).unwrap();
    assert_eq!(written.len(), 3);
    let acts = fs::read_to_string(tmp.path().join("features_activations.csv")).unwrap();
    assert!(acts.starts_with("wire:o1,wire:o2,wire:o3,wire:o4,wire:o5"));
    assert_eq!(acts.lines().count(), 65);
}

#[test]
fn generate_round_trips() {
    let tmp = TempDir::new().unwrap();
    let mut config = config_in(tmp.path());
    config.task.n = 400;
    let out = cmd_generate(&config).unwrap();
    let read = Dataset::read_csv(
        fs::File::open(&out.dataset_path).unwrap(),
        config.task.vocab,
    )
    .unwrap();
    assert_eq!(read.len(), 400);
    assert_eq!(read.balance(), out.balance);

    // the written file can drive a diagnosis in place of generation
    config.task.dataset_path = Some(out.dataset_path);
    config.diagnosis.sampling = bucketing::pipeline::Sampling::PerClass { per_class: 4 };
    assert_eq!(cmd_diagnose(&config).unwrap().report.nodes, 32);
}

#[test]
fn failures_carry_their_stage() {
    let tmp = TempDir::new().unwrap();
    let mut config = config_in(tmp.path());
    config.diagnosis.gamma = 2.0;
    assert_eq!(cmd_diagnose(&config).err().unwrap().stage, Stage::Config);

    let bad = tmp.path().join("h.json");
    fs::write(&bad, "{\"variables\": [], \"outputs\": [\"x\"]}").unwrap();
    let mut config = config_in(tmp.path());
    config.hypothesis = HypothesisConfig::File { path: bad };
    assert_eq!(
        cmd_diagnose(&config).err().unwrap().stage,
        Stage::Hypothesis
    );

    let mut config = config_in(tmp.path());
    config.alignment = AlignmentConfig::Explicit {
        alignment: Alignment::single("o5", AlignedSite::identity(Site::unit(0, 0))),
    };
    let err = cmd_diagnose(&config).err().unwrap();
    assert_eq!(err.stage, Stage::Search);
    assert_eq!(err.stage.exit_code(), 15);
}
