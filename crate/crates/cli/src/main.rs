use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use bucketing::causal::{AlignedSite, Alignment, Site};
use bucketing::pipeline::{
    cmd_classify, cmd_diagnose, cmd_export, cmd_generate, cmd_recurse, cmd_sweep, cmd_train,
    AlignmentConfig, DiagnosisReport, HypothesisConfig, ModelConfig, Promotion, Rewire, RunConfig,
    Sampling, Stage, StageError, DEFAULT_TRAIN_SIZE,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bucketing", version)]
#[command(
    about = "Diagnose causal abstractions by bucketing inputs into interchange-consistent regions"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Flags that override fields of the JSON run config.
#[derive(Args)]
struct Overrides {
    /// JSON run config; unspecified fields take their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Dataset generation seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Dataset size
    #[arg(long, global = true)]
    n: Option<usize>,

    /// Vocabulary size per token position
    #[arg(long, global = true)]
    vocab: Option<u32>,

    /// Read the dataset from CSV instead of generating it
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,

    /// Use a trained MLP checkpoint as the low-level model
    #[arg(long, global = true, conflicts_with = "train_mlp")]
    checkpoint: Option<PathBuf>,

    /// Train an MLP as part of the run
    #[arg(long, global = true)]
    train_mlp: bool,

    /// High-level hypothesis: output-only, full, or a model JSON path
    #[arg(long, global = true)]
    hypothesis: Option<String>,

    /// Explicit alignment VARIABLE=SITE, e.g. o5=var:o3 or o5=unit:L1:7; repeatable
    #[arg(
        long = "align",
        global = true,
        value_name = "VAR=SITE",
        conflicts_with = "search"
    )]
    align: Vec<String>,

    /// Search localist sites (and MLP directions) for the best alignment
    #[arg(long, global = true)]
    search: bool,

    /// Quasi-clique density threshold
    #[arg(long, global = true)]
    gamma: Option<f64>,

    /// Number of regions including the residual
    #[arg(long, global = true)]
    max_buckets: Option<usize>,

    #[arg(long, global = true)]
    min_size: Option<usize>,

    #[arg(long, global = true)]
    seed_count: Option<usize>,

    /// Correct inputs per class used as graph nodes
    #[arg(long, global = true, conflicts_with = "first")]
    per_class: Option<usize>,

    /// Use the first N correct inputs as graph nodes
    #[arg(long, global = true)]
    first: Option<usize>,

    /// Ordered pairs used for alignment scoring
    #[arg(long, global = true)]
    pairs: Option<usize>,

    /// L1 penalty for bucket classifiers
    #[arg(long, global = true)]
    lambda: Option<f64>,

    #[arg(long, global = true)]
    split_seed: Option<u64>,

    /// Replace timestamps with a fixed marker for reproducible output
    #[arg(long, global = true)]
    mask_timestamps: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a balanced task dataset as CSV
    Generate,
    /// Train the MLP and write a checkpoint
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        train_size: Option<usize>,
    },
    /// Score alignments and write the IIA heatmap
    Sweep,
    /// Run the full diagnosis and write report, graph, partition and classifiers
    Diagnose,
    /// Promote an intermediate variable and diagnose again
    Recurse(RecurseArgs),
    /// Refit bucket classifiers from exported graph and partition files
    Classify(ArtifactArgs),
    /// Write a bucket-coloured DOT graph and feature matrices
    Export(ArtifactArgs),
}

#[derive(Args)]
struct RecurseArgs {
    /// JSON array of promotions; alternative to the flags below
    #[arg(long, conflicts_with = "promote")]
    promotions: Option<PathBuf>,

    /// Promoted variable, e.g. o4=and(o1,o2)
    #[arg(long, required_unless_present = "promotions")]
    promote: Option<String>,

    /// Existing variable re-expressed through the promoted one, e.g. o5=or(o4,o3); repeatable
    #[arg(long)]
    rewire: Vec<String>,

    /// Site aligned to the promoted variable
    #[arg(long)]
    align_to: Option<String>,

    /// Site the promoted variable is read from; located by a sweep when absent
    #[arg(long)]
    readout: Option<String>,

    /// Restrict the pass to one bucket of the first pass, e.g. C1
    #[arg(long)]
    within: Option<String>,
}

#[derive(Args)]
struct ArtifactArgs {
    /// Defaults to graph.json in the output directory
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Defaults to partition.json in the output directory
    #[arg(long)]
    partition: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BuiltinHypothesis {
    OutputOnly,
    Full,
}

fn parse_alignment(items: &[String]) -> anyhow::Result<Alignment> {
    let mut alignment = Alignment::default();
    for item in items {
        let (var, site) = item
            .split_once('=')
            .with_context(|| format!("alignment `{item}` is not VAR=SITE"))?;
        let site: Site = site.parse()?;
        alignment
            .variables
            .insert(var.to_string(), AlignedSite::identity(site));
    }
    Ok(alignment)
}

fn build_config(o: &Overrides) -> anyhow::Result<RunConfig> {
    let mut c = match &o.config {
        Some(path) => {
            RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = &o.output_dir {
        c.output_dir = v.clone();
    }
    if let Some(v) = o.seed {
        c.task.seed = v;
    }
    if let Some(v) = o.n {
        c.task.n = v;
    }
    if let Some(v) = o.vocab {
        c.task.vocab = v;
    }
    if let Some(v) = &o.dataset {
        c.task.dataset_path = Some(v.clone());
    }
    if let Some(v) = &o.checkpoint {
        c.model = ModelConfig::MlpCheckpoint { path: v.clone() };
    }
    if o.train_mlp && !matches!(c.model, ModelConfig::MlpTrain { .. }) {
        c.model = ModelConfig::MlpTrain {
            train_size: DEFAULT_TRAIN_SIZE,
            data_seed: 1,
            params: Default::default(),
        };
    }
    if let Some(h) = &o.hypothesis {
        c.hypothesis = match BuiltinHypothesis::from_str(h, true) {
            Ok(BuiltinHypothesis::OutputOnly) => HypothesisConfig::OutputOnly,
            Ok(BuiltinHypothesis::Full) => HypothesisConfig::Full,
            Err(_) => HypothesisConfig::File { path: h.into() },
        };
    }
    if !o.align.is_empty() {
        c.alignment = AlignmentConfig::Explicit {
            alignment: parse_alignment(&o.align)?,
        };
    }
    if o.search && !matches!(c.alignment, AlignmentConfig::Search { .. }) {
        c.alignment = AlignmentConfig::Search {
            variable: None,
            layers: None,
            directions: true,
            restarts: 2,
            seed: 0,
        };
    }
    let d = &mut c.diagnosis;
    if let Some(v) = o.gamma {
        d.gamma = v;
    }
    if let Some(v) = o.max_buckets {
        d.max_buckets = v;
    }
    if let Some(v) = o.min_size {
        d.min_size = v;
    }
    if let Some(v) = o.seed_count {
        d.seed_count = v;
    }
    if let Some(v) = o.per_class {
        d.sampling = Sampling::PerClass { per_class: v };
    }
    if let Some(v) = o.first {
        d.sampling = Sampling::First { n: v };
    }
    if let Some(v) = o.pairs {
        d.pairs = v;
    }
    if let Some(v) = o.lambda {
        c.classifier.lambda = v;
    }
    if let Some(v) = o.split_seed {
        c.classifier.split_seed = v;
    }
    c.mask_timestamps |= o.mask_timestamps;
    Ok(c)
}

fn promotions(args: &RecurseArgs) -> anyhow::Result<Vec<Promotion>> {
    if let Some(path) = &args.promotions {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(serde_json::from_str(&text)?);
    }
    let Some(rule) = &args.promote else {
        bail!("--promote or --promotions is required");
    };
    let mut p = Promotion::new(rule.parse()?);
    p.consumers = args
        .rewire
        .iter()
        .map(|r| r.parse::<Rewire>())
        .collect::<Result<_, _>>()?;
    p.align_to = args.align_to.as_deref().map(str::parse).transpose()?;
    p.readout = args.readout.as_deref().map(str::parse).transpose()?;
    p.within = args.within.clone();
    Ok(vec![p])
}

fn print_report(report: &DiagnosisReport) {
    let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "nodes {}  global IIA {}  density {:.4}",
        report.nodes,
        fmt(report.global_iia),
        report.global_density
    );
    for b in &report.buckets {
        let wire = b.wire_majority[&b.dominant_wire];
        println!(
            "  {:<8} size {:>4}  density {:.4}  within IIA {}  {}={} in {:.0}%",
            b.name,
            b.size,
            b.density,
            fmt(b.within_iia),
            b.dominant_wire,
            u8::from(wire.value),
            100.0 * wire.fraction
        );
    }
    match (&report.classifiers, &report.classifier_note) {
        (Some(c), _) => println!(
            "  classifiers: hand {:.4}, activations {:.4}, agreement {:.4}",
            c.hand.test_accuracy, c.activations.test_accuracy, c.agreement
        ),
        (None, Some(note)) => println!("  classifiers skipped: {note}"),
        (None, None) => {}
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = build_config(&cli.overrides).map_err(|e| StageError {
        stage: Stage::Config,
        source: bucketing::Error::InvalidArgument(format!("{e:#}")),
    })?;
    let out = config.output_dir.clone();
    match cli.command {
        Command::Generate => {
            let g = cmd_generate(&config)?;
            println!("wrote {} ({} rows)", g.dataset_path.display(), g.balance.n);
        }
        Command::Train { epochs, train_size } => {
            if epochs.is_some() || train_size.is_some() {
                let (size, seed, mut params) = match config.model {
                    ModelConfig::MlpTrain {
                        train_size,
                        data_seed,
                        params,
                    } => (train_size, data_seed, params),
                    _ => (DEFAULT_TRAIN_SIZE, 1, Default::default()),
                };
                if let Some(e) = epochs {
                    params.epochs = e;
                }
                config.model = ModelConfig::MlpTrain {
                    train_size: train_size.unwrap_or(size),
                    data_seed: seed,
                    params,
                };
            }
            let t = cmd_train(&config)?;
            println!(
                "wrote {}  train accuracy {:.4}  test accuracy {:.4}",
                t.checkpoint_path.display(),
                t.report.train_accuracy,
                t.report.test_accuracy
            );
        }
        Command::Sweep => {
            let s = cmd_sweep(&config)?;
            for sweep in &s.sweeps {
                let best = sweep.best_entry();
                println!(
                    "{}: best {} IIA {:.4} over {} sites",
                    sweep.variable,
                    best.site,
                    best.iia,
                    sweep.entries.len()
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Diagnose => {
            let d = cmd_diagnose(&config)?;
            print_report(&d.report);
            println!("wrote {}", out.display());
        }
        Command::Recurse(args) => {
            let promotions = promotions(&args).map_err(|e| StageError {
                stage: Stage::Config,
                source: bucketing::Error::InvalidArgument(format!("{e:#}")),
            })?;
            let r = cmd_recurse(&config, &promotions)?;
            for (pass, outcome) in r.report.passes.iter().zip(&r.passes) {
                println!(
                    "{} ({})",
                    pass.directory.display(),
                    pass.promoted.as_deref().unwrap_or("initial")
                );
                print_report(&outcome.report);
            }
            println!("hierarchy: {}", r.report.hierarchy);
        }
        Command::Classify(a) => {
            let c = cmd_classify(&config, a.graph.as_deref(), a.partition.as_deref())?;
            println!(
                "hand {:.4}  activations {:.4}  agreement {:.4}",
                c.report.hand.test_accuracy, c.report.activations.test_accuracy, c.report.agreement
            );
        }
        Command::Export(a) => {
            for path in cmd_export(&config, a.graph.as_deref(), a.partition.as_deref())? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<StageError>()
                .map_or(1, |e| e.stage.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
