use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::causal::{
    AlignedSite, Alignment, CausalModel, ModelSpec, PrimitiveOp, Readout, Site, TableRow,
    VariableSpec,
};
use crate::error::{Error, Result};
use crate::models::{encode_logic_input, TokenInput};
use crate::pipeline::commands::{
    prepare, run_pass, select_nodes, with_model, write_diagnosis, write_run_inputs,
    DiagnoseOutcome, LoadedModel, Nodes,
};
use crate::pipeline::features::PipelineModel;
use crate::pipeline::report::{BucketSummary, Provenance};
use crate::pipeline::{write_json, AlignmentConfig, AtStage, RunConfig, Stage, StageResult};
use crate::search::{localist_sweep, sample_pairs, SearchProblem, SweepResult};

pub const RECURSE_REPORT_FILE: &str = "recurse_report.json";
pub const FINAL_HYPOTHESIS_FILE: &str = "hypothesis_final.json";

/// A new mechanism for an existing variable, used to route a consumer through a promoted one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rewire {
    pub name: String,
    pub parents: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<PrimitiveOp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<TableRow>>,
}

impl FromStr for Rewire {
    type Err = Error;

    /// `name=op(parent,parent,...)`, e.g. `o4=and(o1,o2)`.
    fn from_str(text: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidArgument(format!("rule `{text}`: {why}"));
        let (name, rhs) = text
            .split_once('=')
            .ok_or_else(|| bad("expected name=op(parents)"))?;
        let (op, args) = rhs
            .trim()
            .strip_suffix(')')
            .and_then(|r| r.split_once('('))
            .ok_or_else(|| bad("expected op(parents)"))?;
        let op: PrimitiveOp =
            serde_json::from_value(serde_json::Value::String(op.trim().to_lowercase()))
                .map_err(|_| bad("unknown op"))?;
        let parents: Vec<String> = args
            .split(',')
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect();
        let name = name.trim();
        if name.is_empty() || parents.is_empty() {
            return Err(bad("name and parents must be non-empty"));
        }
        Ok(Self {
            name: name.to_string(),
            parents,
            op: Some(op),
            table: None,
        })
    }
}

/// Adds an intermediate variable to a hypothesis and diagnoses it in its own right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Promotion {
    /// The promoted variable and its mechanism.
    pub variable: Rewire,
    #[serde(default = "boolean_domain")]
    pub domain: Vec<i64>,
    /// Existing variables re-expressed through the promoted one.
    #[serde(default)]
    pub consumers: Vec<Rewire>,
    /// Low-level site aligned to the promoted variable; defaults to the localized readout.
    #[serde(default)]
    pub align_to: Option<Site>,
    /// Where the promoted variable is read off; located by a sweep when absent.
    #[serde(default)]
    pub readout: Option<Site>,
    /// Restrict the pass to one bucket of the previous pass.
    #[serde(default)]
    pub within: Option<String>,
}

fn boolean_domain() -> Vec<i64> {
    vec![0, 1]
}

impl Promotion {
    pub fn new(variable: Rewire) -> Self {
        Self {
            variable,
            domain: boolean_domain(),
            consumers: Vec::new(),
            align_to: None,
            readout: None,
            within: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.variable.name
    }
}

fn apply_rewire(spec: &mut VariableSpec, rewire: &Rewire) {
    spec.parents = rewire.parents.clone();
    spec.op = rewire.op;
    spec.table = rewire.table.clone();
}

fn values_over(
    model: &CausalModel,
    inputs: &[crate::causal::Assignment],
    name: &str,
) -> Result<Vec<i64>> {
    inputs
        .iter()
        .map(|x| {
            model
                .evaluate(x)?
                .get(name)
                .ok_or_else(|| Error::UnknownVariable(name.to_string()))
        })
        .collect()
}

/// Returns `high` with the promoted variable added and consumers rewired.
///
/// Rejects name clashes, variables that duplicate an existing one on every input,
/// and any change to the hypothesis' outputs on any input.
pub fn extend_hypothesis(high: &CausalModel, promotion: &Promotion) -> Result<CausalModel> {
    let name = promotion.name();
    if high.contains(name) {
        return Err(Error::DuplicateVariable(name.to_string()));
    }
    if promotion.variable.op.is_none() && promotion.variable.table.is_none() {
        return Err(Error::InvalidMechanism {
            variable: name.to_string(),
            reason: "promoted variables need an op or a table".into(),
        });
    }
    let mut spec = high.to_spec();
    spec.variables.push(VariableSpec {
        name: name.to_string(),
        domain: promotion.domain.clone(),
        parents: Vec::new(),
        op: None,
        table: None,
    });
    apply_rewire(
        spec.variables.last_mut().expect("just pushed"),
        &promotion.variable,
    );
    for rewire in &promotion.consumers {
        let target = spec
            .variables
            .iter_mut()
            .find(|v| v.name == rewire.name)
            .ok_or_else(|| Error::UnknownVariable(rewire.name.clone()))?;
        if target.parents.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "cannot rewire exogenous variable `{}`",
                rewire.name
            )));
        }
        apply_rewire(target, rewire);
    }
    let extended = CausalModel::from_spec(&spec)?;

    let space = high.input_space();
    let promoted = values_over(&extended, &space, name)?;
    for existing in high.variables() {
        if values_over(high, &space, &existing.name)? == promoted {
            return Err(Error::InvalidArgument(format!(
                "`{name}` equals `{}` on every input",
                existing.name
            )));
        }
    }
    for x in &space {
        let (before, after) = (high.evaluate(x)?, extended.evaluate(x)?);
        for out in high.output_names() {
            if before.get(out) != after.get(out) {
                return Err(Error::InvalidArgument(format!(
                    "promoting `{name}` changes output `{out}` on input {x}"
                )));
            }
        }
    }
    Ok(extended)
}

/// Copy of `high` whose only output is `output`.
fn with_output(high: &CausalModel, output: &str) -> Result<CausalModel> {
    let mut spec: ModelSpec = high.to_spec();
    spec.outputs = vec![output.to_string()];
    CausalModel::from_spec(&spec)
}

/// Variables grouped by causal depth, e.g. `o1,o2,o3 -> o4 -> o5`.
pub fn hierarchy(model: &CausalModel) -> String {
    let mut depth: BTreeMap<&str, usize> = BTreeMap::new();
    let mut layers: Vec<Vec<&str>> = Vec::new();
    for name in model.topological_names() {
        let d = model
            .parents(name)
            .unwrap_or_default()
            .iter()
            .map(|p| depth[p] + 1)
            .max()
            .unwrap_or(0);
        depth.insert(name, d);
        if layers.len() <= d {
            layers.resize(d + 1, Vec::new());
        }
        layers[d].push(name);
    }
    layers
        .into_iter()
        .map(|mut l| {
            l.sort_unstable();
            l.join(",")
        })
        .collect::<Vec<_>>()
        .join(" -> ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursePass {
    pub directory: PathBuf,
    pub promoted: Option<String>,
    pub hypothesis: ModelSpec,
    pub alignment: Alignment,
    /// Sweep that located the promoted variable's readout, when one was run.
    pub readout_sweep: Option<SweepResult>,
    pub nodes: usize,
    pub buckets: Vec<BucketSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurseReport {
    pub passes: Vec<RecursePass>,
    pub hierarchy: String,
    pub provenance: Provenance,
}

pub struct RecurseOutcome {
    pub report: RecurseReport,
    pub passes: Vec<DiagnoseOutcome>,
    pub hypothesis: CausalModel,
}

struct PromotedPass {
    alignment: Alignment,
    readout_sweep: Option<SweepResult>,
}

/// Readout and alignment for a promoted variable. Readout localization scores every
/// localist site for the promoted variable under the extended hypothesis.
fn promoted_alignment<L: PipelineModel>(
    low: &L,
    extended: &CausalModel,
    promotion: &Promotion,
    inputs: &[TokenInput],
    pairs: &[(usize, usize)],
) -> Result<PromotedPass> {
    let problem = SearchProblem {
        low,
        high: extended,
        encode: &encode_logic_input,
        variable: promotion.name(),
        readouts: BTreeMap::new(),
    };
    let labels = problem.variable_values(inputs)?;
    let fitted = |site: &Site| -> Result<AlignedSite> {
        low.check_site(site)?;
        Ok(AlignedSite::new(
            site.clone(),
            problem.fit_tau(site, inputs, &labels)?.0,
        ))
    };
    let (readout, readout_sweep) = match &promotion.readout {
        Some(site) => (fitted(site)?, None),
        None => {
            let sweep =
                localist_sweep(&problem, &low.localist_sites(None)?, inputs, pairs, inputs)?;
            (sweep.best_site(), Some(sweep))
        }
    };
    let at = match &promotion.align_to {
        Some(site) => fitted(site)?,
        None => readout.clone(),
    };
    let alignment = Alignment::single(promotion.name(), at)
        .with_readout(promotion.name(), Readout::Site { at: readout });
    Ok(PromotedPass {
        alignment,
        readout_sweep,
    })
}

fn pass_summary(
    dir: PathBuf,
    promoted: Option<String>,
    high: &CausalModel,
    sweep: Option<SweepResult>,
    out: &DiagnoseOutcome,
) -> RecursePass {
    RecursePass {
        directory: dir,
        promoted,
        hypothesis: high.to_spec(),
        alignment: out.report.alignment.clone(),
        readout_sweep: sweep,
        nodes: out.report.nodes,
        buckets: out.report.buckets.clone(),
    }
}

fn bucket_nodes(previous: &DiagnoseOutcome, bucket: &str) -> Result<Vec<TokenInput>> {
    let groups = previous.partition.groups();
    let (_, members) = groups
        .iter()
        .find(|(name, _)| name == bucket)
        .ok_or_else(|| Error::InvalidArgument(format!("previous pass has no bucket `{bucket}`")))?;
    Ok(members.iter().map(|&i| previous.nodes[i]).collect())
}

/// Diagnoses the configured hypothesis, then each promotion in turn. Pass `k` is written
/// to `pass{k}/` under the output directory.
pub fn cmd_recurse(config: &RunConfig, promotions: &[Promotion]) -> StageResult<RecurseOutcome> {
    if promotions.is_empty() {
        return Err(Error::InvalidArgument(
            "recursion needs at least one promotion".into(),
        ))
        .at(Stage::Config);
    }
    let mut provenance = Provenance::start(config);
    let prepared = prepare(config)?;
    let (passes, summaries, hypothesis) = with_model!(&prepared.model, low => {
        recurse_passes(config, low, &prepared.high, &prepared.data, promotions, &provenance)?
    });
    provenance.finish(config.mask_timestamps);
    let report = RecurseReport {
        passes: summaries,
        hierarchy: hierarchy(&hypothesis),
        provenance,
    };
    write_run_inputs(config, &prepared).at(Stage::Write)?;
    for (k, pass) in passes.iter().enumerate() {
        write_diagnosis(&config.output_dir.join(format!("pass{k}")), pass).at(Stage::Write)?;
    }
    write_json(
        &config.output_dir.join(FINAL_HYPOTHESIS_FILE),
        &hypothesis.to_spec(),
    )
    .at(Stage::Write)?;
    write_json(&config.output_dir.join(RECURSE_REPORT_FILE), &report).at(Stage::Write)?;
    Ok(RecurseOutcome {
        report,
        passes,
        hypothesis,
    })
}

type Passes = (Vec<DiagnoseOutcome>, Vec<RecursePass>, CausalModel);

fn recurse_passes<L: PipelineModel>(
    config: &RunConfig,
    low: &L,
    high: &CausalModel,
    data: &crate::models::Dataset,
    promotions: &[Promotion],
    provenance: &Provenance,
) -> StageResult<Passes> {
    let nodes = select_nodes(low, data, config.diagnosis.sampling).at(Stage::Filter)?;
    let first = run_pass(
        config,
        low,
        high,
        &config.alignment,
        &nodes,
        provenance.clone(),
    )?;
    let mut summaries = vec![pass_summary("pass0".into(), None, high, None, &first)];
    let mut passes = vec![first];
    let mut current = high.clone();

    for (k, promotion) in promotions.iter().enumerate() {
        let extended = extend_hypothesis(&current, promotion).at(Stage::Recurse)?;
        let previous = passes.last().expect("first pass exists");
        let inputs = match &promotion.within {
            Some(bucket) => bucket_nodes(previous, bucket).at(Stage::Recurse)?,
            None => nodes.inputs.clone(),
        };
        if inputs.len() < 2 {
            return Err(Error::InvalidArgument(
                "promoted pass needs at least 2 inputs".into(),
            ))
            .at(Stage::Recurse);
        }
        let pairs = sample_pairs(
            inputs.len(),
            config.diagnosis.pairs,
            config.diagnosis.pair_seed,
        );
        let located =
            promoted_alignment(low, &extended, promotion, &inputs, &pairs).at(Stage::Search)?;
        let sub = with_output(&extended, promotion.name()).at(Stage::Recurse)?;
        let pass_nodes = Nodes {
            dataset_size: nodes.dataset_size,
            correct: nodes.correct,
            inputs,
        };
        let outcome = run_pass(
            config,
            low,
            &sub,
            &AlignmentConfig::Explicit {
                alignment: located.alignment,
            },
            &pass_nodes,
            provenance.clone(),
        )?;
        summaries.push(pass_summary(
            format!("pass{}", k + 1).into(),
            Some(promotion.name().to_string()),
            &sub,
            located.readout_sweep,
            &outcome,
        ));
        passes.push(outcome);
        current = extended;
    }
    Ok((passes, summaries, current))
}
