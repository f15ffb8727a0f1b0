//! Interchange interventions across a low-level model and a high-level hypothesis.

use std::collections::HashMap;

use crate::causal::alignment::{Alignment, Readout, Site};
use crate::causal::model::{Assignment, CausalModel};
use crate::error::{Error, Result};

/// A pinned value at a low-level site.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub site: Site,
    pub value: f64,
}

/// A model that can be run with patched internal sites.
pub trait LowLevelModel: Sync {
    type Input: Sync;

    /// Raw value at `site` when running `input` with `patches` applied.
    fn read_site(&self, input: &Self::Input, patches: &[Patch], site: &Site) -> Result<f64>;

    /// Task prediction when running `input` with `patches` applied.
    fn predict(&self, input: &Self::Input, patches: &[Patch]) -> Result<i64>;

    /// Errors if `site` does not exist in this model.
    fn check_site(&self, site: &Site) -> Result<()>;
}

/// Maps a low-level input to the high-level model's exogenous assignment.
pub type InputEncoder<'a, I> = &'a (dyn Fn(&I) -> Assignment + Sync);

/// Which high-level variables Def.-style consistency quantifies over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VariableScope {
    /// Only the variables listed in the alignment.
    #[default]
    Aligned,
    /// Every endogenous variable of the hypothesis; all of them must be aligned.
    AllEndogenous,
}

/// A candidate causal abstraction (L, H, alignment) plus the input translation τ.
pub struct Abstraction<'a, L: LowLevelModel> {
    low: &'a L,
    high: &'a CausalModel,
    alignment: &'a Alignment,
    encode: InputEncoder<'a, L::Input>,
    outputs: Vec<String>,
}

impl<'a, L: LowLevelModel> Abstraction<'a, L> {
    pub fn new(
        low: &'a L,
        high: &'a CausalModel,
        alignment: &'a Alignment,
        encode: InputEncoder<'a, L::Input>,
    ) -> Result<Self> {
        Self::with_scope(low, high, alignment, encode, VariableScope::Aligned)
    }

    pub fn with_scope(
        low: &'a L,
        high: &'a CausalModel,
        alignment: &'a Alignment,
        encode: InputEncoder<'a, L::Input>,
        scope: VariableScope,
    ) -> Result<Self> {
        if alignment.variables.is_empty() {
            return Err(Error::InvalidAlignment("no aligned variables".into()));
        }
        for (var, at) in &alignment.variables {
            if !high.contains(var) {
                return Err(Error::UnknownVariable(var.clone()));
            }
            at.site.validate()?;
            low.check_site(&at.site)?;
        }
        for (out, readout) in &alignment.readouts {
            if !high.output_names().any(|o| o == out) {
                return Err(Error::InvalidAlignment(format!(
                    "readout for `{out}`, which is not a hypothesis output"
                )));
            }
            if let Readout::Site { at } = readout {
                at.site.validate()?;
                low.check_site(&at.site)?;
            }
        }
        if scope == VariableScope::AllEndogenous {
            if let Some(missing) = high
                .topological_names()
                .find(|v| !high.is_exogenous(v) && !alignment.variables.contains_key(*v))
            {
                return Err(Error::InvalidAlignment(format!(
                    "hypothesis variable `{missing}` is not aligned"
                )));
            }
        }
        Ok(Self {
            low,
            high,
            alignment,
            encode,
            outputs: high.output_names().map(str::to_string).collect(),
        })
    }

    pub fn low(&self) -> &L {
        self.low
    }

    pub fn high(&self) -> &CausalModel {
        self.high
    }

    pub fn alignment(&self) -> &Alignment {
        self.alignment
    }

    pub fn encode(&self, input: &L::Input) -> Assignment {
        (self.encode)(input)
    }

    /// τ-translated low-level outputs of II(L, source, π_X)(base).
    pub fn low_interchange(
        &self,
        source: &L::Input,
        base: &L::Input,
        variable: &str,
    ) -> Result<Vec<i64>> {
        let at = self
            .alignment
            .variables
            .get(variable)
            .ok_or_else(|| Error::UnknownVariable(variable.to_string()))?;
        let value = self.low.read_site(source, &[], &at.site)?;
        self.patched_outputs(base, value, &at.site)
    }

    fn patched_outputs(&self, base: &L::Input, value: f64, site: &Site) -> Result<Vec<i64>> {
        let patches = [Patch {
            site: site.clone(),
            value,
        }];
        self.outputs
            .iter()
            .map(|o| match self.alignment.readout(o) {
                Readout::TaskOutput => self.low.predict(base, &patches),
                Readout::Site { at } => {
                    Ok(at.tau.apply(self.low.read_site(base, &patches, &at.site)?))
                }
            })
            .collect()
    }

    /// High-level outputs of II(H, source, X)(base) on already-translated inputs.
    pub fn high_interchange(
        &self,
        source: &Assignment,
        base: &Assignment,
        variable: &str,
    ) -> Result<Vec<i64>> {
        let run = self.high.interchange(source, base, &[variable])?;
        Ok(self
            .outputs
            .iter()
            .map(|o| run.get(o).expect("outputs are model variables"))
            .collect())
    }

    /// Single-direction success: patching from `source` into `base` matches H for every aligned variable.
    pub fn directional_success(&self, source: &L::Input, base: &L::Input) -> Result<bool> {
        let (s, b) = (self.encode(source), self.encode(base));
        for var in self.alignment.variables.keys() {
            if self.low_interchange(source, base, var)? != self.high_interchange(&s, &b, var)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Bidirectional interchange consistency of an input pair.
    pub fn check_pair_consistency(&self, i1: &L::Input, i2: &L::Input) -> Result<bool> {
        Ok(self.directional_success(i1, i2)? && self.directional_success(i2, i1)?)
    }

    /// Fraction of ordered (source, base) pairs with directional success.
    pub fn iia(&self, pairs: &[(&L::Input, &L::Input)]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("IIA needs at least one pair".into()));
        }
        let mut hits = 0usize;
        for (s, b) in pairs {
            hits += usize::from(self.directional_success(s, b)?);
        }
        Ok(hits as f64 / pairs.len() as f64)
    }

    /// Caches per-input site readings and high-level counterfactuals for repeated pair checks.
    pub fn prepare<'p>(&'p self, inputs: &'p [L::Input]) -> Result<Prepared<'p, 'a, L>> {
        let vars: Vec<&'a str> = self
            .alignment
            .variables
            .keys()
            .map(String::as_str)
            .collect();
        let mut abstract_ids = Vec::with_capacity(inputs.len());
        let mut distinct: Vec<Assignment> = Vec::new();
        let mut lookup: HashMap<Assignment, usize> = HashMap::new();
        let mut source_values = Vec::with_capacity(inputs.len());
        for input in inputs {
            let a = self.encode(input);
            let id = *lookup.entry(a.clone()).or_insert_with(|| {
                distinct.push(a);
                distinct.len() - 1
            });
            abstract_ids.push(id);
            let row = vars
                .iter()
                .map(|v| {
                    self.low
                        .read_site(input, &[], &self.alignment.variables[*v].site)
                })
                .collect::<Result<Vec<_>>>()?;
            source_values.push(row);
        }
        let u = distinct.len();
        let mut high = vec![Vec::new(); u * u * vars.len()];
        for s in 0..u {
            for b in 0..u {
                for (k, v) in vars.iter().enumerate() {
                    high[(s * u + b) * vars.len() + k] =
                        self.high_interchange(&distinct[s], &distinct[b], v)?;
                }
            }
        }
        Ok(Prepared {
            abstraction: self,
            inputs,
            vars,
            abstract_ids,
            distinct: u,
            source_values,
            high,
        })
    }
}

/// An [`Abstraction`] bound to a fixed input list, addressed by index.
pub struct Prepared<'p, 'a, L: LowLevelModel> {
    abstraction: &'p Abstraction<'a, L>,
    inputs: &'p [L::Input],
    vars: Vec<&'a str>,
    abstract_ids: Vec<usize>,
    distinct: usize,
    source_values: Vec<Vec<f64>>,
    high: Vec<Vec<i64>>,
}

impl<L: LowLevelModel> Prepared<'_, '_, L> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn directional_success(&self, source: usize, base: usize) -> Result<bool> {
        let a = self.abstraction;
        let (sa, ba) = (self.abstract_ids[source], self.abstract_ids[base]);
        for (k, var) in self.vars.iter().enumerate() {
            let site = &a.alignment.variables[*var].site;
            let low = a.patched_outputs(&self.inputs[base], self.source_values[source][k], site)?;
            let expected = &self.high[(sa * self.distinct + ba) * self.vars.len() + k];
            if &low != expected {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn consistent(&self, i: usize, j: usize) -> Result<bool> {
        Ok(self.directional_success(i, j)? && self.directional_success(j, i)?)
    }

    pub fn iia(&self, pairs: &[(usize, usize)]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("IIA needs at least one pair".into()));
        }
        let mut hits = 0usize;
        for &(s, b) in pairs {
            hits += usize::from(self.directional_success(s, b)?);
        }
        Ok(hits as f64 / pairs.len() as f64)
    }
}

/// All ordered pairs over `0..n`, self-pairs excluded.
pub fn ordered_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect()
}

/// A causal model acting as a low-level model: sites are its variables, the prediction is its first output.
impl LowLevelModel for CausalModel {
    type Input = Assignment;

    fn read_site(&self, input: &Assignment, patches: &[Patch], site: &Site) -> Result<f64> {
        let Site::Variable { name } = site else {
            return Err(Error::InvalidSite(format!("{site} is not a variable site")));
        };
        let run = self.do_intervene(input, &patch_settings(patches)?)?;
        run.get(name)
            .map(|v| v as f64)
            .ok_or_else(|| Error::UnknownVariable(name.clone()))
    }

    fn predict(&self, input: &Assignment, patches: &[Patch]) -> Result<i64> {
        let run = self.do_intervene(input, &patch_settings(patches)?)?;
        let out = self.output_names().next().expect("models have an output");
        Ok(run.get(out).expect("output is a model variable"))
    }

    fn check_site(&self, site: &Site) -> Result<()> {
        match site {
            Site::Variable { name } if self.contains(name) => Ok(()),
            Site::Variable { name } => Err(Error::UnknownVariable(name.clone())),
            other => Err(Error::InvalidSite(format!(
                "{other} is not a variable site"
            ))),
        }
    }
}

fn patch_settings(patches: &[Patch]) -> Result<Assignment> {
    let mut settings = Assignment::new();
    for p in patches {
        let Site::Variable { name } = &p.site else {
            return Err(Error::InvalidSite(format!(
                "{} is not a variable site",
                p.site
            )));
        };
        settings.set(name.clone(), p.value.round() as i64);
    }
    Ok(settings)
}

/// Identity alignment of a model onto itself for the given variables.
pub fn identity_alignment(vars: &[&str]) -> Alignment {
    use crate::causal::alignment::AlignedSite;
    Alignment {
        variables: vars
            .iter()
            .map(|v| (v.to_string(), AlignedSite::identity(Site::variable(*v))))
            .collect(),
        readouts: Default::default(),
    }
}
