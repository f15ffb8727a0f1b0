use crate::causal::{LowLevelModel, Site};
use crate::classifier::{FeatureMatrix, FeatureSource};
use crate::error::{Error, Result};
use crate::models::logic::WIRES;
use crate::models::{LogicCircuit, TokenInput, TokenMlp};
use crate::search::{direction_search, DirectionResult, SearchProblem};

/// What the pipeline needs from a low-level model beyond interventions.
pub trait PipelineModel: LowLevelModel<Input = TokenInput> {
    fn kind(&self) -> &'static str;

    /// Localist sites to sweep: named wires, or every unit of the chosen hidden layers.
    fn localist_sites(&self, layers: Option<&[usize]>) -> Result<Vec<Site>>;

    /// Hidden layers eligible for direction search; empty when not applicable.
    fn direction_layers(&self, layers: Option<&[usize]>) -> Vec<usize>;

    fn search_direction(
        &self,
        problem: &SearchProblem<'_, Self>,
        layer: usize,
        inputs: &[TokenInput],
        pairs: &[(usize, usize)],
        restarts: usize,
        seed: u64,
    ) -> Result<Option<DirectionResult>>
    where
        Self: Sized;

    /// Model-internal feature names and rows; `layer` picks the hidden layer where relevant.
    fn internal_features(
        &self,
        inputs: &[TokenInput],
        layer: Option<usize>,
    ) -> Result<FeatureMatrix>;
}

impl PipelineModel for LogicCircuit {
    fn kind(&self) -> &'static str {
        "circuit"
    }

    fn localist_sites(&self, _layers: Option<&[usize]>) -> Result<Vec<Site>> {
        Ok(WIRES.iter().map(|w| Site::variable(*w)).collect())
    }

    fn direction_layers(&self, _layers: Option<&[usize]>) -> Vec<usize> {
        Vec::new()
    }

    fn search_direction(
        &self,
        _problem: &SearchProblem<'_, Self>,
        _layer: usize,
        _inputs: &[TokenInput],
        _pairs: &[(usize, usize)],
        _restarts: usize,
        _seed: u64,
    ) -> Result<Option<DirectionResult>> {
        Ok(None)
    }

    /// The circuit's wires o1..o5.
    fn internal_features(
        &self,
        inputs: &[TokenInput],
        _layer: Option<usize>,
    ) -> Result<FeatureMatrix> {
        let rows = inputs.iter().map(|x| x.wires().as_vec()).collect();
        let names = WIRES.iter().map(|w| format!("wire:{w}")).collect();
        FeatureMatrix::new(rows, names, FeatureSource::Activations)
    }
}

impl PipelineModel for TokenMlp {
    fn kind(&self) -> &'static str {
        "mlp"
    }

    fn localist_sites(&self, layers: Option<&[usize]>) -> Result<Vec<Site>> {
        let mut sites = Vec::new();
        for layer in self.direction_layers(layers) {
            let width = self.mlp.hidden_width(layer).ok_or_else(|| {
                Error::InvalidSite(format!("hidden layer {layer} does not exist"))
            })?;
            sites.extend((0..width).map(|unit| Site::unit(layer, unit)));
        }
        if sites.is_empty() {
            return Err(Error::InvalidArgument("no hidden layers selected".into()));
        }
        Ok(sites)
    }

    fn direction_layers(&self, layers: Option<&[usize]>) -> Vec<usize> {
        match layers {
            Some(l) => l.to_vec(),
            None => (0..self.mlp.hidden_layers()).collect(),
        }
    }

    fn search_direction(
        &self,
        problem: &SearchProblem<'_, Self>,
        layer: usize,
        inputs: &[TokenInput],
        pairs: &[(usize, usize)],
        restarts: usize,
        seed: u64,
    ) -> Result<Option<DirectionResult>> {
        direction_search(problem, layer, inputs, pairs, restarts, seed).map(Some)
    }

    /// Full activation vector of one hidden layer.
    fn internal_features(
        &self,
        inputs: &[TokenInput],
        layer: Option<usize>,
    ) -> Result<FeatureMatrix> {
        let layer = layer.unwrap_or(self.mlp.hidden_layers().saturating_sub(1));
        let width = self
            .mlp
            .hidden_width(layer)
            .ok_or_else(|| Error::InvalidSite(format!("hidden layer {layer} does not exist")))?;
        let rows = inputs
            .iter()
            .map(|x| self.hidden_activations(x, layer))
            .collect::<Result<Vec<_>>>()?;
        let names = (0..width).map(|u| format!("L{layer}:u{u}")).collect();
        FeatureMatrix::new(rows, names, FeatureSource::Activations)
    }
}

/// Hand-labeled features: the task's intermediate propositions o1, o2, o3.
pub fn hand_features(inputs: &[TokenInput]) -> Result<FeatureMatrix> {
    let rows = inputs
        .iter()
        .map(|x| x.wires().as_vec()[..3].to_vec())
        .collect();
    FeatureMatrix::new(
        rows,
        WIRES[..3].iter().map(|w| w.to_string()).collect(),
        FeatureSource::HandLabeled,
    )
}
