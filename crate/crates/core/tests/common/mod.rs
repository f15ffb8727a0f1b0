#![allow(dead_code)]

use bucketing::causal::{AlignedSite, Alignment, Site};
use bucketing::models::{class_balanced_inputs, LogicClass, TokenInput};

pub const VOCAB: u32 = 20;

/// o5 of the hypothesis aligned to the circuit wire `wire`.
pub fn o5_to_wire(wire: &str) -> Alignment {
    Alignment::single("o5", AlignedSite::identity(Site::variable(wire)))
}

pub fn per_class(n: usize, seed: u64) -> (Vec<TokenInput>, Vec<i64>) {
    let inputs = class_balanced_inputs(n, VOCAB, seed).unwrap();
    let labels = inputs.iter().map(TokenInput::label).collect();
    (inputs, labels)
}

/// Reference rule for o5 pinned via the o3 wire: the patched output is o4(b) ∨ o3(s),
/// the hypothesis predicts o5(s) = o4(s) ∨ o3(s).
pub fn o3_wire_success(source: LogicClass, base: LogicClass) -> bool {
    (base.o4() || source.o3) == (source.o4() || source.o3)
}

pub fn o3_wire_edge(a: LogicClass, b: LogicClass) -> bool {
    o3_wire_success(a, b) && o3_wire_success(b, a)
}

/// Two inputs per class in class order, and one (source, base) pair per ordered class
/// pair using distinct instances: IIA over these pairs is the uniform class-pair rate.
pub fn class_pair_set(seed: u64) -> (Vec<TokenInput>, Vec<(usize, usize)>) {
    let inputs = class_balanced_inputs(2, VOCAB, seed).unwrap();
    let pairs = (0..8)
        .flat_map(|s| (0..8).map(move |b| (2 * s, 2 * b + 1)))
        .collect();
    (inputs, pairs)
}

/// The full hypothesis with `output` as its only output.
pub fn with_output(
    model: &bucketing::causal::CausalModel,
    output: &str,
) -> bucketing::causal::CausalModel {
    let mut spec = model.to_spec();
    spec.outputs = vec![output.to_string()];
    bucketing::causal::CausalModel::from_spec(&spec).unwrap()
}

pub fn wire_sites() -> Vec<Site> {
    ["o1", "o2", "o3", "o4", "o5"]
        .into_iter()
        .map(Site::variable)
        .collect()
}
