//! Low-level models under diagnosis and the logic-task data.

pub mod dataset;
pub mod logic;
pub mod mlp;

pub use dataset::{
    class_balanced_inputs, filter_correct, generate_dataset, stratified_by_class, BalanceStats,
    Dataset, Example,
};
pub use logic::{
    encode_logic_input, full_hypothesis, output_only_hypothesis, LogicCircuit, LogicClass,
    TokenInput, Wires,
};
pub use mlp::{train_mlp, HiddenPatch, Loss, Mlp, Target, TokenMlp, TrainParams, TrainReport};
