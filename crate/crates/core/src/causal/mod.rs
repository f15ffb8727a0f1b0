//! Causal models, alignments and interchange interventions.

mod abstraction;
mod alignment;
mod model;

pub use abstraction::{
    identity_alignment, ordered_pairs, Abstraction, InputEncoder, LowLevelModel, Patch, Prepared,
    VariableScope,
};
pub use alignment::{AlignedSite, Alignment, Readout, Site, Tau, DIRECTION_NORM_TOLERANCE};
pub use model::{
    Assignment, CausalModel, Mechanism, ModelSpec, PrimitiveOp, TableRow, Variable, VariableSpec,
};
