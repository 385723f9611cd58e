//! Prompt-conditioned surrogate classifier, its optimiser, method variants
//! and the sequential training loop.

mod model;
mod optim;
mod train;
mod variant;

pub use model::{argmax, softmax, LmLoss, SurrogateModel};
pub use optim::{Optimizer, OptimizerKind, ParamId};
pub use train::{
    total_loss, train_stream, BatchItem, BatchTrace, KeyDiagnostic, LossParts, NoObserver, Phase,
    RouteEvent, TrainConfig, TrainObserver, TrainOutcome, TrainedState, Trainer, DIAGNOSTIC_Z,
};
pub use variant::{Ablations, Method, Variant};
