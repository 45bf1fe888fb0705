//! Post-variational quantum neural networks.
//!
//! A parameterized circuit is replaced by an ensemble of fixed circuits
//! (shifted Ansätze) and fixed observables (local Pauli strings). Their
//! expectations on encoded data form a classical feature matrix, and a
//! convex classical head is trained on it.
//!
//! Module map:
//! - [`sim`]: dense statevector engine, Pauli expectations, sampling.
//! - [`circuits`]: data encoding, layered Ansatz, shift ensembles.
//! - [`pauli`]: Pauli strings, locality enumeration, Pauli decomposition.
//! - [`shadows`]: classical shadows and measurement-budget planning.
//! - [`features`]: feature-matrix generation and pruning heuristics.
//! - [`head`]: losses, least squares, constrained and logistic heads.
//! - [`bounds`]: perturbation thresholds and their empirical checks.
//! - [`data`]: IDX ingestion, image preprocessing, synthetic datasets.
//! - [`config`] and [`pipeline`]: run configuration and end-to-end runs.

pub mod bounds;
pub mod circuits;
pub mod config;
pub mod data;
pub mod features;
pub mod head;
pub mod pauli;
pub mod pipeline;
pub mod shadows;
pub mod sim;
pub mod util;

pub use bounds::{GapMode, PerturbationReport};
pub use config::{DatasetSource, ModeKind, RunConfig, TaskKind};
pub use circuits::{AnsatzSpec, EntanglerClosure, Shift, ShiftVector};
pub use data::{Dataset, SynthKind};
pub use features::{FeatureMatrix, FeatureMode, NeuronSpec};
pub use head::{Constraint, LossKind, RegressionModel, Task};
pub use pauli::{Pauli, PauliString};
pub use shadows::{BudgetPlan, BudgetRequest, MeasurementMode, ShadowRecord, Strategy};
pub use sim::{Circuit, Gate, StateVector};
