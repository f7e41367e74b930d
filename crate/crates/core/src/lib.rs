//! Simulation of algorithmic drift: users alternate between organic choices
//! and recommender-driven choices, and the resulting transition graphs are
//! scored for drift towards a target category.

pub mod dataset;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod organic;
pub mod recommender;
pub mod rng;
pub mod scalar;
pub mod simulator;
pub mod stats;
pub mod synthgen;

pub use dataset::{
    CategoryId, InteractionDataset, ItemId, Labeling, PopulationAssignment, Stratum, Thresholds, UserId,
};
pub use error::{Error, Result};
pub use graph::{build_graph, TransitionCounts, UserGraph};
pub use harness::{run_experiment, summarize, ExperimentConfig};
pub use metrics::{ads, dtc, AdsResult, DtcResult, Estimator, WalkConfig};
pub use organic::{OrganicConfig, OrganicModel};
pub use recommender::{FitConfig, RecList, Recommender, RecommenderKind};
pub use scalar::{Field, Real};
pub use simulator::{run_simulation, ChoiceParams, SimulationOutput};
pub use synthgen::{SynthConfig, SynthOutput};

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type SynthOutput64 = SynthOutput<f64>;
pub type SynthOutput32 = SynthOutput<f32>;
pub type OrganicModel64 = OrganicModel<f64>;
pub type OrganicModel32 = OrganicModel<f32>;
pub type UserGraph64 = UserGraph<f64>;
pub type UserGraph32 = UserGraph<f32>;
pub type ExactUserGraph = UserGraph<num_rational::BigRational>;
