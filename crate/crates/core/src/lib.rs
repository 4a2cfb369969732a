//! Dual control of unknown nonlinear discrete-time systems.
//!
//! A Gaussian-process model of the plant's input/output map is learned online
//! while the same model drives a one-step planner that trades reference
//! tracking against posterior variance.
//!
//! * [`gp`]: exact GP regression, Gaussian entropy, bordered covariance log-determinants.
//! * [`info`]: information scores over candidate sets and sample selection.
//! * [`control`]: the planner, the closed-loop episode and the full-knowledge benchmark.
//! * [`plants`]: logistic map and cart with inverted pendulum simulators.

pub mod control;
pub mod gp;
pub mod info;
pub mod plants;

pub use control::{
    run_benchmark_episode, run_episode, ActionSet, ControlError, EpisodeError, IoModel, Prediction,
    Reference, Selection, StepRecord, Structure, WeightRoles, Weights,
};
pub use gp::{gaussian_entropy, DataSet, GpError, GpModel, KernelConfig, Posterior};
pub use info::{
    info_score, sample_candidates, select_exhaustive, select_max_variance, CandidateSet, InfoError,
    InfoScore, SamplingMode,
};
pub use plants::{
    CartParams, CartPlant, Coupling, LogisticPlant, ObservationChannel, Plant, PlantError,
    VelocitySource,
};
