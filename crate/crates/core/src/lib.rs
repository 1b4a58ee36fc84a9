//! Block particle filtering for stochastic reaction-diffusion systems.
//!
//! The crate covers a square lattice with a zero-flux Laplacian
//! ([`lattice`]), mass-action reaction networks and the scaled Oregonator
//! ([`reaction`]), the discretised stochastic dynamics with a spectral
//! observation operator ([`dynamics`]), the block particle filter with
//! bootstrap and locally optimal proposals ([`filter`]) and run diagnostics
//! ([`metrics`]). Numeric code is generic over [`Real`]; `f64` aliases are
//! exported at the crate root.

pub mod dynamics;
pub mod error;
pub mod filter;
pub mod io;
pub mod lattice;
pub mod metrics;
pub mod reaction;
pub mod rng;
pub mod scalar;

pub use dynamics::{
    propagate, simulate, simulate_with, Integrator, LinearModel, NoiseModel, ObservationField,
    ObservationModel, Oregonator, SimulationKeys, StateField, StateSpaceModel, Trajectory,
    POSITIVITY_FLOOR,
};
pub use error::{Error, Result};
pub use filter::{
    block_weights, bootstrap_log_weights, draw_ancestors, filter_step, init_ensemble,
    optimal_site_moments, propose_bootstrap, propose_optimal, resample, run_filter,
    BlockParticleFilter, BlockWeights, EstimateRecording, FilterConfig, FilterOutput,
    FilterStepRecord, InitialDistribution, ParticleEnsemble, ProposalKind, ResamplingScheme,
    RunFailure, SiteLogWeights, SiteMoments,
};
pub use lattice::{BlockPartition, Lattice, ScalarField, Site};
pub use metrics::MetricTrace;
pub use reaction::{oregonator_network, OregonatorParams, ReactionNetwork};
pub use rng::{Domain, StreamKey};
pub use scalar::{log_sum_exp, Real};

pub type Lattice64 = Lattice<f64>;
pub type ScalarField64 = ScalarField<f64>;
pub type StateField64 = StateField<f64>;
pub type ObservationField64 = ObservationField<f64>;
pub type ObservationModel64 = ObservationModel<f64>;
pub type Oregonator64 = Oregonator<f64>;
pub type OregonatorParams64 = OregonatorParams<f64>;
pub type ReactionNetwork64 = ReactionNetwork<f64>;
pub type LinearModel64 = LinearModel<f64>;
pub type ParticleEnsemble64 = ParticleEnsemble<f64>;
pub type FilterOutput64 = FilterOutput<f64>;
pub type MetricTrace64 = MetricTrace<f64>;
