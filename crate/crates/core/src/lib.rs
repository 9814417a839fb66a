//! Uplink massive MIMO with massive connectivity: activity detection and
//! channel estimation quality from the AMP state evolution, large-system
//! achievable rates under MRC and MMSE receivers, pilot-length and
//! scheduling optimization, and a finite-size Monte Carlo check.

pub mod csv;
pub mod error;
pub mod linalg;
pub mod monte_carlo;
pub mod optimize;
pub mod params;
pub mod rates;
pub mod scenario;
pub mod state_evolution;

pub use error::{Error, Result};
pub use monte_carlo::{
    average_rates, draw_realization, sinr_mmse_empirical, sinr_mrc_empirical, ChannelRealization,
    MonteCarloReport,
};
pub use optimize::{
    optimize_pilot_length_mmse, optimize_pilot_length_mrc, optimize_scheduling_mmse,
    optimize_scheduling_mrc, Certificate, OptimizationResult,
};
pub use params::{Activity, PathlossModel, PathlossPopulation, Placement, SystemConfig};
pub use rates::{
    high_snr_rates, known_activity_rates, rate_report, Beamformer, RateQuery, RateReport,
};
pub use state_evolution::{
    estimation_stats, high_snr_tau2, solve_state_evolution, BetaLaw, ChannelEstimateStats,
    NoiseStateResult, StateEvolutionInput,
};
