//! Spiked eigenvalues of high-dimensional sample autocovariance matrices.
//!
//! The crate covers the whole pipeline for comparing factor dynamics across
//! populations: panel ingestion ([`io`]), simulation of factor models
//! ([`simulate`]), symmetrized autocovariance spectra and factor-count
//! estimation ([`spectra`]), population-level theory ([`theory`]), factor
//! estimation and canonical standardization ([`factorest`]), the
//! AR-sieve bootstrap two-sample test ([`boottest`]), average-linkage
//! clustering of populations ([`cluster`]) and a Monte Carlo harness
//! ([`mc`]).

pub mod boottest;
pub mod cluster;
pub mod error;
pub mod factorest;
pub mod io;
pub mod mc;
pub mod rng;
pub mod simulate;
pub mod spectra;
pub mod theory;

pub use boottest::{
    bootstrap_estimates, compare_fits, fit_ar_sieve, normal_cdf, two_sample_test, ArFit, BootstrapEstimates,
    OrderCriterion, PopulationFit, TestOutcome,
};
pub use cluster::{average_linkage, pairwise_dissimilarity, ClusterConfig, ClusterMode, Dendrogram, DissimilarityMatrix};
pub use error::{Error, Result, Warning};
pub use factorest::{canonical_from_panel, estimate_factor_model, standardize_canonical, CanonicalEstimate, RawFactorEstimate};
pub use io::{read_panel_csv, write_results_json, Orientation, Panel, ToResultJson, ZeroPolicy};
pub use mc::{clt_diagnostic, empirical_power, empirical_size, McConfig, McResult, Scenario};
pub use simulate::{gen_factor_panel, gen_linear_process, FactorModelSpec, Innovation, LinearProcessSpec};
pub use spectra::{estimate_num_factors, symmetrized_spectrum, AutocovMode, SpectralSummary};
pub use theory::{clt_variance, pop_gamma, pop_mu, theta_bracket, CltVariance};
