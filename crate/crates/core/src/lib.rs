//! Sound source localization by steered-response power (SRP) search.
//!
//! The crate covers the whole pipeline: array and grid geometry, TDoA
//! look-up tables with analytic operation counts, frequency-domain
//! GCC-PHAT correlation, the classical, volumetric, refined volumetric and
//! modified SRP searches, an image-source room simulator for test signals,
//! and an experiment driver with error statistics.

pub mod correlation;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod geometry;
pub mod localize;
pub mod room;
pub mod tables;

pub use correlation::{cross_correlation_time, frame_signal, gcc, CorrelationSet, Correlator, FramePlan};
pub use error::{Error, Result};
pub use exec::Exec;
pub use experiment::{
    error_metrics, run_experiment, ErrorDims, ErrorStats, Experiment, ExperimentConfig, MethodSpec, RunReport,
};
pub use geometry::{tdoa_samples, MicArray, Point, PointGrid, SearchRegion, Volume, VolumetricGrid};
pub use localize::{
    csrp_localize, msrp_lag_bounds, msrp_localize, rvsrp_localize, vsrp_localize, EnergyMap, Estimate, Localizer,
    Method, ModifiedSearch, MsrpTable, PointSearch, RefinedSearch, Refinement, VolumeSearch,
};
pub use tables::{
    build_point_table, build_volume_lag_sets, mean_cardinality, predict_ops_csrp, predict_ops_rvsrp, predict_ops_vsrp,
    ComplexityReport, PointLagTable, RefineBoundary, VolumeLagSets,
};
