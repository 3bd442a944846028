//! Admissible regularity regions and their confrontation with simulated paths.

pub mod estimate;
pub mod region;
pub mod verify;

pub use estimate::{estimate_spatial_exponent, estimate_temporal_exponent, ExponentEstimate, LagWindow, TemporalMode};
pub use region::{vertex_grid, ParameterSelection, RegionBoundary, RegularityQuery, Scalar, Theorem};
pub use verify::{check_provenance, verify_region, verify_region_unchecked, Verdict, VertexCheck};
