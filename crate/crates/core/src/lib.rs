//! Numerics for non-diagonal SU(2)-invariant anti-self-dual four-metrics.
//!
//! The metric `g = (abc)² dt² + a² σ̃₁² + b² σ̃₂² + c² σ̃₃²` is encoded by nine functions of `t`
//! ([`MetricState`]); [`flow`] integrates the anti-self-dual system, [`curvature`] checks it
//! against the curvature tensor, and [`spectral`], [`hermitian`] and [`isomonodromy`] study
//! the twistor quartic and the structures it detects.

pub mod curvature;
pub mod dual;
pub mod error;
pub mod flow;
pub mod hermitian;
pub mod isomonodromy;
pub mod sample;
pub mod spectral;
pub mod state;

pub use curvature::{asd_residual, curvature_block, CurvatureBlock};
pub use error::{Error, Result};
pub use hermitian::{complex_structure, kahler_form, kahler_test, theta3_residual, ComplexStructureData, KahlerFormData};
pub use isomonodromy::{flatness_residual, painleve_tag, sigma_pencil, ConnectionPencil, PainleveTag};
pub use flow::{integrate, rhs, StateDerivative, StepController, Termination, Trajectory};
pub use num_complex::Complex64;
pub use spectral::{build_quartic, double_root_certificate, roots, DetAQuartic, HermitianCertificate, RootSet};
pub use state::{classify, recover_abc, reduced_x, Classification, CoefficientTriple, FamilyTag, MetricState, ReducedX};
