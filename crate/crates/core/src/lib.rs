//! Forward modeling for tensor tomography in refracting, absorbing media.
//!
//! The crate traces geodesics of the conformal metric `g = n²δ` generated by
//! a refractive index, evaluates attenuated (static and dynamic) ray
//! transforms of symmetric tensor fields along them, and solves the
//! viscosity-regularized transport equation `−εΔu + Hu + αu = f·ξ^m` on a
//! polar phase-space grid of the unit disk.
//!
//! The pointwise geometry ([`metric`], [`geodesic`], [`field`],
//! [`transport`], [`quadrature`]) is generic over [`Real`]; the grid,
//! assembly and solver layers run in `f64`. The aliases below fix the
//! double-precision types used throughout the solver layer.

pub mod discretize;
pub mod error;
pub mod field;
pub mod geodesic;
pub mod metric;
pub mod quadrature;
pub mod scalar;
pub mod solve;
pub mod sparse;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::{Real, Vec3};

pub type Model = metric::RefractiveModel<f64>;
pub type Field = field::SymmetricTensorField<f64>;
pub type Absorption = transport::Attenuation<f64>;
pub type Phase = geodesic::PhaseSpacePoint<f64>;
pub type Path = geodesic::GeodesicPath<f64>;
pub type Quadrature = transport::QuadratureConfig<f64>;
pub type Integrator = geodesic::IntegratorConfig<f64>;

pub type ModelF32 = metric::RefractiveModel<f32>;
pub type FieldF32 = field::SymmetricTensorField<f32>;
