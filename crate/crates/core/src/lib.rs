//! Numerical laboratory for cosymplectic structures `(η, ω)` on model
//! manifolds: weighted product tori `T^{2n+1}` and mapping tori of `SL(2, ℤ)`
//! maps.

pub mod dynamics;
pub mod error;
pub mod fields;
pub mod flux;
pub mod forms;
pub mod fragmentation;
pub mod integrability;
pub mod manifold;
pub mod quadrature;
pub mod sampling;
pub mod symplectization;

pub use error::{Error, Result};
pub use manifold::{ManifoldConfig, ManifoldKind, ModelManifold, Point, TangentVector};
