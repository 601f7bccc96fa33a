//! Reference elements, quadrature and global DOF maps.

pub mod basis;
pub mod quadrature;
pub mod space;

pub use basis::{ElementKind, ReferenceBasis};
pub use quadrature::Quadrature;
pub use space::{BoundaryMode, FeSpace, InterpolationSource, DEFAULT_QUAD_ORDER};
