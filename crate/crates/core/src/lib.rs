pub mod conditions;
pub mod error;
pub mod inverse;
pub mod io;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod problem;
pub mod scalar;
pub mod spectral;
pub mod tolerances;
