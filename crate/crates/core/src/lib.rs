pub mod classes;
pub mod methods;
pub mod symbolic;
pub mod pep;
pub mod sdp;
pub mod cycle;
pub mod sweep;
