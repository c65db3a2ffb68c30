pub mod poly;
pub mod domain;
pub mod hjb;
pub mod sdp;
pub mod sim;
pub mod soscomp;
pub mod verify;

pub use poly::{Monomial, Poly, PolyMatrix};

pub type Polynomial = Poly<f64>;
