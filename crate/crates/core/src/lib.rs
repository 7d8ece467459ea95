pub mod chainspace;
pub mod fock;
pub mod kernel;
pub mod repr;
pub mod calculus;
pub mod ito;
pub mod cli;

pub type C64 = nalgebra::Complex<f64>;
