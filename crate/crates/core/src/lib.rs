pub mod bessel;
pub mod charfn;
pub mod cli;
pub mod density;
pub mod error;
pub mod mc;
pub mod moments;
pub mod opsearch;
pub mod params;
pub mod quad;
pub mod scalar;
pub mod stein;
