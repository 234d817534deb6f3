pub mod basic;
pub mod conv;
pub mod loss;
pub mod norm;
pub mod resample;
pub mod shape;
pub mod spectral;
