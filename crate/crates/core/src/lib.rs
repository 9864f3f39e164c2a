pub mod autodiff;
pub mod data;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod vds;
pub mod training;
pub mod baselines;
pub mod evaluation;
