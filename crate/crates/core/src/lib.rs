pub mod autodiff;
pub mod corpus;
pub mod curriculum;
pub mod entropy;
pub mod harness;
pub mod lm;
pub mod seed;
pub mod training;
