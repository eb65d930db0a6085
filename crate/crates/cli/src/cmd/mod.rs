pub mod riskmodel;
pub mod score;
pub mod study;
pub mod universe;
pub mod validate;
