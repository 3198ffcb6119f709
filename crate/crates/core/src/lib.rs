pub mod domain;
pub mod flow;
pub mod gp;
pub mod losses;
pub mod numgrad;
pub mod persist;
pub mod surrogate;
pub mod training;
pub mod tuning;
pub mod workflow;
