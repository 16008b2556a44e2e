pub mod balance;
pub mod data;
pub mod lp;
pub mod matching;
pub mod numerics;
pub mod propensity;
pub mod qp;
pub mod response;
pub mod simulation;
