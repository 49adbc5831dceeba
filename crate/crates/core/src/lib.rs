//! An interpreter and checking toolkit for Dalarna, a small object calculus
//! with reference capabilities (`imm`, `iso`, `local`, `unsafe`), threads and
//! unbuffered channels.

pub mod corpus;
pub mod gradual;
pub mod metatheory;
pub mod racecheck;
pub mod reducer;
pub mod scheduler;
pub mod state;
pub mod syntax;
