//! Oracles shared by integration tests. Nothing here calls into the
//! gradient code it is used to check.
#![allow(dead_code)]

pub mod gradcheck;
