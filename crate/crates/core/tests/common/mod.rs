//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod cli;
pub mod data;
pub mod gradcheck;
