//! Fixed-structure H∞ controller synthesis from frequency-response data.

pub mod linalg;
pub mod qp;
pub mod bundle;
pub mod testproblems;
pub mod controller;
pub mod plant;
pub mod hinf;
pub mod grid;
pub mod config;
pub mod pipeline;
