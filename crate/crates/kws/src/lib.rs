//! File formats, configuration, synthetic data and the command-line front end
//! for the `kws-core` keyword-spotting cascade.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod evaluate;
pub mod formats;
pub mod modeltext;
pub mod models;
pub mod wav;
