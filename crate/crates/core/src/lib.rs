//! Ally/enemy classification over a signed dyad graph harvested from
//! encyclopedia conflict infoboxes.

pub mod analysis;
pub mod cli;
pub mod experiments;
pub mod features;
pub mod graph;
pub mod ingest;
pub mod manifest;
pub mod models;
pub mod par;
pub mod synthetic;
pub mod tensor;
