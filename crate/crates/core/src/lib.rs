//! Episode-of-care analytics engine.
//!
//! Raw source files are normalized into canonical [`model::Event`]s by the
//! [`extract`] module, stored in the embedded [`store::Repository`], linked
//! into episode-of-care documents by the [`builder`], grouped into cohorts by
//! [`classify`] and aggregated into KPI series by [`kpi`].

pub mod builder;
pub mod classify;
pub mod config;
pub mod datagen;
pub mod extract;
pub mod filter;
pub mod fixtures;
pub mod kpi;
pub mod model;
pub mod store;
