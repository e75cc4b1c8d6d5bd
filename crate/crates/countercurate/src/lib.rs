//! File formats, generator clients, job dispatch and the pipeline stages
//! behind the `countercurate` command.

pub mod clients;
pub mod config;
pub mod corpus;
pub mod dispatch;
pub mod error;
pub mod http;
pub mod images;
pub mod manifest;
pub mod mock;
pub mod pipeline;
pub mod report;
pub mod store;
pub mod synth;
