//! Region embeddings from heterogeneous urban graphs.
//!
//! The pipeline builds a typed urban graph from event tables ([`graph`]),
//! derives meta-path neighborhoods ([`metapath`]), computes supervision
//! targets ([`attributes`]), trains a two-level attention network
//! ([`model`], [`objectives`], [`train`]) on a small reverse-mode autodiff
//! engine ([`autodiff`]) and scores the embeddings on downstream tasks
//! ([`eval`]). [`ingest`], [`synth`], [`config`] and [`pipeline`] glue the
//! stages together for the command line.

pub mod autodiff;
pub mod attributes;
pub mod graph;
pub mod metapath;
pub mod model;
pub mod objectives;
pub mod train;
pub mod ingest;
pub mod synth;
pub mod eval;
pub mod config;
pub mod pipeline;
