//! File formats, capture ingest and the evaluation harness around `cbid-core`.

pub mod archive;
pub mod capture;
pub mod codec;
pub mod corpus;
pub mod eval;
