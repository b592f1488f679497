//! Label aggregation for crowd and LLM categorical annotations.
//!
//! - [`dataset`]: label spaces, workers, instances, records; file ingestion and statistics.
//! - [`aggregate`]: majority vote, Dawid-Skene and GLAD truth inference.
//! - [`bench`]: hybrid crowd + LLM label sets, few-crowd subsampling, multi-trial runs and reports.
//! - [`annotate`]: LLM workers: prompt rendering, chat-completion calls and output normalization.

pub mod aggregate;
pub mod dataset;
pub mod bench;
pub mod annotate;
