//! Measuring how closely language-model answers about social norms track the
//! distribution of human annotator answers.

pub mod corpus;
pub mod extraction;
pub mod metrics;
pub mod prompting;
pub mod records;
pub mod report;
pub mod scale;
pub mod synthetic;
pub mod tsv;
