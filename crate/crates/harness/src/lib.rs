//! Command-line harness: experiment runs, parameter sweeps, the
//! observation reproduction and the aggregator oracle suite.

pub mod cli;
pub mod observe;
pub mod oracle;
pub mod sweep;
