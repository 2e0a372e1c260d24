//! Data reduction and false-positive accounting.

use core::fmt;

use thiserror::Error;

use crate::flow::FlowKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("digest size is zero")]
    ZeroDenominator,
    #[error("no flows in the corpus")]
    NoFlows,
    #[error("the true carrier was not reported")]
    MissingCarrier,
}

/// A `raw : digest` ratio.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Ratio(pub f64);

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}:1", self.0)
    }
}

/// Overall data reduction: raw bytes over filter plus compressed table bytes.
pub fn dr_overall(raw_bytes: u64, filter_bytes: u64, table_bytes: u64) -> Result<Ratio, MetricError> {
    let den = filter_bytes + table_bytes;
    if den == 0 {
        return Err(MetricError::ZeroDenominator);
    }
    Ok(Ratio(raw_bytes as f64 / den as f64))
}

/// Falsely reported flows of one query, as a fraction of all distinct flows.
pub fn excerpt_fp(reported: &[FlowKey], carrier: &FlowKey, distinct_flows: usize) -> Result<f64, MetricError> {
    if distinct_flows == 0 {
        return Err(MetricError::NoFlows);
    }
    if !reported.contains(carrier) {
        return Err(MetricError::MissingCarrier);
    }
    Ok((reported.len() - 1) as f64 / distinct_flows as f64)
}
