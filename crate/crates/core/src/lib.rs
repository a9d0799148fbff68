//! Fairness-regularized factor models for grouped panels.
//!
//! The crate estimates a shared loading matrix for several groups (for example
//! male and female log-mortality surfaces) under three criteria:
//!
//! * the standard factor model ([`factor::fit_pca`]),
//! * the fair factor model, which penalizes the squared gap between the
//!   groups' reconstruction errors ([`optimizer::fit_fair_factor`]),
//! * the fair decision model, which penalizes the gap between errors of a
//!   downstream decision such as an annuity price ([`optimizer::fit_fair_decision`]).
//!
//! Fitted factors are forecast with drift-AR models ([`forecast`]) and scored
//! with per-group RMSE and fairness gaps ([`metrics`]); the penalty is chosen by
//! k-fold cross-validation ([`cv`]).

pub mod cv;
pub mod dataset;
pub mod error;
pub mod factor;
pub mod forecast;
pub mod linalg;
pub mod metrics;
pub mod optimizer;
pub mod transform;

pub use dataset::{GroupedPanel, Panel};
pub use error::{Error, Result};
pub use factor::{FitResult, Loading};
pub use linalg::DenseMatrix;
pub use optimizer::OptimizerOptions;
pub use transform::DecisionTransform;

/// Serializes a matrix as a list of rows.
pub fn serialize_rows<S: serde::Serializer>(m: &DenseMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for row in m.rows() {
        seq.serialize_element(&row.to_vec())?;
    }
    seq.end()
}
