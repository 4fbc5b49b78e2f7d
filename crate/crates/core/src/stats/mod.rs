//! Two-sample statistics used by the analysis layer: Welch's unequal-variance
//! t-test with an in-crate Student-t tail, and Cohen's d.

mod beta;
mod student_t;
mod welch;

pub use beta::{ln_beta, ln_gamma, regularized_incomplete_beta};
pub use student_t::{student_t_sf, student_t_two_sided};
pub use welch::{cohens_d, mean, sample_variance, standard_error, welch_t_test, Tail, TestResult};
