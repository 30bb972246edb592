//! Evaluation workflow: radiomics-style GLCM features, Welch's t-test, the
//! before/after alignment report and the Fréchet distance between Gaussian
//! feature distributions.

pub mod align;
pub mod features;
pub mod frechet;
pub mod table;
pub mod welch;

pub use align::{alignment_workflow, AlignmentReport};
pub use features::{glcm_feature_vector, FeatureVector, FEATURE_NAMES};
pub use frechet::{frechet_distance, Moments};
pub use table::FeatureTable;
pub use welch::{student_t_two_sided, welch_test, WelchResult};
