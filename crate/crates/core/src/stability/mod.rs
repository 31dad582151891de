//! Closed-loop stability analysis: activation bounds over a state box, the
//! integral-quadratic constraints those bounds induce, the augmented system
//! the loop is rewritten into, and the matrix-inequality certificate.

pub mod augmented;
pub mod bounds;
pub mod certificate;
pub mod iqc;

pub use augmented::{build_augmented, simulate_augmented, AugmentedSystem};
pub use bounds::{activation_bounds, input_box, SectorSlopeBounds};
pub use certificate::{
    certificate_report_json, check_certificate, search_certificate, SearchBudget,
    StabilityCertificate, Verdict,
};
pub use iqc::{build_iqc, constraint_prefix_sums, coupling_matrix, IqcMultipliers, PsiRealization};
