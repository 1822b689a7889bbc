//! Targets with known smoothness, lower-bound fixtures and numeric validators.

pub mod fooling;
pub mod lemmas;
pub mod packing;
pub mod tails;
pub mod targets;

pub use fooling::{fooling_pair, grid_disagreement, FoolingPair, FoolingReport};
pub use lemmas::{gaussian_shift_mass, quadrature_lemma_checks, HalfspaceOrientation, LemmaReport, ShiftMass};
pub use packing::{build_packing_family, calibrated_packing_family, packing_signs, PackingFamily, PackingParams, PackingSigns};
pub use tails::{check_deterministic_bound, check_pointwise_thresh, mc_tail, random_bound_checks, random_pointwise_checks, tail_envelope, RandomCheckSummary, TailTable};
pub use targets::{bundled_target, bundled_targets, mollifier, BumpFunction, BundledTarget, DeclaredSmoothness};
