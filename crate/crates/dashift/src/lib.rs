//! Analysis of distribution shift on finite instances.
//!
//! Everything here operates on discrete measures: an environment is a finite
//! set of (input atom, label) mass points, a representation is a total map
//! from input atoms to representation atoms, and a predictor assigns a
//! probability vector over labels to each representation atom. On such
//! instances every quantity of interest (risks, conditional entropies,
//! KL integrals, total-variation distances, adaptation gaps) is computable
//! in closed form, so decomposition identities and bound chains can be
//! certified numerically instead of estimated.
//!
//! Module map:
//!
//! * [`ext`] - extended reals with explicit infinity bookkeeping
//! * [`measure`] - environments, representations, pushforwards, conditionals
//! * [`risk`] - losses, entropy/KL, risk evaluation, Bayes predictors
//! * [`decomp`] - the exact single-source target-risk decomposition
//! * [`fairness`] - entropy-ceiling bounds on the covariate-shift term
//! * [`multi`] - multi-source worst-case bound and adaptation gaps
//! * [`invariance`] - conditional-invariance checks, IRM-style enumeration
//! * [`hdiv`] - hypothesis-class divergence bounds
//! * [`scenarios`] - built-in and seeded random instances
//! * [`report`] - canonical serialization of analysis reports
//! * [`verify`] - seeded certification suites used by the CLI and tests

pub mod cli;
pub mod decomp;
pub mod ext;
pub mod fairness;
pub mod hdiv;
pub mod invariance;
pub mod measure;
pub mod multi;
pub mod report;
pub mod risk;
pub mod scenarios;
pub mod verify;

pub use ext::ExtReal;
pub use measure::{Environment, Predictor, Representation, SingularExtension};
pub use risk::Loss;
