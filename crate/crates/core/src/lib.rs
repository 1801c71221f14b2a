//! Generalized coupled tensor factorisation.
//!
//! Several non-negative tensors are factorised at once, sharing latent
//! factors according to a binary coupling matrix. Fits minimise a masked
//! beta-divergence (Euclidean, Kullback-Leibler or Itakura-Saito) with
//! alternating multiplicative updates. The [`harness`] module wraps the
//! engine into a link-prediction experiment scored by AUC.

pub mod engine;
pub mod error;
pub mod harness;
pub mod io;
pub mod model;
pub mod tensor;

pub use engine::{
    delta, divergence, fit, fit_from, objective, predict, update_factor, Cost, FactorSet,
    FitResult, UpdateConfig,
};
pub use error::{GctfError, Result};
pub use model::{
    build_coupled_cp, build_coupled_tucker, build_cp, build_tucker, CouplingMatrix, FactorDecl,
    LinkDims, ModelDocument, ModelSpec, ObservationDecl, Violation,
};
pub use tensor::{marginal_sum, product_then_marginalize, DenseTensor, Index, Mask};
