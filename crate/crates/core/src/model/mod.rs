//! The masked 2D transformer.
//!
//! Pipeline per instance: reversible instance normalization, per-cell input
//! projection, mask-token substitution, `P × P` patch embedding plus
//! positional encoding, a stack of post-norm encoder layers, and a linear
//! head that reconstructs every patch before the normalization is undone.

mod config;
mod network;
mod ops;
mod params;

pub use config::{ModelConfig, PosEncoding};
pub use network::{backward, forward, forward_cached, ForwardCache};
pub use ops::{
    apply_mask_token, encoder_layer, patch_embed, positional_encoding, project_input, reconstruct,
    revin_denormalize, revin_normalize, sinusoidal_table, NormStats,
};
pub use params::{count_parameters, ParamEntry, ParamLayout, ParameterStore};
