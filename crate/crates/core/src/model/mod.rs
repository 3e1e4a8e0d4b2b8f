//! The enhancement network: multi-scale shallow features, channel attention
//! blocks on the low-frequency base, residual reconstruction, and a
//! multiplicative mask on the averaged high-frequency detail.
//!
//! Parameter count for a configuration, with `conv(i, o, s) = o*i*s*s + o`
//! and `(a, b, c)` the shallow split of `feat`:
//!
//! ```text
//!   sum_j conv(1, split_j, s_j) + conv(k, split_j, s_j)      s = 3, 5, 7
//! + conv(2 feat, feat, 3)
//! + n_cab * ( sum_{c<n_dense} conv(feat + c growth, growth, 3)
//!           + conv(feat + n_dense growth, feat, 1) + eca_kernel )
//! + conv((n_cab + 1) feat, feat, 1) + conv(feat, 1, 3)
//! + conv(3, m, 3) + 6 conv(m, m, 3) + conv(m, 1, 3) + conv(1, 1, 3)
//! ```
//!
//! which is 1,508,816 for the full configuration and 53,754 for the desk one.

mod forward;
mod params;

pub use forward::{
    channel_attention_block, enlighten, forward_graph, hsie_forward, hsie_forward_traced, reconstruct_low,
    refine_high, register, shallow_features, CabVars, ForwardTrace, ForwardVars, ModelInputs,
};
pub use params::{init_model, Cab, HsieConfig, HsieParams, Net, ResBlock, MASK_BLOCKS, SFE_KERNELS};

#[cfg(test)]
mod tests;
