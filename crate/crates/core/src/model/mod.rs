//! The fusion network: a ViT encoder shared by both modalities, the CFM/MFM fusion layer
//! with its FFN residual, and a shallow ViT decoder.

mod checkpoint;
mod config;
mod layers;
mod network;
mod params;

pub use checkpoint::{
    import_weights, load_checkpoint, load_groups, save_checkpoint, ArrayDtype, ArrayEntry,
    Manifest, MANIFEST,
};
pub use config::{ModelConfig, Precision};
pub use layers::{sincos_positions, Attention, Block, CrossAttention, LayerNorm, Linear, Mlp};
pub use network::{
    cfm_forward, decode, decode_masked, decode_raw, encode, encode_masked, encode_tensor,
    encode_to_depth, ffn_forward, fuse_features, fuse_images, fuse_tokens, images_to_tensor,
    mfm_forward, mfm_gates, patchify_tensor, probe_feature_fusion, probe_layer_sweep,
    random_mask, tensor_to_images, transformer_block, unpatchify_tensor, ColorMode,
    FusionOutput, FusionPath, MaskPlan, ProbeMode, TokenSequence,
};
pub use params::{CfmParams, DecoderParams, EncoderParams, Group, MfmParams, ModelParams};
