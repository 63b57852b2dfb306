//! Video encoder: patch embedding, the cross-frame communication stack with
//! per-block message tokens, and the temporal integration transformer.

mod clip;
mod encoder;

pub use clip::{patchify, Frame, VideoClip};
pub use encoder::{
    embed_clip, embed_frame, encode_video, init_from_image_weights, make_messages, CctBlock,
    CctOptions, EncoderConfig, FrameEmbedding, FrameEncoding, Mit, VideoEncoder,
};
