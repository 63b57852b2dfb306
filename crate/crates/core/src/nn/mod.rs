pub mod layers;
pub mod params;

pub use layers::{Attention, AttentionOutput, Block, LayerNorm, Linear, Mlp};
pub use params::{Origin, Param, ParamStore};
