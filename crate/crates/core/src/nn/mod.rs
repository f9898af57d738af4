//! Numerical core: grids, layer primitives and their backward passes.

pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod params;

pub use gradcheck::{grad_check, GradCheck};
pub use layers::{normal_grid, Conv1d, LayerNorm, Mlp2};
pub use ops::{
    conv1d, downsample2, layer_norm, mlp2, pool_over_channels, pool_over_time, sigmoid,
    upsample2, PoolMode,
};
pub use params::{zeros_like, Parameterized};
