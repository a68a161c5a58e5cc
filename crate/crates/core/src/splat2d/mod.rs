//! Anisotropic 2D Gaussian primitives, a differentiable tiled rasterizer and
//! an Adam optimizer over raw primitive parameters.

mod adam;
mod model;
mod render;

pub use adam::{AdamConfig, AdamState, LearningRates};
pub use model::{
    init_from_image, logit, sigmoid, Gaussian2D, ParamVec, SplatModel, CHECKPOINT_HEADER, COLOR, INIT_OPACITY, LS0,
    LS1, OP, PARAMS, PX, PY, ROT,
};
pub use render::{
    kernel, render, render_loss_grad, render_loss_grad_with, render_with, LossGrad, RenderOptions, MAX_WEIGHT,
    SUPPORT_Q, TILE,
};
