//! Local cost updating: updater input assembly, the residual step, additive
//! refinement, and disparity regression.

mod gru;
mod regression;
mod surrogate;

pub use gru::{conv_gru_step, load_gru_stages, save_gru_stages, GruWeights};
pub use regression::{
    regress_disparity, regress_disparity_gradient, sequence_loss, sequence_loss_gradient, sequence_loss_raw,
    soft_argmax, soft_argmax_gradient,
};
pub use surrogate::{nearest_value, neighborhood_sharpen, null_update, window_median};

use crate::cost_volume::LocalCostVolume;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::imagery::DisparityMap;
use crate::tensor::Tensor3;

/// `[local costs ‖ D_prev / d_norm ‖ context]` stacked along channels.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdaterInput {
    pub tensor: Tensor3,
    pub cost_channels: usize,
    pub context_channels: usize,
}

impl UpdaterInput {
    pub fn channels(&self) -> usize {
        self.tensor.channels
    }
}

/// Channel count of the updater input for a stage with `per_level` hypotheses.
pub const fn update_input_channels(levels: usize, per_level: usize, context: usize) -> usize {
    levels * per_level + 1 + context
}

pub fn assemble_update_input(
    local: &LocalCostVolume,
    d_prev: &DisparityMap,
    context: &FeatureMap,
    d_norm: f32,
) -> Result<UpdaterInput> {
    let (h, w) = (local.height(), local.width());
    if d_prev.height() != h || d_prev.width() != w || context.height() != h || context.width() != w {
        return Err(Error::param(format!(
            "updater operands disagree: costs {h}x{w}, disparity {}x{}, context {}x{}",
            d_prev.height(),
            d_prev.width(),
            context.height(),
            context.width()
        )));
    }
    if d_norm.is_nan() || d_norm <= 0.0 {
        return Err(Error::param("disparity normalizer must be positive"));
    }
    let disparity = Tensor3::from_vec(1, h, w, d_prev.values().iter().map(|v| v / d_norm).collect())?;
    let tensor = Tensor3::concat(&[&local.costs, &disparity, &context.tensor])?;
    Ok(UpdaterInput {
        tensor,
        cost_channels: local.costs.channels,
        context_channels: context.channels(),
    })
}

/// C_ref = C_local + ΔC on the level-0 block; coarser levels pass through.
pub fn refine_local_cost(local: &LocalCostVolume, delta: &Tensor3) -> Result<LocalCostVolume> {
    if delta.channels != local.per_level || !delta.same_spatial(&local.costs) {
        return Err(Error::param(format!(
            "residual is {}x{}x{}, level-0 block is {}x{}x{}",
            delta.channels,
            delta.height,
            delta.width,
            local.per_level,
            local.height(),
            local.width()
        )));
    }
    let mut out = local.clone();
    for (c, d) in out.costs.data.iter_mut().zip(&delta.data) {
        *c += d;
    }
    Ok(out)
}
