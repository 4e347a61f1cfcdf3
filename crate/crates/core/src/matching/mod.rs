//! Set-prediction assignment between queries and ground-truth events, and
//! the weighted training loss.

mod hungarian;
mod loss;

pub use hungarian::{hungarian_match, MatchResult};
pub use loss::{
    caption_nll, counter_loss, focal_loss, layer_predictions, match_layer, matching_cost, temporal_giou, temporal_iou,
    total_loss, EventTarget, LossBreakdown, LossConfig, LossWeights, SegmentPrediction,
};
