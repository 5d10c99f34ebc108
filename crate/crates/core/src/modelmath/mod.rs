//! Pooling layers, the sub-center speaker head and margin-based softmax
//! losses, each with a hand-derived backward pass.

mod head;
mod loss;
mod pooling;
mod schedule;

pub use head::{subcenter_backward, subcenter_cosine, subcenter_forward, SpeakerHead, SubcenterOutput};
pub use loss::{aam_softmax_loss, am_softmax_loss, MarginLoss};
pub use pooling::{
    gsp, gsp_backward, mqmha, mqmha_backward, mqmha_forward, FrameFeatures, MqmhaCache,
    MqmhaParams, Pooling, VAR_FLOOR,
};
pub use schedule::{margin_at, MarginCurve, MarginSchedule};
pub(crate) use head::random_unit;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
