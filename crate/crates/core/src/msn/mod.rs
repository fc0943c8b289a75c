//! Noise-injected fine-tuning: responses are partly replaced by tokens
//! sampled from the preceding context while the targets stay clean, so the
//! model learns to predict correctly from a corrupted draft.

mod loss;
mod noise;
mod train;

pub use loss::{msn_loss, ppl_spans, sft_loss, token_losses, BatchLoss, LossGrad, TrainObjective};
pub use noise::{
    apply_noise, choose_span_ppl, choose_span_random, sample_ahead_noise, LocationPolicy, NoiseConfig, NoiseSpan,
    NoisySample,
};
pub use train::{denoise_accuracy, train, StepLog, TrainReport, TrainSchedule};
