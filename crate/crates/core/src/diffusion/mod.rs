//! Generative editing math over an abstract noise-prediction backend.

mod denoiser;
mod inversion;
mod schedule;
mod sdedit;

pub use denoiser::{Denoiser, Identifier, PriorMean, ToyGaussianDenoiser, TrainableDenoiser};
pub use inversion::{sample_truncated_step, ti_loss, ti_loss_and_grad, ti_train, TiConfig, TiLoss, TiOutcome};
pub use schedule::{truncation_index, NoiseSchedule};
pub use sdedit::{forward_noise, guided_noise, sdedit, EditConfig};
