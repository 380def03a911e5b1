//! Decoupled data augmentation.
//!
//! Images are split into a class-dependent foreground cutout (CDP) and a
//! class-independent background (CIP). Backgrounds are inpainted and pooled
//! across classes, foregrounds are conservatively edited through a diffusion
//! contract, and at training time the two are recombined at random with
//! area-proportional soft labels.

pub mod bank;
pub mod combiner;
pub mod decouple;
pub mod diffusion;
pub mod error;
pub mod expand;
pub mod harness;
pub mod imagecore;
pub mod inpaint;
pub mod mixers;

pub use error::{Error, Result};
