//! Small-scale experiments: background robustness on a synthetic shapes
//! dataset and edit diversity measured by PSNR.

mod experiment;
mod linear;
mod shapes;

pub use experiment::{
    bank_from_samples, run_background_robustness, run_diversity_report, synthetic_psnr, DiversityPoint,
    ExperimentReport, Method, ReportRow, RobustnessConfig,
};
pub use linear::{features, train_linear, LinearModel, TrainConfig};
pub use shapes::{
    gen_shapes_dataset, render, render_texture, swapped_backgrounds, Shape, ShapeSample, ShapeSpec, ShapesConfig,
    ShapesDataset, Texture,
};
