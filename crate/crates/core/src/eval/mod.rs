//! Quality metrics, fill baselines and the method × mask-family evaluation
//! grid.

mod baselines;
mod metrics;
mod report;

pub use baselines::{mean_fill, nn_fill};
pub use metrics::{
    error_image, error_map, gaussian_taps, mse, psnr, psnr_masked, ssim, PSNR_CAP, SSIM_SIGMA,
    SSIM_WINDOW,
};
pub use report::{
    cell_key, evaluate, inpaint_seed, mask_seed, mean, CellReport, EvalOptions, EvalReport,
    Evaluation, Method, REPORT_SCHEMA_VERSION,
};
