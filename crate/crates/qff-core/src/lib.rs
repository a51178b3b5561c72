//! Quantized Fourier feature encoders with a minimal reverse-mode
//! differentiation engine, an MLP decoder, Adam training, and desk-scale
//! image-regression and signed-distance fitting tasks.

pub mod autodiff;
pub mod encoding;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod mlp;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod tasks;
pub mod tensor;

pub use error::{QffError, Result};
pub use model::FieldModel;
pub use scalar::Scalar;
pub use tensor::{ParamId, ParamTensor, Params, Tensor};

/// Cap evaluation parallelism; `0` keeps the automatic thread count.
/// Called once at process start; later calls have no effect.
pub fn configure_threads(threads: usize) {
    if threads == 0 {
        return;
    }
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
}
