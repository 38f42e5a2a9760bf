//! Template encoder, multiplicative encryption, template decoder, and the
//! losses tying them to the detector.

mod config;
mod losses;
mod net;
mod wrapper;

pub use config::{LossWeights, NetShape, TemplateMode, TransformMode, WrapperConfig};
pub use losses::{cosine_loss, loss_decoder, loss_encoder, total_loss, weighted_total, COSINE_EPS};
pub use net::TemplateNet;
pub use wrapper::{
    batch_images, batch_maps, encrypt, template_to_gray, write_template_pgm, Wrapper,
};

use proactive_autograd::{CheckpointError, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum WrapperError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid wrapper config: {0}")]
    InvalidConfig(String),
    #[error("{0} loss is not finite")]
    NonFinite(&'static str),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = WrapperError> = std::result::Result<T, E>;
