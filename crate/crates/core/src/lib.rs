pub mod backbones;
pub mod error;
pub mod graph;
pub mod image;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod reference;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use labels::{LabelMap, IGNORE_INDEX};
pub use scalar::Scalar;
pub use tensor::{Shape4, Tensor};
pub use model::{build_liteseg, LiteSeg, LiteSegConfig};
