//! Gram-matrix texture statistics.
//!
//! The crate covers the numerical side of a texture-representation study:
//!
//! * [`engine`]: a minimal differentiable CNN inference engine reading
//!   portable weight bundles, with forward taps and input gradients.
//! * [`gram`]: Gram matrices of feature maps and their upper-triangle vectors.
//! * [`synthesis`]: the size-normalized multi-layer Gram loss, an L-BFGS
//!   minimizer with a strong Wolfe line search, and texture synthesis.
//! * [`rdm`]: representational dissimilarity matrices over Gram vectors.
//! * [`clustering`]: Ward agglomerative clustering and tree cuts.
//! * [`infotheory`]: plug-in and NSB entropy / mutual information in bits.
//! * [`stats`]: Pearson correlation with exact t-distribution p-values.

pub mod clustering;
pub mod engine;
pub mod gram;
pub mod infotheory;
pub mod rdm;
pub mod special;
pub mod stats;
pub mod synthesis;
pub mod synthetic;
pub mod tensor;

pub use engine::{FeatureMap, NetworkGraph};
pub use gram::{GramMatrix, GramVector};
pub use tensor::Tensor;
