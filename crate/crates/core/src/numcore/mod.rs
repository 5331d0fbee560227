//! Numeric substrate: tensors, reverse-mode autodiff, seeded RNG streams, PCA.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod pca;
pub mod rng;
pub mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_many};
pub use graph::{sigmoid, Gradients, Graph, Var};
pub use pca::{pca_top2, symmetric_eigen, Pca2};
pub use rng::{Rng, RngStreams};
pub use tensor::Tensor;
