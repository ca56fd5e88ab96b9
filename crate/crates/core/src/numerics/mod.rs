//! Dense arithmetic, probability primitives, seeded sampling and the
//! reverse-mode tape every loss is built on.

pub mod loss;
mod mlp;
mod optim;
mod params;
pub mod prob;
mod rng;
mod scalar;
mod tape;
mod tensor;

pub use mlp::Mlp;
pub use optim::{cosine_lr, Sgd};
pub use params::{ParamId, ParamStore};
pub use prob::{cross_entropy_soft, entropy, kl_div, mix_probs, softmax, ProbVector, EPS};
pub use rng::{beta_sample, RngState};
pub use scalar::Scalar;
pub use tape::{Gradients, GradTape, NodeId};
pub use tensor::{mix_weights, mixup, DenseTensor};
