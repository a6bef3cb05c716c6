//! The low-rank learner.
//!
//! A unit with features `x` is embedded by a two-layer network
//! `v(x) = W₂ act(W₁ x + b₁) + b₂ ∈ ℝᵈ`. Every experiment arm has an
//! embedding `eᵗ_k ∈ ℝᵈ` (arm 0 is control) and every metric a `d×d`
//! operator `A_j`. Potential outcomes and CATEs are bilinear:
//!
//! ```text
//! μ̂ᵗ_jk(x) = v(x)ᵀ A_j eᵗ_k          CATE_jkt(x) = v(x)ᵀ A_j (eᵗ_k − e⁰_k)
//! ```
//!
//! All parameters live in one flat vector (see [`LRParams`]) so the
//! optimizer, weight decay and gradient checks work on a single buffer.

mod finetune;
mod grad;
mod io;
mod params;
mod train;

pub use finetune::{finetune_new_experiment, FinetuneResult, NewObservation, FINETUNE_REG};
pub use grad::loss_and_grads;
pub use io::{load_params, save_params, MODEL_FORMAT, MODEL_VERSION};
pub use params::{Activation, Dims, LRParams};
pub use train::{train, train_rows, HyperConfig, TrainReport};
