//! Numerical building blocks for a two-stream action-recognition pipeline.
//!
//! The crate covers four self-contained pieces and a small harness tying the
//! contrastive losses to an optimizer:
//!
//! - [`tclr`]: instance, local-local and global-local temporal contrastive
//!   losses with hand-derived gradients and a naive reference oracle.
//! - [`tvl1`]: coarse-to-fine duality-based TV-L1 optical flow.
//! - [`mhpa`]: forward pass of multi-head pooling attention and a
//!   hierarchical stage schedule.
//! - [`sampler`]: clip index sampling, test-time crops and probability
//!   ensembling.
//! - [`pretrain`]: a tiny encoder trained on synthetic temporal data with the
//!   combined contrastive objective.
//!
//! File formats (PGM, Middlebury `.flo`, `EMB1` matrices, CSV predictions,
//! key=value configs) live in [`io`]; the `knights` binary in [`cli`].
//!
//! Runnable walkthroughs for each capability are in `examples/`:
//!
//! ```bash
//! cargo run -p knights --release --example contrastive_losses
//! cargo run -p knights --release --example gradient_check
//! cargo run -p knights --release --example optical_flow
//! cargo run -p knights --release --example pooling_attention
//! cargo run -p knights --release --example multi_crop_ensemble
//! cargo run -p knights --release --example pretrain_synthetic
//! cargo run -p knights --release --example file_formats
//! ```

pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod matrix;
pub mod mhpa;
pub mod pretrain;
pub mod sampler;
pub mod tclr;
pub mod tvl1;

pub use error::{Error, Result};
pub use matrix::Matrix;
