//! Complex-valued convolutional neural networks, built from scratch.
//!
//! The crate implements complex layers (affine, convolution, sector ReLU,
//! magnitude and softmax pooling, projection), reverse-mode gradients in the
//! Wirtinger convention, SGD with Nesterov momentum, the construction that
//! rewrites a complex convolution as a restricted real one, and a synthetic
//! cell-detection experiment comparing a complex network against its real
//! counterpart.
//!
//! Gradient convention used everywhere: for a real loss `l` of complex
//! values `Z = X + iY` and weights `W = A + iB`, the propagated delta is
//! `d = dl/dX + i dl/dY` and the weight gradient is `dl/dA + i dl/dB`;
//! descent steps move along the negated weight gradient. Every backward
//! pass is checked against central finite differences over the real
//! coordinates.
//!
//! ## Examples
//!
//! Each major capability has a runnable example:
//!
//! - **`complex_layers`** — forward passes of every layer type
//! - **`gradient_check`** — backprop vs finite differences per layer
//! - **`generate_dataset`** — synthetic cell images, Sobel gradients,
//!   labeled patches, and the binary dataset format
//! - **`train_cell_detection`** — a short end-to-end training run of both
//!   models
//! - **`real_counterpart`** — the \[A, -B\] / \[B, A\] realified
//!   convolution and where the equivalence breaks
//! - **`phase_matching`** — the conjugate-matched kernel as response
//!   maximizer, and synchronization vs cancellation
//! - **`export_kernels`** — kernel CSV / magnitude / phase-map export
//! - **`checkpoint_resume`** — bit-exact save, restore, and resume
//!
//! ```bash
//! cargo run --release -p ccnn --example complex_layers
//! ```
//!
//! The experiment itself runs through the thin `ccnn` binary
//! (`gen-data`, `train`, `eval`, `trials`, `gradcheck`, `export-kernels`).

pub mod complex;
pub mod data;
pub mod error;
pub mod rng;
pub mod tensor;

pub mod backprop;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod layers;
pub mod loss;
pub mod equivalence;
pub mod export;
pub mod gradcheck;
pub mod network;
pub mod optim;
pub mod train;

pub use complex::Complex;
pub use error::{Error, Result};
pub use tensor::ComplexTensor;
