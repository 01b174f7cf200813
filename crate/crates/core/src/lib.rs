//! 1:M structured-sparse int8 inference on an emulated RISC-V cluster.

pub mod geometry;
pub mod isa_emu;
pub mod kernels;
pub mod sparse_format;
pub mod tiler;
