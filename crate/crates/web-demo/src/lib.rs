//! Wasm bindings for the browser demo. Compiles to an empty rlib on native
//! targets so `cargo build --workspace` works without the wasm32 toolchain.

#[cfg(target_arch = "wasm32")]
mod bindings;

#[cfg(target_arch = "wasm32")]
pub use bindings::*;
