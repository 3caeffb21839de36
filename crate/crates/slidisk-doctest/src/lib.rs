//! Keeps the guide honest: every chapter of `book/` is included here as a
//! doc comment, so `cargo test --doc` compiles and runs its code blocks
//! against the current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod chapter_introduction {}

#[doc = include_str!("../../../book/src/noise.md")]
pub mod chapter_noise {}

#[doc = include_str!("../../../book/src/disk.md")]
pub mod chapter_disk {}

#[doc = include_str!("../../../book/src/integrators.md")]
pub mod chapter_integrators {}

#[doc = include_str!("../../../book/src/statistics.md")]
pub mod chapter_statistics {}

#[doc = include_str!("../../../book/src/controllability.md")]
pub mod chapter_controllability {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod chapter_cli {}
