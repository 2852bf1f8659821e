// mdbook cannot run snippets that depend on an external crate, so each
// chapter is pulled in as the docs of an empty module and `cargo test --doc`
// runs its code blocks. One module per chapter keeps failures traceable.

#[doc = include_str!("../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../book/src/tensors.md")]
pub mod tensors {}
#[doc = include_str!("../../book/src/sampling.md")]
pub mod sampling {}
#[doc = include_str!("../../book/src/completion.md")]
pub mod completion {}
#[doc = include_str!("../../book/src/inference.md")]
pub mod inference {}
#[doc = include_str!("../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../book/src/formats.md")]
pub mod formats {}
