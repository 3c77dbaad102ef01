//! Encoder-decoder sentence generators with full or mask-reduced output
//! layers.

mod head;
mod model;

pub use head::{OutputHead, ReducedHead};
pub use model::{
    Attention, DecoderState, Generator, GeneratorConfig, Layout, Memory, Sampled, SourceKind, GENERATOR_KIND,
};

#[cfg(test)]
mod tests;
