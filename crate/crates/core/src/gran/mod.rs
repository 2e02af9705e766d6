//! The recurrent canvas generator and its discriminator.

mod config;
mod model;

pub use config::{GranConfig, Ladder, NoiseMode, CONFIG_KEYS};
pub use model::{
    concat_hidden, sample_prior, Discriminator, Generated, Generator, GeneratorStats, GeneratorVars, Noise,
    Unrolled,
};
