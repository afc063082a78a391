//! Generator and discriminator networks.
//!
//! The generator is an encoder–decoder with skip connections mapping a
//! `B×3×S×S` fundus batch to a `B×1×S×S` soft disc mask; the discriminator
//! scores `(image, mask)` pairs on a patch grid.

mod discriminator;
mod generator;
mod params;

pub use discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorTape};
pub use generator::{Generator, GeneratorConfig, GeneratorTape};
pub use params::ParameterSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{Module, Slot};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) const INIT_STD: f32 = 0.02;

/// Conv weights ~ N(0, 0.02), biases 0, batch-norm scale ~ N(1, 0.02), shift 0.
pub(crate) fn initialize(module: &mut dyn Module, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    module.visit_mut("", &mut |name, slot| {
        if let Slot::Param(p) = slot {
            if name.ends_with(".weight") {
                p.fill_normal(&mut rng, 0.0, INIT_STD);
            } else if name.ends_with(".gamma") {
                p.fill_normal(&mut rng, 1.0, INIT_STD);
            } else {
                p.value.fill(0.0);
            }
        }
    });
}

/// Builds a generator with seeded initialization and returns it with a snapshot of its parameters.
pub fn build_generator(cfg: GeneratorConfig, seed: u64) -> Result<(Generator, ParameterSet)> {
    let g = Generator::new(cfg, seed)?;
    let params = ParameterSet::from_module(&g);
    Ok((g, params))
}

pub fn build_discriminator(cfg: DiscriminatorConfig, seed: u64) -> Result<(Discriminator, ParameterSet)> {
    let d = Discriminator::new(cfg, seed)?;
    let params = ParameterSet::from_module(&d);
    Ok((d, params))
}
