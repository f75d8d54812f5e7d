use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::autodiff::tensor::check_shape;
use crate::error::{Error, Result};

/// Seeded generator used everywhere randomness is needed. ChaCha8 gives a
/// platform-independent stream for a given seed.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Derives an independent stream for a named purpose (user, epoch, ...) from a
/// master seed, so draws do not depend on iteration order elsewhere.
pub fn derived_rng(master: u64, stream: u64, index: u64) -> SeededRng {
    let mut rng = SeededRng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) << 20);
    rng
}

/// Tensor of i.i.d. `N(0, std²)` draws, marked as requiring gradients.
pub fn gaussian_init<R: rand::Rng + ?Sized>(
    shape: &[usize],
    std: f64,
    rng: &mut R,
) -> Result<Tensor> {
    check_shape(shape)?;
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "standard deviation must be positive, got {std}"
        )));
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Ok(Tensor::new(shape.to_vec(), data)?.with_requires_grad(true))
}
