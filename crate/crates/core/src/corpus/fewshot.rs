use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Draws a subset whose size is uniform in `[lo, hi]`, keeping the original
/// order. `hi` is capped at `items.len()`. Deterministic per seed.
pub fn downsample_fewshot<T: Clone>(
    items: &[T],
    seed: u64,
    lo: usize,
    hi: usize,
) -> Result<Vec<T>> {
    if lo > hi {
        return Err(Error::invalid(format!(
            "few-shot bounds reversed: {lo} > {hi}"
        )));
    }
    if items.len() < lo {
        return Err(Error::invalid(format!(
            "cannot draw at least {lo} items from {}",
            items.len()
        )));
    }
    let hi = hi.min(items.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = rng.random_range(lo..=hi);
    let mut picked = index::sample(&mut rng, items.len(), size).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| items[i].clone()).collect())
}
