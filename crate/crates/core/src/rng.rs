//! Seeded randomness shared by every stochastic step.
//!
//! All generators are ChaCha8 (counter-based). Independent streams are
//! derived from a base seed and a stream index so that, for example, field
//! `i` of a dataset depends only on `(seed, i)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

pub type QvdRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> QvdRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive a child seed from `(base, stream)`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.random()
}

/// Draw a multinomial histogram of `shots` trials over `probs`.
///
/// Uses the conditional-binomial decomposition, so the cost is linear in
/// the number of bins regardless of the shot count. `probs` need not be
/// exactly normalized; it is treated as proportional weights.
pub fn multinomial<R: Rng + ?Sized>(rng: &mut R, probs: &[f64], shots: u64) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    let mut remaining_mass: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    let mut remaining = shots;
    for (i, &p) in probs.iter().enumerate() {
        if remaining == 0 || remaining_mass <= 0.0 {
            break;
        }
        let p = p.max(0.0);
        let q = (p / remaining_mass).clamp(0.0, 1.0);
        let draw = if q >= 1.0 {
            remaining
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining, q)
                .expect("probability is in (0, 1)")
                .sample(rng)
        };
        counts[i] = draw;
        remaining -= draw;
        remaining_mass -= p;
    }
    // Rounding in `remaining_mass` can leave a handful of trials unassigned;
    // they go to the last bin with positive weight.
    if remaining > 0 {
        if let Some(last) = probs.iter().rposition(|&p| p > 0.0) {
            counts[last] += remaining;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(9, 4), derive_seed(9, 4));
    }

    #[test]
    fn multinomial_conserves_shots() {
        let mut rng = seeded(3);
        let counts = multinomial(&mut rng, &[0.1, 0.2, 0.3, 0.4], 1000);
        assert_eq!(counts.iter().sum::<u64>(), 1000);
    }

    #[test]
    fn multinomial_point_mass() {
        let mut rng = seeded(3);
        assert_eq!(multinomial(&mut rng, &[0.0, 1.0, 0.0], 17), vec![0, 17, 0]);
        assert_eq!(multinomial(&mut rng, &[0.5, 0.5], 0), vec![0, 0]);
    }
}
