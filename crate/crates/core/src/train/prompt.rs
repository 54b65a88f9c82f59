use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffusion::Conditioning;

/// Adds `N(0, sigma²)` noise to every embedding component, keeping the prompt
/// text and the null flag. Panics if `sigma` is negative or not finite.
pub fn perturb_prompt<R: Rng + ?Sized>(cond: &Conditioning, sigma: f64, rng: &mut R) -> Conditioning {
    assert!(sigma >= 0.0 && sigma.is_finite(), "prompt noise sigma must be finite and >= 0, got {sigma}");
    if sigma == 0.0 {
        return cond.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let emb = cond.embedding().iter().map(|v| v + normal.sample(rng)).collect();
    cond.with_embedding(emb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_sigma_is_identity() {
        let c = Conditioning::from_prompt("a red sphere", 16);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(perturb_prompt(&c, 0.0, &mut rng), c);
    }

    #[test]
    fn same_seed_same_draw() {
        let c = Conditioning::from_prompt("a red sphere", 16);
        let a = perturb_prompt(&c, 0.1, &mut ChaCha8Rng::seed_from_u64(7));
        let b = perturb_prompt(&c, 0.1, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.prompt(), c.prompt());
    }

    #[test]
    fn null_flag_survives() {
        let c = Conditioning::null(8);
        let p = perturb_prompt(&c, 0.5, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(p.is_null());
    }

    #[test]
    fn empirical_std_matches_sigma() {
        let sigma = 0.03;
        let c = Conditioning::from_embedding(vec![0.25]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| perturb_prompt(&c, sigma, &mut rng).embedding()[0] - 0.25)
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((var.sqrt() - sigma).abs() / sigma < 0.05, "std {}", var.sqrt());
    }
}
