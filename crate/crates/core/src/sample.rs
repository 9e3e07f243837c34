//! Random states for scans and property checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::spectral::forward_certificate_state;
use crate::state::{cyc, MetricState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateRanges {
    pub w: (f64, f64),
    pub alpha: (f64, f64),
    pub eta: (f64, f64),
    /// Minimum `|w_j² − w_k²|` accepted.
    pub min_gap: f64,
}

impl Default for StateRanges {
    fn default() -> Self {
        StateRanges { w: (0.5, 3.0), alpha: (-2.0, 2.0), eta: (-2.0, 2.0), min_gap: 1e-2 }
    }
}

fn triple<R: Rng + ?Sized>(rng: &mut R, r: (f64, f64)) -> [f64; 3] {
    std::array::from_fn(|_| rng.random_range(r.0..r.1))
}

fn separated_w<R: Rng + ?Sized>(rng: &mut R, ranges: &StateRanges) -> [f64; 3] {
    loop {
        let w = triple(rng, ranges.w);
        if (0..3).all(|i| {
            let (j, k) = cyc(i);
            (w[j] * w[j] - w[k] * w[k]).abs() >= ranges.min_gap
        }) {
            return w;
        }
    }
}

fn sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random_bool(0.5) { 1.0 } else { -1.0 }
}

pub fn random_state<R: Rng + ?Sized>(rng: &mut R, ranges: &StateRanges) -> MetricState {
    let w = separated_w(rng, ranges);
    MetricState::new(0.0, w, triple(rng, ranges.alpha), triple(rng, ranges.eta)).expect("separated w is valid")
}

pub fn random_diagonal_state<R: Rng + ?Sized>(rng: &mut R, ranges: &StateRanges) -> MetricState {
    MetricState::new(0.0, triple(rng, ranges.w), triple(rng, ranges.alpha), [0.0; 3]).expect("positive w is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateDraw {
    pub state: MetricState,
    pub f: f64,
    pub s12: [f64; 2],
}

/// Forward-generated certificate: `f` lies outside `[min α, max α]` by at least `0.1`.
pub fn random_certificate_state<R: Rng + ?Sized>(rng: &mut R, ranges: &StateRanges) -> Result<CertificateDraw> {
    let alpha = triple(rng, ranges.alpha);
    let lo = alpha.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let offset = rng.random_range(0.1..1.5);
    let f = if rng.random_bool(0.5) { hi + offset } else { lo - offset };
    let s12 = [sign(rng), sign(rng)];
    let w = separated_w(rng, ranges);
    Ok(CertificateDraw { state: forward_certificate_state(0.0, w, alpha, f, s12)?, f, s12 })
}

/// Forward-generated Kähler certificate (`f = 0`): all `α_i` share a sign.
pub fn random_kahler_state<R: Rng + ?Sized>(rng: &mut R, ranges: &StateRanges) -> Result<CertificateDraw> {
    let s = sign(rng);
    let top = ranges.alpha.1.abs().max(ranges.alpha.0.abs()).max(0.2);
    let alpha: [f64; 3] = std::array::from_fn(|_| s * rng.random_range(0.1..top));
    let s12 = [sign(rng), sign(rng)];
    let w = separated_w(rng, ranges);
    Ok(CertificateDraw { state: forward_certificate_state(0.0, w, alpha, 0.0, s12)?, f: 0.0, s12 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::double_root_certificate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn draws_are_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let r = StateRanges::default();
        assert_eq!(random_state(&mut a, &r), random_state(&mut b, &r));
    }

    #[test]
    fn random_states_respect_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = StateRanges::default();
        for _ in 0..200 {
            let s = random_state(&mut rng, &r);
            assert!(s.w.iter().all(|w| (0.5..3.0).contains(w)));
            assert!(s.alpha.iter().chain(s.eta.iter()).all(|v| (-2.0..2.0).contains(v)));
        }
    }

    #[test]
    fn certificate_draws_certify() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let d = random_certificate_state(&mut rng, &StateRanges::default()).unwrap();
            let c = double_root_certificate(&d.state, 1e-9).unwrap().unwrap();
            assert!((c.f - d.f).abs() <= 1e-9 * (1.0 + d.f.abs()));
        }
    }

    #[test]
    fn kahler_draws_have_zero_f() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let d = random_kahler_state(&mut rng, &StateRanges::default()).unwrap();
            let c = double_root_certificate(&d.state, 1e-9).unwrap().unwrap();
            assert!(c.f.abs() <= 1e-9);
        }
    }
}
