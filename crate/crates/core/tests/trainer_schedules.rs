use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scribe_core::trainer::{mix_sample, Curriculum, MixingRamp, Source};

const RAMP: u64 = 300_000;

pub fn ramp_endpoints_and_midpoint_are_exact() {
    let ramp = MixingRamp::standard(RAMP);
    assert_eq!(ramp.p_real(0), 0.0);
    assert_eq!(ramp.p_real(RAMP / 2), 0.4);
    assert_eq!(ramp.p_real(RAMP), 0.8);
    assert_eq!(ramp.p_real(10 * RAMP), 0.8);
}

pub fn first_step_always_draws_synthetic() {
    let ramp = MixingRamp::standard(RAMP);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!((0..10_000).all(|_| mix_sample(0, &ramp, &mut rng, 50) == Source::Synthetic));
}

pub fn real_fraction_at_ramp_end() {
    let ramp = MixingRamp::standard(RAMP);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 100_000;
    let real = (0..n).filter(|_| matches!(mix_sample(RAMP, &ramp, &mut rng, 50), Source::Real(i) if i < 50)).count();
    let frac = real as f64 / n as f64;
    assert!((0.79..=0.81).contains(&frac), "real fraction {frac}");
}

pub fn curriculum_is_monotone_and_bounded_for_configured_budgets() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for l_max in [40, 15, 30, 80] {
        let c = Curriculum::new(l_max, 50).unwrap();
        assert_eq!(c.lines(0), 1);
        assert_eq!(c.lines(c.ramp_end()), l_max);
        let mut steps: Vec<u64> = (0..10_000).map(|_| rand::Rng::gen_range(&mut rng, 0..4 * c.ramp_end())).collect();
        steps.sort_unstable();
        let lines: Vec<usize> = steps.iter().map(|&s| c.lines(s)).collect();
        assert!(lines.windows(2).all(|w| w[0] <= w[1]));
        assert!(lines.iter().all(|&l| (1..=l_max).contains(&l)));
    }
}

proptest! {
    #[test]
    fn ramp_is_monotone_for_any_length(length in 1u64..1_000_000, a in 0u64..2_000_000, b in 0u64..2_000_000) {
        let ramp = MixingRamp::standard(length);
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(ramp.p_real(lo) <= ramp.p_real(hi));
        prop_assert_eq!(ramp.p_real(0), 0.0);
        prop_assert_eq!(ramp.p_real(length), 0.8);
    }

    #[test]
    fn curriculum_never_decreases(l_max in 1usize..100, every in 1u64..500, a in 0u64..100_000, b in 0u64..100_000) {
        let c = Curriculum::new(l_max, every).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(c.lines(lo) <= c.lines(hi));
        prop_assert!(c.lines(hi) <= l_max);
    }
}

mod tests {
    #[test]
    fn ramp_endpoints_and_midpoint_are_exact() {
        super::ramp_endpoints_and_midpoint_are_exact()
    }

    #[test]
    fn first_step_always_draws_synthetic() {
        super::first_step_always_draws_synthetic()
    }

    #[test]
    fn real_fraction_at_ramp_end() {
        super::real_fraction_at_ramp_end()
    }

    #[test]
    fn curriculum_is_monotone_and_bounded_for_configured_budgets() {
        super::curriculum_is_monotone_and_bounded_for_configured_budgets()
    }
}
