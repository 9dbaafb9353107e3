//! Randomized invariants, 1000 instances each.

mod common;

use proptest::prelude::*;

fn holds(check: fn(u64) -> common::Check, seed: u64) -> Result<(), TestCaseError> {
    check(seed).map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matrices_are_stochastic(seed in any::<u64>()) {
        holds(common::check_stochastic, seed)?;
    }

    #[test]
    fn transition_and_emission_zero_patterns(seed in any::<u64>()) {
        holds(common::check_zero_patterns, seed)?;
    }

    #[test]
    fn parameter_bijection_round_trips(seed in any::<u64>()) {
        holds(common::check_bijection, seed)?;
    }

    #[test]
    fn posterior_one_hot_and_exceedance_monotone(seed in any::<u64>()) {
        holds(common::check_posterior, seed)?;
    }

    #[test]
    fn imputation_keeps_observed_diagnoses(seed in any::<u64>()) {
        holds(common::check_imputation_monotone, seed)?;
    }

    #[test]
    fn recalibration_preserves_incidence(seed in any::<u64>()) {
        holds(common::check_incidence_identity, seed)?;
    }

    #[test]
    fn auroc_pair_count_and_rank_invariance(seed in any::<u64>()) {
        holds(common::check_auroc, seed)?;
    }

    #[test]
    fn treat_none_has_zero_net_benefit(seed in any::<u64>()) {
        holds(common::check_treat_none, seed)?;
    }

    #[test]
    fn small_instances_match_enumeration(seed in any::<u64>()) {
        holds(|s| common::check_oracle(s, 1e-10), seed)?;
    }
}
