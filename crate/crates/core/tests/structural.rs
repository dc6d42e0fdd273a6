#[path = "oracles/structural.rs"]
mod oracle;

#[test]
fn conv1d_matches_naive_loops_exactly() {
    oracle::conv1d_matches_naive_loops_exactly();
}

#[test]
fn bilstm_halves_are_causal_and_anticausal() {
    oracle::bilstm_halves_are_causal_and_anticausal();
}

#[test]
fn bilstm_is_two_unidirectional_runs() {
    oracle::bilstm_is_two_unidirectional_runs();
}

#[test]
fn attention_matches_direct_sum() {
    oracle::attention_matches_direct_sum();
}

#[test]
fn attention_is_uniform_over_identical_states() {
    oracle::attention_is_uniform_over_identical_states();
}
