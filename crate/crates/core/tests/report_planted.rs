//! Report tables on planted simulator corpora.

mod support;

use support::plant_checks as check;
use support::{multi_telescope_corpus, planted_corpus};

#[test]
fn protocol_table_matches_planted_mix() {
    check::protocols(&planted_corpus());
}

#[test]
fn top_ports_rank_planted_ports() {
    check::ports(&planted_corpus());
}

#[test]
fn heavy_hitter_is_exactly_the_flooder() {
    check::flooder(&planted_corpus(), 0.10);
}

#[test]
fn per_prefix_cumulative_matches_naive_oracle() {
    check::cumulative(&planted_corpus());
}

#[test]
fn discovery_onsets_follow_first_packets() {
    check::discovery(&planted_corpus());
}

#[test]
fn intersections_recover_planted_telescope_sets() {
    check::intersections(&multi_telescope_corpus());
}
