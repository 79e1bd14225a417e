mod common;

use common::oracle::{brute_force, random_instance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snn_vpr::ensemble::fuse_responses;

#[test]
fn fused_ranking_equals_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..300 {
        let (m, responses) = random_instance(&mut rng);
        let fused = fuse_responses(&m, &responses).unwrap();
        let expected = brute_force(&m, &responses);
        assert_eq!(fused.ranking, expected);
        assert_eq!(fused.no_evidence, expected.iter().all(|&(_, s)| s == 0));
    }
}
