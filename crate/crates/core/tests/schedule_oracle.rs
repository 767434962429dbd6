mod support;

use darkscope::model::Prefix6;
use darkscope::schedule::{generate_schedule, ScheduleParams};
use proptest::prelude::*;
use support::{brute_force_schedule, prefix_bits};

fn sets(base: Prefix6, n: usize) -> Vec<Vec<(u128, u8)>> {
    let s = generate_schedule(base, n, 0, ScheduleParams::default()).unwrap();
    (0..=n).map(|i| s.announced(i).unwrap().iter().map(prefix_bits).collect()).collect()
}

#[test]
fn sixteen_cycles_match_brute_force() {
    let base: Prefix6 = "2001:db8::/32".parse().unwrap();
    let ours = sets(base, 16);
    let oracle = brute_force_schedule(base.base().0, 32, 16);
    assert_eq!(ours, oracle);
    let mut last: Vec<u8> = ours[16].iter().map(|p| p.1).collect();
    last.sort();
    let mut expected: Vec<u8> = (33..=48).collect();
    expected.push(48);
    assert_eq!(last, expected);
}

proptest! {
    #[test]
    fn any_base_matches_brute_force(bits in any::<u128>(), len in 0u8..=100, n in 0usize..=20) {
        let base = Prefix6::truncating(darkscope::model::Address6(bits), len);
        let n = n.min(128 - len as usize);
        let ours = sets(base, n);
        prop_assert_eq!(&ours, &brute_force_schedule(base.base().0, len, n));
        for (k, set) in ours.iter().enumerate() {
            prop_assert_eq!(set.len(), k + 1);
            // Disjoint and covering: sorted blocks tile the base exactly.
            let mut next = base.base().0;
            for &(b, l) in set {
                prop_assert_eq!(b, next);
                next = next.wrapping_add(1u128.checked_shl(128 - l as u32).unwrap_or(0));
            }
            prop_assert_eq!(next, base.last().0.wrapping_add(1));
        }
    }
}
