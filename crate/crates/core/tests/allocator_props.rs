use maddr::allocator::{allocate_multi_source, allocate_single_source, AllocationInput, PathParams};
use maddr::model::NetworkParams;
use proptest::prelude::*;

fn paths() -> impl Strategy<Value = Vec<(u32, f64)>> {
    prop::collection::vec((1u32..=10, 0.005f64..0.1), 1..=6)
}

fn input(paths: &[(u32, f64)], packets: u64, t_dist: f64) -> AllocationInput {
    AllocationInput {
        params: NetworkParams::standard_multisource(),
        packets,
        paths: paths.iter().map(|&(h, tau)| PathParams::new(h, tau)).collect(),
        t_dist,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn zero_contention_matches_single_source(p in paths(), d in 0u64..=5000, t in 0.5f64..12.0) {
        let inp = input(&p, d, t);
        let single = allocate_single_source(&inp).unwrap();
        let multi = allocate_multi_source(&inp).unwrap();
        prop_assert_eq!(&single.quotas, &multi.quotas);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&single.raw_quotas), bits(&multi.raw_quotas));
        prop_assert_eq!(single.budget.to_bits(), multi.budget.to_bits());
    }

    #[test]
    fn more_contention_never_raises_a_quota(
        p in paths(),
        d in 1u64..=2000,
        t in 0.5f64..12.0,
        j in 0usize..6,
        c in 0u32..=10,
    ) {
        let j = j % p.len();
        let mut inp = input(&p, d, t);
        let limit = inp.paths[j].hops + 1;
        let lo = c.min(limit - 1);
        inp.paths[j].contention = lo;
        let before = allocate_multi_source(&inp);
        inp.paths[j].contention = lo + 1;
        let after = allocate_multi_source(&inp);
        // A single saturated path has no weight left to place packets on.
        if let (Ok(b), Ok(a)) = (before, after) {
            prop_assert!(a.quotas[j] <= b.quotas[j], "{:?} -> {:?}", b.quotas, a.quotas);
            prop_assert_eq!(a.total(), d);
        }
    }

    #[test]
    fn saturated_path_gets_nothing(p in paths(), d in 0u64..=2000, j in 0usize..6) {
        prop_assume!(p.len() > 1);
        let j = j % p.len();
        let mut inp = input(&p, d, 4.0);
        inp.paths[j].contention = inp.paths[j].hops + 1;
        let a = allocate_multi_source(&inp).unwrap();
        prop_assert_eq!(a.quotas[j], 0);
        prop_assert_eq!(a.total(), d);
    }
}
