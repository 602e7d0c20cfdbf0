use gvae_core::groupcheck::{cayley_table, check_group_axioms, check_table_axioms, eta_pair_deviation, CyclicTuple};
use gvae_core::groupify::{act, eta, GroupElement};
use proptest::prelude::*;

fn brute_order(values: &[u64], n: u64) -> u64 {
    (1..=n).find(|k| values.iter().all(|&a| (k * a) % n == 0)).unwrap()
}

fn tuple() -> impl Strategy<Value = (Vec<u64>, Vec<u64>, u64)> {
    (2u64..=16, 1usize..=5).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(0..n, m),
            prop::collection::vec(0..n, m),
            Just(n),
        )
    })
}

proptest! {
    #[test]
    fn order_matches_brute_force((a, _, n) in tuple()) {
        let t = CyclicTuple::new(a.clone(), n).unwrap();
        prop_assert_eq!(t.order_of(), brute_order(&a, n));
        // k·t returns to the identity exactly at the order.
        let mut acc = t.clone();
        for _ in 1..t.order_of() {
            prop_assert!(!acc.is_identity());
            acc = acc.compose(&t).unwrap();
        }
        prop_assert!(acc.is_identity());
    }

    #[test]
    fn compose_and_inverse_are_coordinatewise((a, b, n) in tuple()) {
        let (ta, tb) = (CyclicTuple::new(a.clone(), n).unwrap(), CyclicTuple::new(b.clone(), n).unwrap());
        let ab = ta.compose(&tb).unwrap();
        for k in 0..a.len() {
            prop_assert_eq!(ab.values[k], (a[k] + b[k]) % n);
        }
        prop_assert_eq!(&ab, &tb.compose(&ta).unwrap());
        prop_assert!(ta.compose(&ta.inverse()).unwrap().is_identity());
        prop_assert_eq!(ta.compose(&CyclicTuple::identity(n, a.len())).unwrap(), ta);
    }

    #[test]
    fn eta_turns_addition_into_rotation((a, b, n) in tuple()) {
        let (fa, fb): (Vec<f64>, Vec<f64>) = (a.iter().map(|&v| v as f64).collect(), b.iter().map(|&v| v as f64).collect());
        prop_assert!(eta_pair_deviation(&fa, &fb, n as usize) < 1e-9);
    }

    #[test]
    fn eta_is_periodic(z in prop::collection::vec(-50.0f64..50.0, 1..6), n in 2usize..20, k in -3i32..4) {
        let shifted: Vec<f64> = z.iter().map(|v| v + (k * n as i32) as f64).collect();
        let (e, s) = (eta(&z, n), eta(&shifted, n));
        for i in 0..z.len() {
            prop_assert!((e.sin_part[i] - s.sin_part[i]).abs() < 1e-9);
            prop_assert!((e.cos_part[i] - s.cos_part[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn action_is_compatible_with_composition((a, b, n) in tuple(), z0 in -20.0f64..20.0) {
        let m = a.len();
        let z: Vec<f64> = (0..m + 1).map(|k| z0 + k as f64 * 0.37).collect();
        let ga = GroupElement::new(a.iter().map(|&v| v as usize).collect(), n as usize).unwrap();
        let gb = GroupElement::new(b.iter().map(|&v| v as usize).collect(), n as usize).unwrap();
        let gab = GroupElement::new(a.iter().zip(&b).map(|(x, y)| (x + y) as usize).collect(), n as usize).unwrap();
        let two_step = act(&ga, &act(&gb, &z).unwrap()).unwrap();
        let one_step = act(&gab, &z).unwrap();
        for k in 0..m {
            prop_assert!((two_step[k] - one_step[k]).abs() < 1e-9);
        }
        // Coordinates beyond the group's arity are untouched.
        prop_assert_eq!(one_step[m], z[m]);
    }
}

#[test]
fn small_groups_satisfy_the_axioms() {
    for n in 2..=6 {
        for m in 1..=3 {
            assert!(check_group_axioms(n, m).unwrap(), "(Z/{n})^{m}");
        }
    }
}

#[test]
fn broken_table_is_rejected() {
    let mut table = cayley_table(4, 2);
    table[3][5] = table[3][6];
    assert!(!check_table_axioms(&table));
}
