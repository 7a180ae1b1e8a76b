//! Randomized invariants of the numeric kernel. Anything that must hold for
//! every input, not just the seeded families, lives here.

use std::collections::BTreeMap;

use proptest::prelude::*;

use dashift::decomp::lebesgue_split;
use dashift::ext::ExtReal;
use dashift::measure::{
    tv_distance, Environment, InputAtom, MassPoint, RepAtom, ReprDistribution,
};
use dashift::report::{canonical_json, format_sig};
use dashift::risk::{cross_entropy, entropy, kl};

fn prob_vec(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6..1.0f64, k).prop_map(|v| {
        let total: f64 = v.iter().sum();
        v.into_iter().map(|x| x / total).collect()
    })
}

/// Distribution over atoms a0..a5 with a controllable number of zero-mass
/// holes, normalized to total mass one.
fn rep_dist() -> impl Strategy<Value = ReprDistribution> {
    prop::collection::vec(prop_oneof![3 => 1e-6..1.0f64, 1 => Just(0.0)], 6)
        .prop_filter("needs some mass", |v| v.iter().sum::<f64>() > 0.0)
        .prop_map(|v| {
            let total: f64 = v.iter().sum();
            ReprDistribution {
                masses: v
                    .into_iter()
                    .enumerate()
                    .map(|(i, m)| (RepAtom::new(format!("a{i}")), m / total))
                    .collect(),
            }
        })
}

proptest! {
    #[test]
    fn formatted_floats_parse_back_to_twelve_digits(
        x in prop_oneof![
            -1e12..1e12f64,
            -1.0..1.0f64,
            (-1e-6..1e-6f64).prop_map(|x| x * 1e-6),
        ]
    ) {
        let text = format_sig(x);
        let back: f64 = text.parse().expect("formatted floats are valid literals");
        let err = (back - x).abs();
        prop_assert!(
            err <= x.abs() * 5e-12,
            "{x} -> {text} -> {back}, error {err}"
        );
    }

    #[test]
    fn equal_floats_format_equally_and_reformat_fixes(x in -1e9..1e9f64) {
        let once = format_sig(x);
        prop_assert_eq!(&once, &format_sig(x));
        // formatting the parsed-back value must be a fixpoint
        let back: f64 = once.parse().unwrap();
        prop_assert_eq!(&once, &format_sig(back));
    }

    #[test]
    fn canonical_json_is_idempotent(entries in prop::collection::btree_map(
        "[a-z]{1,8}", -1e6..1e6f64, 0..8,
    )) {
        let value = serde_json::to_value(&entries).unwrap();
        let text = canonical_json(&value);
        let reparsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(text, canonical_json(&reparsed));
    }

    #[test]
    fn tv_is_a_metric_bounded_by_one(p in rep_dist(), q in rep_dist(), r in rep_dist()) {
        prop_assert!(tv_distance(&p, &p) == 0.0);
        prop_assert_eq!(tv_distance(&p, &q), tv_distance(&q, &p));
        let d_pq = tv_distance(&p, &q);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d_pq));
        prop_assert!(d_pq <= tv_distance(&p, &r) + tv_distance(&r, &q) + 1e-12);
    }

    #[test]
    fn entropy_lies_between_zero_and_log_k(p in (2usize..=6).prop_flat_map(prob_vec)) {
        let h = entropy(&p);
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_the_diagonal(
        (p, q) in (2usize..=6).prop_flat_map(|k| (prob_vec(k), prob_vec(k)))
    ) {
        match kl(&q, &p) {
            ExtReal::Finite(d) => prop_assert!(d >= -1e-12, "kl {d}"),
            ExtReal::PosInf => {}
            ExtReal::NegInf => prop_assert!(false, "kl can never be -inf"),
        }
        let self_kl = kl(&p, &p).as_f64().expect("same support");
        prop_assert!(self_kl.abs() <= 1e-12);
    }

    #[test]
    fn cross_entropy_dominates_entropy(
        (p, q) in (2usize..=6).prop_flat_map(|k| (prob_vec(k), prob_vec(k)))
    ) {
        // Gibbs: H(q, p) >= H(q), equality only at p = q
        let h = ExtReal::finite(entropy(&q));
        prop_assert!(h.le_with_tol(cross_entropy(&p, &q), 1e-12));
    }

    #[test]
    fn extended_sum_dominates_each_nonnegative_term(
        terms in prop::collection::vec(
            prop_oneof![4 => (0.0..10.0f64).prop_map(ExtReal::finite), 1 => Just(ExtReal::PosInf)],
            1..8,
        )
    ) {
        let total = ExtReal::sum(terms.iter().copied()).expect("no -inf present");
        for &t in &terms {
            prop_assert!(t.le_with_tol(total, 1e-9), "{t} > {total}");
        }
    }

    #[test]
    fn lebesgue_split_partitions_the_target_mass(s in rep_dist(), t in rep_dist()) {
        let split = lebesgue_split(&s, &t);
        for atom in split.mu_t0.keys() {
            prop_assert!(s.mass(atom) > 0.0);
            prop_assert!(!split.mu_t1.contains_key(atom));
        }
        for atom in split.mu_t1.keys() {
            prop_assert!(s.mass(atom) == 0.0);
        }
        let replayed: f64 =
            split.mu_t0.values().sum::<f64>() + split.mu_t1.values().sum::<f64>();
        prop_assert!((replayed - t.total()).abs() <= 1e-12);
        // the split is atomwise exact, so each piece matches the target mass
        for (atom, &m) in split.mu_t0.iter().chain(&split.mu_t1) {
            prop_assert!(m == t.mass(atom));
        }
    }

    #[test]
    fn environment_masses_renormalize_to_one(
        raw in prop::collection::vec((0usize..2, 1e-3..1.0f64), 1..10),
        slack in -5e-7..5e-7f64,
    ) {
        let total: f64 = raw.iter().map(|(_, m)| m).sum();
        let scale = (1.0 + slack) / total;
        let atoms: Vec<MassPoint> = raw
            .iter()
            .enumerate()
            .map(|(i, (label, mass))| MassPoint {
                atom: InputAtom::new(format!("x{i}")),
                label: *label,
                mass: mass * scale,
            })
            .collect();
        let env = Environment::new("prop", 2, atoms).expect("slack is inside tolerance");
        let sum: f64 = env.atoms.iter().map(|p| p.mass).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12, "total {sum}");
    }

    #[test]
    fn serialized_ext_reals_reuse_the_float_channel(x in -1e6..1e6f64) {
        let finite = serde_json::to_value(ExtReal::finite(x)).unwrap();
        prop_assert_eq!(finite.as_f64(), Some(x));
        let inf = serde_json::to_value(ExtReal::PosInf).unwrap();
        prop_assert_eq!(inf.as_str(), Some("inf"));
    }
}

#[test]
fn tv_needs_no_shared_support() {
    let single = |name: &str| ReprDistribution {
        masses: BTreeMap::from([(RepAtom::new(name), 1.0)]),
    };
    assert_eq!(tv_distance(&single("left"), &single("right")), 1.0);
}
