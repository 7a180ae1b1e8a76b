//! Seeded random instances for the certification suites.
//!
//! Everything here is a pure function of the seed: the same seed yields the
//! same spec byte for byte. Sizes stay small (at most 12 input atoms, 6
//! representation atoms, 4 labels, 4 environments) so a few hundred seeds
//! run in well under a second.
//!
//! Seeds are stratified on purpose: even seeds allow deterministic labels
//! (so divergences can go infinite), seeds divisible by four force a target
//! atom outside the source's representation support (so the singular part
//! is exercised), and the remainder stay generic.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::measure::{
    Environment, InputAtom, MassPoint, Predictor, RepAtom, Representation, SingularExtension,
};

use super::{Composite, PredictorClass, Roles, ScenarioSpec, SCHEMA_VERSION};

fn rng_for(seed: u64, domain: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn simplex_point(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn point_mass(k: usize, label: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[label] = 1.0;
    v
}

/// Random mass points for one environment over the given atoms. Atoms keep
/// their listed order so the draw sequence is reproducible. In
/// `deterministic_labels` mode roughly half the atoms carry a single label.
fn fill_environment(
    rng: &mut ChaCha8Rng,
    name: &str,
    k: usize,
    atoms: &[InputAtom],
    deterministic_labels: bool,
) -> Environment {
    let mut raw: Vec<(InputAtom, usize, f64)> = Vec::new();
    for atom in atoms {
        if deterministic_labels && rng.gen_bool(0.5) {
            let label = rng.gen_range(0..k);
            raw.push((atom.clone(), label, rng.gen_range(0.05..1.0)));
        } else {
            for label in 0..k {
                raw.push((atom.clone(), label, rng.gen_range(0.05..1.0)));
            }
        }
    }
    let total: f64 = raw.iter().map(|(_, _, m)| m).sum();
    Environment::new(
        name,
        k,
        raw.into_iter()
            .map(|(atom, label, mass)| MassPoint {
                atom,
                label,
                mass: mass / total,
            })
            .collect(),
    )
    .expect("random environments are valid")
}

fn random_support(rng: &mut ChaCha8Rng, universe: &[InputAtom]) -> Vec<InputAtom> {
    let mut out: Vec<InputAtom> = universe
        .iter()
        .filter(|_| rng.gen_bool(0.8))
        .cloned()
        .collect();
    if out.is_empty() {
        out.push(universe[0].clone());
    }
    out
}

fn composite_pool(
    rng: &mut ChaCha8Rng,
    k: usize,
    reps: &[&Representation],
    count: usize,
) -> PredictorClass {
    let mut members = Vec::with_capacity(count);
    for index in 0..count {
        let rep = reps[rng.gen_range(0..reps.len())];
        let values: BTreeSet<RepAtom> = rep.map.values().cloned().collect();
        let outputs: BTreeMap<RepAtom, Vec<f64>> = values
            .into_iter()
            .map(|gamma| {
                let row = if rng.gen_bool(0.3) {
                    point_mass(k, rng.gen_range(0..k))
                } else {
                    simplex_point(rng, k)
                };
                (gamma, row)
            })
            .collect();
        let name = format!("h{index}");
        members.push(Composite {
            name: name.clone(),
            representation: rep.name.clone(),
            predictor: Predictor {
                name,
                k,
                outputs,
            },
        });
    }
    PredictorClass::Composites { members }
}

fn finish(
    name: String,
    k: usize,
    environments: Vec<Environment>,
    representations: Vec<Representation>,
    predictor_classes: BTreeMap<String, PredictorClass>,
    roles: Roles,
    manifest: Vec<String>,
) -> ScenarioSpec {
    ScenarioSpec {
        schema_version: SCHEMA_VERSION,
        name,
        k,
        environments,
        representations,
        predictor_classes,
        roles,
        manifest,
    }
    .validate()
    .expect("random scenarios validate")
}

/// One source, one target, one representation, one small composite pool.
pub fn pair_instance(seed: u64) -> ScenarioSpec {
    let mut rng = rng_for(seed, 1);
    let k = rng.gen_range(2..=4);
    let n_atoms = rng.gen_range(2..=12);
    let n_rep = rng.gen_range(1..=6usize);
    let deterministic = seed.is_multiple_of(2);
    let force_singular = seed.is_multiple_of(4);

    let mut universe: Vec<InputAtom> =
        (0..n_atoms).map(|i| InputAtom::new(format!("a{i}"))).collect();
    let mut map: BTreeMap<InputAtom, RepAtom> = universe
        .iter()
        .map(|a| (a.clone(), RepAtom::new(format!("g{}", rng.gen_range(0..n_rep)))))
        .collect();

    let source_atoms = random_support(&mut rng, &universe);
    let mut target_atoms = random_support(&mut rng, &universe);
    if force_singular {
        let extra = InputAtom::new("t_only");
        map.insert(extra.clone(), RepAtom::new("g_sing"));
        universe.push(extra.clone());
        target_atoms.push(extra);
    }

    let source = fill_environment(&mut rng, "source", k, &source_atoms, deterministic);
    let target = fill_environment(&mut rng, "target", k, &target_atoms, deterministic);
    let rep = Representation::new("phi", map);

    let pool_size = rng.gen_range(2..=6);
    let pool = composite_pool(&mut rng, k, &[&rep], pool_size);
    finish(
        format!("pair_{seed}"),
        k,
        vec![source, target],
        vec![rep],
        [("pool".to_string(), pool)].into_iter().collect(),
        Roles {
            sources: vec!["source".to_string()],
            target: "target".to_string(),
        },
        vec![format!("seeded pair instance, seed {seed}")],
    )
}

/// Both environments inhabit every atom of the universe, so no target mass
/// can escape the source's representation support. The fairness chain is
/// certified on these.
pub fn pair_instance_shared(seed: u64) -> ScenarioSpec {
    let mut rng = rng_for(seed, 7);
    let k = rng.gen_range(2..=4);
    let n_atoms = rng.gen_range(2..=10);
    let n_rep = rng.gen_range(1..=5usize);
    let deterministic = seed.is_multiple_of(2);

    let universe: Vec<InputAtom> =
        (0..n_atoms).map(|i| InputAtom::new(format!("a{i}"))).collect();
    let map: BTreeMap<InputAtom, RepAtom> = universe
        .iter()
        .map(|a| (a.clone(), RepAtom::new(format!("g{}", rng.gen_range(0..n_rep)))))
        .collect();

    let source = fill_environment(&mut rng, "source", k, &universe, deterministic);
    let target = fill_environment(&mut rng, "target", k, &universe, deterministic);
    let rep = Representation::new("phi", map);
    let pool_size = rng.gen_range(2..=6);
    let pool = composite_pool(&mut rng, k, &[&rep], pool_size);
    finish(
        format!("shared_{seed}"),
        k,
        vec![source, target],
        vec![rep],
        [("pool".to_string(), pool)].into_iter().collect(),
        Roles {
            sources: vec!["source".to_string()],
            target: "target".to_string(),
        },
        vec![format!(
            "seeded full-support pair instance, seed {seed}"
        )],
    )
}

/// Two or three sources plus a target over a shared atom universe, with a
/// fine representation and a coarsening of it, a composite pool, and a full
/// label-map class over both representations.
pub fn multi_instance(seed: u64) -> ScenarioSpec {
    multi_core(seed, 2, "multi", None)
}

/// Exactly three sources; otherwise as `multi_instance`.
pub fn trio_instance(seed: u64) -> ScenarioSpec {
    multi_core(seed, 8, "trio", Some(3))
}

fn multi_core(
    seed: u64,
    domain: u64,
    family: &str,
    forced_sources: Option<usize>,
) -> ScenarioSpec {
    let mut rng = rng_for(seed, domain);
    let k = rng.gen_range(2..=3);
    let n_atoms = rng.gen_range(3..=10);
    let n_fine = rng.gen_range(2..=3usize);
    let n_coarse = rng.gen_range(1..=n_fine);
    // drawn unconditionally so the draw sequence is the same in both families
    let drawn_sources = rng.gen_range(2..=3);
    let n_sources = forced_sources.unwrap_or(drawn_sources);
    let deterministic = seed.is_multiple_of(2);
    let force_singular = seed.is_multiple_of(3);

    let mut universe: Vec<InputAtom> =
        (0..n_atoms).map(|i| InputAtom::new(format!("a{i}"))).collect();
    let merge: Vec<usize> = (0..n_fine).map(|_| rng.gen_range(0..n_coarse)).collect();
    let mut fine_map = BTreeMap::new();
    let mut coarse_map = BTreeMap::new();
    for atom in &universe {
        let b = rng.gen_range(0..n_fine);
        fine_map.insert(atom.clone(), RepAtom::new(format!("gb{b}")));
        coarse_map.insert(atom.clone(), RepAtom::new(format!("ga{}", merge[b])));
    }

    let source_supports: Vec<Vec<InputAtom>> = (0..n_sources)
        .map(|_| random_support(&mut rng, &universe))
        .collect();
    let mut target_atoms = random_support(&mut rng, &universe);
    if force_singular {
        let extra = InputAtom::new("t_only");
        fine_map.insert(extra.clone(), RepAtom::new("gb_sing"));
        coarse_map.insert(extra.clone(), RepAtom::new("ga_sing"));
        universe.push(extra.clone());
        target_atoms.push(extra);
    }

    let mut environments = Vec::new();
    let mut source_names = Vec::new();
    for (i, support) in source_supports.iter().enumerate() {
        let name = format!("e{}", i + 1);
        environments.push(fill_environment(&mut rng, &name, k, support, deterministic));
        source_names.push(name);
    }
    environments.push(fill_environment(
        &mut rng,
        "e0",
        k,
        &target_atoms,
        deterministic,
    ));

    let fine = Representation::new("phi_b", fine_map);
    let coarse = Representation::new("phi_a", coarse_map);
    let pool_size = rng.gen_range(3..=8);
    let pool = composite_pool(&mut rng, k, &[&coarse, &fine], pool_size);
    let maps = PredictorClass::LabelMaps {
        representations: vec!["phi_a".to_string(), "phi_b".to_string()],
        with_conditionals: seed % 2 == 1,
    };
    finish(
        format!("{family}_{seed}"),
        k,
        environments,
        vec![coarse, fine],
        [
            ("pool".to_string(), pool),
            ("maps".to_string(), maps),
        ]
        .into_iter()
        .collect(),
        Roles {
            sources: source_names,
            target: "e0".to_string(),
        },
        vec![format!(
            "seeded multi-source instance, seed {seed}; phi_a coarsens phi_b"
        )],
    )
}

/// The three extension modes, with the custom table seeded over the
/// representation's full image.
pub fn extension_modes(
    seed: u64,
    rep: &Representation,
    k: usize,
) -> Vec<SingularExtension> {
    let mut rng = rng_for(seed, 3);
    let values: BTreeSet<RepAtom> = rep.map.values().cloned().collect();
    let table: BTreeMap<RepAtom, Vec<f64>> = values
        .into_iter()
        .map(|gamma| (gamma, simplex_point(&mut rng, k)))
        .collect();
    vec![
        SingularExtension::Uniform,
        SingularExtension::SourceMarginal,
        SingularExtension::Custom(table),
    ]
}

/// Partition the atoms into at most `max_groups` non-empty groups. With two
/// or more atoms the result always has at least two groups.
pub fn group_partition(
    seed: u64,
    atoms: &BTreeSet<RepAtom>,
    max_groups: usize,
) -> Vec<BTreeSet<RepAtom>> {
    let mut rng = rng_for(seed, 4);
    let upper = max_groups.min(atoms.len()).max(1);
    let n_groups = if upper == 1 { 1 } else { rng.gen_range(2..=upper) };
    let mut groups: Vec<BTreeSet<RepAtom>> = vec![BTreeSet::new(); n_groups];
    for atom in atoms {
        groups[rng.gen_range(0..n_groups)].insert(atom.clone());
    }
    groups.retain(|g| !g.is_empty());
    if groups.len() == 1 && atoms.len() >= 2 {
        let moved = groups[0].iter().next_back().cloned().unwrap();
        groups[0].remove(&moved);
        groups.push([moved].into_iter().collect());
    }
    groups
}

/// Split some multi-atom groups in two. Every output group is contained in
/// exactly one input group, so the result refines the input.
pub fn refine_partition(
    seed: u64,
    partition: &[BTreeSet<RepAtom>],
) -> Vec<BTreeSet<RepAtom>> {
    let mut rng = rng_for(seed, 5);
    let mut out = Vec::new();
    for group in partition {
        if group.len() >= 2 && rng.gen_bool(0.7) {
            let mut left = BTreeSet::new();
            let mut right = BTreeSet::new();
            for (i, atom) in group.iter().enumerate() {
                match i {
                    0 => left.insert(atom.clone()),
                    1 => right.insert(atom.clone()),
                    _ => {
                        if rng.gen_bool(0.5) {
                            left.insert(atom.clone())
                        } else {
                            right.insert(atom.clone())
                        }
                    }
                };
            }
            out.push(left);
            out.push(right);
        } else {
            out.push(group.clone());
        }
    }
    out
}

/// A source/target pair whose source conditionals are constant within each
/// group of the returned partition. Under that constancy the group equalized
/// odds chain is tight enough to certify end to end.
pub fn constancy_instance(seed: u64) -> (ScenarioSpec, Vec<BTreeSet<RepAtom>>) {
    let mut rng = rng_for(seed, 6);
    let k = rng.gen_range(2..=3);
    let n_atoms = rng.gen_range(2..=6usize);
    let atoms: Vec<InputAtom> =
        (0..n_atoms).map(|i| InputAtom::new(format!("u{i}"))).collect();
    let map: BTreeMap<InputAtom, RepAtom> = atoms
        .iter()
        .enumerate()
        .map(|(i, a)| (a.clone(), RepAtom::new(format!("g{i}"))))
        .collect();
    let rep_atoms: BTreeSet<RepAtom> = map.values().cloned().collect();
    let partition = group_partition(seed.wrapping_add(101), &rep_atoms, 3);

    let group_of = |gamma: &RepAtom| -> usize {
        partition
            .iter()
            .position(|g| g.contains(gamma))
            .expect("partition covers the image")
    };
    let profiles: Vec<Vec<f64>> = partition
        .iter()
        .map(|_| simplex_point(&mut rng, k))
        .collect();

    let mut source_points = Vec::new();
    let mut target_points = Vec::new();
    for atom in &atoms {
        let gamma = &map[atom];
        let profile = &profiles[group_of(gamma)];
        let source_mass = rng.gen_range(0.05..1.0);
        for (label, p) in profile.iter().enumerate() {
            source_points.push(MassPoint {
                atom: atom.clone(),
                label,
                mass: source_mass * p,
            });
        }
        let target_mass = rng.gen_range(0.05..1.0);
        let conditional = simplex_point(&mut rng, k);
        for (label, p) in conditional.iter().enumerate() {
            target_points.push(MassPoint {
                atom: atom.clone(),
                label,
                mass: target_mass * p,
            });
        }
    }
    let normalize = |points: Vec<MassPoint>| -> Vec<MassPoint> {
        let total: f64 = points.iter().map(|p| p.mass).sum();
        points
            .into_iter()
            .map(|p| MassPoint {
                mass: p.mass / total,
                ..p
            })
            .collect()
    };
    let source = Environment::new("source", k, normalize(source_points)).unwrap();
    let target = Environment::new("target", k, normalize(target_points)).unwrap();
    let rep = Representation::new("ident", map);
    let spec = finish(
        format!("constancy_{seed}"),
        k,
        vec![source, target],
        vec![rep],
        BTreeMap::new(),
        Roles {
            sources: vec!["source".to_string()],
            target: "target".to_string(),
        },
        vec![format!(
            "seeded instance with group-constant source conditionals, seed {seed}"
        )],
    );
    (spec, partition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::pushforward;

    #[test]
    fn instances_are_deterministic_per_seed() {
        for seed in [0u64, 1, 2, 3, 17] {
            assert_eq!(pair_instance(seed).to_json(), pair_instance(seed).to_json());
            assert_eq!(
                multi_instance(seed).to_json(),
                multi_instance(seed).to_json()
            );
        }
        assert_ne!(pair_instance(0).to_json(), pair_instance(1).to_json());
    }

    #[test]
    fn forced_singular_seeds_put_target_mass_off_source_support() {
        for seed in (0..40u64).step_by(4) {
            let spec = pair_instance(seed);
            let (source, target) = spec.role_pair().unwrap();
            let rep = &spec.representations[0];
            let push_s = pushforward(source, rep).unwrap();
            let push_t = pushforward(target, rep).unwrap();
            let singular: f64 = push_t
                .masses
                .iter()
                .filter(|(gamma, _)| push_s.mass(gamma) == 0.0)
                .map(|(_, m)| m)
                .sum();
            assert!(singular > 0.0, "seed {seed}");
        }
    }

    #[test]
    fn shared_support_instances_have_no_singular_mass() {
        for seed in 0..40u64 {
            let spec = pair_instance_shared(seed);
            let (source, target) = spec.role_pair().unwrap();
            let rep = &spec.representations[0];
            let push_s = pushforward(source, rep).unwrap();
            let push_t = pushforward(target, rep).unwrap();
            for (gamma, mass) in &push_t.masses {
                if *mass > 0.0 {
                    assert!(push_s.mass(gamma) > 0.0, "seed {seed} atom {gamma:?}");
                }
            }
        }
    }

    #[test]
    fn trio_instances_always_have_three_sources() {
        for seed in 0..20u64 {
            let spec = trio_instance(seed);
            assert_eq!(spec.roles.sources.len(), 3, "seed {seed}");
            assert_eq!(
                trio_instance(seed).to_json(),
                spec.to_json(),
                "seed {seed} not deterministic"
            );
        }
    }

    #[test]
    fn extension_modes_cover_the_image() {
        let spec = pair_instance(5);
        let rep = &spec.representations[0];
        let modes = extension_modes(5, rep, spec.k);
        assert_eq!(modes.len(), 3);
        match &modes[2] {
            SingularExtension::Custom(table) => {
                for gamma in rep.map.values() {
                    let row = &table[gamma];
                    assert_eq!(row.len(), spec.k);
                    let total: f64 = row.iter().sum();
                    assert!((total - 1.0).abs() < 1e-12);
                }
            }
            other => panic!("expected custom mode, got {other:?}"),
        }
    }

    #[test]
    fn partitions_cover_and_refine() {
        for seed in 0..30u64 {
            let spec = pair_instance(seed);
            let rep = &spec.representations[0];
            let atoms = spec.rep_domain(rep).unwrap();
            let partition = group_partition(seed, &atoms, 4);
            let union: BTreeSet<RepAtom> =
                partition.iter().flatten().cloned().collect();
            assert_eq!(union, atoms, "seed {seed}");
            let count: usize = partition.iter().map(BTreeSet::len).sum();
            assert_eq!(count, atoms.len(), "seed {seed} groups overlap");
            if atoms.len() >= 2 {
                assert!(partition.len() >= 2, "seed {seed}");
            }
            let refined = refine_partition(seed, &partition);
            for sub in &refined {
                assert!(
                    partition.iter().any(|g| sub.is_subset(g)),
                    "seed {seed} refinement broke containment"
                );
            }
            let re_union: BTreeSet<RepAtom> =
                refined.iter().flatten().cloned().collect();
            assert_eq!(re_union, atoms, "seed {seed}");
        }
    }

    #[test]
    fn constancy_instances_have_group_constant_source_conditionals() {
        use crate::measure::{conditional_table, SingularExtension};
        for seed in 0..25u64 {
            let (spec, partition) = constancy_instance(seed);
            let (source, _) = spec.role_pair().unwrap();
            let rep = &spec.representations[0];
            let domain = spec.rep_domain(rep).unwrap();
            let table =
                conditional_table(source, rep, &SingularExtension::Uniform, &domain)
                    .unwrap();
            for group in &partition {
                let rows: Vec<&Vec<f64>> = group.iter().map(|g| &table[g]).collect();
                for row in &rows[1..] {
                    for (a, b) in rows[0].iter().zip(row.iter()) {
                        assert!((a - b).abs() < 1e-12, "seed {seed}");
                    }
                }
            }
        }
    }
}
