//! Discrete environments, representations, and label conditionals.
//!
//! An [`Environment`] is a finite joint distribution over (input atom, label)
//! pairs. A [`Representation`] is a total map from input atoms to
//! representation atoms; pushing an environment forward through it yields a
//! [`ReprDistribution`] over representation atoms together with a label
//! conditional at each atom of positive mass. Conditionals at atoms the
//! environment does not reach are resolved by a [`SingularExtension`], which
//! is what makes cross-environment risk evaluation total.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sum-to-one slack accepted on input; masses are renormalized afterwards.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Slack accepted on probability vectors supplied from outside.
pub const DIST_TOLERANCE: f64 = 1e-9;

#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct InputAtom(pub String);

#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct RepAtom(pub String);

impl InputAtom {
    pub fn new(s: impl Into<String>) -> Self {
        InputAtom(s.into())
    }
}

impl RepAtom {
    pub fn new(s: impl Into<String>) -> Self {
        RepAtom(s.into())
    }
}

impl std::fmt::Display for InputAtom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Display for RepAtom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("environment {env}: atom {atom} label {label} has negative mass {mass}")]
    NegativeMass {
        env: String,
        atom: String,
        label: usize,
        mass: f64,
    },
    #[error("environment {env}: total mass {total} is outside 1 +/- {MASS_TOLERANCE}")]
    MassSumOutOfTolerance { env: String, total: f64 },
    #[error("environment {env}: duplicate entry for atom {atom} label {label}")]
    DuplicateAtom {
        env: String,
        atom: String,
        label: usize,
    },
    #[error("environment {env}: label {label} is outside 0..{k}")]
    LabelOutOfRange { env: String, label: usize, k: usize },
    #[error("environment {env}: needs at least two label classes, got {k}")]
    TooFewLabels { env: String, k: usize },
    #[error("environment {env}: no atoms")]
    EmptyEnvironment { env: String },
    #[error("representation {rep} does not map input atom {atom}")]
    UnmappedAtom { rep: String, atom: String },
    #[error("distribution entry for {atom} is negative ({mass})")]
    NegativeDistributionMass { atom: String, mass: f64 },
    #[error("probability vector for {context} sums to {total}, expected 1")]
    BadProbabilityVector { context: String, total: f64 },
    #[error("probability vector for {context} has length {got}, expected {expected}")]
    BadVectorLength {
        context: String,
        got: usize,
        expected: usize,
    },
}

/// One (input atom, label) mass point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassPoint {
    pub atom: InputAtom,
    pub label: usize,
    pub mass: f64,
}

/// A finite joint distribution over (input atom, label) pairs.
///
/// Constructed through [`Environment::new`], which checks nonnegativity,
/// label range, uniqueness of (atom, label) entries, and that the total mass
/// is within [`MASS_TOLERANCE`] of one before renormalizing exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    pub name: String,
    /// Number of label classes; labels range over 0..k.
    pub k: usize,
    pub atoms: Vec<MassPoint>,
}

impl Environment {
    pub fn new(
        name: impl Into<String>,
        k: usize,
        atoms: Vec<MassPoint>,
    ) -> Result<Environment, MeasureError> {
        let env = Environment {
            name: name.into(),
            k,
            atoms,
        };
        env.validated()
    }

    /// Runs every construction-time check and renormalizes the total mass.
    /// Renormalization is skipped when the total is already within a few ulps
    /// of one, so validation is idempotent byte-for-byte.
    pub fn validated(mut self) -> Result<Environment, MeasureError> {
        if self.k < 2 {
            return Err(MeasureError::TooFewLabels {
                env: self.name,
                k: self.k,
            });
        }
        if self.atoms.is_empty() {
            return Err(MeasureError::EmptyEnvironment { env: self.name });
        }
        let mut seen = BTreeSet::new();
        let mut total = 0.0;
        for p in &self.atoms {
            if p.label >= self.k {
                return Err(MeasureError::LabelOutOfRange {
                    env: self.name,
                    label: p.label,
                    k: self.k,
                });
            }
            if p.mass < 0.0 {
                return Err(MeasureError::NegativeMass {
                    env: self.name,
                    atom: p.atom.0.clone(),
                    label: p.label,
                    mass: p.mass,
                });
            }
            if !seen.insert((p.atom.clone(), p.label)) {
                return Err(MeasureError::DuplicateAtom {
                    env: self.name,
                    atom: p.atom.0.clone(),
                    label: p.label,
                });
            }
            total += p.mass;
        }
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(MeasureError::MassSumOutOfTolerance {
                env: self.name,
                total,
            });
        }
        let fixpoint_slack = 1e-15 * self.atoms.len() as f64;
        if (total - 1.0).abs() > fixpoint_slack {
            for p in &mut self.atoms {
                p.mass /= total;
            }
        }
        Ok(self)
    }

    /// Input atoms carrying positive mass, deduplicated.
    pub fn support(&self) -> BTreeSet<&InputAtom> {
        self.atoms
            .iter()
            .filter(|p| p.mass > 0.0)
            .map(|p| &p.atom)
            .collect()
    }

    /// Marginal distribution of the label.
    pub fn label_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for p in &self.atoms {
            out[p.label] += p.mass;
        }
        out
    }
}

/// Total map from input atoms to representation atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Representation {
    pub name: String,
    pub map: BTreeMap<InputAtom, RepAtom>,
}

impl Representation {
    pub fn new(name: impl Into<String>, map: BTreeMap<InputAtom, RepAtom>) -> Self {
        Representation {
            name: name.into(),
            map,
        }
    }

    pub fn apply(&self, atom: &InputAtom) -> Result<&RepAtom, MeasureError> {
        self.map.get(atom).ok_or_else(|| MeasureError::UnmappedAtom {
            rep: self.name.clone(),
            atom: atom.0.clone(),
        })
    }

    /// Identity representation on the input atoms of `env`. Used for mixture
    /// environments whose input atoms already are representation atoms.
    pub fn identity_for(env: &Environment, name: impl Into<String>) -> Self {
        let map = env
            .atoms
            .iter()
            .map(|p| (p.atom.clone(), RepAtom(p.atom.0.clone())))
            .collect();
        Representation::new(name, map)
    }

    /// Representation atoms reachable from `env`'s positive-mass atoms.
    pub fn image_of(&self, env: &Environment) -> Result<BTreeSet<RepAtom>, MeasureError> {
        let mut out = BTreeSet::new();
        for atom in env.support() {
            out.insert(self.apply(atom)?.clone());
        }
        Ok(out)
    }
}

/// Distribution over representation atoms (a pushforward marginal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReprDistribution {
    pub masses: BTreeMap<RepAtom, f64>,
}

impl ReprDistribution {
    pub fn mass(&self, atom: &RepAtom) -> f64 {
        self.masses.get(atom).copied().unwrap_or(0.0)
    }

    pub fn support(&self) -> BTreeSet<&RepAtom> {
        self.masses
            .iter()
            .filter(|(_, m)| **m > 0.0)
            .map(|(a, _)| a)
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.masses.values().sum()
    }
}

/// Pushforward of `env`'s input marginal through `rep`.
pub fn pushforward(
    env: &Environment,
    rep: &Representation,
) -> Result<ReprDistribution, MeasureError> {
    let mut masses: BTreeMap<RepAtom, f64> = BTreeMap::new();
    for p in &env.atoms {
        let gamma = rep.apply(&p.atom)?;
        *masses.entry(gamma.clone()).or_insert(0.0) += p.mass;
    }
    Ok(ReprDistribution { masses })
}

/// Probability-vector predictor over representation atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predictor {
    pub name: String,
    pub k: usize,
    pub outputs: BTreeMap<RepAtom, Vec<f64>>,
}

impl Predictor {
    pub fn new(
        name: impl Into<String>,
        k: usize,
        outputs: BTreeMap<RepAtom, Vec<f64>>,
    ) -> Result<Predictor, MeasureError> {
        let p = Predictor {
            name: name.into(),
            k,
            outputs,
        };
        for (atom, v) in &p.outputs {
            check_prob_vector(v, p.k, &format!("predictor {} at {}", p.name, atom))?;
        }
        Ok(p)
    }

    pub fn output(&self, atom: &RepAtom) -> Option<&[f64]> {
        self.outputs.get(atom).map(|v| v.as_slice())
    }

    /// Point-mass predictor from a label map, ties not applicable.
    pub fn from_label_map(
        name: impl Into<String>,
        k: usize,
        map: BTreeMap<RepAtom, usize>,
    ) -> Predictor {
        let outputs = map
            .into_iter()
            .map(|(atom, label)| {
                let mut v = vec![0.0; k];
                v[label] = 1.0;
                (atom, v)
            })
            .collect();
        Predictor {
            name: name.into(),
            k,
            outputs,
        }
    }
}

pub fn check_prob_vector(v: &[f64], k: usize, context: &str) -> Result<(), MeasureError> {
    if v.len() != k {
        return Err(MeasureError::BadVectorLength {
            context: context.to_string(),
            got: v.len(),
            expected: k,
        });
    }
    let mut total = 0.0;
    for &x in v {
        if x < 0.0 {
            return Err(MeasureError::NegativeDistributionMass {
                atom: context.to_string(),
                mass: x,
            });
        }
        total += x;
    }
    if (total - 1.0).abs() > DIST_TOLERANCE {
        return Err(MeasureError::BadProbabilityVector {
            context: context.to_string(),
            total,
        });
    }
    Ok(())
}

/// Rule resolving label conditionals at representation atoms the source
/// environment gives zero mass.
///
/// `Custom` entries override specific atoms; atoms absent from the custom
/// table fall back to the uniform vector so that conditionals stay total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SingularExtension {
    Uniform,
    SourceMarginal,
    Custom(BTreeMap<RepAtom, Vec<f64>>),
}

impl SingularExtension {
    pub fn validate(&self, k: usize) -> Result<(), MeasureError> {
        if let SingularExtension::Custom(table) = self {
            for (atom, v) in table {
                check_prob_vector(v, k, &format!("custom extension at {atom}"))?;
            }
        }
        Ok(())
    }

    /// Vector used at a representation atom outside the environment support.
    /// `marginal` is the label marginal of the environment being extended.
    pub fn resolve(&self, atom: &RepAtom, k: usize, marginal: &[f64]) -> Vec<f64> {
        match self {
            SingularExtension::Uniform => vec![1.0 / k as f64; k],
            SingularExtension::SourceMarginal => marginal.to_vec(),
            SingularExtension::Custom(table) => table
                .get(atom)
                .cloned()
                .unwrap_or_else(|| vec![1.0 / k as f64; k]),
        }
    }

    /// Short form used in report metadata.
    pub fn mode_name(&self) -> &'static str {
        match self {
            SingularExtension::Uniform => "uniform",
            SingularExtension::SourceMarginal => "source-marginal",
            SingularExtension::Custom(_) => "custom",
        }
    }
}

/// Label conditionals of `env` through `rep`, one vector per representation
/// atom in `domain`. Atoms with zero pushforward mass get the extension.
pub fn conditional_table(
    env: &Environment,
    rep: &Representation,
    ext: &SingularExtension,
    domain: &BTreeSet<RepAtom>,
) -> Result<BTreeMap<RepAtom, Vec<f64>>, MeasureError> {
    ext.validate(env.k)?;
    let mut joint: BTreeMap<RepAtom, Vec<f64>> = BTreeMap::new();
    for p in &env.atoms {
        let gamma = rep.apply(&p.atom)?;
        let entry = joint
            .entry(gamma.clone())
            .or_insert_with(|| vec![0.0; env.k]);
        entry[p.label] += p.mass;
    }
    let marginal = env.label_marginal();
    let mut out = BTreeMap::new();
    for gamma in domain {
        let vector = match joint.get(gamma) {
            Some(masses) => {
                let total: f64 = masses.iter().sum();
                if total > 0.0 {
                    masses.iter().map(|m| m / total).collect()
                } else {
                    ext.resolve(gamma, env.k, &marginal)
                }
            }
            None => ext.resolve(gamma, env.k, &marginal),
        };
        out.insert(gamma.clone(), vector);
    }
    Ok(out)
}

/// Label conditional of `env` through `rep` at a single representation atom.
pub fn conditional_label(
    env: &Environment,
    rep: &Representation,
    gamma: &RepAtom,
    ext: &SingularExtension,
) -> Result<Vec<f64>, MeasureError> {
    let mut domain = BTreeSet::new();
    domain.insert(gamma.clone());
    let table = conditional_table(env, rep, ext, &domain)?;
    Ok(table.into_iter().next().expect("singleton domain").1)
}

/// Total-variation distance between two representation marginals:
/// half the l1 distance over the union of their supports.
pub fn tv_distance(p: &ReprDistribution, q: &ReprDistribution) -> f64 {
    let mut atoms: BTreeSet<&RepAtom> = p.masses.keys().collect();
    atoms.extend(q.masses.keys());
    0.5 * atoms
        .into_iter()
        .map(|a| (p.mass(a) - q.mass(a)).abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(pairs: &[(&str, f64)]) -> ReprDistribution {
        ReprDistribution {
            masses: pairs
                .iter()
                .map(|(a, m)| (RepAtom::new(*a), *m))
                .collect(),
        }
    }

    pub(crate) fn two_atom_env() -> Environment {
        Environment::new(
            "e",
            2,
            vec![
                MassPoint {
                    atom: InputAtom::new("a"),
                    label: 0,
                    mass: 0.5,
                },
                MassPoint {
                    atom: InputAtom::new("a"),
                    label: 1,
                    mass: 0.25,
                },
                MassPoint {
                    atom: InputAtom::new("b"),
                    label: 1,
                    mass: 0.25,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn rejects_out_of_tolerance_mass() {
        let err = Environment::new(
            "bad",
            2,
            vec![MassPoint {
                atom: InputAtom::new("a"),
                label: 0,
                mass: 1.2,
            }],
        )
        .unwrap_err();
        assert!(matches!(err, MeasureError::MassSumOutOfTolerance { .. }));
    }

    #[test]
    fn renormalizes_small_slack_exactly_once() {
        let env = Environment::new(
            "e",
            2,
            vec![
                MassPoint {
                    atom: InputAtom::new("a"),
                    label: 0,
                    mass: 0.5000001,
                },
                MassPoint {
                    atom: InputAtom::new("b"),
                    label: 1,
                    mass: 0.5,
                },
            ],
        )
        .unwrap();
        let total: f64 = env.atoms.iter().map(|p| p.mass).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // a second validation pass must not move the masses again
        let again = env.clone().validated().unwrap();
        assert_eq!(env, again);
    }

    #[test]
    fn rejects_duplicate_atom_label_pairs() {
        let err = Environment::new(
            "dup",
            2,
            vec![
                MassPoint {
                    atom: InputAtom::new("a"),
                    label: 0,
                    mass: 0.5,
                },
                MassPoint {
                    atom: InputAtom::new("a"),
                    label: 0,
                    mass: 0.5,
                },
            ],
        )
        .unwrap_err();
        assert!(matches!(err, MeasureError::DuplicateAtom { .. }));
    }

    #[test]
    fn pushforward_preserves_total_mass() {
        let env = two_atom_env();
        let rep = Representation::new(
            "phi",
            [
                (InputAtom::new("a"), RepAtom::new("r")),
                (InputAtom::new("b"), RepAtom::new("r")),
            ]
            .into_iter()
            .collect(),
        );
        let push = pushforward(&env, &rep).unwrap();
        assert!((push.total() - 1.0).abs() < 1e-12);
        assert!((push.mass(&RepAtom::new("r")) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pushforward_fails_on_unmapped_atom() {
        let env = two_atom_env();
        let rep = Representation::new(
            "phi",
            [(InputAtom::new("a"), RepAtom::new("r"))].into_iter().collect(),
        );
        assert!(matches!(
            pushforward(&env, &rep),
            Err(MeasureError::UnmappedAtom { .. })
        ));
    }

    #[test]
    fn conditional_at_supported_atom_matches_ratio() {
        let env = two_atom_env();
        let rep = Representation::new(
            "phi",
            [
                (InputAtom::new("a"), RepAtom::new("ra")),
                (InputAtom::new("b"), RepAtom::new("rb")),
            ]
            .into_iter()
            .collect(),
        );
        let cond = conditional_label(
            &env,
            &rep,
            &RepAtom::new("ra"),
            &SingularExtension::Uniform,
        )
        .unwrap();
        assert!((cond[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((cond[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn conditional_outside_support_uses_extension() {
        let env = two_atom_env();
        let rep = Representation::new(
            "phi",
            [
                (InputAtom::new("a"), RepAtom::new("ra")),
                (InputAtom::new("b"), RepAtom::new("ra")),
            ]
            .into_iter()
            .collect(),
        );
        let off = RepAtom::new("never");
        let uniform =
            conditional_label(&env, &rep, &off, &SingularExtension::Uniform).unwrap();
        assert_eq!(uniform, vec![0.5, 0.5]);
        let marginal =
            conditional_label(&env, &rep, &off, &SingularExtension::SourceMarginal)
                .unwrap();
        assert!((marginal[0] - 0.5).abs() < 1e-12);
        assert!((marginal[1] - 0.5).abs() < 1e-12);
        let custom: BTreeMap<RepAtom, Vec<f64>> =
            [(off.clone(), vec![0.9, 0.1])].into_iter().collect();
        let got =
            conditional_label(&env, &rep, &off, &SingularExtension::Custom(custom))
                .unwrap();
        assert_eq!(got, vec![0.9, 0.1]);
    }

    #[test]
    fn conditionals_sum_to_one_over_the_whole_domain() {
        let env = two_atom_env();
        let rep = Representation::new(
            "phi",
            [
                (InputAtom::new("a"), RepAtom::new("ra")),
                (InputAtom::new("b"), RepAtom::new("rb")),
            ]
            .into_iter()
            .collect(),
        );
        let domain: BTreeSet<RepAtom> =
            [RepAtom::new("ra"), RepAtom::new("rb"), RepAtom::new("off")]
                .into_iter()
                .collect();
        let table =
            conditional_table(&env, &rep, &SingularExtension::Uniform, &domain).unwrap();
        for (atom, v) in table {
            let total: f64 = v.iter().sum();
            assert!(
                (total - 1.0).abs() < 1e-12,
                "conditional at {atom} sums to {total}"
            );
        }
    }

    #[test]
    fn tv_overlapping_supports() {
        let p = dist(&[("a", 0.5), ("b", 0.5)]);
        let q = dist(&[("a", 0.25), ("b", 0.25), ("c", 0.5)]);
        assert!((tv_distance(&p, &q) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tv_disjoint_supports_is_one() {
        let p = dist(&[("a", 1.0)]);
        let q = dist(&[("b", 1.0)]);
        assert!((tv_distance(&p, &q) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tv_is_invariant_under_atom_renaming() {
        let p = dist(&[("a", 0.3), ("b", 0.7)]);
        let q = dist(&[("a", 0.6), ("b", 0.4)]);
        let rename = |d: &ReprDistribution| ReprDistribution {
            masses: d
                .masses
                .iter()
                .map(|(a, m)| (RepAtom::new(format!("x_{}", a.0)), *m))
                .collect(),
        };
        assert!((tv_distance(&p, &q) - tv_distance(&rename(&p), &rename(&q))).abs()
            < 1e-15);
    }
}
