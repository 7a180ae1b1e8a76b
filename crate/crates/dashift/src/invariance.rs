//! Conditional invariance across environments, and exhaustive minimization
//! over finite hypothesis classes with a per-environment optimality
//! constraint.
//!
//! The constrained minimization is solved by enumeration, which is exact on
//! the finite instances this crate works with. The solver returns the whole
//! optimum set: downstream claims quantify over every optimal pair, so
//! returning one representative would not be enough to check them.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::ext::ExtReal;
use crate::measure::{
    conditional_table, pushforward, Environment, MeasureError, Predictor, RepAtom,
    Representation, SingularExtension,
};
use crate::risk::{risk, Loss, RiskError};

pub const ECI_TOLERANCE: f64 = 1e-9;
/// Slack allowed both in the per-environment optimality constraint and in
/// collecting the total-risk optimum set.
pub const IRM_TOLERANCE: f64 = 1e-9;
/// Largest predictor-representation product any enumeration will visit.
pub const ENUMERATION_LIMIT: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum InvarianceError {
    #[error("conditional invariance needs at least two environments")]
    TooFewEnvironments,
    #[error("hypothesis class enumeration would visit {0} pairs, limit {ENUMERATION_LIMIT}")]
    ClassTooLarge(usize),
    #[error("hypothesis class has no predictors or no representations")]
    EmptyClass,
    #[error("no representation satisfies conditional invariance on these environments")]
    NoEciRep,
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// One cell where two environments' conditionals disagree beyond tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct EciViolation {
    pub env_a: String,
    pub env_b: String,
    pub atom: RepAtom,
    pub label: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EciReport {
    pub representation: String,
    pub tolerance: f64,
    pub holds: bool,
    /// Largest conditional gap over shared-support atoms, including ones
    /// within tolerance.
    pub max_gap: f64,
    pub violations: Vec<EciViolation>,
}

/// Checks that label conditionals agree across every environment pair on
/// every representation atom both reach. Atoms outside the shared support
/// are not compared: the invariance notion only constrains the
/// intersection.
pub fn check_eci(
    envs: &[&Environment],
    rep: &Representation,
    tol: f64,
) -> Result<EciReport, InvarianceError> {
    if envs.len() < 2 {
        return Err(InvarianceError::TooFewEnvironments);
    }
    let mut supports = Vec::with_capacity(envs.len());
    let mut tables = Vec::with_capacity(envs.len());
    for env in envs {
        let image = rep.image_of(env)?;
        let push = pushforward(env, rep)?;
        let support: BTreeSet<RepAtom> = push.support().into_iter().cloned().collect();
        tables.push(conditional_table(env, rep, &SingularExtension::Uniform, &image)?);
        supports.push(support);
    }
    let mut max_gap = 0.0f64;
    let mut violations = Vec::new();
    for i in 0..envs.len() {
        for j in i + 1..envs.len() {
            for atom in supports[i].intersection(&supports[j]) {
                let a = &tables[i][atom];
                let b = &tables[j][atom];
                for label in 0..envs[i].k {
                    let gap = (a[label] - b[label]).abs();
                    max_gap = max_gap.max(gap);
                    if gap > tol {
                        violations.push(EciViolation {
                            env_a: envs[i].name.clone(),
                            env_b: envs[j].name.clone(),
                            atom: atom.clone(),
                            label,
                            gap,
                        });
                    }
                }
            }
        }
    }
    Ok(EciReport {
        representation: rep.name.clone(),
        tolerance: tol,
        holds: violations.is_empty(),
        max_gap,
        violations,
    })
}

/// Finite product class: every predictor may be read through every
/// representation.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisClass {
    pub predictors: Vec<Predictor>,
    pub representations: Vec<Representation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IrmOptimum {
    pub predictor: Predictor,
    pub representation: Representation,
    pub per_env_risks: Vec<ExtReal>,
    pub total: ExtReal,
}

#[derive(Debug, Clone, Serialize)]
pub struct IrmSolution {
    pub loss: Loss,
    pub environments: Vec<String>,
    /// Pairs meeting the per-environment optimality constraint.
    pub feasible_count: usize,
    /// All feasible pairs whose summed risk is minimal (within tolerance).
    pub optima: Vec<IrmOptimum>,
}

/// Exhaustive constrained minimization: a pair (h, φ) is feasible when h
/// attains, for every environment, the minimum risk over the predictor list
/// through φ (within tolerance); the optima are the feasible pairs with
/// minimal total risk. An empty feasible set yields an empty optimum list,
/// which is an answer, not an error.
pub fn irm_solve(
    envs: &[&Environment],
    class: &HypothesisClass,
    loss: Loss,
) -> Result<IrmSolution, InvarianceError> {
    if class.predictors.is_empty() || class.representations.is_empty() {
        return Err(InvarianceError::EmptyClass);
    }
    let pairs = class.predictors.len() * class.representations.len();
    if pairs > ENUMERATION_LIMIT {
        return Err(InvarianceError::ClassTooLarge(pairs));
    }
    let mut feasible: Vec<IrmOptimum> = Vec::new();
    for rep in &class.representations {
        // risks[e][h], plus the per-environment minimum over h
        let mut risks: Vec<Vec<ExtReal>> = Vec::with_capacity(envs.len());
        let mut mins: Vec<ExtReal> = Vec::with_capacity(envs.len());
        for env in envs {
            let row: Vec<ExtReal> = class
                .predictors
                .iter()
                .map(|h| risk(env, h, rep, loss))
                .collect::<Result<_, _>>()?;
            let min = row.iter().copied().min().expect("non-empty predictors");
            risks.push(row);
            mins.push(min);
        }
        for (hi, h) in class.predictors.iter().enumerate() {
            let ok = (0..envs.len()).all(|ei| risks[ei][hi].le_with_tol(mins[ei], IRM_TOLERANCE));
            if !ok {
                continue;
            }
            let per_env: Vec<ExtReal> = (0..envs.len()).map(|ei| risks[ei][hi]).collect();
            let total = ExtReal::sum(per_env.iter().copied())
                .expect("risks are nonnegative, the sum cannot be indeterminate");
            feasible.push(IrmOptimum {
                predictor: h.clone(),
                representation: rep.clone(),
                per_env_risks: per_env,
                total,
            });
        }
    }
    let feasible_count = feasible.len();
    let best = feasible.iter().map(|o| o.total).min();
    let optima = match best {
        Some(best) => feasible
            .into_iter()
            .filter(|o| o.total.le_with_tol(best, IRM_TOLERANCE))
            .collect(),
        None => Vec::new(),
    };
    Ok(IrmSolution {
        loss,
        environments: envs.iter().map(|e| e.name.clone()).collect(),
        feasible_count,
        optima,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ErmEciSolution {
    /// Representations that passed the invariance check, in declared order.
    pub survivors: Vec<String>,
    pub representation: Representation,
    /// Conditional predictor pooled over the environments; by invariance it
    /// restricts to each environment's own conditional on shared atoms.
    pub predictor: Predictor,
    pub per_env_risks: Vec<ExtReal>,
    pub total: ExtReal,
}

/// Pooled label conditional across environments: joint masses are averaged
/// with equal environment weights, then normalized per representation atom.
fn pooled_conditional(
    envs: &[&Environment],
    rep: &Representation,
    domain: &BTreeSet<RepAtom>,
) -> Result<Predictor, MeasureError> {
    let k = envs[0].k;
    let mut joint: BTreeMap<RepAtom, Vec<f64>> = BTreeMap::new();
    for env in envs {
        for p in &env.atoms {
            let gamma = rep.apply(&p.atom)?;
            let entry = joint.entry(gamma.clone()).or_insert_with(|| vec![0.0; k]);
            entry[p.label] += p.mass / envs.len() as f64;
        }
    }
    let outputs: BTreeMap<RepAtom, Vec<f64>> = domain
        .iter()
        .map(|gamma| {
            let v = match joint.get(gamma) {
                Some(masses) => {
                    let total: f64 = masses.iter().sum();
                    masses.iter().map(|m| m / total).collect()
                }
                // domain is the union of environment images, so every atom
                // has positive pooled mass; kept total for safety
                None => vec![1.0 / k as f64; k],
            };
            (gamma.clone(), v)
        })
        .collect();
    Ok(Predictor {
        name: format!("universal[{}]", rep.name),
        k,
        outputs,
    })
}

/// Filters the representations through the invariance check, equips each
/// survivor with its pooled conditional predictor, and returns the survivor
/// with the lowest summed cross-entropy risk. Ties go to the earliest
/// declared representation.
pub fn erm_eci_solve(
    envs: &[&Environment],
    reps: &[&Representation],
) -> Result<ErmEciSolution, InvarianceError> {
    let mut survivors = Vec::new();
    let mut best: Option<ErmEciSolution> = None;
    for rep in reps {
        if envs.len() >= 2 && !check_eci(envs, rep, ECI_TOLERANCE)?.holds {
            continue;
        }
        survivors.push(rep.name.clone());
        let mut domain = BTreeSet::new();
        for env in envs {
            domain.extend(rep.image_of(env)?);
        }
        let predictor = pooled_conditional(envs, rep, &domain)?;
        let per_env: Vec<ExtReal> = envs
            .iter()
            .map(|env| risk(env, &predictor, rep, Loss::CrossEntropy))
            .collect::<Result<_, _>>()?;
        let total = ExtReal::sum(per_env.iter().copied())
            .expect("risks are nonnegative, the sum cannot be indeterminate");
        // only a strict improvement beyond tolerance replaces the incumbent,
        // so ties resolve to the earliest declared representation
        let replace = match &best {
            Some(current) => !current.total.le_with_tol(total, IRM_TOLERANCE),
            None => true,
        };
        if replace {
            best = Some(ErmEciSolution {
                survivors: Vec::new(),
                representation: (*rep).clone(),
                predictor,
                per_env_risks: per_env,
                total,
            });
        }
    }
    match best {
        Some(mut solution) => {
            solution.survivors = survivors;
            Ok(solution)
        }
        None => Err(InvarianceError::NoEciRep),
    }
}

/// Per-representation summary of the zero-one optima.
#[derive(Debug, Clone, Serialize)]
pub struct ZeroOneRepRow {
    pub representation: String,
    pub optima_count: usize,
    pub eci_holds: bool,
    pub eci_max_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    /// Whether every environment's conditional predictor, per
    /// representation, appears in the predictor list (within 1e-9).
    pub a2_satisfied: bool,
    pub a2_missing: Vec<String>,
    /// Under cross-entropy with A2: do the constrained optima and the
    /// invariance-filtered solution induce the same input-level predictor?
    pub ce_equivalent: Option<bool>,
    pub ce_optima_count: usize,
    pub ce_note: String,
    /// Zero-one optima grouped by representation, each with its invariance
    /// verdict; any failing row witnesses the non-equivalence.
    pub zero_one: Vec<ZeroOneRepRow>,
    pub zero_one_violates_eci: bool,
}

/// Composite input-level map of (h, φ) on the union of environment supports.
fn induced_map(
    envs: &[&Environment],
    h: &Predictor,
    rep: &Representation,
) -> Result<BTreeMap<String, Vec<f64>>, InvarianceError> {
    let mut out = BTreeMap::new();
    for env in envs {
        for p in &env.atoms {
            let gamma = rep.apply(&p.atom)?;
            let v = h
                .output(gamma)
                .ok_or_else(|| RiskError::PredictorUndefinedAtom {
                    predictor: h.name.clone(),
                    atom: gamma.0.clone(),
                    env: env.name.clone(),
                })?;
            out.insert(p.atom.0.clone(), v.to_vec());
        }
    }
    Ok(out)
}

fn maps_agree(a: &BTreeMap<String, Vec<f64>>, b: &BTreeMap<String, Vec<f64>>, tol: f64) -> bool {
    a.len() == b.len()
        && a.iter().all(|(atom, va)| {
            b.get(atom).is_some_and(|vb| {
                va.iter().zip(vb).all(|(x, y)| (x - y).abs() <= tol)
            })
        })
}

/// Runs the constrained solver under both losses and reports how its optima
/// relate to conditional invariance: agreement with the invariance-filtered
/// solution under cross-entropy (when the class is rich enough to contain
/// the conditionals), and invariance violations among zero-one optima.
pub fn irm_eci_equivalence_report(
    envs: &[&Environment],
    class: &HypothesisClass,
) -> Result<EquivalenceReport, InvarianceError> {
    if envs.len() < 2 {
        return Err(InvarianceError::TooFewEnvironments);
    }
    let mut a2_missing = Vec::new();
    for rep in &class.representations {
        for env in envs {
            let image = rep.image_of(env)?;
            let table = conditional_table(env, rep, &SingularExtension::Uniform, &image)?;
            let found = class.predictors.iter().any(|p| {
                image.iter().all(|gamma| {
                    p.output(gamma).is_some_and(|v| {
                        v.iter()
                            .zip(&table[gamma])
                            .all(|(x, y)| (x - y).abs() <= IRM_TOLERANCE)
                    })
                })
            });
            if !found {
                a2_missing.push(format!("{}/{}", env.name, rep.name));
            }
        }
    }
    let a2_satisfied = a2_missing.is_empty();

    let (ce_equivalent, ce_optima_count, ce_note) = if a2_satisfied {
        let ce = irm_solve(envs, class, Loss::CrossEntropy)?;
        let rep_refs: Vec<&Representation> = class.representations.iter().collect();
        match erm_eci_solve(envs, &rep_refs) {
            Ok(erm) => {
                let reference = induced_map(envs, &erm.predictor, &erm.representation)?;
                let all_agree = !ce.optima.is_empty()
                    && ce.optima.iter().try_fold(true, |acc, o| {
                        induced_map(envs, &o.predictor, &o.representation)
                            .map(|m| acc && maps_agree(&m, &reference, IRM_TOLERANCE))
                    })?;
                let note = if all_agree {
                    "every cross-entropy optimum induces the invariance solution's composite"
                        .to_string()
                } else {
                    "cross-entropy optima and the invariance solution differ".to_string()
                };
                (Some(all_agree), ce.optima.len(), note)
            }
            Err(InvarianceError::NoEciRep) => (
                None,
                0,
                "no representation passes the invariance check; nothing to compare".to_string(),
            ),
            Err(e) => return Err(e),
        }
    } else {
        (
            None,
            0,
            "class lacks some conditional predictors; equivalence claim skipped".to_string(),
        )
    };

    let zero_one_solution = irm_solve(envs, class, Loss::ZeroOne)?;
    let mut by_rep: BTreeMap<String, usize> = BTreeMap::new();
    for o in &zero_one_solution.optima {
        *by_rep.entry(o.representation.name.clone()).or_insert(0) += 1;
    }
    let mut zero_one = Vec::new();
    let mut zero_one_violates_eci = false;
    for (rep_name, count) in by_rep {
        let rep = class
            .representations
            .iter()
            .find(|r| r.name == rep_name)
            .expect("optimum representation comes from the class");
        let eci = check_eci(envs, rep, ECI_TOLERANCE)?;
        zero_one_violates_eci |= !eci.holds;
        zero_one.push(ZeroOneRepRow {
            representation: rep_name,
            optima_count: count,
            eci_holds: eci.holds,
            eci_max_gap: eci.max_gap,
        });
    }
    Ok(EquivalenceReport {
        a2_satisfied,
        a2_missing,
        ce_equivalent,
        ce_optima_count,
        ce_note,
        zero_one,
        zero_one_violates_eci,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::builtin;
    use crate::scenarios::ResolvedClass;

    fn cmnist_sources(spec: &crate::scenarios::ScenarioSpec) -> Vec<&Environment> {
        vec![
            spec.environment("e1").unwrap(),
            spec.environment("e2").unwrap(),
        ]
    }

    #[test]
    fn shape_projection_is_invariant_and_pair_projection_is_not() {
        let spec = builtin::cmnist_latent();
        let envs = cmnist_sources(&spec);
        let phi_x = spec.representation("phi_x").unwrap();
        let report = check_eci(&envs, phi_x, ECI_TOLERANCE).unwrap();
        assert!(report.holds, "max gap {}", report.max_gap);

        let phi_xz = spec.representation("phi_xz").unwrap();
        let report = check_eci(&envs, phi_xz, ECI_TOLERANCE).unwrap();
        assert!(!report.holds);
        // per-atom gaps are 15/364 on the aligned cells, 5/28 on the rest
        assert!((report.max_gap - 5.0 / 28.0).abs() < 1e-12);
        let aligned_gap = report
            .violations
            .iter()
            .find(|v| v.atom.0 == "xz_00")
            .unwrap()
            .gap;
        assert!((aligned_gap - 15.0 / 364.0).abs() < 1e-12);
    }

    #[test]
    fn eci_is_symmetric_in_environment_order() {
        let spec = builtin::cmnist_latent();
        let envs = cmnist_sources(&spec);
        let reversed: Vec<&Environment> = envs.iter().rev().copied().collect();
        let rep = spec.representation("phi_z").unwrap();
        let a = check_eci(&envs, rep, ECI_TOLERANCE).unwrap();
        let b = check_eci(&reversed, rep, ECI_TOLERANCE).unwrap();
        assert_eq!(a.holds, b.holds);
        assert!((a.max_gap - b.max_gap).abs() < 1e-15);
        assert!((a.max_gap - 0.1).abs() < 1e-12);
    }

    fn resolved_product(
        spec: &crate::scenarios::ScenarioSpec,
        class: &str,
    ) -> HypothesisClass {
        match spec.resolve_class(class).unwrap() {
            ResolvedClass::Product(c) => c,
            _ => panic!("expected a product class"),
        }
    }

    #[test]
    fn zero_one_optima_all_predict_the_color_bit() {
        let spec = builtin::cmnist_latent();
        let envs = cmnist_sources(&spec);
        let class = resolved_product(&spec, "label_maps");
        let solution = irm_solve(&envs, &class, Loss::ZeroOne).unwrap();
        assert!(!solution.optima.is_empty());
        // 64 maps through the color projection, 16 through the pair one
        assert_eq!(solution.optima.len(), 80);
        for o in &solution.optima {
            let total = o.total.as_f64().unwrap();
            assert!((total - 0.3).abs() < 1e-12, "total {total}");
            let map = induced_map(&envs, &o.predictor, &o.representation).unwrap();
            for (atom, v) in map {
                let z: usize = atom[3..].parse().unwrap();
                assert!(
                    (v[z] - 1.0).abs() < 1e-12,
                    "{}/{} does not predict the color bit at {atom}",
                    o.predictor.name,
                    o.representation.name,
                );
            }
        }
    }

    #[test]
    fn cross_entropy_optima_use_the_shape_conditional() {
        let spec = builtin::cmnist_latent();
        let envs = cmnist_sources(&spec);
        let class = resolved_product(&spec, "label_maps_ce");
        let solution = irm_solve(&envs, &class, Loss::CrossEntropy).unwrap();
        assert!(!solution.optima.is_empty());
        let expected = 2.0 * crate::risk::entropy(&[0.75, 0.25]);
        for o in &solution.optima {
            assert_eq!(o.representation.name, "phi_x");
            let total = o.total.as_f64().unwrap();
            assert!((total - expected).abs() < 1e-9, "total {total}");
        }
    }

    #[test]
    fn invariance_filtered_solution_picks_the_shape_projection() {
        let spec = builtin::cmnist_latent();
        let envs = cmnist_sources(&spec);
        let reps: Vec<&Representation> = spec.representations.iter().collect();
        let solution = erm_eci_solve(&envs, &reps).unwrap();
        assert_eq!(solution.representation.name, "phi_x");
        assert_eq!(solution.survivors, vec!["phi_x".to_string()]);
        let expected = 2.0 * crate::risk::entropy(&[0.75, 0.25]);
        assert!((solution.total.as_f64().unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn equivalence_report_matches_the_loss_split() {
        let spec = builtin::cmnist_latent();
        let envs = cmnist_sources(&spec);
        let class = resolved_product(&spec, "label_maps_ce");
        let report = irm_eci_equivalence_report(&envs, &class).unwrap();
        assert!(report.a2_satisfied, "missing {:?}", report.a2_missing);
        assert_eq!(report.ce_equivalent, Some(true));
        assert!(report.zero_one_violates_eci);
        for row in &report.zero_one {
            assert!(!row.eci_holds);
            assert!(row.eci_max_gap >= 0.0412);
        }
    }

    #[test]
    fn plain_map_class_fails_the_richness_check() {
        let spec = builtin::cmnist_latent();
        let envs = cmnist_sources(&spec);
        let class = resolved_product(&spec, "label_maps");
        let report = irm_eci_equivalence_report(&envs, &class).unwrap();
        assert!(!report.a2_satisfied);
        assert_eq!(report.ce_equivalent, None);
    }

    #[test]
    fn single_environment_reduces_to_plain_minimization() {
        let spec = builtin::cmnist_latent();
        let e1 = spec.environment("e1").unwrap();
        let class = resolved_product(&spec, "label_maps");
        let solution = irm_solve(&[e1], &class, Loss::ZeroOne).unwrap();
        // best zero-one risk on e1 is the color bit's flip rate
        for o in &solution.optima {
            assert!((o.total.as_f64().unwrap() - 0.1).abs() < 1e-12);
        }
        assert!(!solution.optima.is_empty());
    }
}
