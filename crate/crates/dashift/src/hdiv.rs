//! Divergence bounds over finite predictor sets, the bridge from the
//! divergence route back to the exact additive decomposition, and the
//! alignment surrogate used by adversarial representation matching.
//!
//! Risk differences can hit ∞ − ∞ under cross-entropy. Those cells carry no
//! information, so they are excluded from every supremum and surfaced as
//! flags on the report instead of poisoning the bound.

use serde::Serialize;
use thiserror::Error;

use crate::decomp::{decompose, DecompError};
use crate::ext::ExtReal;
use crate::measure::{
    pushforward, tv_distance, Environment, MeasureError, Predictor, Representation,
    SingularExtension,
};
use crate::multi::{Flagged, SourceSet};
use crate::risk::{risk, Loss, RiskError};

/// Largest ordered-pair count any divergence enumeration will visit.
pub const PAIR_LIMIT: usize = 1_000_000;
pub const BOUND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HdivError {
    #[error("predictor set is empty")]
    EmptySet,
    #[error("predictor set enumeration would visit {0} ordered pairs, limit {PAIR_LIMIT}")]
    SetTooLarge(usize),
    #[error("hypothesis {0} is not a member of the predictor set")]
    NotInSet(String),
    #[error("risk difference {a} vs {b} on {env} is indeterminate (both risks infinite)")]
    IndeterminateDiff { a: String, b: String, env: String },
    #[error("the bridge bound is stated for cross-entropy only")]
    LossUnsupported,
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Decomp(#[from] DecompError),
}

/// Composite hypothesis: a predictor read through a fixed representation.
#[derive(Debug, Clone, Serialize)]
pub struct Hypothesis {
    pub name: String,
    pub rep: Representation,
    pub predictor: Predictor,
}

impl Hypothesis {
    pub fn risk_on(&self, env: &Environment, loss: Loss) -> Result<ExtReal, RiskError> {
        risk(env, &self.predictor, &self.rep, loss)
    }
}

fn abs_diff(a: ExtReal, b: ExtReal) -> Option<ExtReal> {
    match a.checked_sub(b) {
        Ok(ExtReal::Finite(x)) => Some(ExtReal::finite(x.abs())),
        Ok(_) => Some(ExtReal::PosInf),
        Err(_) => None,
    }
}

/// |R^e(h) − R^e(h')|. Errors when both risks are infinite.
pub fn risk_diff(
    env: &Environment,
    h: &Hypothesis,
    h_prime: &Hypothesis,
    loss: Loss,
) -> Result<ExtReal, HdivError> {
    let a = h.risk_on(env, loss)?;
    let b = h_prime.risk_on(env, loss)?;
    abs_diff(a, b).ok_or_else(|| HdivError::IndeterminateDiff {
        a: h.name.clone(),
        b: h_prime.name.clone(),
        env: env.name.clone(),
    })
}

fn check_set(set: &[Hypothesis]) -> Result<(), HdivError> {
    if set.is_empty() {
        return Err(HdivError::EmptySet);
    }
    let pairs = set.len() * set.len();
    if pairs > PAIR_LIMIT {
        return Err(HdivError::SetTooLarge(pairs));
    }
    Ok(())
}

/// Twice the largest shift, between the two environments, of the pairwise
/// risk differences over the set. Symmetric; zero when e = e'. Pairs whose
/// difference is indeterminate in either environment are skipped and named
/// in the flags.
pub fn hdh_divergence(
    e: &Environment,
    e_prime: &Environment,
    set: &[Hypothesis],
    loss: Loss,
) -> Result<Flagged, HdivError> {
    check_set(set)?;
    let risks_e: Vec<ExtReal> = set
        .iter()
        .map(|h| h.risk_on(e, loss))
        .collect::<Result<_, _>>()?;
    let risks_p: Vec<ExtReal> = set
        .iter()
        .map(|h| h.risk_on(e_prime, loss))
        .collect::<Result<_, _>>()?;
    let mut sup = ExtReal::ZERO;
    let mut indeterminate = Vec::new();
    for (i, a) in set.iter().enumerate() {
        for (j, b) in set.iter().enumerate() {
            let nu_e = abs_diff(risks_e[i], risks_e[j]);
            let nu_p = abs_diff(risks_p[i], risks_p[j]);
            let shift = nu_e.zip(nu_p).and_then(|(x, y)| abs_diff(x, y));
            match shift {
                Some(v) => sup = sup.max(v),
                None => indeterminate.push(format!(
                    "{}/{} on {} vs {}",
                    a.name, b.name, e.name, e_prime.name
                )),
            }
        }
    }
    Ok(Flagged {
        value: sup.weighted(2.0),
        indeterminate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DivergenceBoundReport {
    pub source: String,
    pub target: String,
    pub hypothesis: String,
    pub loss: Loss,
    /// inf over the set of the summed risks on both environments.
    pub ideal_joint: ExtReal,
    pub hypothesis_source_risk: ExtReal,
    pub hdh: ExtReal,
    pub lhs: ExtReal,
    pub rhs: ExtReal,
    pub slack: Option<f64>,
    pub certified: bool,
    pub indeterminate: Vec<String>,
}

fn member_index(set: &[Hypothesis], h: &Hypothesis) -> Result<usize, HdivError> {
    set.iter()
        .position(|m| m.name == h.name)
        .ok_or_else(|| HdivError::NotInSet(h.name.clone()))
}

/// Target risk against ideal joint risk + source risk + divergence. The
/// hypothesis must belong to the set: the divergence only controls
/// differences inside it.
pub fn single_source_div_bound(
    s: &Environment,
    t: &Environment,
    h: &Hypothesis,
    set: &[Hypothesis],
    loss: Loss,
) -> Result<DivergenceBoundReport, HdivError> {
    check_set(set)?;
    member_index(set, h)?;
    let ideal_joint = set
        .iter()
        .map(|m| {
            let joint = m.risk_on(t, loss)?.checked_add(m.risk_on(s, loss)?);
            Ok(joint.expect("risks are nonnegative, the sum cannot be indeterminate"))
        })
        .collect::<Result<Vec<_>, HdivError>>()?
        .into_iter()
        .min()
        .expect("set is nonempty");
    let hdh = hdh_divergence(s, t, set, loss)?;
    let lhs = h.risk_on(t, loss)?;
    let source_risk = h.risk_on(s, loss)?;
    let rhs = ExtReal::sum([ideal_joint, source_risk, hdh.value])
        .expect("all three terms are nonnegative");
    let slack = match (lhs, rhs) {
        (ExtReal::Finite(l), ExtReal::Finite(r)) => Some(r - l),
        _ => None,
    };
    Ok(DivergenceBoundReport {
        source: s.name.clone(),
        target: t.name.clone(),
        hypothesis: h.name.clone(),
        loss,
        ideal_joint,
        hypothesis_source_risk: source_risk,
        hdh: hdh.value,
        lhs,
        rhs,
        slack,
        certified: lhs.le_with_tol(rhs, BOUND_TOLERANCE) && hdh.indeterminate.is_empty(),
        indeterminate: hdh.indeterminate,
    })
}

/// Half the smallest divergence from the target to any source.
pub fn h_misalignment(
    set: &SourceSet,
    hset: &[Hypothesis],
    loss: Loss,
) -> Result<Flagged, HdivError> {
    check_set(hset)?;
    let mut best: Option<ExtReal> = None;
    let mut indeterminate = Vec::new();
    for source in &set.sources {
        let d = hdh_divergence(set.target, source, hset, loss)?;
        indeterminate.extend(d.indeterminate);
        let half = d.value.weighted(0.5);
        best = Some(match best {
            Some(b) => b.min(half),
            None => half,
        });
    }
    indeterminate.dedup();
    Ok(Flagged {
        value: best.expect("source set is nonempty"),
        indeterminate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiDivergenceBoundReport {
    pub target: String,
    pub hypothesis: String,
    pub loss: Loss,
    /// inf over the set of target risk + worst source risk.
    pub ideal_joint: ExtReal,
    pub hypothesis_source_sup: ExtReal,
    pub misalignment: ExtReal,
    pub lhs: ExtReal,
    pub rhs: ExtReal,
    pub slack: Option<f64>,
    pub certified: bool,
    pub indeterminate: Vec<String>,
}

/// Multi-source version: worst-case source risks replace the single source,
/// and the divergence term becomes the misalignment to the nearest source.
pub fn multisource_div_bound(
    set: &SourceSet,
    h: &Hypothesis,
    hset: &[Hypothesis],
    loss: Loss,
) -> Result<MultiDivergenceBoundReport, HdivError> {
    check_set(hset)?;
    member_index(hset, h)?;
    let source_sup_of = |m: &Hypothesis| -> Result<ExtReal, HdivError> {
        let risks: Vec<ExtReal> = set
            .sources
            .iter()
            .map(|e| m.risk_on(e, loss))
            .collect::<Result<_, _>>()?;
        Ok(risks.into_iter().max().expect("source set is nonempty"))
    };
    let ideal_joint = hset
        .iter()
        .map(|m| {
            let joint = m.risk_on(set.target, loss)?.checked_add(source_sup_of(m)?);
            Ok(joint.expect("risks are nonnegative, the sum cannot be indeterminate"))
        })
        .collect::<Result<Vec<_>, HdivError>>()?
        .into_iter()
        .min()
        .expect("set is nonempty");
    let misalignment = h_misalignment(set, hset, loss)?;
    let lhs = h.risk_on(set.target, loss)?;
    let source_sup = source_sup_of(h)?;
    let rhs = ExtReal::sum([ideal_joint, source_sup, misalignment.value])
        .expect("all three terms are nonnegative");
    let slack = match (lhs, rhs) {
        (ExtReal::Finite(l), ExtReal::Finite(r)) => Some(r - l),
        _ => None,
    };
    Ok(MultiDivergenceBoundReport {
        target: set.target.name.clone(),
        hypothesis: h.name.clone(),
        loss,
        ideal_joint,
        hypothesis_source_sup: source_sup,
        misalignment: misalignment.value,
        lhs,
        rhs,
        slack,
        certified: lhs.le_with_tol(rhs, BOUND_TOLERANCE) && misalignment.indeterminate.is_empty(),
        indeterminate: misalignment.indeterminate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConnectReport {
    pub source: String,
    pub target: String,
    pub representation: String,
    pub extension: String,
    pub lhs: ExtReal,
    pub source_risk: ExtReal,
    pub kl_forward: ExtReal,
    pub kl_backward: ExtReal,
    pub bayes_div_term: f64,
    pub cov_shift_term: f64,
    pub rhs: ExtReal,
    /// rhs minus the exact-identity value (the lhs); how much the divergence
    /// route gives away relative to the additive decomposition.
    pub looseness: Option<f64>,
    pub certified: bool,
}

/// Bridge from the divergence route: the source Bayes composite's target
/// risk against 3R^s + max of the two directed shift terms + the remaining
/// decomposition terms. Cross-entropy only. The backward shift term reuses
/// the same extension convention on the atoms only the other side reaches.
pub fn connect_bound(
    s: &Environment,
    t: &Environment,
    rep: &Representation,
    ext: &SingularExtension,
    loss: Loss,
) -> Result<ConnectReport, HdivError> {
    if loss != Loss::CrossEntropy {
        return Err(HdivError::LossUnsupported);
    }
    let forward = decompose(s, t, rep, ext)?;
    let backward = decompose(t, s, rep, ext)?;
    let lhs = forward.target_risk;
    let kl_max = forward.kl_term.max(backward.kl_term);
    let rhs = ExtReal::sum([
        forward.source_risk.weighted(3.0),
        kl_max,
        ExtReal::finite(forward.bayes_div_term),
        ExtReal::finite(forward.cov_shift_term),
    ])
    .expect("all four terms are nonnegative");
    let looseness = match (lhs, rhs) {
        (ExtReal::Finite(l), ExtReal::Finite(r)) => Some(r - l),
        _ => None,
    };
    Ok(ConnectReport {
        source: s.name.clone(),
        target: t.name.clone(),
        representation: rep.name.clone(),
        extension: ext.mode_name().to_string(),
        lhs,
        source_risk: forward.source_risk,
        kl_forward: forward.kl_term,
        kl_backward: backward.kl_term,
        bayes_div_term: forward.bayes_div_term,
        cov_shift_term: forward.cov_shift_term,
        rhs,
        looseness,
        certified: lhs.le_with_tol(rhs, BOUND_TOLERANCE),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DannRow {
    pub hypothesis: String,
    pub representation: String,
    pub source_risk: ExtReal,
    /// Total variation between the source and target pushforwards through
    /// this hypothesis's own representation.
    pub rep_alignment_tv: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DannReport {
    pub source: String,
    pub target: String,
    pub loss: Loss,
    /// Distance instance used for the alignment term.
    pub distance: String,
    pub rows: Vec<DannRow>,
    /// min over the set of summed source and target risk.
    pub lambda_star: ExtReal,
}

/// The three ingredients of the adversarial-alignment surrogate bound, per
/// hypothesis: source risk, representation alignment, and the shared ideal
/// joint risk. The distance is instantiated as total variation.
pub fn dann_terms(
    s: &Environment,
    t: &Environment,
    set: &[Hypothesis],
    loss: Loss,
) -> Result<DannReport, HdivError> {
    check_set(set)?;
    let mut rows = Vec::with_capacity(set.len());
    let mut lambda_star: Option<ExtReal> = None;
    for h in set {
        let source_risk = h.risk_on(s, loss)?;
        let joint = source_risk
            .checked_add(h.risk_on(t, loss)?)
            .expect("risks are nonnegative, the sum cannot be indeterminate");
        lambda_star = Some(match lambda_star {
            Some(b) => b.min(joint),
            None => joint,
        });
        let push_s = pushforward(s, &h.rep)?;
        let push_t = pushforward(t, &h.rep)?;
        rows.push(DannRow {
            hypothesis: h.name.clone(),
            representation: h.rep.name.clone(),
            source_risk,
            rep_alignment_tv: tv_distance(&push_s, &push_t),
        });
    }
    Ok(DannReport {
        source: s.name.clone(),
        target: t.name.clone(),
        loss,
        distance: "total-variation".to_string(),
        rows,
        lambda_star: lambda_star.expect("set is nonempty"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::builtin;
    use crate::scenarios::ResolvedClass;

    fn composites(spec: &crate::scenarios::ScenarioSpec, class: &str) -> Vec<Hypothesis> {
        match spec.resolve_class(class).unwrap() {
            ResolvedClass::Composites(h) => h,
            _ => panic!("expected composites"),
        }
    }

    #[test]
    fn quadrant_composites_are_indistinguishable_on_source_but_not_target() {
        let spec = builtin::quadrants_v1();
        let source = spec.environment("source").unwrap();
        let target = spec.environment("target").unwrap();
        let set = composites(&spec, "thresholds");
        let on_s = risk_diff(source, &set[0], &set[1], Loss::ZeroOne).unwrap();
        let on_t = risk_diff(target, &set[0], &set[1], Loss::ZeroOne).unwrap();
        assert_eq!(on_s, ExtReal::ZERO);
        assert_eq!(on_t, ExtReal::finite(1.0));

        let d = hdh_divergence(source, target, &set, Loss::ZeroOne).unwrap();
        assert!(d.is_clean());
        assert_eq!(d.value, ExtReal::finite(2.0));

        // a singleton set cannot witness the shift
        let singleton = vec![set[0].clone()];
        let d1 = hdh_divergence(source, target, &singleton, Loss::ZeroOne).unwrap();
        assert_eq!(d1.value, ExtReal::ZERO);
    }

    #[test]
    fn divergence_is_symmetric_and_zero_on_equal_environments() {
        let spec = builtin::quadrants_v1();
        let source = spec.environment("source").unwrap();
        let target = spec.environment("target").unwrap();
        let set = composites(&spec, "thresholds");
        let ab = hdh_divergence(source, target, &set, Loss::ZeroOne).unwrap();
        let ba = hdh_divergence(target, source, &set, Loss::ZeroOne).unwrap();
        assert_eq!(ab.value, ba.value);
        let aa = hdh_divergence(source, source, &set, Loss::ZeroOne).unwrap();
        assert_eq!(aa.value, ExtReal::ZERO);
    }

    #[test]
    fn single_source_bound_is_loose_but_holds_on_the_quadrant_instance() {
        let spec = builtin::quadrants_v1();
        let source = spec.environment("source").unwrap();
        let target = spec.environment("target").unwrap();
        let set = composites(&spec, "thresholds");
        let report =
            single_source_div_bound(source, target, &set[0], &set, Loss::ZeroOne).unwrap();
        assert_eq!(report.lhs, ExtReal::finite(1.0));
        assert_eq!(report.hypothesis_source_risk, ExtReal::ZERO);
        assert_eq!(report.hdh, ExtReal::finite(2.0));
        // the ideal joint picks the second composite: 0 on both environments
        assert_eq!(report.ideal_joint, ExtReal::ZERO);
        assert!(report.certified);
        assert_eq!(report.slack, Some(1.0));
    }

    #[test]
    fn membership_is_required() {
        let spec = builtin::quadrants_v1();
        let source = spec.environment("source").unwrap();
        let target = spec.environment("target").unwrap();
        let set = composites(&spec, "thresholds");
        let outsider = Hypothesis {
            name: "outsider".to_string(),
            ..set[0].clone()
        };
        let err =
            single_source_div_bound(source, target, &outsider, &set, Loss::ZeroOne).unwrap_err();
        assert!(matches!(err, HdivError::NotInSet(_)));
    }

    #[test]
    fn misalignment_vanishes_when_the_target_sits_among_the_sources() {
        let spec = builtin::memorize_line(0.05);
        let e1 = spec.environment("e1").unwrap();
        let e2 = spec.environment("e2").unwrap();
        let set = composites(&spec, "thresholds");
        let sources = SourceSet {
            sources: vec![e1, e2],
            target: e1,
        };
        let m = h_misalignment(&sources, &set, Loss::ZeroOne).unwrap();
        assert_eq!(m.value, ExtReal::ZERO);
    }

    #[test]
    fn folded_line_multi_bound_holds_with_a_large_misalignment() {
        let spec = builtin::memorize_line(0.05);
        let e0 = spec.environment("e0").unwrap();
        let e1 = spec.environment("e1").unwrap();
        let e2 = spec.environment("e2").unwrap();
        let set = composites(&spec, "thresholds");
        let sources = SourceSet {
            sources: vec![e1, e2],
            target: e0,
        };
        let h = set.iter().find(|h| h.name == "below_1").unwrap();
        let report = multisource_div_bound(&sources, h, &set, Loss::ZeroOne).unwrap();
        assert!(report.certified, "slack {:?}", report.slack);
        assert!(report.misalignment.as_f64().unwrap() > 0.3);
    }

    #[test]
    fn bridge_bound_collapses_to_three_times_the_risk_on_equal_environments() {
        let spec = builtin::cmnist_latent();
        let e1 = spec.environment("e1").unwrap();
        let rep = spec.representation("phi_x").unwrap();
        let report = connect_bound(
            e1,
            e1,
            rep,
            &SingularExtension::Uniform,
            Loss::CrossEntropy,
        )
        .unwrap();
        let r = report.source_risk.as_f64().unwrap();
        assert!((report.lhs.as_f64().unwrap() - r).abs() < 1e-12);
        assert!((report.looseness.unwrap() - 2.0 * r).abs() < 1e-12);
        assert!(report.certified);
    }

    #[test]
    fn bridge_bound_goes_infinite_with_the_risky_quadrant_projection() {
        let spec = builtin::quadrants_v1();
        let source = spec.environment("source").unwrap();
        let target = spec.environment("target").unwrap();
        let rep = spec.representation("phi1").unwrap();
        let report = connect_bound(
            source,
            target,
            rep,
            &SingularExtension::Uniform,
            Loss::CrossEntropy,
        )
        .unwrap();
        assert_eq!(report.lhs, ExtReal::PosInf);
        assert_eq!(report.rhs, ExtReal::PosInf);
        assert!(report.certified);
        assert_eq!(report.looseness, None);
    }

    #[test]
    fn alignment_surrogate_cannot_separate_the_quadrant_projections() {
        let spec = builtin::quadrants_v1();
        let source = spec.environment("source").unwrap();
        let target = spec.environment("target").unwrap();
        let set = composites(&spec, "thresholds");
        let report = dann_terms(source, target, &set, Loss::ZeroOne).unwrap();
        for row in &report.rows {
            assert_eq!(row.source_risk, ExtReal::ZERO);
            assert!(row.rep_alignment_tv.abs() < 1e-15);
        }
        assert_eq!(report.lambda_star, ExtReal::ZERO);
    }

    #[test]
    fn alignment_surrogate_separates_the_axis_projections() {
        let spec = builtin::axis_target();
        let source = spec.environment("source").unwrap();
        let target = spec.environment("target").unwrap();
        let set = composites(&spec, "thresholds");
        let report = dann_terms(source, target, &set, Loss::ZeroOne).unwrap();
        let by_rep: std::collections::BTreeMap<&str, f64> = report
            .rows
            .iter()
            .map(|r| (r.representation.as_str(), r.rep_alignment_tv))
            .collect();
        assert!((by_rep["phi1"] - 1.0).abs() < 1e-15);
        assert!(by_rep["phi2"].abs() < 1e-15);
    }
}
