//! Multi-source analysis: predictor adaptation gaps and the bound composed
//! of source error, pairwise divergence terms, and the gap.
//!
//! The gap definition applies the supremum to the whole risk difference,
//! not to its first term; the bound's proof needs that reading and it is
//! the one implemented here.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::decomp::{decompose, DecompError};
use crate::ext::ExtReal;
use crate::invariance::{check_eci, InvarianceError};
use crate::measure::{
    Environment, MeasureError, Predictor, RepAtom, Representation, SingularExtension,
};
use crate::risk::{bayes_predictor, risk, Loss, RiskError};

pub const BOUND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MultiError {
    #[error("source set has no sources")]
    EmptySourceSet,
    #[error("environments disagree on label count")]
    MixedLabelCounts,
    #[error("representation list is empty")]
    EmptyRepList,
    #[error("representation {0} fails conditional invariance on the sources (max gap {1})")]
    NotEci(String, f64),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Decomp(#[from] DecompError),
    #[error(transparent)]
    Invariance(#[from] InvarianceError),
}

/// Training environments plus the target they should transfer to.
pub struct SourceSet<'a> {
    pub sources: Vec<&'a Environment>,
    pub target: &'a Environment,
}

impl SourceSet<'_> {
    pub fn validate(&self) -> Result<(), MultiError> {
        if self.sources.is_empty() {
            return Err(MultiError::EmptySourceSet);
        }
        let k = self.target.k;
        if self.sources.iter().any(|e| e.k != k) {
            return Err(MultiError::MixedLabelCounts);
        }
        Ok(())
    }

    /// Union of the representation's image over sources and target.
    pub fn rep_domain(&self, rep: &Representation) -> Result<BTreeSet<RepAtom>, MeasureError> {
        let mut domain = rep.image_of(self.target)?;
        for e in &self.sources {
            domain.extend(rep.image_of(e)?);
        }
        Ok(domain)
    }
}

/// A supremum or infimum together with the environments whose difference
/// came out as ∞ − ∞ and had to be left out of the extremum.
#[derive(Debug, Clone, Serialize)]
pub struct Flagged {
    pub value: ExtReal,
    pub indeterminate: Vec<String>,
}

impl Flagged {
    pub fn is_clean(&self) -> bool {
        self.indeterminate.is_empty()
    }
}

/// sup over `sources` e of R^{e1}(f^e ∘ φ) − R^{e2}(f^e ∘ φ), where f^e is
/// e's loss-optimal predictor through `rep` extended over the union domain.
pub fn predictor_gap_pair(
    e1: &Environment,
    e2: &Environment,
    sources: &[&Environment],
    rep: &Representation,
    loss: Loss,
    ext: &SingularExtension,
) -> Result<Flagged, MultiError> {
    if sources.is_empty() {
        return Err(MultiError::EmptySourceSet);
    }
    let mut domain = rep.image_of(e1)?;
    domain.extend(rep.image_of(e2)?);
    for e in sources {
        domain.extend(rep.image_of(e)?);
    }
    let mut value: Option<ExtReal> = None;
    let mut indeterminate = Vec::new();
    for e in sources {
        let f = bayes_predictor(e, rep, loss, ext, &domain)?;
        let r1 = risk(e1, &f, rep, loss)?;
        let r2 = risk(e2, &f, rep, loss)?;
        match r1.checked_sub(r2) {
            Ok(diff) => {
                value = Some(match value {
                    Some(v) => v.max(diff),
                    None => diff,
                })
            }
            Err(_) => indeterminate.push(e.name.clone()),
        }
    }
    Ok(Flagged {
        // sup over an empty set (every difference indeterminate)
        value: value.unwrap_or(ExtReal::NegInf),
        indeterminate,
    })
}

/// inf over e' in the training set of the pairwise gap from the target to
/// e'. Never −∞: the e = e' difference subtracts a finite own-optimal risk.
pub fn predictor_gap_target(
    set: &SourceSet,
    rep: &Representation,
    loss: Loss,
    ext: &SingularExtension,
) -> Result<Flagged, MultiError> {
    set.validate()?;
    let mut value: Option<ExtReal> = None;
    let mut indeterminate = Vec::new();
    for e_prime in &set.sources {
        let pair = predictor_gap_pair(set.target, e_prime, &set.sources, rep, loss, ext)?;
        for name in pair.indeterminate {
            if !indeterminate.contains(&name) {
                indeterminate.push(name);
            }
        }
        value = Some(match value {
            Some(v) => v.min(pair.value),
            None => pair.value,
        });
    }
    Ok(Flagged {
        value: value.expect("at least one source"),
        indeterminate,
    })
}

/// sup over the representation list of the target gap.
pub fn class_gap(
    set: &SourceSet,
    reps: &[&Representation],
    loss: Loss,
    ext: &SingularExtension,
) -> Result<Flagged, MultiError> {
    if reps.is_empty() {
        return Err(MultiError::EmptyRepList);
    }
    let mut value: Option<ExtReal> = None;
    let mut indeterminate = Vec::new();
    for rep in reps {
        let gap = predictor_gap_target(set, rep, loss, ext)?;
        for name in gap.indeterminate {
            let tagged = format!("{}/{name}", rep.name);
            if !indeterminate.contains(&tagged) {
                indeterminate.push(tagged);
            }
        }
        value = Some(match value {
            Some(v) => v.max(gap.value),
            None => gap.value,
        });
    }
    Ok(Flagged {
        value: value.expect("non-empty rep list"),
        indeterminate,
    })
}

/// Divergence terms of one ordered source pair: f^{from}'s risk excess on
/// `to`, split into conditional divergence, optimal-risk difference, and
/// covariate shift.
#[derive(Debug, Clone, Serialize)]
pub struct PairTerms {
    pub from: String,
    pub to: String,
    pub kl: ExtReal,
    pub delta: f64,
    pub mu: f64,
    pub total: ExtReal,
}

/// Per-source ingredients of the bound.
#[derive(Debug, Clone, Serialize)]
pub struct SourceTerms {
    pub source: String,
    pub own_risk: ExtReal,
    pub target_risk: ExtReal,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiSourceReport {
    pub target: String,
    pub representation: String,
    pub extension: String,
    /// sup over sources of the target risk of that source's predictor.
    pub lhs: ExtReal,
    pub source_sup: ExtReal,
    pub pairwise_sup: ExtReal,
    pub gap: ExtReal,
    pub gap_indeterminate: Vec<String>,
    pub rhs: ExtReal,
    /// rhs − lhs; absent when both sides are infinite.
    pub slack: Option<f64>,
    pub certified: bool,
    pub per_source: Vec<SourceTerms>,
    pub pairwise: Vec<PairTerms>,
}

/// Evaluates both sides of the multi-source bound under cross-entropy and
/// certifies lhs ≤ rhs within tolerance (two infinite sides count as tight).
pub fn multisource_bound_report(
    set: &SourceSet,
    rep: &Representation,
    ext: &SingularExtension,
) -> Result<MultiSourceReport, MultiError> {
    set.validate()?;
    let domain = set.rep_domain(rep)?;

    let mut per_source = Vec::new();
    let mut lhs = ExtReal::NegInf;
    let mut source_sup = ExtReal::NegInf;
    for e in &set.sources {
        let f = bayes_predictor(e, rep, Loss::CrossEntropy, ext, &domain)?;
        let own = risk(e, &f, rep, Loss::CrossEntropy)?;
        let on_target = risk(set.target, &f, rep, Loss::CrossEntropy)?;
        lhs = lhs.max(on_target);
        source_sup = source_sup.max(own);
        per_source.push(SourceTerms {
            source: e.name.clone(),
            own_risk: own,
            target_risk: on_target,
        });
    }

    let mut pairwise = Vec::new();
    let mut pairwise_sup = ExtReal::NegInf;
    for from in &set.sources {
        for to in &set.sources {
            let d = decompose(from, to, rep, ext)?;
            let total = d
                .kl_term
                .checked_add(ExtReal::finite(d.bayes_div_term + d.cov_shift_term))
                .expect("kl is never -inf");
            pairwise_sup = pairwise_sup.max(total);
            pairwise.push(PairTerms {
                from: from.name.clone(),
                to: to.name.clone(),
                kl: d.kl_term,
                delta: d.bayes_div_term,
                mu: d.cov_shift_term,
                total,
            });
        }
    }

    let gap = predictor_gap_target(set, rep, Loss::CrossEntropy, ext)?;
    // source_sup is finite, pairwise_sup ≥ 0 (diagonal pairs), and the gap
    // is never −∞, so the sum cannot be indeterminate.
    let rhs = ExtReal::sum([source_sup, pairwise_sup, gap.value])
        .expect("no -inf term can meet a +inf term here");
    let certified = lhs.le_with_tol(rhs, BOUND_TOLERANCE);
    let slack = match (rhs, lhs) {
        (ExtReal::Finite(r), ExtReal::Finite(l)) => Some(r - l),
        _ => None,
    };
    Ok(MultiSourceReport {
        target: set.target.name.clone(),
        representation: rep.name.clone(),
        extension: ext.mode_name().to_string(),
        lhs,
        source_sup,
        pairwise_sup,
        gap: gap.value,
        gap_indeterminate: gap.indeterminate,
        rhs,
        slack,
        certified,
        per_source,
        pairwise,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EciBoundReport {
    pub target: String,
    pub representation: String,
    pub predictor: String,
    pub extension: String,
    pub lhs: ExtReal,
    pub source_sup: ExtReal,
    pub mu_sup: f64,
    pub class_gap: ExtReal,
    pub gap_indeterminate: Vec<String>,
    pub rhs: ExtReal,
    pub slack: Option<f64>,
    pub certified: bool,
}

/// Bound for a chosen composite when every representation in `reps_i`
/// satisfies conditional invariance across the sources: the pairwise terms
/// collapse to covariate shift alone and the gap ranges over `reps_i` only.
pub fn eci_bound_report(
    set: &SourceSet,
    reps_i: &[&Representation],
    chosen: (&Predictor, &Representation),
    ext: &SingularExtension,
) -> Result<EciBoundReport, MultiError> {
    set.validate()?;
    if reps_i.is_empty() {
        return Err(MultiError::EmptyRepList);
    }
    for rep in reps_i {
        let eci = check_eci(&set.sources, rep, crate::invariance::ECI_TOLERANCE)?;
        if !eci.holds {
            return Err(MultiError::NotEci(rep.name.clone(), eci.max_gap));
        }
    }
    let (pred, rep) = chosen;
    let lhs = risk(set.target, pred, rep, Loss::CrossEntropy)?;
    let mut source_sup = ExtReal::NegInf;
    for e in &set.sources {
        source_sup = source_sup.max(risk(e, pred, rep, Loss::CrossEntropy)?);
    }
    let mut mu_sup = 0.0f64;
    for from in &set.sources {
        for to in &set.sources {
            let d = decompose(from, to, rep, ext)?;
            mu_sup = mu_sup.max(d.cov_shift_term);
        }
    }
    let gap = class_gap(set, reps_i, Loss::CrossEntropy, ext)?;
    let rhs = ExtReal::sum([source_sup, ExtReal::finite(mu_sup), gap.value])
        .expect("no -inf term can meet a +inf term here");
    let certified = lhs.le_with_tol(rhs, BOUND_TOLERANCE);
    let slack = match (rhs, lhs) {
        (ExtReal::Finite(r), ExtReal::Finite(l)) => Some(r - l),
        _ => None,
    };
    Ok(EciBoundReport {
        target: set.target.name.clone(),
        representation: rep.name.clone(),
        predictor: pred.name.clone(),
        extension: ext.mode_name().to_string(),
        lhs,
        source_sup,
        mu_sup,
        class_gap: gap.value,
        gap_indeterminate: gap.indeterminate,
        rhs,
        slack,
        certified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::builtin;

    fn uniform() -> SingularExtension {
        SingularExtension::Uniform
    }

    #[test]
    fn gap_between_an_environment_and_itself_is_zero() {
        let spec = builtin::memorize_line(0.05);
        let e1 = spec.environment("e1").unwrap();
        let e2 = spec.environment("e2").unwrap();
        let rep = spec.representation("phi_abs").unwrap();
        let gap =
            predictor_gap_pair(e1, e1, &[e1, e2], rep, Loss::ZeroOne, &uniform()).unwrap();
        assert_eq!(gap.value, ExtReal::ZERO);
        assert!(gap.is_clean());
    }

    #[test]
    fn folded_line_gap_is_the_shifted_coin_mass() {
        let spec = builtin::memorize_line(0.05);
        let set = spec.source_set().unwrap();
        let rep = spec.representation("phi_abs").unwrap();
        let gap = predictor_gap_target(&set, rep, Loss::ZeroOne, &uniform()).unwrap();
        // target risk (1-2e)/2 = 0.45 minus source risk e/2 = 0.025
        let got = gap.value.as_f64().unwrap();
        assert!((got - 0.425).abs() < 1e-12, "gap {got}");
        assert!(gap.is_clean());
    }

    #[test]
    fn duplicated_target_drives_the_gap_to_zero_or_less() {
        let spec = builtin::memorize_line(0.05);
        let e0 = spec.environment("e0").unwrap();
        let e1 = spec.environment("e1").unwrap();
        let rep = spec.representation("phi_abs").unwrap();
        let set = SourceSet {
            sources: vec![e1, e0],
            target: e0,
        };
        let gap = predictor_gap_target(&set, rep, Loss::ZeroOne, &uniform()).unwrap();
        assert!(gap.value <= ExtReal::ZERO);
    }

    #[test]
    fn bound_is_tight_on_identical_environments() {
        let spec = builtin::memorize_line(0.05);
        let e1 = spec.environment("e1").unwrap();
        let rep = spec.representation("phi_abs").unwrap();
        let set = SourceSet {
            sources: vec![e1, e1],
            target: e1,
        };
        let report = multisource_bound_report(&set, rep, &uniform()).unwrap();
        assert!(report.certified);
        let slack = report.slack.unwrap();
        assert!(slack.abs() < 1e-12, "slack {slack}");
        assert_eq!(report.pairwise.len(), 4);
    }

    #[test]
    fn bound_certifies_on_the_folded_line() {
        let spec = builtin::memorize_line(0.05);
        let set = spec.source_set().unwrap();
        let rep = spec.representation("phi_abs").unwrap();
        let report = multisource_bound_report(&set, rep, &uniform()).unwrap();
        assert!(report.certified, "slack {:?}", report.slack);
        assert!(report.gap_indeterminate.is_empty());
    }

    #[test]
    fn class_gap_grows_with_the_class() {
        let spec = builtin::memorize_quadrants(0.05);
        let set = spec.source_set().unwrap();
        let phi1 = spec.representation("phi1").unwrap();
        let phi2 = spec.representation("phi2").unwrap();
        let small = class_gap(&set, &[phi1], Loss::ZeroOne, &uniform()).unwrap();
        let large = class_gap(&set, &[phi1, phi2], Loss::ZeroOne, &uniform()).unwrap();
        assert!(small.value <= large.value);
        // phi2's composite fails on the target, so widening the class to
        // include it raises the gap strictly
        assert!(large.value.as_f64().unwrap() > small.value.as_f64().unwrap() + 0.5);
    }

    #[test]
    fn eci_bound_rejects_non_invariant_representations() {
        let spec = builtin::cmnist_latent();
        let set = spec.source_set().unwrap();
        let phi_z = spec.representation("phi_z").unwrap();
        let pred = crate::risk::bayes_predictor_own(
            set.sources[0],
            phi_z,
            Loss::CrossEntropy,
            &uniform(),
        )
        .unwrap();
        let err = eci_bound_report(&set, &[phi_z], (&pred, phi_z), &uniform());
        assert!(matches!(err, Err(MultiError::NotEci(_, _))));
    }
}
