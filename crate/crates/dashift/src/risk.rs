//! Losses, entropies, and risk evaluation.
//!
//! All entropy-valued quantities are computed in nats; report emission may
//! rescale to bits. Cross-entropy and KL return [`ExtReal`] because a zero
//! predicted probability on a realized label is exactly +inf, not a large
//! float. The zero-one loss of a probability vector is the loss of its
//! argmax, ties resolved toward the smallest label index.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::ext::ExtReal;
use crate::measure::{
    conditional_table, pushforward, Environment, MeasureError, Predictor, RepAtom,
    Representation, SingularExtension,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    CrossEntropy,
    ZeroOne,
}

impl Loss {
    pub fn name(self) -> &'static str {
        match self {
            Loss::CrossEntropy => "cross-entropy",
            Loss::ZeroOne => "zero-one",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("predictor {predictor} is undefined at {atom} (image of {env})")]
    PredictorUndefinedAtom {
        predictor: String,
        atom: String,
        env: String,
    },
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Shannon entropy of a probability vector, 0 log 0 = 0.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum()
}

/// Cross-entropy of reference distribution `q` against predicted `p`:
/// sum over labels of q_i log(1 / p_i). Infinite exactly when q puts mass
/// where p puts none.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> ExtReal {
    debug_assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if qi > 0.0 {
            if pi <= 0.0 {
                return ExtReal::PosInf;
            }
            acc += -qi * pi.ln();
        }
    }
    ExtReal::finite(acc)
}

/// KL divergence of `q` from `p`: cross_entropy(p, q) - entropy(q).
pub fn kl(q: &[f64], p: &[f64]) -> ExtReal {
    match cross_entropy(p, q) {
        ExtReal::Finite(ce) => ExtReal::finite(ce - entropy(q)),
        inf => inf,
    }
}

/// Index of the largest entry, ties toward the smallest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Pointwise loss of a predicted probability vector against a realized label.
pub fn pointwise_loss(loss: Loss, predicted: &[f64], label: usize) -> ExtReal {
    match loss {
        Loss::CrossEntropy => {
            let p = predicted[label];
            if p > 0.0 {
                ExtReal::finite(-p.ln())
            } else {
                ExtReal::PosInf
            }
        }
        Loss::ZeroOne => {
            if argmax(predicted) == label {
                ExtReal::ZERO
            } else {
                ExtReal::finite(1.0)
            }
        }
    }
}

/// Expected loss of `pred` composed with `rep` on `env`.
///
/// Atoms of mass exactly zero contribute nothing, even against an infinite
/// pointwise loss; the predictor may be undefined there.
pub fn risk(
    env: &Environment,
    pred: &Predictor,
    rep: &Representation,
    loss: Loss,
) -> Result<ExtReal, RiskError> {
    let mut acc = ExtReal::ZERO;
    for p in &env.atoms {
        if p.mass == 0.0 {
            continue;
        }
        let gamma = rep.apply(&p.atom)?;
        let predicted =
            pred.output(gamma)
                .ok_or_else(|| RiskError::PredictorUndefinedAtom {
                    predictor: pred.name.clone(),
                    atom: gamma.0.clone(),
                    env: env.name.clone(),
                })?;
        let contribution = pointwise_loss(loss, predicted, p.label).weighted(p.mass);
        acc = acc
            .checked_add(contribution)
            .expect("losses are nonnegative, sum cannot be indeterminate");
    }
    Ok(acc)
}

/// Loss-optimal predictor of `env` through `rep`, total on `domain`.
///
/// At atoms the environment reaches, cross-entropy optimality is the label
/// conditional itself and zero-one optimality is the point mass at its
/// argmax. At atoms outside the environment's pushforward support the
/// extension-resolved vector is used instead, so the result can be evaluated
/// on other environments.
pub fn bayes_predictor(
    env: &Environment,
    rep: &Representation,
    loss: Loss,
    ext: &SingularExtension,
    domain: &BTreeSet<RepAtom>,
) -> Result<Predictor, RiskError> {
    let table = conditional_table(env, rep, ext, domain)?;
    let outputs: BTreeMap<RepAtom, Vec<f64>> = table
        .into_iter()
        .map(|(gamma, cond)| {
            let v = match loss {
                Loss::CrossEntropy => cond,
                Loss::ZeroOne => {
                    let mut point = vec![0.0; env.k];
                    point[argmax(&cond)] = 1.0;
                    point
                }
            };
            (gamma, v)
        })
        .collect();
    Ok(Predictor {
        name: format!("bayes[{}/{}/{}]", env.name, rep.name, loss.name()),
        k: env.k,
        outputs,
    })
}

/// Convenience: Bayes predictor on exactly the environment's own image.
pub fn bayes_predictor_own(
    env: &Environment,
    rep: &Representation,
    loss: Loss,
    ext: &SingularExtension,
) -> Result<Predictor, RiskError> {
    let domain = rep.image_of(env)?;
    bayes_predictor(env, rep, loss, ext, &domain)
}

/// Outcome of the pointwise-optimality check below.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalityCheck {
    pub loss: Loss,
    pub holds: bool,
    /// Atom where the property broke, if it did.
    pub witness_atom: Option<RepAtom>,
    /// Risk-minimizing label whose point mass differs from the conditional.
    pub witness_label: Option<usize>,
    /// Conditional at the witness atom.
    pub witness_conditional: Option<Vec<f64>>,
    /// Full predictor realizing the violation.
    pub witness_predictor: Option<Predictor>,
}

const OPTIMALITY_MARGIN: f64 = 1e-9;

/// Checks whether loss-minimization recovers the label conditional.
///
/// Candidates at each atom are the K point masses plus every probability
/// vector on the 1/resolution grid. The property holds when no candidate
/// beats the Bayes predictor by more than a 1e-9 margin and every
/// risk-minimizing point-mass candidate equals the conditional exactly.
/// Cross-entropy satisfies this on any instance; zero-one fails at any
/// atom with a non-degenerate conditional, and the failing argmax predictor
/// is returned as a witness.
pub fn check_bayes_optimality_property(
    loss: Loss,
    env: &Environment,
    rep: &Representation,
    grid_resolution: usize,
) -> Result<OptimalityCheck, RiskError> {
    let push = pushforward(env, rep)?;
    let domain: BTreeSet<RepAtom> = push.support().into_iter().cloned().collect();
    let conditionals = conditional_table(env, rep, &SingularExtension::Uniform, &domain)?;
    let bayes = bayes_predictor(env, rep, loss, &SingularExtension::Uniform, &domain)?;

    let grid = simplex_grid(env.k, grid_resolution);
    for gamma in &domain {
        let mass = push.mass(gamma);
        let cond = &conditionals[gamma];
        let bayes_out = bayes.output(gamma).expect("bayes covers the domain");
        let bayes_contribution = expected_loss(loss, bayes_out, cond);

        let mut best = bayes_contribution;
        for candidate in point_masses(env.k).iter().chain(grid.iter()) {
            let c = expected_loss(loss, candidate, cond);
            if c < best {
                best = c;
            }
        }
        if !bayes_contribution.le_with_tol(best, OPTIMALITY_MARGIN) {
            // some candidate strictly beats the Bayes output at this atom
            let better = point_masses(env.k)
                .into_iter()
                .chain(grid.iter().cloned())
                .min_by(|a, b| {
                    expected_loss(loss, a, cond).cmp(&expected_loss(loss, b, cond))
                })
                .expect("candidate set is never empty");
            let witness = override_at(&bayes, gamma, better);
            return Ok(OptimalityCheck {
                loss,
                holds: false,
                witness_atom: Some(gamma.clone()),
                witness_label: None,
                witness_conditional: Some(cond.clone()),
                witness_predictor: Some(witness),
            });
        }
        if mass == 0.0 {
            continue;
        }
        for label in 0..env.k {
            let mut point = vec![0.0; env.k];
            point[label] = 1.0;
            let c = expected_loss(loss, &point, cond);
            let minimizing = c.le_with_tol(best, OPTIMALITY_MARGIN);
            if minimizing && !vectors_equal(&point, cond, OPTIMALITY_MARGIN) {
                let witness = override_at(&bayes, gamma, point);
                return Ok(OptimalityCheck {
                    loss,
                    holds: false,
                    witness_atom: Some(gamma.clone()),
                    witness_label: Some(label),
                    witness_conditional: Some(cond.clone()),
                    witness_predictor: Some(witness),
                });
            }
        }
    }
    Ok(OptimalityCheck {
        loss,
        holds: true,
        witness_atom: None,
        witness_label: None,
        witness_conditional: None,
        witness_predictor: None,
    })
}

fn expected_loss(loss: Loss, predicted: &[f64], cond: &[f64]) -> ExtReal {
    let per_label = (0..cond.len())
        .map(|y| pointwise_loss(loss, predicted, y).weighted(cond[y]));
    ExtReal::sum(per_label).expect("losses are nonnegative")
}

fn vectors_equal(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn override_at(base: &Predictor, gamma: &RepAtom, v: Vec<f64>) -> Predictor {
    let mut outputs = base.outputs.clone();
    outputs.insert(gamma.clone(), v);
    Predictor {
        name: format!("{}~{}", base.name, gamma),
        k: base.k,
        outputs,
    }
}

fn point_masses(k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            let mut v = vec![0.0; k];
            v[i] = 1.0;
            v
        })
        .collect()
}

/// All probability vectors with entries that are multiples of 1/resolution.
fn simplex_grid(k: usize, resolution: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; k];
    fill_grid(k, resolution, 0, resolution, &mut current, &mut out);
    out
}

fn fill_grid(
    k: usize,
    resolution: usize,
    index: usize,
    remaining: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<f64>>,
) {
    if index == k - 1 {
        current[index] = remaining;
        out.push(
            current
                .iter()
                .map(|&c| c as f64 / resolution as f64)
                .collect(),
        );
        return;
    }
    for c in 0..=remaining {
        current[index] = c;
        fill_grid(k, resolution, index + 1, remaining - c, current, out);
    }
}
