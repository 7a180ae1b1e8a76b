//! Fairness-style upper bounds on the covariate-shift term: the label
//! entropy a representation leaves in the source, atomwise and aggregated
//! over a partition of its atoms, against the corresponding distribution
//! distances.
//!
//! The group-level chain certifies what the aggregation argument literally
//! establishes. The step that would transport it back to the atomwise shift
//! term needs conditionals constant within each group; the report says
//! whether that holds instead of assuming it.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::measure::{
    conditional_table, pushforward, tv_distance, Environment, MeasureError, RepAtom,
    Representation, SingularExtension,
};
use crate::risk::entropy;

/// Slack allowed on the certified inequalities.
pub const CHAIN_TOLERANCE: f64 = 1e-12;
/// Tolerance for the within-group constancy diagnostic and for the
/// atomwise-equals-group comparison.
pub const MATCH_TOLERANCE: f64 = 1e-9;
/// Target mass outside the source support above which certification is
/// refused.
pub const SUPPORT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FairnessError {
    #[error("partition has no groups")]
    EmptyPartition,
    #[error("atom {0} appears in more than one group")]
    NotDisjoint(String),
    #[error("atom {0} is in no group but carries mass")]
    NotCovering(String),
    #[error("group atom {0} is outside the union support")]
    UnknownGroupAtom(String),
    #[error("certification needs the target supported on the source; {0:.3e} of target mass is singular")]
    SupportViolation(f64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupPartition {
    pub groups: Vec<BTreeSet<RepAtom>>,
}

impl GroupPartition {
    pub fn new(groups: Vec<BTreeSet<RepAtom>>) -> GroupPartition {
        GroupPartition { groups }
    }

    pub fn singletons(domain: &BTreeSet<RepAtom>) -> GroupPartition {
        GroupPartition {
            groups: domain.iter().map(|a| BTreeSet::from([a.clone()])).collect(),
        }
    }

    /// Disjoint and exactly covering the analyzed domain.
    fn validate(&self, domain: &BTreeSet<RepAtom>) -> Result<(), FairnessError> {
        if self.groups.iter().all(|g| g.is_empty()) {
            return Err(FairnessError::EmptyPartition);
        }
        let mut seen = BTreeSet::new();
        for group in &self.groups {
            for atom in group {
                if !domain.contains(atom) {
                    return Err(FairnessError::UnknownGroupAtom(atom.0.clone()));
                }
                if !seen.insert(atom.clone()) {
                    return Err(FairnessError::NotDisjoint(atom.0.clone()));
                }
            }
        }
        if let Some(missing) = domain.iter().find(|a| !seen.contains(*a)) {
            return Err(FairnessError::NotCovering(missing.0.clone()));
        }
        Ok(())
    }
}

/// Largest label entropy the source leaves on any domain atom, with
/// extension values standing in on atoms the source never reaches. Bounded
/// by log k.
pub fn source_fairness(
    source: &Environment,
    rep: &Representation,
    ext: &SingularExtension,
    domain: &BTreeSet<RepAtom>,
) -> Result<f64, MeasureError> {
    let table = conditional_table(source, rep, ext, domain)?;
    Ok(domain
        .iter()
        .map(|gamma| entropy(&table[gamma]))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupRow {
    pub atoms: Vec<RepAtom>,
    pub source_mass: f64,
    pub target_mass: f64,
    /// Label entropy of the source conditioned on landing in this group;
    /// absent when the group carries no source mass.
    pub entropy: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupQuantities {
    pub rho_group: f64,
    pub d_group: f64,
    pub mu_group: f64,
    pub rows: Vec<GroupRow>,
}

/// Aggregates masses and conditionals over the partition. Groups without
/// source mass get no entropy and are excluded from the group-level shift
/// sum, exactly as the aggregation argument writes it.
pub fn group_quantities(
    source: &Environment,
    target: &Environment,
    rep: &Representation,
    partition: &GroupPartition,
    ext: &SingularExtension,
) -> Result<GroupQuantities, FairnessError> {
    let push_s = pushforward(source, rep)?;
    let push_t = pushforward(target, rep)?;
    let mut domain: BTreeSet<RepAtom> = push_s.support().into_iter().cloned().collect();
    domain.extend(push_t.support().into_iter().cloned());
    partition.validate(&domain)?;
    let table = conditional_table(source, rep, ext, &domain)?;
    let k = source.k;

    let mut rho_group = 0.0f64;
    let mut d_group = 0.0;
    let mut mu_group = 0.0;
    let mut rows = Vec::with_capacity(partition.groups.len());
    for group in &partition.groups {
        let source_mass: f64 = group.iter().map(|a| push_s.mass(a)).sum();
        let target_mass: f64 = group.iter().map(|a| push_t.mass(a)).sum();
        let delta = target_mass - source_mass;
        d_group += 0.5 * delta.abs();
        let h = if source_mass > 0.0 {
            let mut mixed = vec![0.0; k];
            for atom in group {
                let w = push_s.mass(atom) / source_mass;
                for (y, m) in mixed.iter_mut().enumerate() {
                    *m += w * table[atom][y];
                }
            }
            let h = entropy(&mixed);
            rho_group = rho_group.max(h);
            mu_group += delta * h;
            Some(h)
        } else {
            None
        };
        rows.push(GroupRow {
            atoms: group.iter().cloned().collect(),
            source_mass,
            target_mass,
            entropy: h,
        });
    }
    Ok(GroupQuantities {
        rho_group,
        d_group,
        mu_group,
        rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainRow {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub satisfied: bool,
}

fn chain_row(name: &str, lhs: f64, rhs: f64) -> ChainRow {
    ChainRow {
        name: name.to_string(),
        lhs,
        rhs,
        slack: rhs - lhs,
        satisfied: lhs <= rhs + CHAIN_TOLERANCE,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FairnessReport {
    pub source: String,
    pub target: String,
    pub representation: String,
    pub extension: String,
    pub rho: f64,
    pub rho_group: f64,
    pub d_tv: f64,
    pub d_group: f64,
    /// Atomwise covariate-shift term, extension entropies on singular atoms.
    pub mu: f64,
    pub mu_group: f64,
    pub mu_minus_mu_group: f64,
    pub mu_matches_group: bool,
    /// Whether the source conditional is the same vector on every atom of
    /// each group; the condition under which the aggregation step is exact.
    pub within_group_constant: bool,
    pub singular_mass: f64,
    pub support_ok: bool,
    pub bound_chain: Vec<ChainRow>,
    pub groups: Vec<GroupRow>,
}

/// Atomwise shift term and fairness bound plus the group-level chain. With
/// `certify` set, refuses instances whose target mass escapes the source
/// support rather than certifying a chain whose premise fails.
pub fn fairness_bounds(
    source: &Environment,
    target: &Environment,
    rep: &Representation,
    partition: &GroupPartition,
    ext: &SingularExtension,
    certify: bool,
) -> Result<FairnessReport, FairnessError> {
    let push_s = pushforward(source, rep)?;
    let push_t = pushforward(target, rep)?;
    let mut domain: BTreeSet<RepAtom> = push_s.support().into_iter().cloned().collect();
    domain.extend(push_t.support().into_iter().cloned());
    let singular_mass: f64 = push_t
        .support()
        .into_iter()
        .filter(|a| push_s.mass(a) == 0.0)
        .map(|a| push_t.mass(a))
        .sum();
    if certify && singular_mass > SUPPORT_TOLERANCE {
        return Err(FairnessError::SupportViolation(singular_mass));
    }

    let table = conditional_table(source, rep, ext, &domain)?;
    let rho = source_fairness(source, rep, ext, &domain)?;
    let d_tv = tv_distance(&push_s, &push_t);
    let mu: f64 = domain
        .iter()
        .map(|gamma| (push_t.mass(gamma) - push_s.mass(gamma)) * entropy(&table[gamma]))
        .sum();
    let quantities = group_quantities(source, target, rep, partition, ext)?;

    let within_group_constant = partition.groups.iter().all(|group| {
        let mut on_support = group.iter().filter(|a| push_s.mass(a) > 0.0);
        match on_support.next() {
            Some(first) => {
                let reference = &table[first];
                on_support.all(|a| {
                    table[a]
                        .iter()
                        .zip(reference)
                        .all(|(x, y)| (x - y).abs() <= MATCH_TOLERANCE)
                })
            }
            None => true,
        }
    });

    let log_k = (source.k as f64).ln();
    let bound_chain = vec![
        chain_row("mu <= rho * d_tv", mu, rho * d_tv),
        chain_row(
            "mu_group <= rho_group * d_group",
            quantities.mu_group,
            quantities.rho_group * quantities.d_group,
        ),
        chain_row(
            "rho_group * d_group <= rho * d_tv",
            quantities.rho_group * quantities.d_group,
            rho * d_tv,
        ),
        chain_row("rho * d_tv <= log_k * d_tv", rho * d_tv, log_k * d_tv),
    ];
    let mu_minus_mu_group = mu - quantities.mu_group;
    Ok(FairnessReport {
        source: source.name.clone(),
        target: target.name.clone(),
        representation: rep.name.clone(),
        extension: ext.mode_name().to_string(),
        rho,
        rho_group: quantities.rho_group,
        d_tv,
        d_group: quantities.d_group,
        mu,
        mu_group: quantities.mu_group,
        mu_minus_mu_group,
        mu_matches_group: mu_minus_mu_group.abs() <= MATCH_TOLERANCE,
        within_group_constant,
        singular_mass,
        support_ok: singular_mass <= SUPPORT_TOLERANCE,
        bound_chain,
        groups: quantities.rows,
    })
}
