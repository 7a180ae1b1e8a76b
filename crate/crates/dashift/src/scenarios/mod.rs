//! Instance definitions: built-in constructions and seeded random ones.
//!
//! A [`ScenarioSpec`] is the unit the CLI works with: a named, versioned
//! bundle of environments, representations, predictor classes, and role
//! assignments, serializable to JSON and back without loss. Built-in
//! scenarios are generated by [`builtin::gen`]; [`random`] produces seeded
//! instances for the certification suites.

pub mod builtin;
pub mod random;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hdiv::Hypothesis;
use crate::invariance::HypothesisClass;
use crate::measure::{
    conditional_table, Environment, MeasureError, Predictor, RepAtom, Representation,
    SingularExtension,
};
use crate::multi::SourceSet;

/// Bumped when the on-disk layout changes incompatibly.
pub const SCHEMA_VERSION: u32 = 1;

/// Largest predictor class any resolver is willing to materialize.
pub const CLASS_LIMIT: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0}")]
    UnknownScenario(String),
    #[error("scenario {scenario}: unknown environment {name}")]
    UnknownEnvironment { scenario: String, name: String },
    #[error("scenario {scenario}: unknown representation {name}")]
    UnknownRepresentation { scenario: String, name: String },
    #[error("scenario {scenario}: unknown predictor class {name}")]
    UnknownClass { scenario: String, name: String },
    #[error("scenario {scenario}: duplicate name {name}")]
    DuplicateName { scenario: String, name: String },
    #[error("parameter {param}: {detail}")]
    ParamOutOfRange { param: String, detail: String },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("schema version {got} unsupported, tool speaks {SCHEMA_VERSION}")]
    SchemaVersion { got: u32 },
    #[error("scenario {scenario}: roles need at least one source")]
    NoSources { scenario: String },
    #[error("predictor class {name} would have {count} members, limit {CLASS_LIMIT}")]
    ClassTooLarge { name: String, count: usize },
    #[error("scenario {scenario}: environments disagree on label count")]
    MixedLabelCounts { scenario: String },
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub sources: Vec<String>,
    pub target: String,
}

/// One composite hypothesis: a predictor read through a named representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Composite {
    pub name: String,
    pub representation: String,
    pub predictor: Predictor,
}

/// A named predictor class, in one of three shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorClass {
    /// Explicit composite hypotheses, for divergence and adversarial reports.
    Composites { members: Vec<Composite> },
    /// Explicit predictors crossed with named representations.
    Product {
        predictors: Vec<Predictor>,
        representations: Vec<String>,
    },
    /// Every point-mass label map over the union of the named
    /// representations' images, optionally augmented with each environment's
    /// conditional predictor per representation (uniform off its own atoms).
    LabelMaps {
        representations: Vec<String>,
        with_conditionals: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub schema_version: u32,
    pub name: String,
    pub k: usize,
    pub environments: Vec<Environment>,
    pub representations: Vec<Representation>,
    pub predictor_classes: BTreeMap<String, PredictorClass>,
    pub roles: Roles,
    /// Free-form notes on the abstraction and parameter choices.
    pub manifest: Vec<String>,
}

/// A predictor class resolved against a scenario's environments.
pub enum ResolvedClass {
    Composites(Vec<Hypothesis>),
    Product(HypothesisClass),
}

impl ScenarioSpec {
    /// Full validation pass; returns the spec with environments renormalized.
    pub fn validate(mut self) -> Result<ScenarioSpec, ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::SchemaVersion {
                got: self.schema_version,
            });
        }
        let mut env_names = BTreeSet::new();
        let mut validated = Vec::with_capacity(self.environments.len());
        for env in self.environments {
            if env.k != self.k {
                return Err(ScenarioError::MixedLabelCounts {
                    scenario: self.name.clone(),
                });
            }
            if !env_names.insert(env.name.clone()) {
                return Err(ScenarioError::DuplicateName {
                    scenario: self.name.clone(),
                    name: env.name,
                });
            }
            validated.push(env.validated()?);
        }
        self.environments = validated;
        let mut rep_names = BTreeSet::new();
        for rep in &self.representations {
            if !rep_names.insert(rep.name.clone()) {
                return Err(ScenarioError::DuplicateName {
                    scenario: self.name.clone(),
                    name: rep.name.clone(),
                });
            }
            for env in &self.environments {
                for point in &env.atoms {
                    rep.apply(&point.atom)?;
                }
            }
        }
        if self.roles.sources.is_empty() {
            return Err(ScenarioError::NoSources {
                scenario: self.name.clone(),
            });
        }
        for name in self.roles.sources.iter().chain([&self.roles.target]) {
            if !env_names.contains(name) {
                return Err(ScenarioError::UnknownEnvironment {
                    scenario: self.name.clone(),
                    name: name.clone(),
                });
            }
        }
        Ok(self)
    }

    pub fn environment(&self, name: &str) -> Result<&Environment, ScenarioError> {
        self.environments
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| ScenarioError::UnknownEnvironment {
                scenario: self.name.clone(),
                name: name.to_string(),
            })
    }

    pub fn representation(&self, name: &str) -> Result<&Representation, ScenarioError> {
        self.representations
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| ScenarioError::UnknownRepresentation {
                scenario: self.name.clone(),
                name: name.to_string(),
            })
    }

    /// First declared source paired with the target.
    pub fn role_pair(&self) -> Result<(&Environment, &Environment), ScenarioError> {
        let source = self.environment(&self.roles.sources[0])?;
        let target = self.environment(&self.roles.target)?;
        Ok((source, target))
    }

    /// All declared sources plus the target, for multi-source analyses.
    pub fn source_set(&self) -> Result<SourceSet<'_>, ScenarioError> {
        let mut sources = Vec::new();
        for name in &self.roles.sources {
            sources.push(self.environment(name)?);
        }
        let target = self.environment(&self.roles.target)?;
        Ok(SourceSet { sources, target })
    }

    /// Union of representation images over every environment's support.
    pub fn rep_domain(&self, rep: &Representation) -> Result<BTreeSet<RepAtom>, ScenarioError> {
        let mut out = BTreeSet::new();
        for env in &self.environments {
            out.extend(rep.image_of(env)?);
        }
        Ok(out)
    }

    pub fn resolve_class(&self, name: &str) -> Result<ResolvedClass, ScenarioError> {
        let class =
            self.predictor_classes
                .get(name)
                .ok_or_else(|| ScenarioError::UnknownClass {
                    scenario: self.name.clone(),
                    name: name.to_string(),
                })?;
        match class {
            PredictorClass::Composites { members } => {
                let mut out = Vec::new();
                for c in members {
                    let rep = self.representation(&c.representation)?.clone();
                    out.push(Hypothesis {
                        name: c.name.clone(),
                        rep,
                        predictor: c.predictor.clone(),
                    });
                }
                Ok(ResolvedClass::Composites(out))
            }
            PredictorClass::Product {
                predictors,
                representations,
            } => {
                let reps = self.named_reps(representations)?;
                Ok(ResolvedClass::Product(HypothesisClass {
                    predictors: predictors.clone(),
                    representations: reps,
                }))
            }
            PredictorClass::LabelMaps {
                representations,
                with_conditionals,
            } => {
                let reps = self.named_reps(representations)?;
                let class = self.label_map_class(name, &reps, *with_conditionals)?;
                Ok(ResolvedClass::Product(class))
            }
        }
    }

    fn named_reps(&self, names: &[String]) -> Result<Vec<Representation>, ScenarioError> {
        names
            .iter()
            .map(|n| self.representation(n).cloned())
            .collect()
    }

    fn label_map_class(
        &self,
        class_name: &str,
        reps: &[Representation],
        with_conditionals: bool,
    ) -> Result<HypothesisClass, ScenarioError> {
        let mut atoms = BTreeSet::new();
        for rep in reps {
            atoms.extend(self.rep_domain(rep)?);
        }
        let atoms: Vec<RepAtom> = atoms.into_iter().collect();
        let count = (self.k as u64).checked_pow(atoms.len() as u32);
        match count {
            Some(c) if (c as usize) <= CLASS_LIMIT => {}
            _ => {
                return Err(ScenarioError::ClassTooLarge {
                    name: class_name.to_string(),
                    count: count.map(|c| c as usize).unwrap_or(usize::MAX),
                })
            }
        }
        let count = count.expect("checked above") as usize;
        let mut predictors = Vec::with_capacity(count);
        for index in 0..count {
            let mut digits = index;
            let map: BTreeMap<RepAtom, usize> = atoms
                .iter()
                .map(|a| {
                    let label = digits % self.k;
                    digits /= self.k;
                    (a.clone(), label)
                })
                .collect();
            predictors.push(Predictor::from_label_map(
                format!("map{index}"),
                self.k,
                map,
            ));
        }
        if with_conditionals {
            let uniform = vec![1.0 / self.k as f64; self.k];
            for env in &self.environments {
                for rep in reps {
                    let own: BTreeSet<RepAtom> = self.rep_domain(rep)?;
                    let table = conditional_table(
                        env,
                        rep,
                        &SingularExtension::Uniform,
                        &own,
                    )?;
                    let mut outputs: BTreeMap<RepAtom, Vec<f64>> = atoms
                        .iter()
                        .map(|a| (a.clone(), uniform.clone()))
                        .collect();
                    for (gamma, v) in table {
                        outputs.insert(gamma, v);
                    }
                    predictors.push(Predictor {
                        name: format!("cond_{}_{}", env.name, rep.name),
                        k: self.k,
                        outputs,
                    });
                }
            }
        }
        Ok(HypothesisClass {
            predictors,
            representations: reps.to_vec(),
        })
    }

    pub fn to_json(&self) -> String {
        crate::report::canonical_json(
            &serde_json::to_value(self).expect("scenario specs always serialize"),
        )
    }

    pub fn from_json(text: &str) -> Result<ScenarioSpec, ScenarioError> {
        let spec: ScenarioSpec = serde_json::from_str(text).map_err(|e| {
            ScenarioError::ParamOutOfRange {
                param: "scenario file".to_string(),
                detail: e.to_string(),
            }
        })?;
        spec.validate()
    }
}
