//! Built-in instances.
//!
//! Each generator returns a validated [`ScenarioSpec`]. Instances are exact:
//! masses are written as closed-form expressions of the parameters, never
//! sampled, except for `class_skew`, whose middle class weights are seeded
//! deterministic draws recorded in the manifest.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::measure::{Environment, InputAtom, MassPoint, Predictor, RepAtom, Representation};

use super::{Composite, PredictorClass, Roles, ScenarioError, ScenarioSpec, SCHEMA_VERSION};

pub const NAMES: [&str; 8] = [
    "quadrants_v1",
    "axis_target",
    "memorize_disjoint",
    "memorize_line",
    "memorize_quadrants",
    "cmnist_latent",
    "cmnist_misaligned",
    "class_skew",
];

/// Dispatch by name with string-keyed parameters (`--param key=value`).
/// Unknown names and unknown or out-of-range parameters are errors.
pub fn gen(
    name: &str,
    params: &BTreeMap<String, String>,
) -> Result<ScenarioSpec, ScenarioError> {
    match name {
        "quadrants_v1" => {
            no_params(params)?;
            Ok(quadrants_v1())
        }
        "axis_target" => {
            no_params(params)?;
            Ok(axis_target())
        }
        "memorize_disjoint" => {
            no_params(params)?;
            Ok(memorize_disjoint())
        }
        "memorize_line" => {
            let eps = param_f64(params, "eps", 0.05, &["eps"])?;
            check_range("eps", eps, 0.0, 1.0 / 3.0)?;
            Ok(memorize_line(eps))
        }
        "memorize_quadrants" => {
            let eps = param_f64(params, "eps", 0.05, &["eps"])?;
            check_range("eps", eps, 0.0, 0.5)?;
            Ok(memorize_quadrants(eps))
        }
        "cmnist_latent" => {
            no_params(params)?;
            Ok(cmnist_latent())
        }
        "cmnist_misaligned" => {
            let p = param_f64(params, "p", 0.5, &["p", "flip"])?;
            if !(p > 0.0 && p <= 1.0) {
                return Err(ScenarioError::ParamOutOfRange {
                    param: "p".to_string(),
                    detail: format!("{p} outside (0, 1]"),
                });
            }
            let flip = param_f64(params, "flip", 0.25, &["p", "flip"])?;
            check_range("flip", flip, 0.0, 0.5)?;
            Ok(cmnist_misaligned(p, flip))
        }
        "class_skew" => {
            let allowed = ["case", "seed", "w9"];
            let case = params.get("case").map(String::as_str).unwrap_or("mild");
            if case != "mild" && case != "strong" {
                return Err(ScenarioError::ParamOutOfRange {
                    param: "case".to_string(),
                    detail: format!("{case} is neither mild nor strong"),
                });
            }
            let seed = param_f64(params, "seed", 0.0, &allowed)? as u64;
            let w9 = match params.get("w9") {
                Some(raw) => Some(parse_f64("w9", raw)?),
                None => None,
            };
            for key in params.keys() {
                if !allowed.contains(&key.as_str()) {
                    return Err(ScenarioError::UnknownParam(key.clone()));
                }
            }
            class_skew(case, seed, w9)
        }
        other => Err(ScenarioError::UnknownScenario(other.to_string())),
    }
}

fn no_params(params: &BTreeMap<String, String>) -> Result<(), ScenarioError> {
    match params.keys().next() {
        Some(key) => Err(ScenarioError::UnknownParam(key.clone())),
        None => Ok(()),
    }
}

fn param_f64(
    params: &BTreeMap<String, String>,
    key: &str,
    default: f64,
    allowed: &[&str],
) -> Result<f64, ScenarioError> {
    for k in params.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(ScenarioError::UnknownParam(k.clone()));
        }
    }
    match params.get(key) {
        Some(raw) => parse_f64(key, raw),
        None => Ok(default),
    }
}

fn parse_f64(key: &str, raw: &str) -> Result<f64, ScenarioError> {
    raw.parse().map_err(|_| ScenarioError::ParamOutOfRange {
        param: key.to_string(),
        detail: format!("{raw} is not a number"),
    })
}

fn check_range(key: &str, value: f64, lo: f64, hi: f64) -> Result<(), ScenarioError> {
    if value <= lo || value >= hi {
        return Err(ScenarioError::ParamOutOfRange {
            param: key.to_string(),
            detail: format!("{value} outside ({lo}, {hi})"),
        });
    }
    Ok(())
}

fn env(name: &str, k: usize, entries: Vec<(&str, usize, f64)>) -> Environment {
    let atoms = entries
        .into_iter()
        .filter(|(_, _, mass)| *mass > 0.0)
        .map(|(atom, label, mass)| MassPoint {
            atom: InputAtom::new(atom),
            label,
            mass,
        })
        .collect();
    Environment::new(name, k, atoms).expect("built-in environments are valid")
}

fn rep(name: &str, pairs: Vec<(&str, &str)>) -> Representation {
    Representation::new(
        name,
        pairs
            .into_iter()
            .map(|(a, g)| (InputAtom::new(a), RepAtom::new(g)))
            .collect(),
    )
}

fn point_predictor(name: &str, k: usize, labels: Vec<(&str, usize)>) -> Predictor {
    Predictor::from_label_map(
        name,
        k,
        labels
            .into_iter()
            .map(|(a, y)| (RepAtom::new(a), y))
            .collect(),
    )
}

fn composite(name: &str, rep_name: &str, predictor: Predictor) -> Composite {
    Composite {
        name: name.to_string(),
        representation: rep_name.to_string(),
        predictor,
    }
}

fn spec(
    name: &str,
    k: usize,
    environments: Vec<Environment>,
    representations: Vec<Representation>,
    predictor_classes: BTreeMap<String, PredictorClass>,
    roles: Roles,
    manifest: Vec<String>,
) -> ScenarioSpec {
    ScenarioSpec {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        k,
        environments,
        representations,
        predictor_classes,
        roles,
        manifest,
    }
    .validate()
    .expect("built-in scenarios validate")
}

/// Two axis-aligned projections of a quadrant swap. The source lives in
/// quadrants II/IV, the target in I/III; labels follow the quadrant. The
/// x1 projection flips every conditional (infinite KL to the source), the
/// x2 projection aligns them perfectly, and no marginal statistic of the
/// representations distinguishes the two cases.
pub fn quadrants_v1() -> ScenarioSpec {
    let source = env(
        "source",
        2,
        vec![("q2", 1, 0.5), ("q4", 0, 0.5)],
    );
    let target = env(
        "target",
        2,
        vec![("q1", 1, 0.5), ("q3", 0, 0.5)],
    );
    let phi1 = rep(
        "phi1",
        vec![
            ("q1", "x1_pos"),
            ("q2", "x1_neg"),
            ("q3", "x1_neg"),
            ("q4", "x1_pos"),
        ],
    );
    let phi2 = rep(
        "phi2",
        vec![
            ("q1", "x2_pos"),
            ("q2", "x2_pos"),
            ("q3", "x2_neg"),
            ("q4", "x2_neg"),
        ],
    );
    let h1 = point_predictor("h1", 2, vec![("x1_neg", 1), ("x1_pos", 0)]);
    let h2 = point_predictor("h2", 2, vec![("x2_pos", 1), ("x2_neg", 0)]);
    let classes = [(
        "thresholds".to_string(),
        PredictorClass::Composites {
            members: vec![composite("h1", "phi1", h1), composite("h2", "phi2", h2)],
        },
    )]
    .into_iter()
    .collect();
    spec(
        "quadrants_v1",
        2,
        vec![source, target],
        vec![phi1, phi2],
        classes,
        Roles {
            sources: vec!["source".to_string()],
            target: "target".to_string(),
        },
        vec![
            "four quadrant atoms; source uniform on II (label 1) and IV (label 0), \
             target uniform on I (label 1) and III (label 0)"
                .to_string(),
            "phi1 projects onto the sign of x1, phi2 onto the sign of x2".to_string(),
            "thresholds holds the source-optimal sign composite through each \
             projection"
                .to_string(),
        ],
    )
}

/// Same source as `quadrants_v1`, target concentrated on the x2 axis where
/// the x1 projection collapses everything onto a representation atom of zero
/// source mass. The whole target risk then sits in the singular term.
pub fn axis_target() -> ScenarioSpec {
    let source = env(
        "source",
        2,
        vec![("q2", 1, 0.5), ("q4", 0, 0.5)],
    );
    let target = env(
        "target",
        2,
        vec![("z_pos", 1, 0.5), ("z_neg", 0, 0.5)],
    );
    let phi1 = rep(
        "phi1",
        vec![
            ("q2", "x1_neg"),
            ("q4", "x1_pos"),
            ("z_pos", "x1_0"),
            ("z_neg", "x1_0"),
        ],
    );
    let phi2 = rep(
        "phi2",
        vec![
            ("q2", "x2_pos"),
            ("q4", "x2_neg"),
            ("z_pos", "x2_pos"),
            ("z_neg", "x2_neg"),
        ],
    );
    let h1 = point_predictor(
        "h1",
        2,
        vec![("x1_neg", 1), ("x1_pos", 0), ("x1_0", 0)],
    );
    let h2 = point_predictor("h2", 2, vec![("x2_pos", 1), ("x2_neg", 0)]);
    let classes = [(
        "thresholds".to_string(),
        PredictorClass::Composites {
            members: vec![composite("h1", "phi1", h1), composite("h2", "phi2", h2)],
        },
    )]
    .into_iter()
    .collect();
    spec(
        "axis_target",
        2,
        vec![source, target],
        vec![phi1, phi2],
        classes,
        Roles {
            sources: vec!["source".to_string()],
            target: "target".to_string(),
        },
        vec![
            "source as in quadrants_v1; target uniform on the x2 axis, label 1 above \
             the origin"
                .to_string(),
            "under phi1 all target mass lands on x1_0, which the source never \
             reaches; phi2 aligns the supports exactly"
                .to_string(),
        ],
    )
}

/// Disjoint source/target supports let a representation memorize which side
/// an input came from. The memorizing composite is loss-free on both sources
/// and invariant across them, yet coin-flip wrong on the target, while the
/// ground-truth composite transfers; no source-computable quantity separates
/// the two.
pub fn memorize_disjoint() -> ScenarioSpec {
    let make_source = |name: &str| {
        env(name, 2, vec![("sa0", 0, 0.5), ("sa1", 1, 0.5)])
    };
    let target = env("e0", 2, vec![("ta0", 0, 0.5), ("ta1", 1, 0.5)]);
    let phi_star = rep(
        "phi_star",
        vec![("sa0", "r0"), ("sa1", "r1"), ("ta0", "r0"), ("ta1", "r1")],
    );
    let phi_mem = rep(
        "phi_mem",
        vec![
            ("sa0", "r0_src"),
            ("sa1", "r1_src"),
            ("ta0", "r0_tgt"),
            ("ta1", "r1_tgt"),
        ],
    );
    let h_star = point_predictor("h_star", 2, vec![("r0", 0), ("r1", 1)]);
    let h_mem = point_predictor(
        "h_mem",
        2,
        vec![("r0_src", 0), ("r1_src", 1), ("r0_tgt", 1), ("r1_tgt", 1)],
    );
    let classes = [(
        "memorizers".to_string(),
        PredictorClass::Composites {
            members: vec![
                composite("h_star", "phi_star", h_star),
                composite("h_mem", "phi_mem", h_mem),
            ],
        },
    )]
    .into_iter()
    .collect();
    spec(
        "memorize_disjoint",
        2,
        vec![make_source("e1"), make_source("e2"), target],
        vec![phi_star, phi_mem],
        classes,
        Roles {
            sources: vec!["e1".to_string(), "e2".to_string()],
            target: "e0".to_string(),
        },
        vec![
            "source and target supports are disjoint; phi_mem appends a \
             which-side bit to the ground-truth representation phi_star"
                .to_string(),
            "h_mem agrees with h_star on the source side and outputs label 1 \
             whenever the bit says target, so its target error is exactly one half"
                .to_string(),
        ],
    )
}

/// Five interval atoms on the line, label a deterministic function of
/// position except on [2,3] where it is a fair coin. The folded
/// representation |x| is conditionally invariant across all environments for
/// any eps in (0, 1/3); its source-optimal threshold keeps an eps/2 source
/// risk but a (1-2 eps)/2 target risk, carried entirely by the adaptation
/// gap rather than by any shift term between the sources.
pub fn memorize_line(eps: f64) -> ScenarioSpec {
    let lo = eps / 2.0;
    let hi = (1.0 - 2.0 * eps) / 2.0;
    let segments = ["-2:-1", "-1:0", "0:1", "1:2", "2:3"];
    let labels = [0usize, 1, 1, 0];
    let build = |name: &str, w_left: f64, w_mid: f64, w_right: f64| {
        let weights = [w_left, w_left, w_mid, w_mid];
        let mut entries: Vec<(&str, usize, f64)> = segments[..4]
            .iter()
            .zip(labels.iter())
            .zip(weights.iter())
            .map(|((seg, &y), &w)| (*seg, y, w))
            .collect();
        entries.push(("2:3", 0, w_right));
        entries.push(("2:3", 1, w_right));
        env(name, 2, entries)
    };
    let e0 = build("e0", lo, lo, hi);
    let e1 = build("e1", hi, lo, lo);
    let e2 = build("e2", lo, hi, lo);
    let phi_abs = rep(
        "phi_abs",
        vec![
            ("-2:-1", "a1"),
            ("-1:0", "a0"),
            ("0:1", "a0"),
            ("1:2", "a1"),
            ("2:3", "a2"),
        ],
    );
    let thresholds = vec![
        ("below_0", vec![("a0", 0), ("a1", 0), ("a2", 0)]),
        ("below_1", vec![("a0", 1), ("a1", 0), ("a2", 0)]),
        ("below_2", vec![("a0", 1), ("a1", 1), ("a2", 0)]),
        ("below_3", vec![("a0", 1), ("a1", 1), ("a2", 1)]),
    ];
    let members = thresholds
        .into_iter()
        .map(|(name, labels)| {
            composite(name, "phi_abs", point_predictor(name, 2, labels))
        })
        .collect();
    let classes = [(
        "thresholds".to_string(),
        PredictorClass::Composites { members },
    )]
    .into_iter()
    .collect();
    spec(
        "memorize_line",
        2,
        vec![e0, e1, e2],
        vec![phi_abs],
        classes,
        Roles {
            sources: vec!["e1".to_string(), "e2".to_string()],
            target: "e0".to_string(),
        },
        vec![
            format!("eps = {eps}; interval masses split uniformly across their two \
                     half segments"),
            "label is 0 on [-2,-1] and [1,2], 1 on [-1,1], a fair coin on [2,3]; \
             identical in every environment"
                .to_string(),
            "phi_abs folds the line by absolute value into bins a0 = |x|<1, \
             a1 = 1<|x|<2, a2 = |x|>2; below_L predicts 1 exactly on bins below L"
                .to_string(),
        ],
    )
}

/// Sixteen half-unit cells of [-1,1]^2. Majority mass sits in one diagonal
/// quadrant pair per environment; the minority quadrants carry checkerboard
/// labels that flip between the two sources. Both axis projections are
/// conditionally invariant across the sources with the same class-optimal
/// source risk eps, but their thresholds land at eps versus 1-eps on the
/// target, so no source quantity identifies the transferring projection.
pub fn memorize_quadrants(eps: f64) -> ScenarioSpec {
    let names: Vec<String> = (0..4)
        .flat_map(|i| (0..4).map(move |j| format!("c{i}{j}")))
        .collect();
    let cell = |i: usize, j: usize| names[i * 4 + j].as_str();
    // quadrant of a cell: x1 positive iff i >= 2, x2 positive iff j >= 2
    let in_q1 = |i: usize, j: usize| i >= 2 && j >= 2;
    let in_q2 = |i: usize, j: usize| i < 2 && j >= 2;
    let in_q3 = |i: usize, j: usize| i < 2 && j < 2;
    let in_q4 = |i: usize, j: usize| i >= 2 && j < 2;

    let major = (0.5 - eps) / 4.0;
    let minor = eps / 4.0;

    let target_label = |i: usize, j: usize| -> usize {
        if in_q4(i, j) {
            1
        } else if in_q2(i, j) {
            0
        } else {
            usize::from(i == j)
        }
    };
    let source_label = |i: usize, j: usize, flipped: bool| -> usize {
        if in_q1(i, j) {
            1
        } else if in_q3(i, j) {
            0
        } else {
            usize::from((i + j == 3) != flipped)
        }
    };

    let mut e0_entries = Vec::new();
    let mut e1_entries = Vec::new();
    let mut e2_entries = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            let target_mass = if in_q2(i, j) || in_q4(i, j) { major } else { minor };
            let source_mass = if in_q1(i, j) || in_q3(i, j) { major } else { minor };
            e0_entries.push((cell(i, j), target_label(i, j), target_mass));
            e1_entries.push((cell(i, j), source_label(i, j, false), source_mass));
            e2_entries.push((cell(i, j), source_label(i, j, true), source_mass));
        }
    }
    let e0 = env("e0", 2, e0_entries);
    let e1 = env("e1", 2, e1_entries);
    let e2 = env("e2", 2, e2_entries);

    let phi1 = Representation::new(
        "phi1",
        (0..4)
            .flat_map(|i| {
                (0..4).map(move |j| (i, j))
            })
            .map(|(i, j)| {
                (
                    InputAtom::new(cell(i, j)),
                    RepAtom::new(format!("x1_{i}")),
                )
            })
            .collect(),
    );
    let phi2 = Representation::new(
        "phi2",
        (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .map(|(i, j)| {
                (
                    InputAtom::new(cell(i, j)),
                    RepAtom::new(format!("x2_{j}")),
                )
            })
            .collect(),
    );

    let cuts = ["-1.0", "-0.5", "0.0", "0.5", "1.0"];
    let mut members = Vec::new();
    for (axis, prefix) in [(1, "x1"), (2, "x2")] {
        for (cut_index, cut) in cuts.iter().enumerate() {
            let name = format!("{prefix}_gt_{cut}");
            let labels: Vec<(String, usize)> = (0..4)
                .map(|bin| {
                    (
                        format!("{prefix}_{bin}"),
                        usize::from(bin + 1 > cut_index),
                    )
                })
                .collect();
            let predictor = Predictor::from_label_map(
                &name,
                2,
                labels
                    .into_iter()
                    .map(|(a, y)| (RepAtom::new(a), y))
                    .collect(),
            );
            members.push(Composite {
                name,
                representation: format!("phi{axis}"),
                predictor,
            });
        }
    }
    let classes = [(
        "thresholds".to_string(),
        PredictorClass::Composites { members },
    )]
    .into_iter()
    .collect();

    spec(
        "memorize_quadrants",
        2,
        vec![e0, e1, e2],
        vec![phi1, phi2],
        classes,
        Roles {
            sources: vec!["e1".to_string(), "e2".to_string()],
            target: "e0".to_string(),
        },
        vec![
            format!(
                "eps = {eps}; cell cij covers x1 bin i, x2 bin j of the four \
                 half-unit bins of [-1,1]"
            ),
            "sources put (1/2-eps)/4 per cell of quadrants I (label 1) and III \
             (label 0) and eps/4 per minority cell; target mirrors this with \
             majority mass in IV (label 1) and II (label 0)"
                .to_string(),
            "minority labels: sources use the anti-diagonal checkerboard (e2 \
             flipped against e1), the target the diagonal one"
                .to_string(),
            "class-optimal source risk through either projection is eps, not \
             zero: each x1 bin mixes labels at rate eps under both sources"
                .to_string(),
        ],
    )
}

fn cmnist_env(name: &str, k: usize, p_x0: f64, flip: f64, q: f64) -> Environment {
    let mut entries = Vec::new();
    for x in 0..2usize {
        let px = if x == 0 { p_x0 } else { 1.0 - p_x0 };
        for z in 0..2usize {
            for y in 0..2usize {
                let py = if y == x { 1.0 - flip } else { flip };
                let pz = if z == y { 1.0 - q } else { q };
                entries.push((format!("x{x}z{z}"), y, px * py * pz));
            }
        }
    }
    Environment::new(
        name,
        k,
        entries
            .into_iter()
            .filter(|(_, _, m)| *m > 0.0)
            .map(|(atom, label, mass)| MassPoint {
                atom: InputAtom::new(atom),
                label,
                mass,
            })
            .collect(),
    )
    .expect("latent-chain environments are valid")
}

fn cmnist_reps() -> Vec<Representation> {
    let mut phi_x = BTreeMap::new();
    let mut phi_z = BTreeMap::new();
    let mut phi_xz = BTreeMap::new();
    for x in 0..2 {
        for z in 0..2 {
            let atom = InputAtom::new(format!("x{x}z{z}"));
            phi_x.insert(atom.clone(), RepAtom::new(format!("x_{x}")));
            phi_z.insert(atom.clone(), RepAtom::new(format!("z_{z}")));
            phi_xz.insert(atom, RepAtom::new(format!("xz_{x}{z}")));
        }
    }
    vec![
        Representation::new("phi_x", phi_x),
        Representation::new("phi_z", phi_z),
        Representation::new("phi_xz", phi_xz),
    ]
}

fn cmnist_classes() -> BTreeMap<String, PredictorClass> {
    let reps = vec![
        "phi_x".to_string(),
        "phi_z".to_string(),
        "phi_xz".to_string(),
    ];
    [
        (
            "label_maps".to_string(),
            PredictorClass::LabelMaps {
                representations: reps.clone(),
                with_conditionals: false,
            },
        ),
        (
            "label_maps_ce".to_string(),
            PredictorClass::LabelMaps {
                representations: reps,
                with_conditionals: true,
            },
        ),
    ]
    .into_iter()
    .collect()
}

/// Latent-chain abstraction of the colored-digit construction: a binary
/// shape bit X (fair), label Y = X flipped with rate 1/4, color bit Z = Y
/// flipped with an environment-specific rate (0.1, 0.2, and 0.9 on the
/// test environment). The observable atom is the pair (X, Z).
pub fn cmnist_latent() -> ScenarioSpec {
    let e1 = cmnist_env("e1", 2, 0.5, 0.25, 0.1);
    let e2 = cmnist_env("e2", 2, 0.5, 0.25, 0.2);
    let e3 = cmnist_env("e3", 2, 0.5, 0.25, 0.9);
    spec(
        "cmnist_latent",
        2,
        vec![e1, e2, e3],
        cmnist_reps(),
        cmnist_classes(),
        Roles {
            sources: vec!["e1".to_string(), "e2".to_string()],
            target: "e3".to_string(),
        },
        vec![
            "shape bit X fair; label Y flips X with rate 0.25 in every \
             environment; color bit Z flips Y with rate 0.1 (e1), 0.2 (e2), \
             0.9 (e3)"
                .to_string(),
            "observable atoms are the four (X, Z) pairs; phi_x, phi_z, phi_xz \
             project onto X, Z, and the pair"
                .to_string(),
            "label_maps enumerates all 256 point-mass maps over the eight \
             representation atoms; label_maps_ce adds each environment's \
             conditional predictor per projection"
                .to_string(),
        ],
    )
}

/// Same latent chain with skewed shape priors across the sources: e1 puts
/// mass p/(1+p) on shape 0 and e2 the mirror image, color flip rates 0.2 and
/// 0.1, and the target keeps a fair shape prior with flip rate 0.9. At p = 1
/// the environments coincide with `cmnist_latent` up to which source gets
/// which flip rate.
pub fn cmnist_misaligned(p: f64, flip: f64) -> ScenarioSpec {
    let e1 = cmnist_env("e1", 2, p / (1.0 + p), flip, 0.2);
    let e2 = cmnist_env("e2", 2, 1.0 / (1.0 + p), flip, 0.1);
    let e0 = cmnist_env("e0", 2, 0.5, flip, 0.9);
    spec(
        "cmnist_misaligned",
        2,
        vec![e1, e2, e0],
        cmnist_reps(),
        cmnist_classes(),
        Roles {
            sources: vec!["e1".to_string(), "e2".to_string()],
            target: "e0".to_string(),
        },
        vec![
            format!(
                "p = {p}, flip = {flip}; e1 puts shape-0 prior p/(1+p), e2 puts \
                 1/(1+p), target stays fair"
            ),
            "color flip rates: 0.2 (e1), 0.1 (e2), 0.9 (target); target shape \
             prior fixed at 1/2 by convention"
                .to_string(),
        ],
    )
}

/// Ten singleton class atoms under the identity representation; the target
/// reweights the class prior by a weight vector. Class 0 and class 9 get
/// pinned weights, the middle classes seeded uniform draws. The recorded
/// weight for class 9 in the mild case appears in its source as the bare
/// digit 9; it is treated here as 0.9 and can be overridden with w9.
pub fn class_skew(
    case: &str,
    seed: u64,
    w9_override: Option<f64>,
) -> Result<ScenarioSpec, ScenarioError> {
    let (w0, w9_default, lo, hi) = match case {
        "mild" => (0.25, 0.9, 0.25, 0.75),
        "strong" => (0.0625, 0.9375, 0.0625, 0.9375),
        _ => unreachable!("case validated by gen"),
    };
    let w9 = w9_override.unwrap_or(w9_default);
    if let Some(w) = w9_override {
        if w <= 0.0 {
            return Err(ScenarioError::ParamOutOfRange {
                param: "w9".to_string(),
                detail: format!("{w} must be positive"),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = [0.0f64; 10];
    weights[0] = w0;
    weights[9] = w9;
    for w in weights.iter_mut().take(9).skip(1) {
        *w = rng.gen_range(lo..hi);
    }
    let total: f64 = weights.iter().sum();

    let source_entries: Vec<(String, usize, f64)> = (0..10)
        .map(|i| (format!("c{i}"), i, 0.1))
        .collect();
    let target_entries: Vec<(String, usize, f64)> = (0..10)
        .map(|i| (format!("c{i}"), i, weights[i] / total))
        .collect();
    let to_env = |name: &str, entries: Vec<(String, usize, f64)>| {
        Environment::new(
            name,
            10,
            entries
                .into_iter()
                .map(|(atom, label, mass)| MassPoint {
                    atom: InputAtom::new(atom),
                    label,
                    mass,
                })
                .collect(),
        )
        .expect("class skew environments are valid")
    };
    let source = to_env("source", source_entries);
    let target = to_env("target", target_entries);
    let class_id = Representation::new(
        "class_id",
        (0..10)
            .map(|i| (InputAtom::new(format!("c{i}")), RepAtom::new(format!("g{i}"))))
            .collect(),
    );
    let weight_list = weights
        .iter()
        .map(|w| format!("{w:.6}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(spec(
        "class_skew",
        10,
        vec![source, target],
        vec![class_id],
        BTreeMap::new(),
        Roles {
            sources: vec!["source".to_string()],
            target: "target".to_string(),
        },
        vec![
            format!("case = {case}, seed = {seed}; weights [{weight_list}]"),
            format!(
                "classes 0 and 9 pinned at {w0} and {w9} (the recorded mild value \
                 for class 9 reads literally as \"9\"; interpreted as 0.9, \
                 override with w9=...); middle classes drawn uniformly from \
                 ({lo}, {hi})"
            ),
            "source class prior uniform; target prior proportional to the \
             weights; representation is the class id itself"
                .to_string(),
        ],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{conditional_table, pushforward, SingularExtension};
    use std::collections::BTreeSet;

    #[test]
    fn unknown_scenario_is_an_error() {
        assert!(matches!(
            gen("nope", &BTreeMap::new()),
            Err(ScenarioError::UnknownScenario(_))
        ));
    }

    #[test]
    fn unknown_param_is_an_error() {
        let params = [("epsilon".to_string(), "0.1".to_string())]
            .into_iter()
            .collect();
        assert!(matches!(
            gen("memorize_line", &params),
            Err(ScenarioError::UnknownParam(_))
        ));
    }

    #[test]
    fn out_of_range_eps_is_an_error() {
        let params = [("eps".to_string(), "0.4".to_string())]
            .into_iter()
            .collect();
        assert!(matches!(
            gen("memorize_line", &params),
            Err(ScenarioError::ParamOutOfRange { .. })
        ));
    }

    #[test]
    fn latent_chain_conditionals_match_the_closed_forms() {
        let spec = cmnist_latent();
        let e1 = spec.environment("e1").unwrap();
        let e2 = spec.environment("e2").unwrap();
        let rep = spec.representation("phi_xz").unwrap();
        let domain: BTreeSet<_> = spec.rep_domain(rep).unwrap();
        let t1 = conditional_table(e1, rep, &SingularExtension::Uniform, &domain).unwrap();
        let t2 = conditional_table(e2, rep, &SingularExtension::Uniform, &domain).unwrap();
        let expect = |table: &BTreeMap<_, Vec<f64>>, atom: &str, v0: f64, v1: f64| {
            let got = &table[&RepAtom::new(atom)];
            assert!(
                (got[0] - v0).abs() < 1e-12 && (got[1] - v1).abs() < 1e-12,
                "{atom}: got {got:?}, want ({v0}, {v1})"
            );
        };
        expect(&t1, "xz_00", 27.0 / 28.0, 1.0 / 28.0);
        expect(&t1, "xz_01", 0.25, 0.75);
        expect(&t1, "xz_10", 0.75, 0.25);
        expect(&t1, "xz_11", 1.0 / 28.0, 27.0 / 28.0);
        expect(&t2, "xz_00", 12.0 / 13.0, 1.0 / 13.0);
        expect(&t2, "xz_01", 3.0 / 7.0, 4.0 / 7.0);
        expect(&t2, "xz_10", 4.0 / 7.0, 3.0 / 7.0);
        expect(&t2, "xz_11", 1.0 / 13.0, 12.0 / 13.0);
    }

    #[test]
    fn misaligned_at_p_one_matches_latent_up_to_flip_assignment() {
        let latent = cmnist_latent();
        let params = [("p".to_string(), "1".to_string())].into_iter().collect();
        let mis = gen("cmnist_misaligned", &params).unwrap();
        let pairs = [("e1", "e2"), ("e2", "e1"), ("e0", "e3")];
        for (mis_name, latent_name) in pairs {
            let a = mis.environment(mis_name).unwrap();
            let b = latent.environment(latent_name).unwrap();
            assert_eq!(a.atoms.len(), b.atoms.len());
            for (pa, pb) in a.atoms.iter().zip(&b.atoms) {
                assert_eq!(pa.atom, pb.atom);
                assert_eq!(pa.label, pb.label);
                assert!(
                    (pa.mass - pb.mass).abs() < 1e-15,
                    "{mis_name}/{latent_name} at {}",
                    pa.atom
                );
            }
        }
    }

    #[test]
    fn folded_line_is_conditionally_invariant_for_admissible_eps() {
        for eps in [0.01, 0.05, 0.1, 0.2, 0.32] {
            let spec = memorize_line(eps);
            let rep = spec.representation("phi_abs").unwrap();
            let domain = spec.rep_domain(rep).unwrap();
            let tables: Vec<_> = ["e0", "e1", "e2"]
                .iter()
                .map(|name| {
                    conditional_table(
                        spec.environment(name).unwrap(),
                        rep,
                        &SingularExtension::Uniform,
                        &domain,
                    )
                    .unwrap()
                })
                .collect();
            for gamma in &domain {
                for pair in tables.windows(2) {
                    for (y, (a, b)) in pair[0][gamma].iter().zip(&pair[1][gamma]).enumerate() {
                        assert!(
                            (a - b).abs() < 1e-12,
                            "eps {eps} atom {gamma} label {y}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn quadrant_cells_mass_one_per_environment() {
        let spec = memorize_quadrants(0.05);
        for env in &spec.environments {
            let total: f64 = env.atoms.iter().map(|p| p.mass).sum();
            assert!((total - 1.0).abs() < 1e-12, "{}", env.name);
        }
    }

    #[test]
    fn class_skew_is_deterministic_per_seed_and_case() {
        let a = class_skew("mild", 7, None).unwrap();
        let b = class_skew("mild", 7, None).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = class_skew("strong", 7, None).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn class_skew_weight_override_moves_the_target_prior() {
        let base = class_skew("mild", 0, None).unwrap();
        let overridden = class_skew("mild", 0, Some(9.0)).unwrap();
        let prior = |spec: &ScenarioSpec| {
            let target = spec.environment("target").unwrap();
            target
                .atoms
                .iter()
                .find(|p| p.label == 9)
                .map(|p| p.mass)
                .unwrap()
        };
        assert!(prior(&overridden) > prior(&base));
    }

    #[test]
    fn skewed_class_prior_keeps_conditionals_fixed() {
        let spec = class_skew("strong", 3, None).unwrap();
        let (source, target) = spec.role_pair().unwrap();
        let rep = spec.representation("class_id").unwrap();
        let push_s = pushforward(source, rep).unwrap();
        let push_t = pushforward(target, rep).unwrap();
        assert!(crate::measure::tv_distance(&push_s, &push_t) > 0.0);
        let domain = spec.rep_domain(rep).unwrap();
        let cond_s =
            conditional_table(source, rep, &SingularExtension::Uniform, &domain).unwrap();
        let cond_t =
            conditional_table(target, rep, &SingularExtension::Uniform, &domain).unwrap();
        assert_eq!(cond_s, cond_t);
    }
}
