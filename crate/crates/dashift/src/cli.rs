//! Command-line front end: scenario I/O, analysis dispatch, report emission,
//! and the batch verification harness.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid scenario or schema, 3 a
//! verification property failed, 4 an indeterminate infinity was flagged in
//! the emitted report. Identical argv and input files produce byte-identical
//! output: no timestamps, no environment dependence, no internal
//! parallelism.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::decomp::decompose;
use crate::ext::ExtReal;
use crate::fairness::{fairness_bounds, GroupPartition};
use crate::hdiv::{
    dann_terms, multisource_div_bound, single_source_div_bound, HdivError,
};
use crate::invariance::{check_eci, irm_eci_equivalence_report, irm_solve};
use crate::measure::{pushforward, Environment, RepAtom, SingularExtension};
use crate::multi::multisource_bound_report;
use crate::report::{self, csv_escape, format_sig, ReportMeta};
use crate::risk::Loss;
use crate::scenarios::{builtin, ResolvedClass, ScenarioSpec};
use crate::verify::{run_suite, SeedRange, Suite};

#[derive(Parser)]
#[command(
    name = "dashift",
    version,
    about = "Exact risk accounting for discrete domain-adaptation instances"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format. Defaults to md on stdout and to json when -o is given.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write the output to this file instead of stdout.
    #[arg(short, long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Md,
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    /// Cross-entropy in nats.
    Ce,
    /// Misclassification rate.
    ZeroOne,
}

impl LossArg {
    fn to_loss(self) -> Loss {
        match self {
            LossArg::Ce => Loss::CrossEntropy,
            LossArg::ZeroOne => Loss::ZeroOne,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Every term of the source-to-target risk decomposition.
    Decompose {
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        /// Source environment name.
        #[arg(long)]
        source: String,
        /// Target environment name.
        #[arg(long)]
        target: String,
        /// Representation name.
        #[arg(long)]
        rep: String,
        /// Conditional used beyond the source support: uniform,
        /// source-marginal, or file:PATH with a JSON table of atom vectors.
        #[arg(long, default_value = "uniform")]
        ext: String,
        /// Logarithm base for the emitted values: e or 2.
        #[arg(long, default_value = "e")]
        base: String,
    },
    /// Worst-case transfer bound over the declared sources.
    Multisource {
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        #[arg(long)]
        rep: String,
        /// Also print the ordered pairwise term matrix as CSV on stdout.
        #[arg(long)]
        matrix: bool,
    },
    /// Shift-term bounds at atom and group granularity.
    Fairness {
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        #[arg(long)]
        rep: String,
        /// Group partition of the representation atoms: atoms separated by
        /// commas, groups by '|', e.g. "a,b|c". Defaults to singletons.
        #[arg(long)]
        groups: Option<String>,
    },
    /// Conditional-invariance check across the declared sources.
    Eci {
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        #[arg(long)]
        rep: String,
        /// Largest conditional gap still counted as invariant.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Constrained risk minimization over a predictor-representation class.
    Irm {
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        #[arg(long)]
        class: String,
        #[arg(long, value_enum, required_unless_present = "equivalence")]
        loss: Option<LossArg>,
        /// Compare the constrained optima against the invariance-filtered
        /// solution under both losses instead.
        #[arg(long)]
        equivalence: bool,
    },
    /// Disagreement-divergence transfer bounds for a composite pool.
    Hdiv {
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        #[arg(long)]
        class: String,
        /// Bound against the whole source set instead of the first
        /// declared pair.
        #[arg(long)]
        multi: bool,
    },
    /// Per-composite source risk and marginal alignment terms.
    Dann {
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        #[arg(long)]
        class: String,
    },
    /// Write a built-in scenario to a file (requires -o).
    Scenario {
        /// One of the built-in scenario names.
        name: String,
        /// Parameter override, repeatable: --param eps=0.05
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    /// Replay the seeded verification sweeps.
    Verify {
        /// Inclusive seed range for the instance families.
        #[arg(long, default_value = "0..499")]
        seeds: String,
        /// all, decomposition, multisource, fairness, divergence, or
        /// invariance.
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError {
        code: 1,
        message: msg.to_string(),
    }
}

fn invalid(msg: impl std::fmt::Display) -> CliError {
    CliError {
        code: 2,
        message: msg.to_string(),
    }
}

fn numeric(msg: impl std::fmt::Display) -> CliError {
    CliError {
        code: 4,
        message: msg.to_string(),
    }
}

fn hdiv_err(e: HdivError) -> CliError {
    match e {
        HdivError::IndeterminateDiff { .. } => numeric(e),
        other => invalid(other),
    }
}

/// Parses argv, runs the subcommand, and returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let Cli {
        command,
        format,
        out,
    } = cli;
    let out = out.as_deref();
    match command {
        Command::Decompose {
            scenario,
            source,
            target,
            rep,
            ext,
            base,
        } => {
            let spec = load_scenario(&scenario)?;
            let s = spec.environment(&source).map_err(invalid)?;
            let t = spec.environment(&target).map_err(invalid)?;
            let r = spec.representation(&rep).map_err(invalid)?;
            let resolved = parse_ext(&ext, spec.k)?;
            let report = decompose(s, t, r, &resolved).map_err(invalid)?;
            let meta = ReportMeta::new(&spec.name, resolved.mode_name().to_string());
            let (report, meta) = match base.as_str() {
                "e" => (report, meta),
                "2" => (report.in_base_2(), meta.with_base_2()),
                other => {
                    return Err(usage(format!("unknown log base {other:?}; expected e or 2")))
                }
            };
            emit(format, out, "risk decomposition", &meta, &report)?;
            Ok(0)
        }
        Command::Multisource {
            scenario,
            rep,
            matrix,
        } => {
            let spec = load_scenario(&scenario)?;
            let set = spec.source_set().map_err(invalid)?;
            let r = spec.representation(&rep).map_err(invalid)?;
            let ext = SingularExtension::Uniform;
            let report = multisource_bound_report(&set, r, &ext).map_err(invalid)?;
            let meta = ReportMeta::new(&spec.name, ext.mode_name().to_string());
            emit(format, out, "multi-source bound", &meta, &report)?;
            if matrix {
                let mut csv = String::from("from,to,kl,delta,mu,total\n");
                for p in &report.pairwise {
                    csv.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        csv_escape(&p.from),
                        csv_escape(&p.to),
                        ext_cell(p.kl),
                        format_sig(p.delta),
                        format_sig(p.mu),
                        ext_cell(p.total),
                    ));
                }
                print!("{csv}");
            }
            Ok(if report.gap_indeterminate.is_empty() {
                0
            } else {
                4
            })
        }
        Command::Fairness {
            scenario,
            rep,
            groups,
        } => {
            let spec = load_scenario(&scenario)?;
            let (s, t) = spec.role_pair().map_err(invalid)?;
            let r = spec.representation(&rep).map_err(invalid)?;
            let partition = match groups {
                Some(raw) => GroupPartition::new(parse_groups(&raw)?),
                None => {
                    let push_s = pushforward(s, r).map_err(invalid)?;
                    let push_t = pushforward(t, r).map_err(invalid)?;
                    let mut domain: BTreeSet<RepAtom> =
                        push_s.support().into_iter().cloned().collect();
                    domain.extend(push_t.support().into_iter().cloned());
                    GroupPartition::singletons(&domain)
                }
            };
            let ext = SingularExtension::Uniform;
            let report =
                fairness_bounds(s, t, r, &partition, &ext, false).map_err(invalid)?;
            let meta = ReportMeta::new(&spec.name, ext.mode_name().to_string());
            emit(format, out, "shift-term bounds", &meta, &report)?;
            Ok(0)
        }
        Command::Eci { scenario, rep, tol } => {
            let spec = load_scenario(&scenario)?;
            let envs = source_envs(&spec)?;
            let r = spec.representation(&rep).map_err(invalid)?;
            let report = check_eci(&envs, r, tol).map_err(invalid)?;
            let meta = ReportMeta::new(&spec.name, "uniform".to_string());
            emit(format, out, "conditional invariance", &meta, &report)?;
            Ok(0)
        }
        Command::Irm {
            scenario,
            class,
            loss,
            equivalence,
        } => {
            let spec = load_scenario(&scenario)?;
            let envs = source_envs(&spec)?;
            let resolved = match spec.resolve_class(&class).map_err(invalid)? {
                ResolvedClass::Product(c) => c,
                ResolvedClass::Composites(_) => {
                    return Err(invalid(format!(
                        "class {class:?} is a composite pool; this analysis needs a \
                         predictor-representation product class"
                    )))
                }
            };
            let meta = ReportMeta::new(&spec.name, "none".to_string());
            if equivalence {
                let report =
                    irm_eci_equivalence_report(&envs, &resolved).map_err(invalid)?;
                emit(format, out, "constrained vs filtered solutions", &meta, &report)?;
            } else {
                let loss = loss.expect("clap enforces --loss without --equivalence");
                let report = irm_solve(&envs, &resolved, loss.to_loss()).map_err(invalid)?;
                emit(format, out, "constrained minimization", &meta, &report)?;
            }
            Ok(0)
        }
        Command::Hdiv {
            scenario,
            class,
            multi,
        } => {
            let spec = load_scenario(&scenario)?;
            let pool = composite_pool(&spec, &class)?;
            let meta = ReportMeta::new(&spec.name, "none".to_string());
            let flagged;
            if multi {
                let set = spec.source_set().map_err(invalid)?;
                let mut bounds = Vec::new();
                for h in &pool {
                    bounds.push(
                        multisource_div_bound(&set, h, &pool, Loss::ZeroOne)
                            .map_err(hdiv_err)?,
                    );
                }
                flagged = bounds.iter().any(|b| !b.indeterminate.is_empty());
                emit(format, out, "divergence bounds", &meta, &BoundList { bounds })?;
            } else {
                let (s, t) = spec.role_pair().map_err(invalid)?;
                let mut bounds = Vec::new();
                for h in &pool {
                    bounds.push(
                        single_source_div_bound(s, t, h, &pool, Loss::ZeroOne)
                            .map_err(hdiv_err)?,
                    );
                }
                flagged = bounds.iter().any(|b| !b.indeterminate.is_empty());
                emit(format, out, "divergence bounds", &meta, &BoundList { bounds })?;
            }
            Ok(if flagged { 4 } else { 0 })
        }
        Command::Dann { scenario, class } => {
            let spec = load_scenario(&scenario)?;
            let pool = composite_pool(&spec, &class)?;
            let (s, t) = spec.role_pair().map_err(invalid)?;
            let report = dann_terms(s, t, &pool, Loss::ZeroOne).map_err(hdiv_err)?;
            let meta = ReportMeta::new(&spec.name, "none".to_string());
            emit(format, out, "alignment terms", &meta, &report)?;
            Ok(0)
        }
        Command::Scenario { name, params } => {
            let out_path = out.ok_or_else(|| usage("scenario requires -o FILE"))?;
            let params = parse_params(&params)?;
            let spec = builtin::gen(&name, &params).map_err(usage)?;
            fs::write(out_path, spec.to_json() + "\n")
                .map_err(|e| usage(format!("cannot write {}: {e}", out_path.display())))?;
            Ok(0)
        }
        Command::Verify { seeds, suite } => {
            let seeds = SeedRange::parse(&seeds).map_err(usage)?;
            let suite = Suite::parse(&suite).map_err(usage)?;
            let report = run_suite(suite, seeds);
            let meta = ReportMeta::new("seeded-verification", "mixed".to_string());
            emit(format, out, "verification", &meta, &report)?;
            Ok(if report.passed { 0 } else { 3 })
        }
    }
}

#[derive(Serialize)]
struct BoundList<T: Serialize> {
    bounds: Vec<T>,
}

fn load_scenario(path: &Path) -> Result<ScenarioSpec, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let parsed: ScenarioSpec = serde_json::from_str(&text)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    parsed.validate().map_err(invalid)
}

fn source_envs(spec: &ScenarioSpec) -> Result<Vec<&Environment>, CliError> {
    spec.roles
        .sources
        .iter()
        .map(|name| spec.environment(name).map_err(invalid))
        .collect()
}

fn composite_pool(
    spec: &ScenarioSpec,
    class: &str,
) -> Result<Vec<crate::hdiv::Hypothesis>, CliError> {
    match spec.resolve_class(class).map_err(invalid)? {
        ResolvedClass::Composites(v) => Ok(v),
        ResolvedClass::Product(_) => Err(invalid(format!(
            "class {class:?} is a predictor-representation product; this analysis \
             needs a composite pool"
        ))),
    }
}

fn parse_ext(raw: &str, k: usize) -> Result<SingularExtension, CliError> {
    match raw {
        "uniform" => Ok(SingularExtension::Uniform),
        "source-marginal" => Ok(SingularExtension::SourceMarginal),
        other => match other.strip_prefix("file:") {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| usage(format!("cannot read {path}: {e}")))?;
                let table: BTreeMap<RepAtom, Vec<f64>> = serde_json::from_str(&text)
                    .map_err(|e| invalid(format!("{path}: {e}")))?;
                let ext = SingularExtension::Custom(table);
                ext.validate(k).map_err(invalid)?;
                Ok(ext)
            }
            None => Err(usage(format!(
                "unknown extension mode {other:?}; expected uniform, source-marginal, \
                 or file:PATH"
            ))),
        },
    }
}

fn parse_groups(raw: &str) -> Result<Vec<BTreeSet<RepAtom>>, CliError> {
    let mut groups = Vec::new();
    for part in raw.split('|') {
        let group: BTreeSet<RepAtom> = part
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(RepAtom::new)
            .collect();
        if !group.is_empty() {
            groups.push(group);
        }
    }
    if groups.is_empty() {
        return Err(usage("empty group partition"));
    }
    Ok(groups)
}

fn parse_params(raw: &[String]) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for item in raw {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| usage(format!("--param wants KEY=VALUE, got {item:?}")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn ext_cell(x: ExtReal) -> String {
    match x {
        ExtReal::Finite(v) => format_sig(v),
        ExtReal::PosInf => "inf".to_string(),
        ExtReal::NegInf => "-inf".to_string(),
    }
}

fn emit<T: Serialize>(
    format: Option<Format>,
    out: Option<&Path>,
    title: &str,
    meta: &ReportMeta,
    body: &T,
) -> Result<(), CliError> {
    let fmt = format.unwrap_or(if out.is_some() { Format::Json } else { Format::Md });
    let text = match fmt {
        Format::Json => report::json_report(meta, body),
        Format::Md => report::markdown_report(title, meta, body),
        Format::Csv => report::csv_report(meta, body),
    };
    let text = format!("{}\n", text.trim_end_matches('\n'));
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
