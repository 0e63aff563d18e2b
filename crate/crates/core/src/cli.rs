//! The `lcm-ident` command-line tool.
//!
//! Every subcommand prints a JSON [`Report`] on stdout. Exit status is 0 on
//! success, 1 when a computation or check fails and 2 on usage errors.
//! Randomized commands default to seed 0; no environment variable changes
//! any result.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::estimation::{fit_em, probe_nonidentifiability, saturated_loglik, FitConfig, FitResult, FitRun, DEFAULT_SPREAD};
use crate::identifiability::{counterexample, is_identifiable, verify_counterexample};
use crate::io::{model_to_value, read_model, read_table, table_to_csv};
use crate::model::{cell_probabilities, conditional_probabilities, ContingencyTable, LatentClassModel};
use crate::moments::{check_moment_proportionality, moments_of_model, DEFAULT_PROPORTIONALITY_TOL};
use crate::pattern::PatternOrder;
use crate::rng::DEFAULT_SEED;
use crate::simulation::{simulate_replicates, SamplingMode, SimulationSpec};
use crate::warnings::{family_warnings, Warning};

#[derive(Debug, Parser)]
#[command(
    name = "lcm-ident",
    version,
    about = "Identifiability analysis for latent class capture-recapture models",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decide whether J classes are identifiable from K sources
    Check {
        #[arg(long)]
        classes: u64,
        #[arg(long)]
        sources: u64,
    },
    /// Build and verify two models with equal conditional cell probabilities
    /// but different missing-cell probabilities (requires 2J > K)
    Counterexample {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        sources: usize,
        /// Scale in (0, 1/(2J)); defaults to 0.9/(2J)
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_PROPORTIONALITY_TOL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cell probabilities, conditional probabilities and mixed moments of a model
    Cellprobs {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate capture tables from a model
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// True population size N
        #[arg(long)]
        popsize: u64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        /// Draw each individual separately instead of one multinomial draw (K <= 10)
        #[arg(long)]
        per_individual: bool,
        #[command(flatten)]
        threads: Threads,
        /// Output directory for table CSVs and manifest.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a J-class model to a table by conditional-likelihood EM
    Fit {
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit from many starts and flag equally good fits that disagree on N
    Probe {
        #[command(flatten)]
        fit: FitArgs,
        /// Relative N-hat spread within the top likelihood cluster that raises the flag
        #[arg(long, default_value_t = DEFAULT_SPREAD)]
        spread: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce the two-source, two-class nonidentifiability example
    VerifyPaper {
        /// Test hook: perturb one capture probability so the checks fail
        #[arg(long, hide = true)]
        inject_perturbation: bool,
    },
}

#[derive(Debug, Args)]
struct Threads {
    /// Worker threads (results do not depend on this)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    starts: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = FitConfig::default().max_outer_iters)]
    max_iters: usize,
    /// Relative conditional log-likelihood improvement below which EM stops
    #[arg(long, default_value_t = FitConfig::default().rel_loglik_tol)]
    tol: f64,
    #[command(flatten)]
    threads: Threads,
}

impl FitArgs {
    fn config(&self) -> FitConfig {
        FitConfig {
            max_outer_iters: self.max_iters,
            rel_loglik_tol: self.tol,
            ..FitConfig::new(self.classes, self.starts, self.seed)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CommandMeta {
    pub name: String,
    pub version: String,
    pub arguments: Vec<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: CommandMeta,
    pub timestamp: String,
    pub payload: Value,
    pub warnings: Vec<Warning>,
}

struct Outcome {
    payload: Value,
    warnings: Vec<Warning>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    failed: bool,
}

impl Outcome {
    fn ok(payload: Value, warnings: Vec<Warning>) -> Self {
        Outcome {
            payload,
            warnings,
            seed: None,
            out: None,
            failed: false,
        }
    }
}

/// Runs the tool on `args` (including the program name) and returns the exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return e.exit_code();
        }
    };
    let name = command_name(&cli.command);
    let arguments = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let meta = |seed| CommandMeta {
        name: name.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        arguments,
        seed,
    };

    match execute(cli.command) {
        Ok(outcome) => {
            let report = Report {
                command: meta(outcome.seed),
                timestamp: chrono::Utc::now().to_rfc3339(),
                payload: outcome.payload,
                warnings: outcome.warnings,
            };
            let text = serde_json::to_string_pretty(&report).expect("report is serializable") + "\n";
            if let Some(path) = &outcome.out {
                if let Err(e) = fs::write(path, &text) {
                    let _ = writeln!(stderr, "error: cannot write {}: {e}", path.display());
                    return 1;
                }
            }
            let _ = stdout.write_all(text.as_bytes());
            if outcome.failed {
                let _ = writeln!(stderr, "error: one or more checks failed");
                1
            } else {
                0
            }
        }
        Err(e) => {
            let report = Report {
                command: meta(None),
                timestamp: chrono::Utc::now().to_rfc3339(),
                payload: json!({"error": e.to_string()}),
                warnings: Vec::new(),
            };
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&report).expect("serializable"));
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Check { .. } => "check",
        Command::Counterexample { .. } => "counterexample",
        Command::Cellprobs { .. } => "cellprobs",
        Command::Simulate { .. } => "simulate",
        Command::Fit { .. } => "fit",
        Command::Probe { .. } => "probe",
        Command::VerifyPaper { .. } => "verify-paper",
    }
}

fn with_threads<T: Send>(threads: &Threads, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads.threads {
        None => Ok(f()),
        Some(0) => Err(Error::Domain("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::Domain(e.to_string())),
    }
}

fn execute(command: Command) -> Result<Outcome> {
    match command {
        Command::Check { classes, sources } => {
            let decision = is_identifiable(classes, sources)?;
            let warnings = family_warnings(classes as usize, sources as usize);
            Ok(Outcome::ok(serde_json::to_value(decision)?, warnings))
        }
        Command::Counterexample {
            classes,
            sources,
            alpha,
            tol,
            out,
        } => {
            let alpha = alpha.unwrap_or(0.9 / (2 * classes.max(1)) as f64);
            let pair = counterexample(classes, sources, alpha)?;
            let verification = verify_counterexample(&pair, tol)?;
            let failed = !verification.passed;
            let payload = json!({
                "J": pair.classes,
                "K": pair.sources,
                "alpha": pair.alpha,
                "A": pair.a,
                "Q": model_to_value(&pair.q),
                "R": model_to_value(&pair.r),
                "verification": verification,
            });
            Ok(Outcome {
                out,
                failed,
                ..Outcome::ok(payload, family_warnings(classes, sources))
            })
        }
        Command::Cellprobs { model, out } => {
            let model = read_model(&model)?;
            Ok(Outcome {
                out,
                ..Outcome::ok(cellprobs_payload(&model)?, model_warnings(&model))
            })
        }
        Command::Simulate {
            model,
            popsize,
            seed,
            replicates,
            per_individual,
            threads,
            out,
        } => {
            let model = read_model(&model)?;
            let warnings = model_warnings(&model);
            let spec = SimulationSpec::new(model, popsize, seed)?;
            let mode = if per_individual {
                SamplingMode::PerIndividual
            } else {
                SamplingMode::Multinomial
            };
            let tables = with_threads(&threads, || simulate_replicates(&spec, replicates, mode))??;
            fs::create_dir_all(&out)?;
            let width = replicates.saturating_sub(1).to_string().len().max(4);
            let entries: Vec<Value> = tables
                .iter()
                .enumerate()
                .map(|(r, t)| {
                    let file = format!("table_{r:0width$}.csv");
                    fs::write(out.join(&file), table_to_csv(&t.table))?;
                    Ok(json!({
                        "replicate": r,
                        "file": file,
                        "observed_n": t.table.total(),
                        "true_missing_simulation_only": t.true_missing,
                    }))
                })
                .collect::<Result<_>>()?;
            let payload = json!({
                "spec": {
                    "model": model_to_value(&spec.model),
                    "popsize": popsize,
                    "seed": seed,
                    "replicates": replicates,
                    "mode": if per_individual { "per-individual" } else { "multinomial" },
                    "stream": "ChaCha20 seeded by seed_from_u64(seed), stream id = replicate index",
                },
                "tables": entries,
            });
            Ok(Outcome {
                seed: Some(seed),
                out: Some(out.join("manifest.json")),
                ..Outcome::ok(payload, warnings)
            })
        }
        Command::Fit { fit, out } => {
            let table = read_table(&fit.table)?;
            let config = fit.config();
            let run = with_threads(&fit.threads, || fit_em(&table, &config))??;
            let payload = fit_payload(&fit, &table, &config, &run);
            Ok(Outcome {
                seed: Some(fit.seed),
                out,
                ..Outcome::ok(payload, run.warnings.clone())
            })
        }
        Command::Probe { fit, spread, out } => {
            let table = read_table(&fit.table)?;
            let config = fit.config();
            let report = with_threads(&fit.threads, || probe_nonidentifiability(&table, &config, spread))??;
            let mut payload = fit_payload(&fit, &table, &config, &report.run);
            let obj = payload.as_object_mut().expect("object payload");
            obj.insert("spread_threshold".into(), json!(report.spread_threshold));
            obj.insert("cluster_rel_tol".into(), json!(report.cluster_rel_tol));
            obj.insert("clusters".into(), serde_json::to_value(&report.clusters)?);
            obj.insert("flagged".into(), json!(report.flagged));
            Ok(Outcome {
                seed: Some(fit.seed),
                out,
                ..Outcome::ok(payload, report.run.warnings.clone())
            })
        }
        Command::VerifyPaper { inject_perturbation } => {
            let (payload, passed) = verify_paper(inject_perturbation)?;
            Ok(Outcome {
                failed: !passed,
                ..Outcome::ok(payload, family_warnings(2, 2))
            })
        }
    }
}

fn model_warnings(model: &LatentClassModel) -> Vec<Warning> {
    family_warnings(model.classes(), model.sources())
}

fn keyed(order: PatternOrder, values: &[f64], skip_missing: bool) -> Value {
    let patterns: Vec<_> = if skip_missing {
        order.observed().collect()
    } else {
        order.full().collect()
    };
    Value::Object(
        patterns
            .into_iter()
            .zip(values)
            .map(|(h, v)| (h.to_string(), json!(v)))
            .collect::<Map<_, _>>(),
    )
}

fn cellprobs_payload(model: &LatentClassModel) -> Result<Value> {
    let pv = cell_probabilities(model);
    let cond = conditional_probabilities(&pv)?;
    let m = moments_of_model(model);
    let order = model.order();
    Ok(json!({
        "model": model_to_value(model),
        "K": model.sources(),
        "J": model.classes(),
        "pi": keyed(order, pv.full(), false),
        "pi0": pv.pi0(),
        "conditional": keyed(order, &cond, true),
        "moments": keyed(order, m.entries(), true),
    }))
}

fn fit_result_value(r: &FitResult) -> Value {
    let mut v = serde_json::to_value(r).expect("fit result is serializable");
    v.as_object_mut()
        .expect("object")
        .insert("model".into(), model_to_value(&r.model));
    v
}

fn fit_payload(args: &FitArgs, table: &ContingencyTable, config: &FitConfig, run: &FitRun) -> Value {
    let identifiability = is_identifiable(config.classes as u64, table.sources() as u64)
        .ok()
        .and_then(|d| serde_json::to_value(d).ok());
    json!({
        "table": {
            "path": args.table.display().to_string(),
            "K": table.sources(),
            "n": table.total(),
        },
        "config": config,
        "identifiability": identifiability,
        "saturated_loglik": saturated_loglik(table),
        "best": fit_result_value(run.best()),
        "starts": run.results.iter().map(fit_result_value).collect::<Vec<_>>(),
    })
}

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    value: f64,
    expected: f64,
    tolerance: f64,
}

impl Check {
    fn new(name: &'static str, value: f64, expected: f64, tolerance: f64) -> Self {
        Check {
            name,
            passed: (value - expected).abs() <= tolerance,
            value,
            expected,
            tolerance,
        }
    }
}

/// Reference two-source pair: `(weights, class probabilities)`.
const REFERENCE_Q: ([f64; 2], [f64; 2]) = ([0.5, 0.5], [0.2475, 0.7425]);
/// Weights as usually quoted (rounded to 7 digits); exact values are 6/7 and 1/7.
const REFERENCE_R_PRINTED: ([f64; 2], [f64; 2]) = ([0.8571429, 0.1428571], [0.495, 0.99]);

fn two_source_model(weights: [f64; 2], probs: [f64; 2]) -> Result<LatentClassModel> {
    LatentClassModel::new(weights.to_vec(), probs.iter().map(|&p| vec![p, p]).collect())
}

fn verify_paper(inject_perturbation: bool) -> Result<(Value, bool)> {
    let mut q_probs = REFERENCE_Q.1;
    if inject_perturbation {
        q_probs[0] += 1e-3;
    }
    let q = two_source_model(REFERENCE_Q.0, q_probs)?;
    let r = two_source_model([6.0 / 7.0, 1.0 / 7.0], REFERENCE_R_PRINTED.1)?;

    let pq = cell_probabilities(&q);
    let pr = cell_probabilities(&r);
    let cq = conditional_probabilities(&pq)?;
    let cr = conditional_probabilities(&pr)?;
    let cond_dev = cq.iter().zip(&cr).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let prop = check_moment_proportionality(&moments_of_model(&q), &moments_of_model(&r), DEFAULT_PROPORTIONALITY_TOL)?;
    let a = prop.constant.unwrap_or(f64::NAN);

    // regenerated pair carries the reference labels swapped
    let pair = counterexample(2, 2, 0.2475)?;
    let mut param_dev: f64 = 0.0;
    for (model, (weights, probs)) in [(&pair.r, REFERENCE_Q), (&pair.q, REFERENCE_R_PRINTED)] {
        for j in 0..2 {
            param_dev = param_dev.max((model.weights()[j] - weights[j]).abs());
            for &p in model.class_probs(j) {
                param_dev = param_dev.max((p - probs[j]).abs());
            }
        }
    }

    let checks = vec![
        Check::new("conditional_probabilities_equal", cond_dev, 0.0, 1e-9),
        Check::new("pi0_q", pq.pi0(), 0.316, 5e-4),
        Check::new("pi0_r", pr.pi0(), 0.219, 5e-4),
        Check::new("moment_proportionality_constant", a, 0.875, 1e-9),
        Check::new("counterexample_regenerates_table", param_dev, 0.0, 1e-6),
    ];
    let passed = checks.iter().all(|c| c.passed);
    let first_failure = checks.iter().find(|c| !c.passed).map(|c| c.name);
    let payload = json!({
        "passed": passed,
        "first_failure": first_failure,
        "checks": checks,
        "conditional_q": cq,
        "conditional_r": cr,
        "perturbed": inject_perturbation,
    });
    Ok((payload, passed))
}
