//! Conditional maximum-likelihood fitting of latent class models.
//!
//! Only the counts of observed patterns are available, so the fitter
//! maximizes the conditional likelihood `Σ_{h∈H*} n_h log π̃_h`. Each outer
//! iteration imputes the missing count `n̂_0 = n π̂_0 / (1 - π̂_0)` from the
//! current fit and then takes latent class EM steps on the table completed
//! with that count. Raising the completed-table likelihood with `n̂_0` held
//! fixed never lowers the conditional likelihood, so the conditional
//! log-likelihood is nondecreasing across iterations.
//!
//! The population size follows as `N̂ = n / (1 - π̂_0)`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{cell_probabilities, ContingencyTable, LatentClassModel};
use crate::rng::{stream, DEFAULT_SEED};
use crate::warnings::{family_warnings, Warning, WarningCode};

/// Relative tolerance used to group fits with the same conditional likelihood.
pub const CLUSTER_REL_TOL: f64 = 1e-6;
/// Default relative `N̂` spread that raises the probe flag.
pub const DEFAULT_SPREAD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitConfig {
    pub classes: usize,
    pub starts: usize,
    pub max_outer_iters: usize,
    /// EM steps on the completed table per imputation of `n̂_0`.
    pub inner_iters: usize,
    /// Stop once an iteration improves the conditional log-likelihood by less
    /// than this fraction of its magnitude.
    pub rel_loglik_tol: f64,
    pub seed: u64,
    pub lambda_clamp: (f64, f64),
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            classes: 2,
            starts: 20,
            max_outer_iters: 5000,
            inner_iters: 1,
            rel_loglik_tol: 1e-10,
            seed: DEFAULT_SEED,
            lambda_clamp: (1e-10, 1.0),
        }
    }
}

impl FitConfig {
    pub fn new(classes: usize, starts: usize, seed: u64) -> Self {
        FitConfig {
            classes,
            starts,
            seed,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 1 {
            return Err(Error::Domain("class count J must be at least 1".into()));
        }
        if self.starts < 1 {
            return Err(Error::Domain("at least one start is required".into()));
        }
        if self.max_outer_iters < 1 || self.inner_iters < 1 {
            return Err(Error::Domain("iteration limits must be at least 1".into()));
        }
        if !(self.rel_loglik_tol > 0.0) {
            return Err(Error::Domain("rel_loglik_tol must be positive".into()));
        }
        let (lo, hi) = self.lambda_clamp;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Domain(format!("lambda clamp [{lo}, {hi}] must lie inside (0, 1]")));
        }
        Ok(())
    }
}

/// Conditional log-likelihood with a flag for observed cells of probability zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalLogLik {
    /// `-inf` when `support_violation` is set.
    pub value: f64,
    pub support_violation: bool,
}

/// `Σ_{h∈H*} n_h log π̃_h` with `0 log 0 = 0`.
pub fn conditional_loglik(table: &ContingencyTable, model: &LatentClassModel) -> Result<ConditionalLogLik> {
    if table.sources() != model.sources() {
        return Err(Error::DimensionMismatch {
            expected: model.sources(),
            found: table.sources(),
        });
    }
    let pv = cell_probabilities(model);
    Ok(loglik_from_cells(table.counts(), pv.full()))
}

fn loglik_from_cells(counts: &[u64], full: &[f64]) -> ConditionalLogLik {
    let observed_mass: f64 = full[1..].iter().sum();
    let mut value = 0.0;
    for (&n, &p) in counts.iter().zip(&full[1..]) {
        if n == 0 {
            continue;
        }
        if p <= 0.0 || observed_mass <= 0.0 {
            return ConditionalLogLik {
                value: f64::NEG_INFINITY,
                support_violation: true,
            };
        }
        value += n as f64 * (p / observed_mass).ln();
    }
    ConditionalLogLik {
        value,
        support_violation: false,
    }
}

/// `Σ n_h log(n_h / n)`, the largest attainable conditional log-likelihood.
pub fn saturated_loglik(table: &ContingencyTable) -> f64 {
    let n = table.total() as f64;
    table
        .counts()
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (c as f64 / n).ln())
        .sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub start: usize,
    #[serde(skip)]
    pub model: LatentClassModel,
    pub cond_loglik: f64,
    pub pi0_hat: f64,
    pub n_hat: f64,
    pub n_hat_rounded: u64,
    pub iterations: usize,
    pub converged: bool,
    /// Fitted classes share a per-source probability.
    pub classes_merged: bool,
    /// Conditional log-likelihood at the initial point and after each iteration.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitRun {
    pub observed: u64,
    pub results: Vec<FitResult>,
    pub warnings: Vec<Warning>,
}

impl FitRun {
    /// Highest conditional log-likelihood, ties to the lowest start index.
    pub fn best(&self) -> &FitResult {
        self.results
            .iter()
            .reduce(|best, r| if r.cond_loglik > best.cond_loglik { r } else { best })
            .expect("at least one start")
    }
}

/// Fits `config.classes` classes from `config.starts` random starts.
///
/// Start `s` draws its initial point from stream `s` of `config.seed`; the
/// results are returned in start order.
pub fn fit_em(table: &ContingencyTable, config: &FitConfig) -> Result<FitRun> {
    config.validate()?;
    if table.total() == 0 {
        return Err(Error::Domain("table has no observed individuals".into()));
    }
    let results: Vec<FitResult> = (0..config.starts)
        .into_par_iter()
        .map(|s| fit_one_start(table, config, s))
        .collect::<Result<_>>()?;
    let mut warnings = family_warnings(config.classes, table.sources());
    let run = FitRun {
        observed: table.total(),
        results,
        warnings: Vec::new(),
    };
    if run.best().classes_merged {
        warnings.push(Warning::new(
            WarningCode::ClassesMerged,
            "the best fit has classes sharing a per-source capture probability",
        ));
    }
    Ok(FitRun { warnings, ..run })
}

struct Params {
    weights: Vec<f64>,
    /// Row-major `J x K`.
    lambdas: Vec<f64>,
}

impl Params {
    fn class_cells(&self, k: usize) -> Vec<Vec<f64>> {
        self.lambdas
            .chunks(k)
            .map(|row| {
                let mut cells = vec![1.0];
                for &p in row {
                    cells = cells.iter().flat_map(|&c| [c * (1.0 - p), c * p]).collect();
                }
                cells
            })
            .collect()
    }

    fn cells(class_cells: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; class_cells[0].len()];
        for (cells, &w) in class_cells.iter().zip(weights) {
            for (acc, c) in full.iter_mut().zip(cells) {
                *acc += w * c;
            }
        }
        full
    }
}

fn fit_one_start(table: &ContingencyTable, config: &FitConfig, start: usize) -> Result<FitResult> {
    let k = table.sources();
    let jn = config.classes;
    let (lo, hi) = config.lambda_clamp;
    let mut rng = stream(config.seed, start as u64);

    let raw: Vec<f64> = (0..jn).map(|_| 1.0 + rng.random_range(-0.5..0.5)).collect();
    let total: f64 = raw.iter().sum();
    let mut params = Params {
        weights: raw.iter().map(|w| w / total).collect(),
        lambdas: (0..jn * k).map(|_| rng.random_range(0.2..0.8)).collect(),
    };

    let counts = table.counts();
    let n = table.total() as f64;
    let cells_len = 1usize << k;

    let mut class_cells = params.class_cells(k);
    let mut full = Params::cells(&class_cells, &params.weights);
    let mut current = loglik_from_cells(counts, &full).value;
    let mut trace = vec![current];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_outer_iters {
        iterations += 1;
        let pi0 = full[0];
        let observed_mass = 1.0 - pi0;
        let missing = if observed_mass > 0.0 { n * pi0 / observed_mass } else { 0.0 };
        let augmented: Vec<f64> = std::iter::once(missing)
            .chain(counts.iter().map(|&c| c as f64))
            .collect();

        for _ in 0..config.inner_iters {
            let mut class_mass = vec![0.0; jn];
            let mut source_mass = vec![0.0; jn * k];
            for h in 0..cells_len {
                let a = augmented[h];
                if a == 0.0 || full[h] <= 0.0 {
                    continue;
                }
                for j in 0..jn {
                    let resp = a * params.weights[j] * class_cells[j][h] / full[h];
                    class_mass[j] += resp;
                    for s in 0..k {
                        if h >> (k - 1 - s) & 1 == 1 {
                            source_mass[j * k + s] += resp;
                        }
                    }
                }
            }
            let mass_total: f64 = class_mass.iter().sum();
            for j in 0..jn {
                params.weights[j] = (class_mass[j] / mass_total).max(0.0);
                if class_mass[j] > 0.0 {
                    for s in 0..k {
                        params.lambdas[j * k + s] = (source_mass[j * k + s] / class_mass[j]).clamp(lo, hi);
                    }
                }
            }
            let wsum: f64 = params.weights.iter().sum();
            params.weights.iter_mut().for_each(|w| *w /= wsum);
            class_cells = params.class_cells(k);
            full = Params::cells(&class_cells, &params.weights);
        }

        let next = loglik_from_cells(counts, &full).value;
        trace.push(next);
        let improvement = next - current;
        current = next;
        if improvement < config.rel_loglik_tol * current.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let rows = params.lambdas.chunks(k).map(<[f64]>::to_vec).collect();
    let model = LatentClassModel::new_relaxed(params.weights, rows)?;
    let pv = cell_probabilities(&model);
    let pi0_hat = pv.pi0();
    let cond_loglik = loglik_from_cells(counts, pv.full()).value;
    let n_hat = n / (1.0 - pi0_hat);
    Ok(FitResult {
        start,
        classes_merged: model.distinctness_violation().is_some(),
        model,
        cond_loglik,
        pi0_hat,
        n_hat,
        n_hat_rounded: n_hat.round() as u64,
        iterations,
        converged,
        trace,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LikelihoodCluster {
    /// Start indices, best first.
    pub starts: Vec<usize>,
    pub max_loglik: f64,
    pub min_loglik: f64,
    pub n_hat_min: f64,
    pub n_hat_max: f64,
    /// `(max N̂ - min N̂) / min N̂`
    pub n_hat_relative_spread: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub cluster_rel_tol: f64,
    pub spread_threshold: f64,
    /// Ordered by decreasing likelihood.
    pub clusters: Vec<LikelihoodCluster>,
    /// The top cluster's `N̂` spread exceeds `spread_threshold`.
    pub flagged: bool,
    pub run: FitRun,
}

/// Runs [`fit_em`] and checks whether equally good fits disagree on `N̂`.
pub fn probe_nonidentifiability(table: &ContingencyTable, config: &FitConfig, spread: f64) -> Result<ProbeReport> {
    if !(spread > 0.0) {
        return Err(Error::Domain(format!("spread threshold {spread} must be positive")));
    }
    let run = fit_em(table, config)?;
    let clusters = cluster_results(&run.results, CLUSTER_REL_TOL);
    let flagged = clusters[0].n_hat_relative_spread > spread;
    Ok(ProbeReport {
        cluster_rel_tol: CLUSTER_REL_TOL,
        spread_threshold: spread,
        clusters,
        flagged,
        run,
    })
}

/// Greedy grouping in decreasing likelihood: a fit joins the current cluster
/// while it is within `rel_tol` (relative) of that cluster's best.
fn cluster_results(results: &[FitResult], rel_tol: f64) -> Vec<LikelihoodCluster> {
    let mut order: Vec<&FitResult> = results.iter().collect();
    order.sort_by(|a, b| b.cond_loglik.total_cmp(&a.cond_loglik).then(a.start.cmp(&b.start)));

    let mut groups: Vec<Vec<&FitResult>> = Vec::new();
    for r in order {
        match groups.last_mut() {
            Some(g) if g[0].cond_loglik - r.cond_loglik <= rel_tol * g[0].cond_loglik.abs() => g.push(r),
            _ => groups.push(vec![r]),
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let n_hat_min = g.iter().map(|r| r.n_hat).fold(f64::INFINITY, f64::min);
            let n_hat_max = g.iter().map(|r| r.n_hat).fold(f64::NEG_INFINITY, f64::max);
            LikelihoodCluster {
                starts: g.iter().map(|r| r.start).collect(),
                max_loglik: g[0].cond_loglik,
                min_loglik: g[g.len() - 1].cond_loglik,
                n_hat_min,
                n_hat_max,
                n_hat_relative_spread: (n_hat_max - n_hat_min) / n_hat_min,
            }
        })
        .collect()
}
