//! When is the `J`-class latent class family identifiable from `K` sources?
//!
//! The family is identifiable exactly when `2J <= K`. This module exposes
//! that decision, the weaker parameter-counting bound, an explicit pair of
//! models witnessing nonidentifiability when `2J > K`, and the
//! class-product matrix whose column rank drives the positive direction.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{cell_probabilities, conditional_probabilities, LatentClassModel};
use crate::moments::moments_of_model;
use crate::pattern::MIN_SOURCES;

/// Relative singular-value threshold used by [`numerical_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Largest `J` accepted by [`counterexample`]; keeps `binom(2J, i)` in `u64`.
pub const MAX_COUNTEREXAMPLE_CLASSES: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdentifiabilityDecision {
    pub classes: u64,
    pub sources: u64,
    pub identifiable: bool,
    /// `J(K+1) - 1 <= 2^K - 2`; necessary only.
    pub parameter_bound_satisfied: bool,
    pub criterion: String,
    pub explanation: String,
}

fn check_jk(j: u64, k: u64) -> Result<()> {
    if j < 1 {
        return Err(Error::Domain("class count J must be at least 1".into()));
    }
    if k < MIN_SOURCES as u64 {
        return Err(Error::Domain(format!("source count K must be at least {MIN_SOURCES}")));
    }
    Ok(())
}

/// `Q_J` is identifiable from `K` sources iff `2J <= K`.
pub fn is_identifiable(j: u64, k: u64) -> Result<IdentifiabilityDecision> {
    check_jk(j, k)?;
    let identifiable = j.saturating_mul(2) <= k;
    let bound = parameter_bound_satisfied(j, k)?;
    let criterion = format!("2J <= K: 2*{j} = {} {} {k}", 2 * j as u128, if identifiable { "<=" } else { ">" });
    let explanation = if identifiable {
        format!("the {j}-class latent class family is identifiable from {k} sources")
    } else {
        format!(
            "the {j}-class latent class family is NOT identifiable from {k} sources: two models with \
             identical conditional cell probabilities but different missing-cell probabilities exist \
             (see the counterexample command)"
        )
    };
    Ok(IdentifiabilityDecision {
        classes: j,
        sources: k,
        identifiable,
        parameter_bound_satisfied: bound,
        criterion,
        explanation,
    })
}

/// Parameter count `J(K+1) - 1` against the `2^K - 2` free conditional cell
/// probabilities. A necessary condition only; `2J <= K` is strictly stronger.
pub fn parameter_bound_satisfied(j: u64, k: u64) -> Result<bool> {
    check_jk(j, k)?;
    let params = u128::from(j) * (u128::from(k) + 1) - 1;
    let cells = if k >= 127 { u128::MAX } else { (1u128 << k) - 2 };
    Ok(params <= cells)
}

/// Two `J`-class models with equal conditional cell probabilities but
/// different missing-cell probabilities, valid when `2J > K`.
///
/// `Q` puts weight `binom(2J, 2j) / (2^{2J-1} - 1)` on probability `2jα`
/// (all sources), `R` puts `binom(2J, 2j-1) / 2^{2J-1}` on `(2j-1)α`.
#[derive(Debug, Clone)]
pub struct CounterexamplePair {
    pub classes: usize,
    pub sources: usize,
    pub alpha: f64,
    pub q: LatentClassModel,
    pub r: LatentClassModel,
    /// `m_Q = A m_R` with `A = 2^{2J-1} / (2^{2J-1} - 1)`.
    pub a: f64,
}

fn binomial_row(n: u64) -> Vec<u64> {
    let mut row = vec![1u64; n as usize + 1];
    for i in 1..n {
        // binom(n, i) = binom(n, i-1) * (n - i + 1) / i, exact in u128
        row[i as usize] = (u128::from(row[i as usize - 1]) * u128::from(n - i + 1) / u128::from(i)) as u64;
    }
    row
}

pub fn counterexample(j: usize, k: usize, alpha: f64) -> Result<CounterexamplePair> {
    if j < 1 || k < MIN_SOURCES {
        return Err(Error::Domain(format!("need J >= 1 and K >= {MIN_SOURCES}, got J={j}, K={k}")));
    }
    if 2 * j <= k {
        return Err(Error::Regime(format!(
            "2J = {} <= K = {k}; the family is identifiable",
            2 * j
        )));
    }
    if j > MAX_COUNTEREXAMPLE_CLASSES {
        return Err(Error::Domain(format!(
            "J={j} exceeds the supported maximum {MAX_COUNTEREXAMPLE_CLASSES}"
        )));
    }
    let upper = 1.0 / (2 * j) as f64;
    if !(alpha > 0.0 && alpha < upper) {
        return Err(Error::Domain(format!("alpha={alpha} must lie in (0, 1/(2J)) = (0, {upper})")));
    }

    let n = 2 * j as u64;
    let binom = binomial_row(n);
    let half = 1u64 << (n - 1);
    let q_weights: Vec<f64> = (1..=j).map(|c| binom[2 * c] as f64 / (half - 1) as f64).collect();
    let r_weights: Vec<f64> = (1..=j).map(|c| binom[2 * c - 1] as f64 / half as f64).collect();
    let q_rows = (1..=j).map(|c| vec![alpha * (2 * c) as f64; k]).collect();
    let r_rows = (1..=j).map(|c| vec![alpha * (2 * c - 1) as f64; k]).collect();

    Ok(CounterexamplePair {
        classes: j,
        sources: k,
        alpha,
        q: LatentClassModel::new(q_weights, q_rows)?,
        r: LatentClassModel::new(r_weights, r_rows)?,
        a: half as f64 / (half - 1) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub tolerance: f64,
    #[serde(rename = "A")]
    pub a: f64,
    /// `max_h |m_Q,h - A m_R,h| / m_Q,h`
    pub max_relative_moment_deviation: f64,
    pub max_conditional_deviation: f64,
    pub pi0_q: f64,
    pub pi0_r: f64,
    pub pi0_difference: f64,
    pub moments_proportional: bool,
    pub conditionals_equal: bool,
    pub missing_cells_differ: bool,
    pub passed: bool,
}

/// Checks `m_Q = A m_R`, equality of conditional cell probabilities and a
/// nonzero gap between the missing-cell probabilities. Failures are reported
/// in the returned value.
pub fn verify_counterexample(pair: &CounterexamplePair, tol: f64) -> Result<VerificationReport> {
    verify_pair(&pair.q, &pair.r, pair.a, tol)
}

pub(crate) fn verify_pair(q: &LatentClassModel, r: &LatentClassModel, a: f64, tol: f64) -> Result<VerificationReport> {
    if q.sources() != r.sources() {
        return Err(Error::DimensionMismatch {
            expected: q.sources(),
            found: r.sources(),
        });
    }
    let mq = moments_of_model(q);
    let mr = moments_of_model(r);
    let moment_dev = mq
        .entries()
        .iter()
        .zip(mr.entries())
        .map(|(&x, &y)| (x - a * y).abs() / x)
        .fold(0.0, f64::max);
    let pq = cell_probabilities(q);
    let pr = cell_probabilities(r);
    let cq = conditional_probabilities(&pq)?;
    let cr = conditional_probabilities(&pr)?;
    let cond_dev = cq.iter().zip(&cr).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let diff = pq.pi0() - pr.pi0();
    let moments_proportional = moment_dev <= tol;
    let conditionals_equal = cond_dev <= tol;
    let missing_cells_differ = diff.abs() > tol;
    Ok(VerificationReport {
        tolerance: tol,
        a,
        max_relative_moment_deviation: moment_dev,
        max_conditional_deviation: cond_dev,
        pi0_q: pq.pi0(),
        pi0_r: pr.pi0(),
        pi0_difference: diff,
        moments_proportional,
        conditionals_equal,
        missing_cells_differ,
        passed: moments_proportional && conditionals_equal && missing_cells_differ,
    })
}

/// `Σ_{i=1}^{n} binom(n, i) (-1)^i i^t` in exact arithmetic.
///
/// This is the `t`-th derivative of `(1 - e^x)^n` at zero and vanishes for
/// every `1 <= t < n`.
pub fn alternating_binomial_sum(t: u32, n: u32) -> Result<BigInt> {
    if t < 1 || n < 1 {
        return Err(Error::Domain(format!("need t >= 1 and n >= 1, got t={t}, n={n}")));
    }
    let mut total = BigInt::zero();
    let mut binom = BigInt::one();
    for i in 1..=n {
        binom = binom * BigInt::from(n - i + 1) / BigInt::from(i);
        let term = &binom * BigInt::from(i).pow(t);
        if i % 2 == 1 {
            total -= term;
        } else {
            total += term;
        }
    }
    Ok(total)
}

/// Columns are the `J` classes of `Q` followed by the classes of `R` that do
/// not appear in `Q`; the row for `h ∈ H*` holds `Π_k λ_k^{h_k}`.
#[derive(Debug, Clone)]
pub struct LambdaMatrix {
    pub matrix: DMatrix<f64>,
    /// Classes of `Q` with no matching class in `R`.
    pub unmatched_q: Vec<usize>,
    /// Classes of `R` with no matching class in `Q`, in column order.
    pub unmatched_r: Vec<usize>,
    pub q_classes: usize,
}

impl LambdaMatrix {
    /// `m = |I_R|`
    pub fn unmatched(&self) -> usize {
        self.unmatched_r.len()
    }

    pub fn columns(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn rank(&self, rel_tol: f64) -> Result<usize> {
        numerical_rank(&self.matrix, rel_tol)
    }
}

pub fn build_lambda_matrix(q: &LatentClassModel, r: &LatentClassModel) -> Result<LambdaMatrix> {
    build_lambda_matrix_with_tolerance(q, r, 0.0)
}

/// As [`build_lambda_matrix`], treating two classes as the same when every
/// per-source probability differs by at most `match_tol`.
pub fn build_lambda_matrix_with_tolerance(
    q: &LatentClassModel,
    r: &LatentClassModel,
    match_tol: f64,
) -> Result<LambdaMatrix> {
    if q.sources() != r.sources() {
        return Err(Error::DimensionMismatch {
            expected: q.sources(),
            found: r.sources(),
        });
    }
    let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= match_tol);
    let unmatched = |x: &LatentClassModel, y: &LatentClassModel| -> Vec<usize> {
        (0..x.classes())
            .filter(|&i| !(0..y.classes()).any(|l| same(x.class_probs(i), y.class_probs(l))))
            .collect()
    };
    let unmatched_q = unmatched(q, r);
    let unmatched_r = unmatched(r, q);

    let columns: Vec<&[f64]> = (0..q.classes())
        .map(|j| q.class_probs(j))
        .chain(unmatched_r.iter().map(|&j| r.class_probs(j)))
        .collect();
    let rows = q.order().observed_len();
    let mut matrix = DMatrix::zeros(rows, columns.len());
    for (c, probs) in columns.iter().enumerate() {
        let mut prod = vec![1.0];
        for &p in probs.iter() {
            prod = prod.iter().flat_map(|&x| [x, x * p]).collect();
        }
        for (row, value) in prod.into_iter().skip(1).enumerate() {
            matrix[(row, c)] = value;
        }
    }
    Ok(LambdaMatrix {
        matrix,
        unmatched_q,
        unmatched_r,
        q_classes: q.classes(),
    })
}

/// Number of singular values above `rel_tol` times the largest.
pub fn numerical_rank(matrix: &DMatrix<f64>, rel_tol: f64) -> Result<usize> {
    if matrix.is_empty() {
        return Err(Error::Domain("rank of an empty matrix".into()));
    }
    if matrix.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    if !(rel_tol >= 0.0) {
        return Err(Error::Domain(format!("rank tolerance {rel_tol} must be nonnegative")));
    }
    let sv = matrix.singular_values();
    let largest = sv.max();
    if largest == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > rel_tol * largest).count())
}
