//! Mixed moments and the linear map between moments and cell probabilities.
//!
//! For `h ∈ H*` the observable cell probabilities are an alternating sum of
//! mixed moments over the supersets of `h`:
//!
//! ```text
//! π_h = Σ_{h' ⊇ h} (-1)^{|h'| - |h|} m_{h'}
//! ```
//!
//! The coefficient matrix `C` of this map is unit upper triangular in the
//! canonical pattern order, so `C⁻¹` exists and has entries `I(h ⊆ h')`.
//! Two mixing distributions have equal conditional cell probabilities
//! exactly when their moment vectors are proportional.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{LatentClassModel, MomentVector};
use crate::pattern::PatternOrder;

/// Largest `K` for which `C` is stored as a dense matrix. Above this the map
/// is applied as a superset-sum transform in `O(K 2^K)`.
pub const DENSE_MAX_SOURCES: usize = 12;

/// Default relative tolerance for [`check_moment_proportionality`].
pub const DEFAULT_PROPORTIONALITY_TOL: f64 = 1e-9;

/// The `(2^K - 1) x (2^K - 1)` matrix `C` with rows and columns indexed by
/// `H*` in canonical order.
#[derive(Debug, Clone)]
pub struct CoefficientMatrix {
    order: PatternOrder,
    dense: Option<Vec<i8>>,
}

/// Entry `c_{h,h'}` for pattern indices `h, h'` (as bit masks).
#[inline]
fn coefficient(h: usize, h_prime: usize) -> i8 {
    if h & !h_prime != 0 {
        0
    } else if (h_prime.count_ones() - h.count_ones()) % 2 == 0 {
        1
    } else {
        -1
    }
}

impl CoefficientMatrix {
    pub fn order(&self) -> PatternOrder {
        self.order
    }

    /// Side length `2^K - 1`.
    pub fn dim(&self) -> usize {
        self.order.observed_len()
    }

    /// Entry at `(row, col)`, both zero-based positions in `H*`.
    pub fn entry(&self, row: usize, col: usize) -> i8 {
        match &self.dense {
            Some(d) => d[row * self.dim() + col],
            None => coefficient(row + 1, col + 1),
        }
    }

    /// Row-major dense entries when `K <= DENSE_MAX_SOURCES`.
    pub fn dense(&self) -> Option<&[i8]> {
        self.dense.as_deref()
    }

    /// `C · m`.
    pub fn apply(&self, m: &[f64]) -> Result<Vec<f64>> {
        self.check_len(m.len())?;
        let n = self.dim();
        Ok(match &self.dense {
            Some(d) => (0..n)
                .map(|i| {
                    // upper triangular: columns before the diagonal are zero
                    d[i * n + i..(i + 1) * n]
                        .iter()
                        .zip(&m[i..])
                        .map(|(&c, &x)| f64::from(c) * x)
                        .sum()
                })
                .collect(),
            None => superset_alternating_sum(self.order, m),
        })
    }

    /// Solves `C · m = π*` for `m`.
    pub fn solve(&self, pi_star: &[f64]) -> Result<Vec<f64>> {
        self.check_len(pi_star.len())?;
        let n = self.dim();
        Ok(match &self.dense {
            Some(d) => {
                let mut m = vec![0.0; n];
                for i in (0..n).rev() {
                    let row = &d[i * n..(i + 1) * n];
                    let tail: f64 = row[i + 1..]
                        .iter()
                        .zip(&m[i + 1..])
                        .map(|(&c, &x)| f64::from(c) * x)
                        .sum();
                    // diagonal is +1
                    m[i] = pi_star[i] - tail;
                }
                m
            }
            None => superset_sum(self.order, pi_star),
        })
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }
}

/// Builds `C` for `K` sources; dense for `K <= DENSE_MAX_SOURCES`.
pub fn coefficient_matrix(k: usize) -> Result<CoefficientMatrix> {
    let order = PatternOrder::new(k)?;
    let dense = (k <= DENSE_MAX_SOURCES).then(|| {
        let n = order.observed_len();
        let mut d = vec![0i8; n * n];
        for (row, chunk) in d.chunks_mut(n).enumerate() {
            for (col, c) in chunk.iter_mut().enumerate().skip(row) {
                *c = coefficient(row + 1, col + 1);
            }
        }
        d
    });
    Ok(CoefficientMatrix { order, dense })
}

/// `π_h = Σ_{h'⊇h} (-1)^{|h'|-|h|} x_{h'}` over `H*`, one source at a time.
fn superset_alternating_sum(order: PatternOrder, x: &[f64]) -> Vec<f64> {
    let mut a = Vec::with_capacity(order.full_len());
    a.push(0.0);
    a.extend_from_slice(x);
    for s in 0..order.sources() {
        let bit = order.source_mask(s) as usize;
        for h in 0..a.len() {
            if h & bit == 0 {
                a[h] -= a[h | bit];
            }
        }
    }
    a.split_off(1)
}

/// `m_h = Σ_{h'⊇h} x_{h'}` over `H*`.
fn superset_sum(order: PatternOrder, x: &[f64]) -> Vec<f64> {
    let mut a = Vec::with_capacity(order.full_len());
    a.push(0.0);
    a.extend_from_slice(x);
    for s in 0..order.sources() {
        let bit = order.source_mask(s) as usize;
        for h in 0..a.len() {
            if h & bit == 0 {
                a[h] += a[h | bit];
            }
        }
    }
    a.split_off(1)
}

/// `m_h = Σ_j ν_j Π_k λ_{jk}^{h_k}` for every `h ∈ H*`.
pub fn moments_of_model(model: &LatentClassModel) -> MomentVector {
    let order = model.order();
    let mut acc = vec![0.0; order.full_len()];
    for j in model.canonical_class_order() {
        let w = model.weights()[j];
        let mut prod = Vec::with_capacity(order.full_len());
        prod.push(1.0);
        for &p in model.class_probs(j) {
            let next: Vec<f64> = prod.iter().flat_map(|&c| [c, c * p]).collect();
            prod = next;
        }
        for (a, c) in acc.iter_mut().zip(prod) {
            *a += w * c;
        }
    }
    MomentVector::new(acc.split_off(1)).expect("length is 2^K - 1")
}

/// `π* = C m`.
pub fn pi_from_moments(m: &MomentVector) -> Vec<f64> {
    let c = coefficient_matrix(m.order().sources()).expect("order already validated");
    c.apply(m.entries()).expect("dimensions agree")
}

/// Inverse of [`pi_from_moments`].
pub fn moments_from_pi(pi_star: &[f64]) -> Result<MomentVector> {
    let order_len = pi_star.len() + 1;
    if !order_len.is_power_of_two() {
        return Err(Error::InvalidDimension(format!(
            "length {} is not 2^K - 1 for any K",
            pi_star.len()
        )));
    }
    let c = coefficient_matrix(order_len.trailing_zeros() as usize)?;
    MomentVector::new(c.solve(pi_star)?)
}

/// Outcome of [`check_moment_proportionality`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportionality {
    pub proportional: bool,
    /// `m_Q / m_R` at the first `H*` coordinate, present when proportional.
    #[serde(rename = "A")]
    pub constant: Option<f64>,
    /// `max_h |m_Q,h - A m_R,h| / m_R,h`.
    pub max_relative_deviation: f64,
}

/// Tests `m_Q = A m_R` for some `A > 0`.
///
/// `A` is read off the first coordinate and every coordinate is checked
/// against it with relative tolerance `tol`.
pub fn check_moment_proportionality(
    m_q: &MomentVector,
    m_r: &MomentVector,
    tol: f64,
) -> Result<Proportionality> {
    if m_q.entries().len() != m_r.entries().len() {
        return Err(Error::DimensionMismatch {
            expected: m_q.entries().len(),
            found: m_r.entries().len(),
        });
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let (q, r) = (m_q.entries(), m_r.entries());
    if r.iter().chain(q).any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::Domain("moments must be finite and strictly positive".into()));
    }
    let a = q[0] / r[0];
    let dev = q
        .iter()
        .zip(r)
        .map(|(&x, &y)| (x - a * y).abs() / y)
        .fold(0.0, f64::max);
    let proportional = dev <= tol;
    Ok(Proportionality {
        proportional,
        constant: proportional.then_some(a),
        max_relative_deviation: dev,
    })
}
