//! Latent class models and the probability vectors derived from them.

use crate::error::{Error, Result};
use crate::pattern::{InclusionPattern, PatternOrder};

/// Weight vectors this close to the simplex are renormalized on input.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// A `J`-class latent class model over `K` sources.
///
/// Class `j` carries weight `ν_j` and sampling probabilities
/// `λ_{j1}, ..., λ_{jK}` in `(0, 1]`. Unless built with
/// [`LatentClassModel::new_relaxed`], the per-source probabilities of
/// different classes are pairwise distinct (exact comparison).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentClassModel {
    order: PatternOrder,
    weights: Vec<f64>,
    /// Row-major `J x K`.
    lambdas: Vec<f64>,
}

impl LatentClassModel {
    pub fn new(weights: Vec<f64>, lambdas: Vec<Vec<f64>>) -> Result<Self> {
        let model = Self::new_relaxed(weights, lambdas)?;
        if let Some((a, b, s)) = model.distinctness_violation() {
            return Err(Error::model(
                format!("classes[{b}].probs[{s}]"),
                format!("equals classes[{a}].probs[{s}]; class probabilities must differ per source"),
            ));
        }
        Ok(model)
    }

    /// Like [`LatentClassModel::new`] but allows classes to share a
    /// per-source probability. Used for fitted output, where classes merge.
    pub fn new_relaxed(weights: Vec<f64>, lambdas: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::model("classes", "at least one class is required"));
        }
        if weights.len() != lambdas.len() {
            return Err(Error::model(
                "classes",
                format!("{} weights but {} probability rows", weights.len(), lambdas.len()),
            ));
        }
        let k = lambdas[0].len();
        let order = PatternOrder::new(k).map_err(|e| Error::model("classes[0].probs", e.to_string()))?;

        for (j, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::model(
                    format!("classes[{j}].weight"),
                    format!("weight {w} must be a finite nonnegative number"),
                ));
            }
        }
        let sorted_sum = |ws: &[f64]| -> f64 {
            let mut sorted = ws.to_vec();
            sorted.sort_by(f64::total_cmp);
            sorted.iter().sum()
        };
        let total = sorted_sum(&weights);
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::model(
                "classes",
                format!("weights sum to {total:.17}, not 1"),
            ));
        }
        // Absorb the round-off into the largest weight. The remaining weights
        // are untouched, so re-validating the result is a no-op and the
        // outcome does not depend on class order.
        let mut weights = weights;
        if total != 1.0 {
            let largest = (0..weights.len())
                .max_by(|&a, &b| weights[a].total_cmp(&weights[b]))
                .expect("nonempty");
            let mut others = weights.clone();
            others.remove(largest);
            weights[largest] = 1.0 - sorted_sum(&others);
        }

        let mut flat = Vec::with_capacity(k * lambdas.len());
        for (j, row) in lambdas.iter().enumerate() {
            if row.len() != k {
                return Err(Error::model(
                    format!("classes[{j}].probs"),
                    format!("expected {k} probabilities, found {}", row.len()),
                ));
            }
            for (s, &p) in row.iter().enumerate() {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::model(
                        format!("classes[{j}].probs[{s}]"),
                        format!("probability {p} outside (0, 1]"),
                    ));
                }
            }
            flat.extend_from_slice(row);
        }
        Ok(LatentClassModel {
            order,
            weights,
            lambdas: flat,
        })
    }

    pub fn order(&self) -> PatternOrder {
        self.order
    }

    pub fn sources(&self) -> usize {
        self.order.sources()
    }

    pub fn classes(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sampling probabilities of class `j`, in source order.
    pub fn class_probs(&self, j: usize) -> &[f64] {
        let k = self.sources();
        &self.lambdas[j * k..(j + 1) * k]
    }

    pub fn lambda(&self, j: usize, s: usize) -> f64 {
        self.lambdas[j * self.sources() + s]
    }

    pub fn lambda_rows(&self) -> Vec<Vec<f64>> {
        (0..self.classes()).map(|j| self.class_probs(j).to_vec()).collect()
    }

    /// First `(j, j', s)` with `j < j'` and `λ_{js} == λ_{j's}`.
    pub fn distinctness_violation(&self) -> Option<(usize, usize, usize)> {
        let jn = self.classes();
        for s in 0..self.sources() {
            for a in 0..jn {
                for b in a + 1..jn {
                    if self.lambda(a, s) == self.lambda(b, s) {
                        return Some((a, b, s));
                    }
                }
            }
        }
        None
    }

    /// Number of free parameters, `J(K+1) - 1`.
    pub fn parameter_count(&self) -> usize {
        self.classes() * (self.sources() + 1) - 1
    }

    /// Class indices sorted by probability row, then weight.
    pub(crate) fn canonical_class_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.classes()).collect();
        idx.sort_by(|&a, &b| {
            self.class_probs(a)
                .iter()
                .zip(self.class_probs(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(self.weights[a].total_cmp(&self.weights[b]))
        });
        idx
    }

    /// Per-class vectors of `Π_k λ^{h_k} (1-λ)^{1-h_k}` over `H`.
    pub(crate) fn class_cell_probabilities(&self, j: usize) -> Vec<f64> {
        let mut cells = Vec::with_capacity(self.order.full_len());
        cells.push(1.0);
        for &p in self.class_probs(j) {
            let next: Vec<f64> = cells.iter().flat_map(|&c| [c * (1.0 - p), c * p]).collect();
            cells = next;
        }
        cells
    }
}

/// Full cell probabilities `π_h` over `H` in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellProbabilityVector {
    order: PatternOrder,
    full: Vec<f64>,
}

impl CellProbabilityVector {
    /// Validates nonnegativity and unit sum (within `1e-12`).
    pub fn from_full(full: Vec<f64>) -> Result<Self> {
        let order = pattern_order_for_len(full.len(), 0)?;
        if let Some((i, p)) = full.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::Domain(format!("cell {i} has invalid probability {p}")));
        }
        let total: f64 = full.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("cell probabilities sum to {total:.17}, not 1")));
        }
        Ok(CellProbabilityVector { order, full })
    }

    pub fn order(&self) -> PatternOrder {
        self.order
    }

    pub fn full(&self) -> &[f64] {
        &self.full
    }

    /// Missing-cell probability `π_0`.
    pub fn pi0(&self) -> f64 {
        self.full[0]
    }

    /// The `H*` slice `π*`.
    pub fn observed(&self) -> &[f64] {
        &self.full[1..]
    }

    pub fn get(&self, h: InclusionPattern) -> f64 {
        self.full[h.index()]
    }

    pub fn conditional(&self) -> Result<Vec<f64>> {
        conditional_probabilities(self)
    }
}

/// Mixed moments `m_h = E(Π_k λ_k^{h_k})` over `H*` in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    order: PatternOrder,
    entries: Vec<f64>,
}

impl MomentVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        let order = pattern_order_for_len(entries.len(), 1)?;
        Ok(MomentVector { order, entries })
    }

    pub fn order(&self) -> PatternOrder {
        self.order
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, h: InclusionPattern) -> Option<f64> {
        h.observed_index().map(|i| self.entries[i])
    }

    pub fn into_entries(self) -> Vec<f64> {
        self.entries
    }
}

/// Observed counts `n_h` for `h ∈ H*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    order: PatternOrder,
    counts: Vec<u64>,
}

impl ContingencyTable {
    /// `counts` in canonical `H*` order; its length fixes `K`.
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        let order = pattern_order_for_len(counts.len(), 1)?;
        Ok(ContingencyTable { order, counts })
    }

    pub fn order(&self) -> PatternOrder {
        self.order
    }

    pub fn sources(&self) -> usize {
        self.order.sources()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, h: InclusionPattern) -> Option<u64> {
        h.observed_index().map(|i| self.counts[i])
    }

    /// Total observed count `n`.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Maps a vector length of `2^K - dropped` back to its pattern order.
fn pattern_order_for_len(len: usize, dropped: usize) -> Result<PatternOrder> {
    let full = len + dropped;
    if !full.is_power_of_two() {
        return Err(Error::InvalidDimension(format!(
            "length {len} is not 2^K - {dropped} for any K"
        )));
    }
    PatternOrder::new(full.trailing_zeros() as usize)
}

/// `π_h = Σ_j ν_j Π_k λ_{jk}^{h_k} (1-λ_{jk})^{1-h_k}` for every `h ∈ H`.
///
/// This evaluates the definition directly and is the reference that the
/// moment transform is checked against. Classes are accumulated in a
/// canonical order so relabelling classes leaves the result bit-identical.
pub fn cell_probabilities(model: &LatentClassModel) -> CellProbabilityVector {
    let mut full = vec![0.0; model.order().full_len()];
    for j in model.canonical_class_order() {
        let w = model.weights()[j];
        for (acc, c) in full.iter_mut().zip(model.class_cell_probabilities(j)) {
            *acc += w * c;
        }
    }
    CellProbabilityVector {
        order: model.order(),
        full,
    }
}

/// Conditional cell probabilities `π̃_h = π_h / (1 - π_0)` over `H*`.
///
/// The normalizer is the observed mass `Σ_{h∈H*} π_h`, which equals
/// `1 - π_0` and keeps the result summing to one when `π_0` is close to 1.
pub fn conditional_probabilities(pv: &CellProbabilityVector) -> Result<Vec<f64>> {
    let observed_mass: f64 = pv.observed().iter().sum();
    if pv.pi0() >= 1.0 || observed_mass <= 0.0 {
        return Err(Error::DegenerateModel(
            "missing-cell probability is 1; no individual can be observed".into(),
        ));
    }
    Ok(pv.observed().iter().map(|p| p / observed_mass).collect())
}
